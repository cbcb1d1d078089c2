import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_instance, safe_lambda
from minimax_lq import io
from minimax_lq.errors import BadDataFile
from minimax_lq.finite_horizon import solve_finite
from minimax_lq.infinite_horizon import solve_are_eigen
from minimax_lq.model import CostSpec, EmpiricalDistribution, LinearSystem


@given(st.floats(allow_nan=False))
def test_fmt_roundtrips_floats(v):
    assert float(io.fmt(v)) == v


def test_fmt_special_values():
    assert io.fmt(True) == "1" and io.fmt(np.bool_(False)) == "0"
    assert io.fmt(3) == "3" and io.fmt(np.int64(-2)) == "-2"
    assert io.fmt(float("nan")) == "nan" and io.fmt(-math.inf) == "-inf"
    assert io.fmt(0.1) == "0.10000000000000001"


def test_finite_dump_roundtrip(rng):
    sys, cost, emp = random_instance(rng, 2, 1, 1, horizon=4)
    sol = solve_finite(sys, cost, emp, safe_lambda(sys, cost, emp, 4))
    d = io.parse_dump(io.dump_finite(sol))
    assert d["kind"] == "finite" and d["scalars"]["T"] == 4
    for t in range(5):
        assert np.array_equal(d["matrices"][f"P[{t}]"], sol.P[t])
        assert d["scalars"][f"z[{t}]"] == sol.z[t]
    assert np.array_equal(d["matrices"]["K[3]"], sol.K[3])


def test_steady_dump_roundtrip():
    sys = LinearSystem([[1.0]], [[1.0]], [[1.0]])
    sol = solve_are_eigen(sys, CostSpec([[1.0]], [[1.0]]), 10.0, EmpiricalDistribution([[0.2], [-0.1]]))
    d = io.parse_dump(io.dump_steady(sol))
    assert d["scalars"]["method"] == "Eigen"
    assert d["scalars"]["rho"] == sol.rho
    assert d["matrices"]["P_ss"][0, 0] == sol.P_ss[0, 0]


def test_parse_dump_rejects_garbage():
    with pytest.raises(BadDataFile):
        io.parse_dump("hello\n")
    with pytest.raises(BadDataFile):
        io.parse_dump(io.DUMP_MAGIC + "\nmatrix X 2 2\n1 2\n")


def test_csv_roundtrip(tmp_path):
    rows = [[0.1, 1, "a"], [1e-300, -2, "b"]]
    p = io.write_csv(tmp_path / "x.csv", ["v", "i", "s"], rows)
    assert p.read_bytes() == b"v,i,s\n0.10000000000000001,1,a\n1e-300,-2,b\n"
    header, back = io.read_csv(p)
    assert header == ["v", "i", "s"] and back[0][0] == 0.1 and back[1][0] == 1e-300
    with pytest.raises(ValueError):
        io.format_csv(["a"], [[1, 2]])


def test_row_builders():
    K = np.arange(6.0).reshape(1, 2, 3)
    L = np.array([[7.0, 8.0]])
    header, rows = io.policy_rows(K, L)
    assert header == ["t", "input", "K0", "K1", "K2", "L"]
    assert rows[1] == [0, 1, 3.0, 4.0, 5.0, 8.0]
    _, rows = io.tuning_rows([(2.0, 1.0, 0.1), (1.0, 3.0, 0.0)])
    assert [r[0] for r in rows] == [1.0, 2.0]
    X = np.zeros((4, 3, 2))
    X[:, 1, 0] = [0.0, 1.0, 2.0, 3.0]
    header, rows = io.band_rows(X, dt=0.5)
    assert header[-1] == "mean" and len(rows) == 6
    row = rows[2]
    assert row[0] == 0.5 and row[1] == 0 and row[-1] == 1.5 and row[4] == 1.5


def test_json_is_stable():
    text = io.format_json({"b": np.array([1.0, math.inf]), "a": np.int64(3), "c": np.bool_(True)})
    assert text == '{\n  "a": 3,\n  "b": [\n    1.0,\n    "inf"\n  ],\n  "c": true\n}\n'
