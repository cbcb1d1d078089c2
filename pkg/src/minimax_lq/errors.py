"""Exception hierarchy.

Errors split into two families that the CLI maps onto exit codes:
:class:`AssumptionError` (the problem data violates a standing assumption,
exit 2) and :class:`NumericalError` (a computation broke down, exit 3).
"""


class MinimaxLQError(Exception):
    """Base class for all package errors."""


class AssumptionError(MinimaxLQError):
    """The problem data does not satisfy a required assumption."""


class NumericalError(MinimaxLQError):
    """A numerical routine failed or lost too much accuracy."""


class DimensionMismatch(MinimaxLQError, ValueError):
    pass


class PenaltyTooSmall(AssumptionError):
    """``lambda*I - Xi' P Xi`` is not positive definite at some stage."""

    def __init__(self, stage, margin, lam):
        self.stage = stage
        self.margin = margin
        self.lam = lam
        where = "steady state" if stage is None else f"stage t={stage}"
        super().__init__(
            f"PenaltyTooSmall at {where}: lambda={lam:.6g}, "
            f"min eig(lambda*I - Xi'P Xi)={margin:.6g}"
        )


class AssumptionViolated(AssumptionError):
    pass


class Lambda2Infinite(AssumptionError):
    pass


class BracketFailure(AssumptionError):
    pass


class NoFiniteLevel(AssumptionError):
    pass


class SingularMatrix(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, max_iter, residual):
        self.max_iter = max_iter
        self.residual = residual
        super().__init__(
            f"no convergence after {max_iter} iterations (last step {residual:.3e})"
        )


class SingularA(NumericalError):
    pass


class UnstableSubspaceDefect(NumericalError):
    pass


class IllConditionedU1(NumericalError):
    pass


class MonotonicityViolation(NumericalError):
    """A threshold predicate was observed to be non-monotone in lambda."""


class NonFiniteState(NumericalError):
    def __init__(self, run, step):
        self.run = run
        self.step = step
        super().__init__(f"state diverged in run {run} at step {step}")


class InvalidRisk(MinimaxLQError, ValueError):
    pass


class BadDataFile(MinimaxLQError, ValueError):
    pass


class ScenarioError(MinimaxLQError, ValueError):
    """Malformed scenario file or inconsistent command-line options."""


class SingularInertia(BadDataFile):
    pass
