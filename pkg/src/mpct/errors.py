"""Exception hierarchy shared by the solver, the plant and the harness."""


class MpctError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(MpctError, ValueError):
    """Inputs with wrong shapes or values violating a documented invariant."""


class SingularDenominatorError(MpctError, ArithmeticError):
    """The pendulum mass-matrix term ``c*cos(phi+phi0) + 2b`` vanished."""


class NumericError(MpctError, ArithmeticError):
    """Non-finite numbers where finite ones are required."""


class AssumptionViolation(MpctError):
    """The split problem does not satisfy the full-column-rank requirements."""


class ConditioningError(MpctError):
    """A factorization that must succeed offline failed."""


class DivergenceError(MpctError, ArithmeticError):
    """An iterate became non-finite during a solve."""

    def __init__(self, iteration: int, message: str | None = None):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at iteration {iteration}")


class OracleInconclusive(MpctError):
    """The reference oracle hit its iteration cap without a verified answer."""
