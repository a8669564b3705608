"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: bad problem data is a usage error
(exit 2), an infeasible base point is a data error (exit 3), and
anything that dies inside the numerics is an internal failure (exit 4).
"""


class NsdpcqError(Exception):
    """Base class for all errors raised by this package."""


class ProblemFormatError(NsdpcqError):
    """Problem file or in-memory problem data violates the schema."""


class InfeasiblePointError(NsdpcqError):
    """The supplied base point is not feasible for the constraint.

    Carries the offending eigenvalues so callers can print diagnostics.
    """

    def __init__(self, message, eigenvalues=None):
        super().__init__(message)
        self.eigenvalues = None if eigenvalues is None else list(eigenvalues)


class NumericalFailure(NsdpcqError):
    """An internal numeric routine failed to converge or went singular."""


class JacobiConvergenceError(NumericalFailure):
    """Eigensolver did not reach the off-diagonal target within its sweep cap."""

    def __init__(self, message, off_residual):
        super().__init__(message)
        self.off_residual = float(off_residual)


class NotPsdError(NumericalFailure):
    """A matrix required to be positive semidefinite has a negative eigenvalue."""

    def __init__(self, message, min_eigenvalue):
        super().__init__(message)
        self.min_eigenvalue = float(min_eigenvalue)


class SimplexCycleError(NumericalFailure):
    """Phase-one simplex exceeded its pivot budget.

    Bland's rule should make this unreachable; the guard is kept so a bug
    surfaces as a clean error instead of a hang.
    """
