"""Exception types shared across the package."""


class MitlearnError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(MitlearnError):
    """Operands have inconsistent shapes."""


class NotHurwitzError(MitlearnError):
    """A matrix required to be Hurwitz has an eigenvalue with Re >= 0."""


class SingularSystemError(MitlearnError):
    """A linear system that should be solvable is numerically singular."""


class SingularClosedLoopError(MitlearnError):
    """Closed-loop matrix is singular; the equilibrium is not unique."""


class NotStabilizingError(MitlearnError):
    """An initial gain does not stabilize the plant."""


class NotStabilizableError(MitlearnError):
    """A system pair fails the stabilizability test."""


class NoConvergenceError(MitlearnError):
    """An iteration exhausted its budget without meeting tolerance."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InsufficientHistoryError(MitlearnError):
    """Delayed data was requested before enough samples exist."""


class WindowOverrunError(MitlearnError):
    """A collection window would extend past the available segment."""


class DivergenceError(MitlearnError):
    """Simulated state exceeded the blow-up bound."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class RankDeficientError(MitlearnError):
    """Collected data does not satisfy the excitation rank condition."""

    def __init__(self, message, rank=None, required=None):
        super().__init__(message)
        self.rank = rank
        self.required = required


class InfeasibleScheduleError(MitlearnError):
    """The inter-learning interval violates the dwell-time condition."""


class ScenarioParseError(MitlearnError):
    """Scenario file is not syntactically valid."""


class ScenarioValidationError(MitlearnError):
    """Scenario file parsed but violates invariants.

    ``problems`` lists every violated invariant, not just the first.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid scenario: " + "; ".join(self.problems))


class MissingArtifactsError(MitlearnError):
    """Analysis was requested on a run directory lacking artifacts."""
