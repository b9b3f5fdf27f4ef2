"""Exception hierarchy shared by all pipeline stages."""


class PrimeError(Exception):
    """Base class for every error raised by this package."""


class ScenarioError(PrimeError):
    """Malformed or invariant-violating scenario / prediction document."""


class ConfigError(PrimeError):
    """One or more configuration invariants do not hold."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


class NoRootSegment(PrimeError):
    """No lane segment lies within the localization radius of the agent."""


class DegeneratePath(PrimeError):
    pass


class OutOfCorridor(PrimeError):
    """State too far from the reference path to be projected."""


class SingularProjection(PrimeError):
    """Offset places the point at or beyond the local centre of curvature."""


class EmptyFeasibleSet(PrimeError):
    """No sampled trajectory satisfied the constraints on any path."""


class InsufficientObservations(PrimeError):
    pass


class TrainingDiverged(PrimeError):
    def __init__(self, epoch, last_finite_loss):
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"loss became non-finite at epoch {epoch}; last finite loss {last_finite_loss!r}"
        )


class DegenerateInput(PrimeError):
    pass
