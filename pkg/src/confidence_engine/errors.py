"""Exception hierarchy shared by every module of the engine."""


class EngineError(Exception):
    """Base class for all errors raised by confidence_engine."""


class DomainError(EngineError, ValueError):
    """An argument lies outside the natural domain of a function or scale."""


class ValidationError(EngineError):
    """A diagram failed validation. ``diagnostics`` lists every violation."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(d.message for d in self.diagnostics) or "invalid diagram")


class CycleError(EngineError):
    def __init__(self, node_name: str):
        self.node_name = node_name
        super().__init__(f"cycle detected through node {node_name!r}")


class ReversalError(EngineError):
    """Arc reversal precondition does not hold."""


class SingularEvidenceError(EngineError):
    """Conditioning target has (numerically) zero variance."""

    def __init__(self, message: str, study: str | None = None):
        self.study = study
        super().__init__(message)


class SingularLinearizationError(EngineError):
    """The output transform has zero slope at the expansion point."""


class DegenerateWeightsError(EngineError):
    """Importance weights collapsed onto too few samples."""

    def __init__(self, ess: float, samples: int):
        self.ess = ess
        self.samples = samples
        super().__init__(
            f"effective sample size {ess:.1f} from {samples} draws is below 100; "
            "increase the number of samples"
        )


class ModelError(EngineError):
    """A model text or ModelSpec has diagnostics. ``diagnostics`` carries them."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0].format() if self.diagnostics else "invalid model"
        extra = len(self.diagnostics) - 1
        super().__init__(first + (f" (+{extra} more)" if extra > 0 else ""))
