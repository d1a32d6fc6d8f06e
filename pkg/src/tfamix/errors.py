"""Exception types shared across the package."""


class DegenerateComponentError(RuntimeError):
    """A mixture component collapsed during fitting (empty cluster, vanishing
    responsibility mass, or a singular inner solve). The fit driver catches
    this and retries from the next start."""


class FitFailureError(RuntimeError):
    """Every start of a fit degenerated. Carries one message per start."""

    def __init__(self, causes):
        self.causes = list(causes)
        lines = "; ".join(f"start {s}: {msg}" for s, msg in self.causes)
        super().__init__(f"all starts failed: {lines}")


class SearchFailureError(RuntimeError):
    """Every cell of a model-search grid failed to fit."""


class ModelFormatError(ValueError):
    """A model document could not be parsed or failed shape validation."""
