"""Exception types shared across the package."""


class GlyphflowError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GlyphflowError):
    """Malformed config file (message carries the offending line number)."""


class ManifestError(GlyphflowError):
    """Malformed or inconsistent dataset manifest."""


class CheckpointError(GlyphflowError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class BinarizationError(GlyphflowError):
    """Polarity cannot be determined (e.g. constant image)."""


class SamplingError(GlyphflowError):
    """Sampler aborted; carries the Euler step index at which it failed."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class TrainingError(GlyphflowError):
    """Training aborted; carries the step index at which it failed."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
