"""Exception types shared across the package."""


class ImageFormatError(ValueError):
    """Raised for unsupported, corrupt or truncated image files."""


class DivergenceError(RuntimeError):
    """Raised when a training run produces a non-finite loss or gradient."""
