"""
Exception types raised across the pipeline
"""

from typing import Optional


class SRGError(Exception):
    """Base class for every error the pipeline raises on purpose"""


class DimensionError(SRGError, ValueError):
    """Tensor shapes disagree along a named axis"""

    def __init__(self, message: str, axis: Optional[str] = None):
        self.axis = axis
        if axis:
            message = f"{message} (axis: {axis})"
        super().__init__(message)


class ArgumentError(SRGError, ValueError):
    """An argument is outside its allowed range"""


class ConfigurationError(SRGError, ValueError):
    """Run or model configuration is invalid"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InstanceValidationError(SRGError, ValueError):
    """Ground-truth instances violate ordering, bounds or overlap rules"""


class ParseError(SRGError):
    """A file could not be parsed"""

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.offset = offset
        self.line = line
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GenerationError(SRGError):
    """Synthetic data could not be generated for the given configuration"""


class TrainingError(SRGError):
    """Training could not proceed"""

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class MissingArtifactError(SRGError):
    """A command needs an artifact that an earlier command produces"""

    def __init__(self, path, producer: str):
        self.path = path
        self.producer = producer
        super().__init__(f"Missing artifact {path}; run '{producer}' first")
