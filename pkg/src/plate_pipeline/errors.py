"""Exception hierarchy shared by every stage of the pipeline."""


class PlatePipelineError(Exception):
    """Base class for all errors raised by plate_pipeline."""


class EvenKernel(PlatePipelineError, ValueError):
    pass


class EmptyCrop(PlatePipelineError, ValueError):
    pass


class DimensionMismatch(PlatePipelineError, ValueError):
    pass


class TooSmall(PlatePipelineError, ValueError):
    pass


class EmptySet(PlatePipelineError, ValueError):
    pass


class NonPositive(PlatePipelineError, ValueError):
    pass


class NoCharacters(PlatePipelineError, ValueError):
    pass


class ConfigError(PlatePipelineError, ValueError):
    pass


class ImageDecodeError(PlatePipelineError, OSError):
    pass


class SpecMismatch(PlatePipelineError):
    """A model's output layout disagrees with its DetectorSpec."""


class BackendFailure(PlatePipelineError):
    """A model backend raised during inference.

    ``stage`` names the pipeline stage (``"lpd"``, ``"cr"``, ``"deblur"``)
    when known.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ParseError(PlatePipelineError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class RangeError(ParseError):
    pass
