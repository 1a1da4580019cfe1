"""Exception hierarchy shared by all specrec modules."""


class SpecrecError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SpecrecError, ValueError):
    """Input array or argument is malformed (NaN/inf entries, bad shape, ...)."""


class DegenerateSpectrumError(SpecrecError, ValueError):
    """All singular values are zero, so the normalized spectrum is undefined."""


class PreconditionError(SpecrecError, ValueError):
    """A documented precondition on the input does not hold."""


class SingularMatrixError(SpecrecError, ValueError):
    pass


class DataError(SpecrecError):
    """Dataset could not be read or is unusable."""


class MalformedLineError(DataError):
    def __init__(self, lineno, line, reason="expected 'user item'"):
        self.lineno = lineno
        self.line = line
        super().__init__(f"line {lineno}: {reason}: {line!r}")


class EmptyDatasetError(DataError):
    pass


class ExhaustedNegativesError(DataError):
    """User has interacted with every item, no negative exists."""


class ConfigError(SpecrecError, ValueError):
    pass


class UnsupportedIntegrationError(ConfigError):
    pass


class DivergenceError(SpecrecError, FloatingPointError):
    """Training produced a non-finite loss."""


class FingerprintMismatchError(DataError):
    pass
