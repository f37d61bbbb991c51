"""Exception hierarchy shared across the toolkit."""


class SqlforgeError(Exception):
    """Base class for every error raised by sqlforge."""


class ConfigurationError(SqlforgeError):
    pass


class StartupError(SqlforgeError):
    pass


class ResolutionError(SqlforgeError):
    """Host name could not be resolved."""


class TransportError(SqlforgeError):
    """Network failure talking to a target (refused, reset, timed out)."""

    def __init__(self, message, retries=0):
        super().__init__(message)
        self.retries = retries


class UnsupportedTechnique(SqlforgeError):
    pass


class InconclusiveError(SqlforgeError):
    pass


class ScanError(SqlforgeError):
    pass


class ExploitError(SqlforgeError):
    pass


class UnionUnsupported(ExploitError):
    pass


class ExtractionChannelError(ExploitError):
    pass


class ExtractionAborted(ExploitError):
    """Blind extraction got inconsistent answers from the page."""

    def __init__(self, message, position):
        super().__init__(message)
        self.position = position


class VerificationError(SqlforgeError):
    pass
