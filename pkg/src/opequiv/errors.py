"""Exception hierarchy shared across the package."""


class OpequivError(Exception):
    """Base class for all package errors."""


class InvalidPmf(OpequivError, ValueError):
    pass


class InvalidSequence(OpequivError, ValueError):
    pass


class LengthMismatch(OpequivError, ValueError):
    pass


class InvalidChannel(OpequivError, ValueError):
    pass


class ResourceLimit(OpequivError):
    """A requested computation exceeds a configured size cap."""


class DecodeError(OpequivError):
    """Channel decoding did not produce a unique message."""


class NoMatch(DecodeError):
    pass


class Ambiguous(DecodeError):
    def __init__(self, matches):
        self.matches = list(matches)
        super().__init__(f"{len(self.matches)} jointly typical codewords")


class EncodeError(OpequivError):
    """Source encoding failed."""


class SourceAtypical(EncodeError):
    pass


class NoCover(EncodeError):
    pass


class DegenerateFit(OpequivError):
    pass


class InvalidGrid(OpequivError, ValueError):
    pass


class NoConvergence(OpequivError):
    pass


class CompositionError(OpequivError):
    pass


class ConfigError(OpequivError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")
