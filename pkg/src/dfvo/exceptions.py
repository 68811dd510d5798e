"""Error hierarchy.

Every error carries a short ``code`` (the class name) used by the CLI when
printing ``ERROR: <code>: <detail>``, and an ``exit_code``: 1 for validation
and geometric failures, 2 for anything raised while reading or writing files.
"""


class VOError(Exception):
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


class FileFormatError(VOError):
    """Malformed or unreadable product file."""

    exit_code = 2


class BadMagic(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass


class BadHeader(FileFormatError):
    pass


class NegativeDepth(FileFormatError):
    pass


class BadLineLength(FileFormatError):
    pass


class NonRotation(FileFormatError):
    pass


class BadCalibration(FileFormatError):
    pass


class MissingFrameProduct(FileFormatError):
    pass


class InvalidConfig(VOError):
    pass


class SizeMismatch(VOError):
    pass


class LengthMismatch(VOError):
    pass


class DegenerateDepth(VOError):
    pass


class EmptyFlow(VOError):
    pass


class TooFewMatches(VOError):
    pass


class TooFewCorrespondences(VOError):
    pass


class DegenerateConfiguration(VOError):
    pass


class AmbiguousCheirality(VOError):
    pass


class ZeroBaseline(VOError):
    pass


class TooFewValidPairs(VOError):
    pass


class ScaleConsensusFailure(VOError):
    pass


class DegenerateGeometry(VOError):
    pass


class SequenceTooShort(VOError):
    pass
