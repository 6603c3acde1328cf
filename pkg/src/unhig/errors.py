"""Exception hierarchy shared by the library and the CLI."""


class UnhigError(Exception):
    """Base class for all library errors."""


class DataError(UnhigError):
    """Bad input data or files (CLI exit code 2)."""


class MissingFile(DataError):
    pass


class HeaderMismatch(DataError):
    pass


class NonFiniteData(DataError):
    pass


class IoFailure(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class RankDeficient(UnhigError):
    pass


class DimensionMismatch(UnhigError):
    pass


class ShapeMismatch(UnhigError):
    pass


class ChannelMismatch(ShapeMismatch):
    pass


class OddSpatialSize(ShapeMismatch):
    pass


class NonScalarOutput(UnhigError):
    pass


class IndexOutOfRange(UnhigError):
    pass


class DegreeUnsupported(UnhigError):
    pass


class OutOfDomain(UnhigError):
    pass


class ZeroDenominator(UnhigError):
    pass


class InvalidParam(UnhigError):
    pass


class ZeroVector(UnhigError):
    pass


class TooFewPatches(UnhigError):
    pass


class AllElementsGuarded(UnhigError):
    pass


class IdenticalImages(UnhigError):
    """PSNR is infinite; signalled instead of returning ``inf``."""


class ConstantReference(UnhigError):
    pass


class ConfigInvalid(UnhigError):
    pass
