"""Exception hierarchy shared by every stage of the pipeline."""


class SegpoolError(Exception):
    """Base class for all errors raised by this package."""


class UnsupportedFormat(SegpoolError):
    pass


class CorruptHeader(SegpoolError):
    pass


class EmptyAudio(SegpoolError):
    pass


class TooShort(SegpoolError):
    pass


class UnsupportedRate(SegpoolError):
    pass


class LengthMismatch(SegpoolError):
    pass


class ParseError(SegpoolError):
    pass


class EmptyMask(SegpoolError):
    pass


class BadMagic(SegpoolError):
    pass


class VersionUnsupported(SegpoolError):
    pass


class TruncatedPayload(SegpoolError):
    pass


class NonFiniteEntry(SegpoolError):
    pass


class EmptyMatrix(SegpoolError):
    pass


class TimelineMismatch(SegpoolError):
    pass


class ShapeMismatch(SegpoolError):
    pass


class BadLabel(SegpoolError):
    pass


class NonPositiveWeight(SegpoolError):
    pass


class EmptyClass(SegpoolError):
    pass


class NonFiniteGradient(SegpoolError):
    pass


class DivergedLoss(SegpoolError):
    pass


class EmptyRow(SegpoolError):
    pass


class TooFewFolds(SegpoolError):
    pass


class UnknownLabel(SegpoolError):
    pass


class MissingColumn(SegpoolError):
    pass


class SingleSpeaker(SegpoolError):
    pass


class BadSpec(SegpoolError):
    pass
