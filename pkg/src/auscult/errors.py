"""Exception types raised across the package.

Every error derives from :class:`AuscultError` so callers (the CLI in
particular) can catch one type. Most also derive from ``ValueError`` because
they signal bad input rather than a bug.
"""


class AuscultError(Exception):
    """Base class for all package errors."""


# audio / corpus
class WavFormatError(AuscultError, ValueError):
    pass


class NotMono(WavFormatError):
    pass


class NotPcm16(WavFormatError):
    pass


class WrongSampleRate(WavFormatError):
    pass


class TruncatedFile(WavFormatError):
    pass


class UnknownSubject(AuscultError, KeyError):
    pass


class ManifestError(AuscultError, ValueError):
    pass


class DuplicateChannel(ManifestError):
    pass


class MissingDiagnosis(ManifestError):
    pass


class DanglingFileReference(ManifestError):
    pass


class RecordingTooShort(AuscultError, ValueError):
    pass


class EmptyCorpus(AuscultError, ValueError):
    pass


# features
class TooShortForFrame(AuscultError, ValueError):
    pass


class TooShortForDfa(AuscultError, ValueError):
    pass


# datasets
class MissingUnit(AuscultError, ValueError):
    pass


class MissingChannel(MissingUnit):
    pass


class MissingWindow(MissingUnit):
    pass


class FieldUndefinedForVariant(AuscultError, ValueError):
    pass


class AllRowsNaForColumn(AuscultError, ValueError):
    pass


# models
class SingleClassTrainingSet(AuscultError, ValueError):
    pass


class ColumnMismatch(AuscultError, ValueError):
    pass


# evaluation / fusion
class SingleClassInput(AuscultError, ValueError):
    pass


class TooFewSubjectsForK(AuscultError, ValueError):
    pass


class InconsistentGroupLabel(AuscultError, ValueError):
    pass


class EmptyGroup(AuscultError, ValueError):
    pass


class ConfigError(AuscultError, ValueError):
    pass
