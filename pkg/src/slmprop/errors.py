"""Exception hierarchy shared by all slmprop modules."""


class SlmError(Exception):
    """Base class for every error raised by this package."""


# --- file format / IO -------------------------------------------------------

class BadMagic(SlmError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(SlmError):
    """Header version field is not one this reader understands."""


class TruncatedFile(SlmError):
    """File ends before the payload promised by its header."""


class IoFailure(SlmError):
    """Underlying OS write/read failed."""


# --- data / configuration ---------------------------------------------------

class SpecInvalid(SlmError):
    """Scenario specification violates its own constraints."""


class ShapeMismatch(SlmError):
    """Tensor or array arguments have incompatible shapes."""


class DimMismatch(SlmError):
    """Volumes or masks passed together do not share dimensions."""


# --- memory / attention -----------------------------------------------------

class EmptyMemory(SlmError):
    """Attention asked to attend over zero key tokens."""


class EmptyBank(SlmError):
    """Memory bank holds no entries."""


class BothBanksEmpty(SlmError):
    """Neither the short nor the long memory bank holds an entry."""


# --- training ----------------------------------------------------------------

class MissingGrad(SlmError):
    """Optimizer step requested for a parameter without a gradient."""


class InsufficientSlices(SlmError):
    """Case cannot supply a training window of the requested length."""


class IndexOutOfRange(SlmError):
    """Slice index outside the volume."""


# --- metrics -----------------------------------------------------------------

class NoTargetSlices(SlmError):
    """Ground truth contains no slice with the requested object."""


class ZeroBaseline(SlmError):
    """Saved-effort ratio undefined for a zero baseline."""


class TooFewValues(SlmError):
    """Bootstrap needs at least two values."""


class ObjectAbsent(SlmError):
    """Requested object id never appears in the mask volume."""
