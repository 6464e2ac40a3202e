"""Exception hierarchy shared by all lorashield modules."""


class LoraShieldError(Exception):
    """Base class for every error raised by this package."""


# ---------------------------------------------------------------------------
# Container format
# ---------------------------------------------------------------------------


class MalformedHeaderError(LoraShieldError):
    """Header is not valid JSON, is structurally wrong, or its length prefix
    exceeds the input."""


class OverlappingOffsetsError(LoraShieldError):
    """Declared data ranges overlap, leave gaps, or exceed the data buffer."""


class UnsupportedDtypeError(LoraShieldError):
    """Tensor dtype is outside the supported set (F16, F32, F64)."""


class NameCollisionError(LoraShieldError):
    """Two tensors were given the same name."""


# ---------------------------------------------------------------------------
# Adapter model
# ---------------------------------------------------------------------------


class ShapeMismatchError(LoraShieldError):
    """Matrix shapes are not conformable for the requested operation."""


class NoLayersMatchedError(LoraShieldError):
    """No adapter layer name matched any of the given patterns."""


class MissingBaseWeightError(LoraShieldError):
    """A resolved target layer has no matching base weight matrix."""

    def __init__(self, layer_name: str):
        super().__init__(f"no base weight for layer {layer_name!r}")
        self.layer_name = layer_name


# ---------------------------------------------------------------------------
# Concept bundles
# ---------------------------------------------------------------------------


class MissingNeutralError(LoraShieldError):
    """Concept bundle has no `neutral` embedding."""


class UnevenPairsError(LoraShieldError):
    """Synonym and antonym tensor counts differ or indices are not contiguous."""


class ShapeDisagreementError(LoraShieldError):
    """Embedding matrices in one bundle do not all share the same shape."""


class ServiceUnavailableError(LoraShieldError):
    """Embedding service could not be reached after bounded retries."""


class ProtocolError(LoraShieldError):
    """Embedding service response is missing required fields."""


# ---------------------------------------------------------------------------
# Numerics
# ---------------------------------------------------------------------------


class NonFiniteInputError(LoraShieldError):
    """An input matrix contains NaN or infinity."""


class NonFiniteLossError(LoraShieldError):
    """A loss or gradient became non-finite during editing."""


class RankTooLargeError(LoraShieldError):
    """Requested truncation rank exceeds min(m, n)."""


class NoConvergenceError(LoraShieldError):
    """SVD iteration budget exhausted without convergence."""
