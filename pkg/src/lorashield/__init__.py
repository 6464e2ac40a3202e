"""Data-free concept erasure for shared LoRA adapters.

Rewrites an adapter's weight subspace so prompts for a chosen concept
project onto anchor behaviour instead, while the adapter's benign task
is preserved. Ships as a library, a CLI (``lorashield``) and an HTTP
edit service (``lorashield.service``).
"""

from .adapter import (
    DEFAULT_TARGET_PATTERNS,
    BaseWeights,
    LoraAdapter,
    LoraLayer,
    adapter_from_tensor_map,
    adapter_to_tensor_map,
    base_weights_from_tensor_map,
    compose_delta,
    merge_adapters,
    resolve_target_layers,
    scale_factor,
)
from .concepts import (
    BenignProbeSet,
    ConceptSpec,
    antonym_or_neutral,
    fetch_concept_bundle,
    load_concept_spec,
    load_probe_set,
    save_concept_spec,
    save_probe_set,
)
from .container import (
    TensorMap,
    read_container,
    read_container_file,
    write_container,
    write_container_file,
)
from .editing import (
    AdamState,
    EditConfig,
    LayerEditTrace,
    adam_step,
    adversarial_delta,
    edit_adapter,
    edit_layer,
    grad_align,
    grad_pre,
    loss_align,
    loss_pre,
)
from .factorization import TruncatedSvd, sqrt_split, svd_truncate
from .metrics import EditReport, benign_drift, param_drift, projection_shift

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BaseWeights",
    "BenignProbeSet",
    "ConceptSpec",
    "DEFAULT_TARGET_PATTERNS",
    "EditConfig",
    "EditReport",
    "LayerEditTrace",
    "LoraAdapter",
    "LoraLayer",
    "TensorMap",
    "TruncatedSvd",
    "adam_step",
    "adapter_from_tensor_map",
    "adapter_to_tensor_map",
    "adversarial_delta",
    "antonym_or_neutral",
    "base_weights_from_tensor_map",
    "benign_drift",
    "compose_delta",
    "edit_adapter",
    "edit_layer",
    "fetch_concept_bundle",
    "grad_align",
    "grad_pre",
    "load_concept_spec",
    "load_probe_set",
    "loss_align",
    "loss_pre",
    "merge_adapters",
    "param_drift",
    "projection_shift",
    "read_container",
    "read_container_file",
    "resolve_target_layers",
    "save_concept_spec",
    "save_probe_set",
    "scale_factor",
    "sqrt_split",
    "svd_truncate",
    "write_container",
    "write_container_file",
]
