"""Semantic model of a LoRA adapter.

Orientation conventions:
  * On disk, factor tensors follow the (out, in) layout: the down
    projection A is (rank, n) and the up projection B is (m, rank), so
    the composed delta B @ A is (m, n). Base weights are stored (m, n)
    on disk and transposed to the math orientation (n, m) on load, where
    a length-n embedding row is projected as row @ W.
  * Both the "lora_down/lora_up" and the "lora_A/lora_B" tensor-naming
    families are recognized; a per-layer ".alpha" scalar is optional.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field

import numpy as np

from .container import DTYPE_TO_NUMPY, TensorMap, dtype_name
from .errors import (
    MissingBaseWeightError,
    NoLayersMatchedError,
    NonFiniteInputError,
    ShapeMismatchError,
)
from .factorization import factor_delta

# Cross-attention key/value projections: the layers whose input is the
# text embedding, hence the only layers the alignment loss applies to.
DEFAULT_TARGET_PATTERNS = ("*attn2*to_k*", "*attn2*to_v*")

_SUFFIXES = {
    ".lora_A.weight": ("lora_A", "A"),
    ".lora_B.weight": ("lora_A", "B"),
    ".lora_down.weight": ("lora_down", "A"),
    ".lora_up.weight": ("lora_down", "B"),
}
_FAMILY_SUFFIX = {
    "lora_A": (".lora_A.weight", ".lora_B.weight"),
    "lora_down": (".lora_down.weight", ".lora_up.weight"),
}


@dataclass
class LoraLayer:
    """One low-rank delta: A is (rank, n), B is (m, rank)."""

    name: str
    A: np.ndarray
    B: np.ndarray
    stored_alpha: float
    rank: int
    naming: str = "lora_A"
    dtype: str = "F32"
    has_alpha_tensor: bool = True

    def __post_init__(self):
        if self.rank < 1:
            raise ShapeMismatchError(f"layer {self.name!r}: rank must be >= 1")
        if self.A.ndim != 2 or self.B.ndim != 2:
            raise ShapeMismatchError(f"layer {self.name!r}: A and B must be matrices")
        if self.A.shape[0] != self.rank or self.B.shape[1] != self.rank:
            raise ShapeMismatchError(
                f"layer {self.name!r}: factor shapes {self.B.shape} x {self.A.shape} "
                f"do not match rank {self.rank}"
            )
        m, n = self.B.shape[0], self.A.shape[1]
        if self.rank > min(m, n):
            raise ShapeMismatchError(
                f"layer {self.name!r}: rank {self.rank} exceeds min{(m, n)}"
            )
        if self.stored_alpha < 0:
            raise ShapeMismatchError(f"layer {self.name!r}: stored_alpha must be >= 0")

    @property
    def out_dim(self) -> int:
        return self.B.shape[0]

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]


@dataclass
class LoraAdapter:
    layers: dict[str, LoraLayer] = field(default_factory=dict)
    base_model_hint: str | None = None
    alpha_over_rank: bool = True
    metadata: dict[str, str] | None = None


@dataclass
class BaseWeights:
    """Base weight matrices in math orientation (n, m), keyed by layer name."""

    layers: dict[str, np.ndarray]
    source: str | None = None


def scale_factor(stored_alpha: float, rank: int, alpha_over_rank: bool = True) -> float:
    """Effective factor folded into the composed delta.

    Under the ecosystem alpha-over-rank convention this is
    stored_alpha / rank; adapters that opt out use 1.0. Distinct from
    the user-facing merge ratio applied at inference time.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if not alpha_over_rank:
        return 1.0
    return float(stored_alpha) / float(rank)


def compose_delta(layer: LoraLayer, alpha_over_rank: bool = True) -> np.ndarray:
    """Scaled composed delta B @ A in disk orientation (m, n), float64."""
    if layer.B.shape[1] != layer.A.shape[0]:
        raise ShapeMismatchError(
            f"layer {layer.name!r}: inner dimensions {layer.B.shape[1]} != "
            f"{layer.A.shape[0]}"
        )
    scale = scale_factor(layer.stored_alpha, layer.rank, alpha_over_rank)
    return scale * (layer.B.astype(np.float64) @ layer.A.astype(np.float64))


def resolve_target_layers(adapter: LoraAdapter, patterns) -> list[str]:
    """Sorted layer names matching any glob pattern; raises if none match."""
    patterns = list(patterns)
    if not patterns:
        raise ValueError("patterns must be non-empty")
    matched = sorted(
        name
        for name in adapter.layers
        if any(fnmatch.fnmatchcase(name, pat) for pat in patterns)
    )
    if not matched:
        raise NoLayersMatchedError(f"no layer matched patterns {patterns}")
    return matched


def adapter_from_tensor_map(tmap: TensorMap) -> tuple[LoraAdapter, list[str]]:
    """Group container tensors into LoRA layers.

    Returns the adapter and a list of warnings (missing alpha tensors,
    unrecognized or incomplete entries). Factor tensors are widened to
    float64 for computation; the on-disk dtype is kept per layer.
    """
    warnings: list[str] = []
    groups: dict[str, dict[str, object]] = {}
    for tensor_name, arr in tmap.tensors.items():
        for suffix, (family, role) in _SUFFIXES.items():
            if tensor_name.endswith(suffix):
                layer_name = tensor_name[: -len(suffix)]
                groups.setdefault(layer_name, {})[role] = arr
                groups[layer_name]["naming"] = family
                break
        else:
            if tensor_name.endswith(".alpha"):
                layer_name = tensor_name[: -len(".alpha")]
                groups.setdefault(layer_name, {})["alpha"] = arr
            else:
                warnings.append(f"ignoring unrecognized tensor {tensor_name!r}")

    layers: dict[str, LoraLayer] = {}
    for layer_name in sorted(groups):
        group = groups[layer_name]
        if "A" not in group or "B" not in group:
            warnings.append(f"layer {layer_name!r} lacks a factor pair; skipped")
            continue
        A = np.asarray(group["A"])
        B = np.asarray(group["B"])
        dtype = dtype_name(A)
        rank = A.shape[0]
        if B.shape[1] != rank:
            raise ShapeMismatchError(
                f"layer {layer_name!r}: A is {A.shape} but B is {B.shape}"
            )
        if "alpha" in group:
            stored_alpha = float(np.asarray(group["alpha"]).reshape(()))
            has_alpha = True
        else:
            stored_alpha = float(rank)
            has_alpha = False
            warnings.append(
                f"layer {layer_name!r} has no alpha tensor; assuming scale 1.0"
            )
        layers[layer_name] = LoraLayer(
            name=layer_name,
            A=A.astype(np.float64),
            B=B.astype(np.float64),
            stored_alpha=stored_alpha,
            rank=rank,
            naming=str(group.get("naming", "lora_A")),
            dtype=dtype,
            has_alpha_tensor=has_alpha,
        )

    meta = dict(tmap.metadata) if tmap.metadata else None
    hint = meta.get("base_model") if meta else None
    return LoraAdapter(layers=layers, metadata=meta, base_model_hint=hint), warnings


def layer_tensor_names(layer: LoraLayer) -> tuple[str, str, str]:
    """On-disk tensor names (A, B, alpha) for a layer's naming family."""
    a_suf, b_suf = _FAMILY_SUFFIX[layer.naming]
    return layer.name + a_suf, layer.name + b_suf, layer.name + ".alpha"


def adapter_to_tensor_map(adapter: LoraAdapter) -> TensorMap:
    """Serialize an adapter from scratch, layers in sorted-name order."""
    tensors: dict[str, np.ndarray] = {}
    for name in sorted(adapter.layers):
        layer = adapter.layers[name]
        a_name, b_name, alpha_name = layer_tensor_names(layer)
        np_dtype = DTYPE_TO_NUMPY[layer.dtype]
        tensors[a_name] = layer.A.astype(np_dtype)
        tensors[b_name] = layer.B.astype(np_dtype)
        if layer.has_alpha_tensor:
            tensors[alpha_name] = np.asarray(layer.stored_alpha, dtype=np_dtype)
    return TensorMap(tensors=tensors, metadata=adapter.metadata)


def patch_tensor_map(tmap: TensorMap, adapter: LoraAdapter, layer_names) -> TensorMap:
    """Copy of a container map with the A/B tensors of edited layers replaced.

    Every other tensor (including alpha entries and unrecognized names)
    passes through bit-identically.
    """
    tensors = dict(tmap.tensors)
    for name in layer_names:
        layer = adapter.layers[name]
        a_name, b_name, _ = layer_tensor_names(layer)
        if a_name not in tensors or b_name not in tensors:
            raise ShapeMismatchError(f"layer {name!r} tensors missing from container")
        np_dtype = DTYPE_TO_NUMPY[layer.dtype]
        tensors[a_name] = layer.A.astype(np_dtype)
        tensors[b_name] = layer.B.astype(np_dtype)
    return TensorMap(
        tensors=tensors, metadata=dict(tmap.metadata) if tmap.metadata else None
    )


def base_weights_from_tensor_map(tmap: TensorMap, source: str | None = None) -> BaseWeights:
    """Load base weights, transposing disk (m, n) to math orientation (n, m)."""
    layers: dict[str, np.ndarray] = {}
    for name, arr in tmap.tensors.items():
        W = np.asarray(arr, dtype=np.float64)
        if W.ndim != 2:
            raise ShapeMismatchError(f"base weight {name!r} is not a matrix")
        if not np.isfinite(W).all():
            raise NonFiniteInputError(f"base weight {name!r} contains non-finite values")
        layers[name] = W.T.copy()
    return BaseWeights(layers=layers, source=source)


def base_weight_for(base: BaseWeights, layer_name: str) -> np.ndarray:
    try:
        return base.layers[layer_name]
    except KeyError:
        raise MissingBaseWeightError(layer_name) from None


def merge_adapters(adapters: list[tuple[LoraAdapter, float]]) -> LoraAdapter:
    """Weighted linear combination of adapters at the composed-delta level.

    For every layer name present in any input, the merged composed delta
    is sum(weight_i * delta_i) with absent layers contributing zero. Each
    merged delta is re-factorized at the maximum input rank for that
    layer; merged layers store alpha = rank (effective scale 1.0).
    """
    if not adapters:
        raise ValueError("need at least one adapter to merge")
    names: list[str] = sorted({n for a, _ in adapters for n in a.layers})
    layers: dict[str, LoraLayer] = {}
    for name in names:
        merged: np.ndarray | None = None
        rank_out = 0
        template: LoraLayer | None = None
        for adapter, weight in adapters:
            layer = adapter.layers.get(name)
            if layer is None:
                continue
            delta = compose_delta(layer, adapter.alpha_over_rank)
            if merged is None:
                merged = weight * delta
            elif merged.shape != delta.shape:
                raise ShapeMismatchError(
                    f"layer {name!r}: composed shapes {merged.shape} vs {delta.shape}"
                )
            else:
                merged = merged + weight * delta
            rank_out = max(rank_out, layer.rank)
            if template is None:
                template = layer
        assert merged is not None and template is not None
        rank_out = min(rank_out, *merged.shape)
        B_hat, A_hat, _ = factor_delta(merged, rank_out)
        layers[name] = LoraLayer(
            name=name,
            A=A_hat,
            B=B_hat,
            stored_alpha=float(rank_out),
            rank=rank_out,
            naming=template.naming,
            dtype=template.dtype,
            has_alpha_tensor=True,
        )
    return LoraAdapter(layers=layers, alpha_over_rank=True)
