"""Embedding-space verification metrics and the machine-readable edit report.

These metrics are deliberate stand-ins that operate on layer projections
of embeddings, not on generated images; they are named projection_shift
and benign_drift rather than borrowing image-metric names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError

REPORT_SCHEMA_VERSION = "lorashield-report-v1"

_EPS = 1e-12


def _projected(emb: np.ndarray, W: np.ndarray, delta: np.ndarray, alpha: float) -> np.ndarray:
    if emb.shape[1] != W.shape[0] or W.shape != delta.shape:
        raise ShapeMismatchError(
            f"embedding {emb.shape} x weight {W.shape} / delta {delta.shape}"
        )
    return emb @ (W + alpha * delta)


def projection_shift(W, delta_orig, delta_edited, c_t, c_anchor, alpha=1.0) -> float:
    """How far the target's projection moved toward the anchor's.

    Ratio of the edited target-vs-anchor projection distance to the
    original one; < 1 means the edit pulled the target toward the
    anchor, 1.0 means no movement. Returns exactly 1.0 when the
    original distance is degenerate (< 1e-12).
    """
    target = _projected(np.asarray(c_t, dtype=np.float64), W, delta_edited, alpha)
    anchor = _projected(np.asarray(c_anchor, dtype=np.float64), W, delta_orig, alpha)
    before = _projected(np.asarray(c_t, dtype=np.float64), W, delta_orig, alpha)
    denom = float(np.linalg.norm(before - anchor))
    if denom < _EPS:
        return 1.0
    return float(np.linalg.norm(target - anchor)) / denom


def benign_drift(W, delta_orig, delta_edited, probe, alpha=1.0) -> float:
    """Relative change of a benign probe's projection caused by the edit."""
    probe = np.asarray(probe, dtype=np.float64)
    before = _projected(probe, W, delta_orig, alpha)
    after = _projected(probe, W, delta_edited, alpha)
    return float(np.linalg.norm(after - before)) / max(float(np.linalg.norm(before)), _EPS)


def param_drift(delta_orig, delta_edited) -> float:
    """Relative Frobenius distance between edited and original deltas."""
    delta_orig = np.asarray(delta_orig, dtype=np.float64)
    delta_edited = np.asarray(delta_edited, dtype=np.float64)
    if delta_orig.shape != delta_edited.shape:
        raise ShapeMismatchError(f"{delta_orig.shape} vs {delta_edited.shape}")
    return float(np.linalg.norm(delta_edited - delta_orig)) / max(
        float(np.linalg.norm(delta_orig)), _EPS
    )


@dataclass
class LayerMetrics:
    initial_l_align: float
    final_l_align: float
    final_l_pre: float
    svd_relative_error: float
    param_drift: float
    erasure_monotone: bool

    def to_dict(self) -> dict:
        return {
            "initial_l_align": self.initial_l_align,
            "final_l_align": self.final_l_align,
            "final_l_pre": self.final_l_pre,
            "svd_relative_error": self.svd_relative_error,
            "param_drift": self.param_drift,
            "erasure_monotone": self.erasure_monotone,
        }


@dataclass
class EditReport:
    """Per-layer and run-level diagnostics for one editing run.

    `timings` is informational and excluded from the canonical JSON so
    that identical inputs always serialize to identical bytes.
    """

    concept: str
    config: dict
    layers: dict[str, LayerMetrics] = field(default_factory=dict)
    projection_shift_per_pair: list[float] = field(default_factory=list)
    benign_drift_max: float | None = None
    benign_drift_mean: float | None = None
    warnings: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    schema_version: str = REPORT_SCHEMA_VERSION

    @property
    def mean_projection_shift(self) -> float:
        if not self.projection_shift_per_pair:
            return 1.0
        return float(np.mean(self.projection_shift_per_pair))

    def to_dict(self, canonical: bool = True) -> dict:
        doc = {
            "schema_version": self.schema_version,
            "concept": self.concept,
            "config": self.config,
            "edited_layers": sorted(self.layers),
            "layers": {name: m.to_dict() for name, m in sorted(self.layers.items())},
            "projection_shift": {
                "per_pair": list(self.projection_shift_per_pair),
                "mean": self.mean_projection_shift,
            },
            "benign_drift": (
                None
                if self.benign_drift_max is None
                else {"max": self.benign_drift_max, "mean": self.benign_drift_mean}
            ),
            "warnings": list(self.warnings),
        }
        if not canonical:
            doc["timings"] = dict(self.timings)
        return doc

    def to_json(self, canonical: bool = True) -> str:
        return dumps_canonical(self.to_dict(canonical=canonical))


def _round_floats(obj, sig: int = 9):
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, float):
        return float(f"{obj:.{sig}g}")
    if isinstance(obj, (np.floating, np.integer)):
        return _round_floats(obj.item(), sig)
    if isinstance(obj, dict):
        return {k: _round_floats(v, sig) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, sig) for v in obj]
    return obj


def dumps_canonical(doc: dict) -> str:
    """Deterministic JSON: sorted keys, floats at 9 significant digits."""
    return json.dumps(
        _round_floats(doc), sort_keys=True, separators=(",", ":"), allow_nan=False
    )
