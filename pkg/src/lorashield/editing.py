"""Robust editing of a LoRA weight subspace against a target concept.

Per layer, the dense delta is initialized from the composed low-rank
factors and updated for T Adam steps to pull the projection of each
target-concept (synonym) embedding toward the anchor (antonym or
neutral) projection of the unedited adapter:

    L_align = mean[ c_t (W + a*D_hat + p) - c (W + a*D) ]^2
    L_pre   = mean[ D_hat - D ]^2
    L_all   = mean over the K pairs of L_align  +  eta * L_pre

where p is a parameter-space perturbation of Frobenius norm tau taken
along the ascent direction of the pair-averaged alignment loss, which
is what makes the erasure hold up in a semantic neighbourhood of the
target rather than at a single embedding. The anchor projection is
computed once and treated as a constant: gradients never flow into the
original delta. After the loop the edited delta is re-factorized to the
layer's original rank via the truncated-SVD square-root split.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .adapter import (
    DEFAULT_TARGET_PATTERNS,
    BaseWeights,
    LoraAdapter,
    LoraLayer,
    base_weight_for,
    compose_delta,
    resolve_target_layers,
    scale_factor,
)
from .concepts import BenignProbeSet, ConceptSpec, antonym_or_neutral
from .errors import NonFiniteInputError, NonFiniteLossError, ShapeMismatchError
from .factorization import factor_delta
from .metrics import EditReport, LayerMetrics, benign_drift, param_drift, projection_shift

log = logging.getLogger("lorashield.editing")

_ZERO_GRAD_NORM = 1e-12


@dataclass
class EditConfig:
    """Hyperparameters of the editing loop."""

    steps: int = 10
    tau: float = 1e-5
    eta: float = 0.1
    learning_rate: float = 1e-3
    alpha: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    compute_dtype: str = "F64"

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.compute_dtype not in ("F32", "F64"):
            raise ValueError("compute_dtype must be F32 or F64")

    def numpy_dtype(self):
        return np.float64 if self.compute_dtype == "F64" else np.float32

    def echo(self) -> dict:
        return {
            "steps": self.steps,
            "tau": self.tau,
            "eta": self.eta,
            "learning_rate": self.learning_rate,
            "alpha": self.alpha,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
            "seed": self.seed,
            "compute_dtype": self.compute_dtype,
        }


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, shape, dtype) -> "AdamState":
        return cls(
            first_moment=np.zeros(shape, dtype=dtype),
            second_moment=np.zeros(shape, dtype=dtype),
        )


@dataclass
class StepRecord:
    l_align: float
    l_pre: float
    l_all: float
    perturb_norm: float
    grad_norm: float


@dataclass
class LayerEditTrace:
    steps: list[StepRecord] = field(default_factory=list)
    initial_l_align: float = 0.0
    final_l_align: float = 0.0


def _as_checked(name: str, arr, ndim: int = 2) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != ndim:
        raise ShapeMismatchError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFiniteInputError(f"{name} contains NaN or infinity")
    return arr


def _validate_align_shapes(c_t, c, W, delta_hat, delta_orig, perturb) -> None:
    if c_t.shape != c.shape:
        raise ShapeMismatchError(f"c_t {c_t.shape} vs c {c.shape}")
    for nm, a in (("delta_hat", delta_hat), ("delta_orig", delta_orig), ("perturb", perturb)):
        if a.shape != W.shape:
            raise ShapeMismatchError(f"{nm} {a.shape} vs W {W.shape}")
    if c_t.shape[1] != W.shape[0]:
        raise ShapeMismatchError(f"embedding dim {c_t.shape[1]} vs W rows {W.shape[0]}")


def _residual(c_t, c, W, delta_hat, delta_orig, alpha, perturb) -> np.ndarray:
    return c_t @ (W + alpha * delta_hat + perturb) - c @ (W + alpha * delta_orig)


def loss_align(c_t, c, W, delta_hat, delta_orig, alpha, perturb) -> float:
    """Mean squared aligned-projection residual over all L*m output entries."""
    c_t = _as_checked("c_t", c_t)
    c = _as_checked("c", c)
    W = _as_checked("W", W)
    delta_hat = _as_checked("delta_hat", delta_hat)
    delta_orig = _as_checked("delta_orig", delta_orig)
    perturb = _as_checked("perturb", perturb)
    _validate_align_shapes(c_t, c, W, delta_hat, delta_orig, perturb)
    R = _residual(c_t, c, W, delta_hat, delta_orig, alpha, perturb)
    return float(np.mean(R * R))


def loss_pre(delta_hat, delta_orig) -> float:
    """Mean squared entry-wise difference between edited and original deltas."""
    delta_hat = _as_checked("delta_hat", delta_hat)
    delta_orig = _as_checked("delta_orig", delta_orig)
    if delta_hat.shape != delta_orig.shape:
        raise ShapeMismatchError(f"{delta_hat.shape} vs {delta_orig.shape}")
    d = delta_hat - delta_orig
    return float(np.mean(d * d))


def grad_align(c_t, c, W, delta_hat, delta_orig, alpha, perturb) -> np.ndarray:
    """Analytic d loss_align / d delta_hat = (2a / (L*m)) * c_t^T R."""
    c_t = _as_checked("c_t", c_t)
    c = _as_checked("c", c)
    W = _as_checked("W", W)
    delta_hat = _as_checked("delta_hat", delta_hat)
    delta_orig = _as_checked("delta_orig", delta_orig)
    perturb = _as_checked("perturb", perturb)
    _validate_align_shapes(c_t, c, W, delta_hat, delta_orig, perturb)
    R = _residual(c_t, c, W, delta_hat, delta_orig, alpha, perturb)
    L, m = R.shape
    return (2.0 * alpha / (L * m)) * (c_t.T @ R)


def grad_pre(delta_hat, delta_orig) -> np.ndarray:
    """Analytic d loss_pre / d delta_hat = 2 (delta_hat - delta_orig) / (n*m)."""
    d = np.asarray(delta_hat) - np.asarray(delta_orig)
    return (2.0 / d.size) * d


def adversarial_delta(c_t, c, W, delta_hat, delta_orig, alpha, tau) -> np.ndarray:
    """Worst-case weight perturbation of Frobenius norm tau.

    Takes the ascent direction of the alignment loss with respect to the
    perturbed weight (at zero perturbation) and rescales it to the tau
    boundary; returns the zero matrix at stationary points.
    """
    if not tau > 0:
        raise ValueError("tau must be > 0")
    c_t = _as_checked("c_t", c_t)
    c = _as_checked("c", c)
    W = _as_checked("W", W)
    delta_hat = _as_checked("delta_hat", delta_hat)
    delta_orig = _as_checked("delta_orig", delta_orig)
    zero = np.zeros_like(W)
    _validate_align_shapes(c_t, c, W, delta_hat, delta_orig, zero)
    R = _residual(c_t, c, W, delta_hat, delta_orig, alpha, zero)
    L, m = R.shape
    g = (2.0 / (L * m)) * (c_t.T @ R)
    norm = float(np.linalg.norm(g))
    if norm < _ZERO_GRAD_NORM:
        return zero
    return (tau / norm) * g


def adam_step(
    state: AdamState, param: np.ndarray, grad: np.ndarray, config: EditConfig
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new parameter and state."""
    if param.shape != grad.shape or state.first_moment.shape != param.shape:
        raise ShapeMismatchError(
            f"param {param.shape} / grad {grad.shape} / state {state.first_moment.shape}"
        )
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grad
    v = b2 * state.second_moment + (1.0 - b2) * (grad * grad)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_param = param - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
    return new_param, AdamState(first_moment=m, second_moment=v, step_count=t)


def edit_layer(
    layer: LoraLayer,
    W: np.ndarray,
    spec: ConceptSpec,
    config: EditConfig,
    alpha_over_rank: bool = True,
) -> tuple[np.ndarray, LayerEditTrace]:
    """Run the editing loop on one layer; returns the dense edited delta (n, m).

    The returned delta is in math orientation and includes the stored
    alpha-over-rank scale, exactly like the initialization.
    """
    config.validate()
    spec.validate()
    dtype = config.numpy_dtype()
    W = _as_checked("W", W).astype(dtype)
    n, m = W.shape
    delta_orig = compose_delta(layer, alpha_over_rank).T.astype(dtype)
    if delta_orig.shape != W.shape:
        raise ShapeMismatchError(
            f"layer {layer.name!r} delta {delta_orig.shape} vs base weight {W.shape}"
        )
    if spec.shape[1] != n:
        raise ShapeMismatchError(
            f"embedding dim {spec.shape[1]} does not match layer input dim {n}"
        )

    K = spec.k
    alpha, tau, eta = config.alpha, config.tau, config.eta
    L = spec.shape[0]
    grad_scale = 2.0 / (L * m)
    # The K pairs are stacked row-wise so each pass is one GEMM; the
    # pair-averaged loss and gradients equal the stacked ones exactly.
    stacked = np.vstack([np.asarray(spec.synonyms[i], dtype=dtype) for i in range(K)])
    anchors = np.vstack(
        [np.asarray(antonym_or_neutral(spec, i), dtype=dtype) for i in range(K)]
    ) @ (W + alpha * delta_orig)
    stacked_w = stacked @ W  # constant across steps

    def clean_residual(delta_hat):
        return stacked_w + alpha * (stacked @ delta_hat) - anchors

    delta_hat = delta_orig.copy()
    adam = AdamState.fresh(delta_hat.shape, dtype)
    trace = LayerEditTrace()
    trace.initial_l_align = float(np.mean(clean_residual(delta_hat) ** 2))

    for step in range(config.steps):
        residual0 = clean_residual(delta_hat)
        g = (stacked.T @ residual0) * (grad_scale / K)
        g_norm = float(np.linalg.norm(g))
        perturb = (tau / g_norm) * g if g_norm >= _ZERO_GRAD_NORM else np.zeros_like(W)

        R = residual0 + stacked @ perturb
        l_align = float(np.mean(R * R))
        grad_total = (stacked.T @ R) * (alpha * grad_scale / K)

        diff = delta_hat - delta_orig
        l_pre = float(np.mean(diff * diff))
        grad_total += eta * (2.0 / diff.size) * diff
        l_all = l_align + eta * l_pre
        if not np.isfinite(l_all):
            raise NonFiniteLossError(
                f"layer {layer.name!r}: non-finite loss at step {step}"
            )

        trace.steps.append(
            StepRecord(
                l_align=l_align,
                l_pre=l_pre,
                l_all=l_all,
                perturb_norm=float(np.linalg.norm(perturb)),
                grad_norm=float(np.linalg.norm(grad_total)),
            )
        )
        delta_hat, adam = adam_step(adam, delta_hat, grad_total, config)
        if not np.isfinite(delta_hat).all():
            raise NonFiniteLossError(
                f"layer {layer.name!r}: non-finite parameters at step {step}"
            )

    trace.final_l_align = float(np.mean(clean_residual(delta_hat) ** 2))
    return delta_hat, trace


def _layer_projection_shifts(W, delta_orig, delta_edited, spec, alpha) -> np.ndarray:
    """projection_shift for all K pairs of one layer in three GEMMs."""
    before_w = W + alpha * delta_orig
    after_w = W + alpha * delta_edited
    syn = np.vstack(spec.synonyms)
    anchor_proj = np.vstack(
        [antonym_or_neutral(spec, i) for i in range(spec.k)]
    ) @ before_w
    target_after = syn @ after_w - anchor_proj
    target_before = syn @ before_w - anchor_proj
    shifts = np.empty(spec.k)
    L = spec.shape[0]
    for i in range(spec.k):
        block = slice(i * L, (i + 1) * L)
        denom = float(np.linalg.norm(target_before[block]))
        shifts[i] = (
            1.0 if denom < 1e-12 else float(np.linalg.norm(target_after[block])) / denom
        )
    return shifts


def _layer_benign_drifts(W, delta_orig, delta_edited, probes, alpha) -> list[float]:
    """benign_drift for every probe of one layer in two GEMMs."""
    stacked = np.vstack(probes.probes)
    before = stacked @ (W + alpha * delta_orig)
    after = stacked @ (W + alpha * delta_edited)
    out = []
    row = 0
    for probe in probes.probes:
        block = slice(row, row + probe.shape[0])
        row += probe.shape[0]
        denom = max(float(np.linalg.norm(before[block])), 1e-12)
        out.append(float(np.linalg.norm(after[block] - before[block])) / denom)
    return out


def edit_adapter(
    adapter: LoraAdapter,
    base: BaseWeights,
    spec: ConceptSpec,
    config: EditConfig,
    patterns=None,
    probes: BenignProbeSet | None = None,
    workers: int = 1,
    rank_override: int | None = None,
) -> tuple[LoraAdapter, EditReport]:
    """Edit every resolved target layer and assemble a complete adapter.

    Non-target layers pass through untouched. Each edited dense delta is
    re-factorized at the layer's original rank (or `rank_override`); the
    factors are rescaled so the stored alpha keeps its original value.
    Deterministic given identical inputs and seed, regardless of the
    worker count.
    """
    config.validate()
    spec.validate()
    names = resolve_target_layers(adapter, patterns or DEFAULT_TARGET_PATTERNS)
    report = EditReport(concept=spec.concept_label, config=config.echo())

    editable: list[str] = []
    for name in names:
        base_weight_for(base, name)  # fail fast on missing weights
        layer = adapter.layers[name]
        if scale_factor(layer.stored_alpha, layer.rank, adapter.alpha_over_rank) == 0.0:
            report.warnings.append(
                f"layer {name!r} has zero effective scale and was left unedited"
            )
            continue
        editable.append(name)

    t_start = time.monotonic()

    def run_one(name: str):
        layer = adapter.layers[name]
        W = base_weight_for(base, name)
        t0 = time.monotonic()
        dense, trace = edit_layer(layer, W, spec, config, adapter.alpha_over_rank)
        rank_out = min(rank_override or layer.rank, *dense.T.shape)
        # Factors are stored divided by the effective scale so the layer's
        # alpha tensor can keep its original value.
        scale = scale_factor(layer.stored_alpha, rank_out, adapter.alpha_over_rank)
        B_hat, A_hat, svd_err = factor_delta(dense.T / scale, rank_out)
        new_layer = replace(layer, A=A_hat, B=B_hat, rank=rank_out)
        return name, dense, trace, new_layer, svd_err, time.monotonic() - t0

    if workers > 1 and len(editable) > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(editable))) as pool:
            results = {r[0]: r for r in pool.map(run_one, editable)}
    else:
        results = {r[0]: r for r in map(run_one, editable)}

    new_layers = dict(adapter.layers)
    shift_sums = np.zeros(spec.k)
    drift_values: list[float] = []
    for name in editable:
        _, dense, trace, new_layer, svd_err, elapsed = results[name]
        layer = adapter.layers[name]
        W = base_weight_for(base, name)
        delta_orig = compose_delta(layer, adapter.alpha_over_rank).T
        shipped = scale_factor(
            new_layer.stored_alpha, new_layer.rank, adapter.alpha_over_rank
        ) * (new_layer.B @ new_layer.A)
        delta_edited = shipped.T
        shift_sums += _layer_projection_shifts(
            W, delta_orig, delta_edited, spec, config.alpha
        )
        if probes is not None:
            drift_values.extend(
                _layer_benign_drifts(W, delta_orig, delta_edited, probes, config.alpha)
            )
        monotone = trace.final_l_align <= trace.initial_l_align
        if not monotone:
            report.warnings.append(
                f"layer {name!r}: final alignment loss exceeds initial "
                f"({trace.final_l_align:.3e} > {trace.initial_l_align:.3e})"
            )
        report.layers[name] = LayerMetrics(
            initial_l_align=trace.initial_l_align,
            final_l_align=trace.final_l_align,
            final_l_pre=loss_pre(dense, delta_orig.astype(dense.dtype)),
            svd_relative_error=svd_err,
            param_drift=param_drift(delta_orig, delta_edited),
            erasure_monotone=monotone,
        )
        report.timings[name] = elapsed
        new_layers[name] = new_layer

    if editable:
        report.projection_shift_per_pair = list(shift_sums / len(editable))
    if drift_values:
        report.benign_drift_max = float(np.max(drift_values))
        report.benign_drift_mean = float(np.mean(drift_values))
    report.timings["total_s"] = time.monotonic() - t_start
    log.info(
        "edited %d layer(s) in %.2fs, mean projection shift %.4f",
        len(editable), report.timings["total_s"], report.mean_projection_shift,
    )

    edited = LoraAdapter(
        layers=new_layers,
        base_model_hint=adapter.base_model_hint,
        alpha_over_rank=adapter.alpha_over_rank,
        metadata=adapter.metadata,
    )
    return edited, report
