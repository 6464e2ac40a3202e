"""Shared builders for synthetic adapters, base weights and concept bundles.

Scales are calibrated once so that the default editing configuration
(10 steps, lr 1e-3) reaches the acceptance thresholds on the seeded
fixture, then frozen here.
"""

from __future__ import annotations

import numpy as np

from lorashield import TensorMap
from lorashield.concepts import BenignProbeSet, ConceptSpec

# Frozen fixture scales (see tests/test_acceptance.py).
BASE_WEIGHT_NORM = 0.3     # concept-coupled part of W, entries ~ N(0, (norm/sqrt(n))^2)
BENIGN_BOOST = 8.0         # benign weight mass relative to the coupled part
DELTA_TO_BASE_RATIO = 0.3  # ||delta||_F relative to the coupled ||W||_F
TOKEN_NOISE = 0.05         # per-token jitter around the shared phrase direction
FACTOR_DECAY = 0.6         # geometric decay of factor column scales


def attn_layer_names(blocks: int, cross_attention: bool = True) -> list[str]:
    kind = "attn2" if cross_attention else "attn1"
    names = []
    for b in range(blocks):
        stem = f"unet.blocks.{b}.transformer.{kind}"
        names.extend([f"{stem}.to_k", f"{stem}.to_v"])
    return names


def synth_base_weights(
    rng, names, n, m, norm=BASE_WEIGHT_NORM, benign_rows=None, benign_boost=BENIGN_BOOST
) -> TensorMap:
    """Base container with disk-orientation (m, n) weight per layer.

    When `benign_rows` (an embedding-row matrix) is given, each weight
    gets extra mass in the input directions orthogonal to those rows:
    the part of the layer a concept edit never touches, which any real
    projection matrix has in abundance.
    """
    projector = None
    if benign_rows is not None and benign_boost > 0:
        q, _ = np.linalg.qr(np.asarray(benign_rows, dtype=np.float64).T)
        projector = np.eye(n) - q @ q.T
    tensors = {}
    for name in names:
        W_math = rng.normal(0.0, norm / np.sqrt(n), size=(n, m))
        if projector is not None:
            W_math += projector @ rng.normal(
                0.0, benign_boost * norm / np.sqrt(n), size=(n, m)
            )
        tensors[name] = np.ascontiguousarray(W_math.T, dtype=np.float64)
    return TensorMap(tensors=tensors)


def synth_adapter_map(
    rng,
    names,
    n,
    m,
    rank,
    delta_norm: float | None = None,
    naming: str = "lora_A",
    dtype=np.float32,
    stored_alpha: float | None = None,
    decay: float = FACTOR_DECAY,
) -> TensorMap:
    """Adapter container with a decaying-spectrum delta of known norm."""
    suffix_a = ".lora_A.weight" if naming == "lora_A" else ".lora_down.weight"
    suffix_b = ".lora_B.weight" if naming == "lora_A" else ".lora_up.weight"
    if delta_norm is None:
        delta_norm = DELTA_TO_BASE_RATIO * BASE_WEIGHT_NORM * np.sqrt(m)
    tensors = {}
    for name in names:
        B = rng.normal(size=(m, rank))
        A = rng.normal(size=(rank, n))
        B *= decay ** np.arange(rank)[None, :]
        scale = delta_norm / max(np.linalg.norm(B @ A), 1e-12)
        B *= np.sqrt(scale)
        A *= np.sqrt(scale)
        alpha = float(rank) if stored_alpha is None else float(stored_alpha)
        tensors[name + suffix_a] = A.astype(dtype)
        tensors[name + suffix_b] = B.astype(dtype)
        tensors[name + ".alpha"] = np.asarray(alpha, dtype=dtype)
    return TensorMap(tensors=tensors)


def synth_bundle(
    rng, n, L=8, k=5, noise=TOKEN_NOISE, concept="fixture-concept"
) -> ConceptSpec:
    """K synonym/antonym pairs sharing one target/anchor phrase direction.

    Directions are sign vectors so the required weight edit spreads
    uniformly across coordinates instead of concentrating on a few.
    """
    target = rng.choice((-1.0, 1.0), size=n) / np.sqrt(n)
    anchor = rng.choice((-1.0, 1.0), size=n) / np.sqrt(n)

    def phrase(direction):
        jitter = rng.normal(0.0, noise / np.sqrt(n), size=(L, n))
        return (np.ones((L, 1)) * direction[None, :] + jitter).astype(np.float64)

    return ConceptSpec(
        concept_label=concept,
        synonyms=[phrase(target) for _ in range(k)],
        antonyms=[phrase(anchor) for _ in range(k)],
        neutral=np.zeros((L, n), dtype=np.float64),
        encoder_id="synthetic",
    )


def synth_probes(rng, n, L=8, count=20) -> BenignProbeSet:
    probes = [rng.normal(size=(L, n)) / np.sqrt(n) for _ in range(count)]
    return BenignProbeSet(probes=[p.astype(np.float64) for p in probes])


def synth_fixture(seed, blocks, n, m, rank, L=8, k=5, dtype=np.float32):
    """Coherent (base map, adapter map, spec, probes) kit for one seed.

    Layer count is 2 * blocks (a to_k/to_v pair per block); all layers
    are cross-attention and match the default target patterns.
    """
    rng = np.random.default_rng(seed)
    names = attn_layer_names(blocks)
    spec = synth_bundle(rng, n, L=L, k=k)
    pair_rows = np.concatenate(
        [spec.synonyms[i] - spec.antonyms[i] for i in range(spec.k)], axis=0
    )
    base_map = synth_base_weights(rng, names, n, m, benign_rows=pair_rows)
    adapter_map = synth_adapter_map(rng, names, n, m, rank, dtype=dtype)
    probes = synth_probes(rng, n, L=L, count=20)
    return base_map, adapter_map, spec, probes


def jacobi_singular_values(M, sweeps=100, tol=1e-14) -> np.ndarray:
    """Full set of singular values via one-sided Jacobi rotations.

    Independent of LAPACK; used as the reference decomposition for
    truncation-error checks on small matrices.
    """
    A = np.array(M, dtype=np.float64)
    if A.shape[0] < A.shape[1]:
        A = A.T
    n = A.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = float(A[:, p] @ A[:, p])
                aqq = float(A[:, q] @ A[:, q])
                apq = float(A[:, p] @ A[:, q])
                denom = np.sqrt(app * aqq)
                if denom <= 0 or abs(apq) <= tol * denom:
                    continue
                off = max(off, abs(apq) / denom)
                zeta = (aqq - app) / (2.0 * apq)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                col_p = A[:, p].copy()
                A[:, p] = c * col_p - s * A[:, q]
                A[:, q] = s * col_p + c * A[:, q]
        if off < tol:
            break
    values = np.sqrt(np.sum(A * A, axis=0))
    return np.sort(values)[::-1]
