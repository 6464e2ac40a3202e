"""Concept-embedding bundles: K synonym/antonym matrix pairs plus a neutral
fallback, stored in the tensor container format.

Bundle convention: tensors ``syn/<i>`` and ``ant/<i>`` for i = 0..K-1,
one ``neutral`` tensor, and an optional zero-length ``ant/<i>/absent``
flag per antonym slot that should fall back to the neutral embedding.
Metadata carries ``concept``, ``encoder_id`` and ``k``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .container import TensorMap, read_container_file, write_container_file
from .errors import (
    MissingNeutralError,
    ProtocolError,
    ServiceUnavailableError,
    ShapeDisagreementError,
    UnevenPairsError,
)

log = logging.getLogger("lorashield.concepts")


@dataclass
class ConceptSpec:
    """K paired synonym/antonym embedding matrices for one target concept."""

    concept_label: str
    synonyms: list[np.ndarray]
    antonyms: list[np.ndarray]
    neutral: np.ndarray
    absent_antonyms: frozenset[int] = field(default_factory=frozenset)
    encoder_id: str | None = None

    @property
    def k(self) -> int:
        return len(self.synonyms)

    @property
    def shape(self) -> tuple[int, int]:
        return self.neutral.shape

    def validate(self) -> None:
        if self.k < 1:
            raise UnevenPairsError("need at least one synonym/antonym pair")
        if len(self.antonyms) != self.k:
            raise UnevenPairsError(
                f"{self.k} synonyms but {len(self.antonyms)} antonyms"
            )
        if self.neutral is None:
            raise MissingNeutralError("bundle has no neutral embedding")
        shape = self.neutral.shape
        if len(shape) != 2:
            raise ShapeDisagreementError(f"embeddings must be 2-D, got {shape}")
        for mat in [*self.synonyms, *self.antonyms, self.neutral]:
            if mat.shape != shape:
                raise ShapeDisagreementError(
                    f"embedding shape {mat.shape} disagrees with {shape}"
                )
            if not np.isfinite(mat).all():
                raise ShapeDisagreementError("embedding contains non-finite values")
        if any(i < 0 or i >= self.k for i in self.absent_antonyms):
            raise UnevenPairsError("absent-antonym flag out of range")


@dataclass
class BenignProbeSet:
    """Embedding matrices used only by diagnostics to measure benign drift."""

    probes: list[np.ndarray]


def antonym_or_neutral(spec: ConceptSpec, i: int) -> np.ndarray:
    """Anchor embedding for pair i: the antonym, or neutral if flagged absent."""
    if i < 0 or i >= spec.k:
        raise IndexError(f"pair index {i} out of range for K={spec.k}")
    if i in spec.absent_antonyms:
        return spec.neutral
    return spec.antonyms[i]


def spec_to_tensor_map(spec: ConceptSpec) -> TensorMap:
    spec.validate()
    tensors: dict[str, np.ndarray] = {}
    for i, mat in enumerate(spec.synonyms):
        tensors[f"syn/{i}"] = mat
    for i, mat in enumerate(spec.antonyms):
        tensors[f"ant/{i}"] = mat
        if i in spec.absent_antonyms:
            tensors[f"ant/{i}/absent"] = np.zeros((0,), dtype=np.float32)
    tensors["neutral"] = spec.neutral
    metadata = {
        "concept": spec.concept_label,
        "encoder_id": spec.encoder_id or "unknown",
        "k": str(spec.k),
    }
    return TensorMap(tensors=tensors, metadata=metadata)


def spec_from_tensor_map(tmap: TensorMap) -> ConceptSpec:
    syn: dict[int, np.ndarray] = {}
    ant: dict[int, np.ndarray] = {}
    absent: set[int] = set()
    neutral = None
    for name, arr in tmap.tensors.items():
        if name == "neutral":
            neutral = np.asarray(arr, dtype=arr.dtype)
        elif name.startswith("syn/"):
            syn[int(name.split("/")[1])] = arr
        elif name.startswith("ant/") and name.endswith("/absent"):
            absent.add(int(name.split("/")[1]))
        elif name.startswith("ant/"):
            ant[int(name.split("/")[1])] = arr
    if neutral is None:
        raise MissingNeutralError("bundle has no `neutral` tensor")
    if sorted(syn) != list(range(len(syn))) or sorted(ant) != list(range(len(ant))):
        raise UnevenPairsError("syn/ant indices must be contiguous from 0")
    if len(syn) != len(ant) or not syn:
        raise UnevenPairsError(f"{len(syn)} synonyms but {len(ant)} antonyms")
    meta = tmap.metadata or {}
    spec = ConceptSpec(
        concept_label=meta.get("concept", ""),
        synonyms=[syn[i] for i in range(len(syn))],
        antonyms=[ant[i] for i in range(len(ant))],
        neutral=neutral,
        absent_antonyms=frozenset(absent),
        encoder_id=meta.get("encoder_id"),
    )
    spec.validate()
    return spec


def load_concept_spec(path) -> ConceptSpec:
    return spec_from_tensor_map(read_container_file(path))


def save_concept_spec(spec: ConceptSpec, path) -> None:
    write_container_file(spec_to_tensor_map(spec), path)


def load_probe_set(path) -> BenignProbeSet:
    tmap = read_container_file(path)
    probes = [
        tmap.tensors[name]
        for name in sorted(tmap.tensors, key=lambda n: int(n.split("/")[1]))
        if name.startswith("probe/")
    ]
    if not probes:
        raise ShapeDisagreementError("probe bundle has no probe/<i> tensors")
    return BenignProbeSet(probes=probes)


def save_probe_set(probes: BenignProbeSet, path) -> None:
    tensors = {f"probe/{i}": p for i, p in enumerate(probes.probes)}
    write_container_file(TensorMap(tensors=tensors), path)


# ---------------------------------------------------------------------------
# Embedding-service client (optional; the core pipeline never needs it)
# ---------------------------------------------------------------------------

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.5


def _post_json(base_url, route, payload, timeout, attempts, backoff):
    url = base_url.rstrip("/") + route
    last_exc: Exception | None = None
    for attempt in range(attempts):
        retry_after = None
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
            if resp.status_code >= 500 or resp.status_code == 429:
                retry_after = resp.headers.get("Retry-After")
                raise ServiceUnavailableError(f"{url} returned {resp.status_code}")
            if resp.status_code >= 400:
                raise ProtocolError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned non-JSON body") from exc
        except (requests.RequestException, ServiceUnavailableError) as exc:
            last_exc = exc
            if attempt == attempts - 1:
                break
            delay = backoff * (2**attempt)
            if retry_after:
                try:
                    delay = max(delay, float(retry_after))
                except ValueError:
                    pass
            log.info("retrying %s in %.1fs (%s)", url, delay, exc)
            time.sleep(delay)
    raise ServiceUnavailableError(f"{url} unreachable after {attempts} attempts: {last_exc}")


def _embed_one(base_url, text, timeout, attempts, backoff) -> np.ndarray:
    body = _post_json(base_url, "/v1/embed", {"texts": [text]}, timeout, attempts, backoff)
    try:
        shape = tuple(body["shape"])
        emb = np.asarray(body["embeddings"][0], dtype=np.float32)
    except (KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"embed response missing fields: {exc}") from exc
    if emb.shape != shape:
        raise ProtocolError(f"embedding shape {emb.shape} does not match declared {shape}")
    return emb


def fetch_concept_bundle(
    base_url: str,
    concept: str,
    k: int,
    out_path=None,
    timeout: float = 30.0,
    attempts: int = RETRY_ATTEMPTS,
    backoff: float = RETRY_BACKOFF_S,
) -> ConceptSpec:
    """Assemble a ConceptSpec from a running embedding service.

    Issues one /v1/expand request and up to 2k+1 /v1/embed requests
    (one per phrase plus the empty-string neutral). Antonym slots the
    service cannot fill are flagged absent and reuse the neutral
    embedding. Writes the bundle to ``out_path`` when given.
    """
    if not 1 <= k <= 16:
        raise ValueError("k must be in 1..16")
    body = _post_json(
        base_url, "/v1/expand", {"concept": concept, "k": k}, timeout, attempts, backoff
    )
    try:
        synonyms = list(body["synonyms"])[:k]
        antonyms = list(body["antonyms"])[:k]
    except (KeyError, TypeError) as exc:
        raise ProtocolError(f"expand response missing fields: {exc}") from exc
    if len(synonyms) < k:
        raise ProtocolError(f"service returned {len(synonyms)} synonyms, need {k}")

    neutral = _embed_one(base_url, "", timeout, attempts, backoff)
    syn_mats = [_embed_one(base_url, s, timeout, attempts, backoff) for s in synonyms]
    ant_mats: list[np.ndarray] = []
    absent: set[int] = set()
    for i in range(k):
        if i < len(antonyms) and antonyms[i]:
            ant_mats.append(_embed_one(base_url, antonyms[i], timeout, attempts, backoff))
        else:
            ant_mats.append(neutral)
            absent.add(i)

    spec = ConceptSpec(
        concept_label=concept,
        synonyms=syn_mats,
        antonyms=ant_mats,
        neutral=neutral,
        absent_antonyms=frozenset(absent),
        encoder_id=str(body.get("encoder_id", "remote")),
    )
    spec.validate()
    if out_path is not None:
        save_concept_spec(spec, out_path)
    return spec
