"""Truncated SVD and the square-root split into balanced low-rank factors.

A dense m x n delta is approximated by its top-r singular triplets and
split as B_hat = U_r * sqrt(S_r), A_hat = sqrt(S_r) * V_r^T so that
B_hat @ A_hat reproduces the rank-r reconstruction exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergenceError, NonFiniteInputError, RankTooLargeError


@dataclass(frozen=True)
class TruncatedSvd:
    """Top-r singular triplets: U_r (m x r), S_r descending, V_r (n x r)."""

    U_r: np.ndarray
    S_r: np.ndarray
    V_r: np.ndarray

    @property
    def rank(self) -> int:
        return self.S_r.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U_r * self.S_r) @ self.V_r.T


def svd_truncate(M: np.ndarray, r: int) -> TruncatedSvd:
    """Top-r SVD of M with a deterministic sign convention.

    Within each (u_i, v_i) pair the entry of u_i with the largest
    absolute value is made non-negative, flipping u_i and v_i together.
    """
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    if not np.isfinite(M).all():
        raise NonFiniteInputError("matrix contains NaN or infinity")
    if r < 1 or r > min(M.shape):
        raise RankTooLargeError(f"rank {r} not in [1, {min(M.shape)}] for shape {M.shape}")
    try:
        U, S, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError(str(exc)) from exc
    U = np.ascontiguousarray(U[:, :r])
    S = np.ascontiguousarray(S[:r])
    V = np.ascontiguousarray(Vt[:r].T)
    for i in range(r):
        pivot = np.argmax(np.abs(U[:, i]))
        if U[pivot, i] < 0:
            U[:, i] = -U[:, i]
            V[:, i] = -V[:, i]
    return TruncatedSvd(U_r=U, S_r=S, V_r=V)


def sqrt_split(svd: TruncatedSvd) -> tuple[np.ndarray, np.ndarray]:
    """Split a truncated SVD into (B_hat, A_hat) via sqrt of the singular values."""
    root = np.sqrt(svd.S_r)
    B_hat = svd.U_r * root
    A_hat = root[:, None] * svd.V_r.T
    return B_hat, A_hat


def factor_delta(delta: np.ndarray, r: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Factor a dense delta to rank r; returns (B_hat, A_hat, relative error).

    The error is ||delta - B_hat @ A_hat||_F / max(||delta||_F, 1e-12).
    """
    svd = svd_truncate(delta, r)
    B_hat, A_hat = sqrt_split(svd)
    denom = max(float(np.linalg.norm(delta)), 1e-12)
    err = float(np.linalg.norm(delta - B_hat @ A_hat)) / denom
    return B_hat, A_hat, err
