"""Column-space / left-null-space split of a frozen weight via truncated SVD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateInputError
from .linalg import svd


@dataclass(frozen=True)
class SubspaceDecomposition:
    """Truncated SVD of ``W`` (d x d') split at the contribution threshold.

    ``u_m`` spans the retained column space (k columns) and ``u_n`` the
    truncated directions (s columns), with ``k + s = min(d, d')``. When
    d > d' the remainder of the left null space outside ``u_n`` is not used.
    """

    k: int
    s: int
    threshold: float
    u_m: np.ndarray
    u_n: np.ndarray
    sigma_m: np.ndarray
    v_m: np.ndarray
    v_n: np.ndarray
    p_m: np.ndarray
    p_n: np.ndarray

    @property
    def d(self) -> int:
        return self.u_m.shape[0]

    @property
    def d_in(self) -> int:
        return self.v_m.shape[0]


def contribution_curve(sigma) -> np.ndarray:
    """Cumulative share of squared singular-value energy, ``C_1..C_n``.

    Raises:
        DegenerateInputError: every singular value is zero.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise ContractError("sigma must be a non-empty vector")
    if np.any(sigma < 0):
        raise ContractError("singular values must be non-negative")
    energy = np.square(sigma)
    total = energy.sum()
    if total == 0.0:
        raise DegenerateInputError("all singular values are zero")
    curve = np.cumsum(energy) / total
    # cumsum can overshoot by an ulp; the curve is a fraction.
    return np.minimum(curve, 1.0)


def truncation_rank(curve, threshold: float) -> int:
    """Smallest k (1-based) with ``C_k >= threshold``; ties count as reaching it."""
    if not 0.0 < threshold <= 1.0:
        raise ContractError(f"threshold must lie in (0, 1], got {threshold}")
    curve = np.asarray(curve)
    hits = np.flatnonzero(curve >= threshold)
    return int(hits[0]) + 1 if hits.size else int(curve.size)


def decompose(w: np.ndarray, threshold: float = 0.95) -> SubspaceDecomposition:
    if not 0.0 < threshold <= 1.0:
        raise ContractError(f"threshold must lie in (0, 1], got {threshold}")
    res = svd(np.asarray(w, dtype=np.float64))
    k = truncation_rank(contribution_curve(res.sigma), threshold)
    u_m = np.ascontiguousarray(res.u[:, :k])
    u_n = np.ascontiguousarray(res.u[:, k:])
    v = res.vt.T
    return SubspaceDecomposition(
        k=k,
        s=res.sigma.size - k,
        threshold=float(threshold),
        u_m=u_m,
        u_n=u_n,
        sigma_m=res.sigma[:k].copy(),
        v_m=np.ascontiguousarray(v[:, :k]),
        v_n=np.ascontiguousarray(v[:, k:]),
        p_m=u_m @ u_m.T,
        p_n=u_n @ u_n.T,
    )


def summary(decomp: SubspaceDecomposition, layer: int) -> dict:
    """JSON-ready record used by the ``decompose`` command."""
    return {"layer": layer, "d": decomp.d, "d'": decomp.d_in, "k": decomp.k,
            "s": decomp.s, "threshold": decomp.threshold}
