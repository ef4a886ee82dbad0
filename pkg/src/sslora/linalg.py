"""Dense linear algebra substrate.

Matrices are plain 2-D ``numpy.ndarray`` objects. The helpers here add the
contracts the rest of the package relies on: shape checks that raise
:class:`ContractError`, finite-entry validation, a reproducible sign
convention for the SVD, and seeded Gaussian sampling.
"""

from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError

DETERMINISTIC_ENV = "SSLORA_DETERMINISTIC"


def matrix(data, dtype=np.float64) -> np.ndarray:
    """Build a validated 2-D matrix (copy) from nested sequences or an array."""
    m = np.array(data, dtype=dtype)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ContractError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError("matrix contains NaN or Inf entries")
    return m


def frozen(m: np.ndarray) -> np.ndarray:
    """Return a read-only copy of ``m``."""
    out = np.array(m, copy=True)
    out.setflags(write=False)
    return out


def _check_2d(*ms: np.ndarray) -> None:
    for m in ms:
        if np.ndim(m) != 2:
            raise ContractError(f"expected 2-D matrix, got ndim={np.ndim(m)}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b)
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b)
    if a.shape != b.shape:
        raise ContractError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_2d(a, b)
    if a.shape != b.shape:
        raise ContractError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    _check_2d(a)
    return a * c


def transpose(a: np.ndarray) -> np.ndarray:
    _check_2d(a)
    return np.ascontiguousarray(a.T)


def frobenius_norm(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(m))))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``w = u @ diag(sigma) @ vt`` with ``min(d, d')`` components."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def svd(w: np.ndarray) -> SvdResult:
    """Thin SVD with a deterministic column-sign convention.

    Each column of ``u`` is flipped so that its largest-magnitude entry is
    non-negative; the matching row of ``vt`` is flipped with it.

    Raises:
        ContractError: ``w`` is not a finite 2-D matrix.
        NumericalError: LAPACK failed to converge.
    """
    _check_2d(w)
    if not np.all(np.isfinite(w)):
        raise ContractError("svd input contains NaN or Inf entries")
    try:
        u, sigma, vt = np.linalg.svd(w, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK gesdd does not report its sweep count; min(d, d') bounds the
        # number of off-diagonals that failed to converge.
        raise NumericalError(f"SVD did not converge: {exc}",
                             iterations=min(w.shape)) from exc
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[pivot, np.arange(u.shape[1])] < 0, -1.0, 1.0).astype(u.dtype)
    u = u * signs
    vt = vt * signs[:, None]
    return SvdResult(u=u, sigma=sigma, vt=vt)


def seeded_rng(seed: int) -> np.random.Generator:
    """Reproducible random source (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def gaussian_matrix(rng: np.random.Generator, rows: int, cols: int,
                    std: float = 1.0, dtype=np.float64) -> np.ndarray:
    if std <= 0:
        raise ContractError(f"std must be positive, got {std}")
    if rows < 1 or cols < 1:
        raise ContractError(f"invalid shape ({rows}, {cols})")
    return (rng.standard_normal((rows, cols)) * std).astype(dtype, copy=False)


def deterministic_requested() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") not in ("", "0")


@contextlib.contextmanager
def deterministic_kernels(enabled: bool | None = None):
    """Pin BLAS to one thread so reductions run in a fixed order.

    With ``enabled=None`` the ``SSLORA_DETERMINISTIC`` environment variable
    decides.
    """
    if enabled is None:
        enabled = deterministic_requested()
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield
