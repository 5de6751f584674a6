"""Covariance, symmetric eigendecomposition and active-subspace residuals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rp1 import kernels

SYMMETRY_RTOL = 1e-10


class DegenerateCovariance(ValueError):
    """Raised when a covariance matrix carries no energy."""


class ZeroEnergyBatch(ValueError):
    """Raised when a batch passed to :func:`residual` has zero trace."""


@dataclass(frozen=True)
class ActiveSubspace:
    """Orthonormal basis of the top-k eigenvectors of a PSD matrix.

    Attributes:
        basis: ``(dim, k)`` matrix with orthonormal columns.
        eigenvalues: the k retained eigenvalues, descending.
        energy_threshold: the fraction ``delta`` of spectral energy allowed
            to fall outside the subspace.
    """

    basis: np.ndarray
    eigenvalues: np.ndarray
    energy_threshold: float

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]


def covariance(data) -> np.ndarray:
    """Uncentered second-moment matrix ``(1/n) sum x x^T`` of row vectors."""
    if isinstance(data, np.ndarray):
        X = np.asarray(data, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
    else:
        rows = [np.asarray(x, dtype=np.float64).ravel() for x in data]
        if not rows:
            raise ValueError("no samples")
        dims = {r.shape[0] for r in rows}
        if len(dims) != 1:
            raise ValueError(f"dimension mismatch among samples: {sorted(dims)}")
        X = np.vstack(rows)
    if X.shape[0] == 0:
        raise ValueError("no samples")
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of samples, got shape {X.shape}")
    return kernels.gram(X) / X.shape[0]


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    return m


def sym_eigendecompose(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.

    Returns ``(w, Q)`` with eigenvalues sorted descending and the matching
    orthonormal eigenvectors as the columns of ``Q``, so ``m = Q diag(w) Q^T``.
    Ties keep the order in which the rotations left them.
    """
    m = _check_symmetric(m)
    w, V, _ = kernels.jacobi_eigh(0.5 * (m + m.T))
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def extract_active_subspace(m, delta: float) -> ActiveSubspace:
    """Smallest-k eigenbasis holding at least ``(1 - delta)`` of the energy."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    w, Q = sym_eigendecompose(m)
    # rounding can leave tiny negative eigenvalues on PSD input
    w = np.clip(w, 0.0, None)
    total = float(w.sum())
    if total <= 0.0:
        raise DegenerateCovariance("degenerate covariance")
    cum = np.cumsum(w)
    k = int(np.searchsorted(cum, (1.0 - delta) * total, side="left")) + 1
    k = min(k, w.shape[0])
    return ActiveSubspace(basis=Q[:, :k].copy(), eigenvalues=w[:k].copy(), energy_threshold=delta)


def residual(subspace: ActiveSubspace, V) -> float:
    """Fraction of a batch's trace energy left unexplained by the subspace.

    ``V`` is ``(dim, n')`` with samples as columns. The value is
    ``[tr(VV^T) - tr(UU^T VV^T UU^T)] / tr(VV^T)``, clamped to [0, 1].
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != subspace.dim:
        raise ValueError(f"batch dimension {V.shape[0]} does not match subspace dimension {subspace.dim}")
    if V.shape[1] < 1:
        raise ValueError("empty batch")
    total = float(np.sum(V * V))
    if total == 0.0:
        raise ZeroEnergyBatch("zero-energy batch")
    # tr(UU^T VV^T UU^T) = ||U^T V||_F^2 for orthonormal U
    proj = subspace.basis.T @ V
    explained = float(np.sum(proj * proj))
    return float(np.clip((total - explained) / total, 0.0, 1.0))
