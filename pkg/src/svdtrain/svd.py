"""Singular value decomposition by one-sided Jacobi rotations.

The routine factorizes A (m x n) as U diag(s) V^T with r = min(m, n):
cyclic sweeps rotate column pairs of the working matrix until every pair
is orthogonal to within 1e-12 of its column-norm product (at most 60
sweeps), then column norms become the singular values.  Output is sorted
non-increasing, and each column of U has its largest-magnitude entry made
non-negative so factorizations are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError
from .tensor import Tensor

REL_TOL = 1e-12
MAX_SWEEPS = 60


@dataclass(frozen=True)
class SvdFactors:
    """Factors of A = u . diag(s) . v^T with orthonormal-column u, v."""

    u: Tensor
    s: Tensor
    v: Tensor

    @property
    def rank(self) -> int:
        return self.s.shape[0]


def _complete_orthonormal(u: np.ndarray, missing: list[int]) -> None:
    """Fill the listed zero columns of ``u`` with an orthonormal complement.

    Deterministic: walks the canonical basis, removing projections onto the
    columns already present (twice, for stability).
    """
    m = u.shape[0]
    candidate = 0
    for j in missing:
        while True:
            if candidate >= m:
                raise NumericError("failed to complete an orthonormal basis")
            vec = np.zeros(m)
            vec[candidate] = 1.0
            candidate += 1
            for _ in range(2):
                vec -= u @ (u.T @ vec)
            norm = np.linalg.norm(vec)
            if norm > 1e-6:
                u[:, j] = vec / norm
                break


def svd(a: Tensor | np.ndarray) -> SvdFactors:
    """Full (thin) SVD of a 2-d tensor via one-sided Jacobi.

    Raises :class:`NumericError` carrying the worst off-diagonal ratio if
    the sweeps do not converge.
    """
    arr = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"svd needs a 2-d tensor, got shape {arr.shape}")
    m, n = arr.shape
    if m < 1 or n < 1:
        raise ShapeError("svd needs at least one row and one column")
    if not np.isfinite(arr).all():
        raise NumericError("svd input contains non-finite values")

    transposed = m < n
    work = arr.T if transposed else arr  # (M, N) with M >= N
    big, small = work.shape

    # rows of bt are the columns of `work`; rows of vt accumulate V^T
    bt = np.ascontiguousarray(work.T)
    vt = np.eye(small)
    sweeps, residual, converged = kernels.jacobi_sweeps(bt, vt, REL_TOL, MAX_SWEEPS)
    if not converged:
        raise NumericError(
            f"jacobi svd did not converge in {sweeps} sweeps "
            f"(worst off-diagonal ratio {residual:.3e})",
            residual=residual,
        )

    norms = np.sqrt((bt * bt).sum(axis=1))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    u = np.zeros((big, small))
    missing = []
    for i, src in enumerate(order):
        if s[i] > 0.0:
            u[:, i] = bt[src] / s[i]
        else:
            missing.append(i)
    if missing:
        _complete_orthonormal(u, missing)
    v = vt[order].T  # (small, small), columns are right singular vectors

    # sign convention: largest-|entry| of each u column non-negative
    for j in range(small):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]

    if transposed:
        u, v = v, u
    return SvdFactors(u=Tensor(u), s=Tensor(s), v=Tensor(v))
