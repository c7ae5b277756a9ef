"""One-sided Jacobi SVD for dense matrices.

Used as the dense route for spectra so that circulant operators can be
cross-checked against a factorization that never touches a Fourier
transform.  One-sided Jacobi orthogonalizes the columns of a working copy
of A by plane rotations; at convergence the column norms are the singular
values, the normalized columns are U, and the accumulated rotations are V.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def jacobi_svd(a, tol=1e-14, max_sweeps=60):
    """Full SVD of a dense matrix by one-sided Jacobi rotations.

    Returns (u, s, v) with a = u @ diag(s) @ v.T, singular values sorted
    descending, u of shape (m, k) and v of shape (n, k) where
    k = min(m, n).  Columns of u belonging to zero singular values are
    completed deterministically to an orthonormal set.

    tol is the relative orthogonality threshold |u_p . u_q| <= tol * |u_p||u_q|
    at which a column pair is considered orthogonal.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ParameterError("jacobi_svd expects a 2-d array")
    m, n = a.shape
    if m < n:
        v, s, u = jacobi_svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return u, s, v

    w = a.copy()                      # (m, n) columns rotated in place
    v = np.eye(n)                     # (n, n) accumulated rotations
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = float(w[:, p] @ w[:, p])
                aqq = float(w[:, q] @ w[:, q])
                apq = float(w[:, p] @ w[:, q])
                denom = np.sqrt(app * aqq)
                if denom == 0.0 or abs(apq) <= tol * denom:
                    continue
                off = max(off, abs(apq) / denom)
                # rotation angle that zeroes the (p, q) inner product
                theta = 0.5 * np.arctan2(2.0 * apq, app - aqq)
                c = np.cos(theta)
                s = np.sin(theta)
                wp = w[:, p].copy()
                w[:, p] = c * wp + s * w[:, q]
                w[:, q] = -s * wp + c * w[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp + s * v[:, q]
                v[:, q] = -s * vp + c * v[:, q]
        if off == 0.0:
            break

    sigma = np.sqrt(np.sum(w * w, axis=0))    # column norms, length n
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    w = w[:, order]
    v = v[:, order]

    u = np.zeros((m, n))
    smax = sigma[0] if n else 0.0
    zero_cols = []
    for j in range(n):
        if smax > 0.0 and sigma[j] > smax * np.finfo(float).eps * m:
            u[:, j] = w[:, j] / sigma[j]
        else:
            sigma[j] = 0.0
            zero_cols.append(j)
    if zero_cols:
        _complete_columns(u, zero_cols)
    return u, sigma, v


def _complete_columns(u, missing):
    """Fill the listed columns of u with an orthonormal completion.

    Deterministic: candidates are canonical basis vectors in index order,
    Gram-Schmidt orthogonalized against every filled column.
    """
    m = u.shape[0]
    filled = [j for j in range(u.shape[1]) if j not in missing]
    basis = [u[:, j] for j in filled]
    cursor = 0
    for j in missing:
        while cursor < m:
            cand = np.zeros(m)
            cand[cursor] = 1.0
            cursor += 1
            for b in basis:
                cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                cand /= norm
                u[:, j] = cand
                basis.append(cand)
                break
        else:
            raise ParameterError("could not complete an orthonormal basis")
