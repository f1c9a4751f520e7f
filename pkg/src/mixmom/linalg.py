"""Small shared linear-algebra helpers with a fixed sign convention.

Every basis-producing factorization runs through fix_signs so repeated runs
with the same seed are bit-identical regardless of LAPACK's sign freedom.
"""

from __future__ import annotations

import numpy as np


def fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip column signs so the first significantly nonzero entry is positive."""
    if basis.size == 0:
        return basis
    b = np.asarray(basis)
    absb = np.abs(b)
    cutoff = absb.max(axis=0, keepdims=True) * 1e-12
    first = np.argmax(absb > cutoff, axis=0)
    lead = b[first, np.arange(b.shape[1])]
    signs = np.where(lead < 0, -1.0, 1.0)
    return b * signs[None, :]


def svd_basis(a: np.ndarray, rank: int):
    """Top-`rank` left singular vectors (sign fixed) plus all singular values."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    return fix_signs(u[:, :rank]), s


def orth_complement(basis: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of span(basis) in the ambient space."""
    n, d = basis.shape
    if d == 0:
        return fix_signs(np.eye(n))
    u, s, _ = np.linalg.svd(basis, full_matrices=True)
    return fix_signs(u[:, d:])


def projector(basis: np.ndarray) -> np.ndarray:
    return basis @ basis.T


def project_out(basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply (I - Proj_basis) to the columns of x."""
    if basis.shape[1] == 0:
        return x
    return x - basis @ (basis.T @ x)


def eigh_desc(a: np.ndarray):
    """Symmetric eigendecomposition, eigenvalues descending, signs fixed."""
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    w = w[::-1]
    v = fix_signs(v[:, ::-1])
    return w, v


def psd_pinv_apply(g: np.ndarray, b: np.ndarray, cutoff_rel: float = 1e-12):
    """Apply the pseudo-inverse of a PSD matrix to b.

    Returns (x, eigenvalues_descending); eigenvalues below cutoff_rel times
    the largest are treated as zero.
    """
    w, v = eigh_desc(g)
    wmax = w[0] if w.size else 0.0
    keep = w > max(wmax, 0.0) * cutoff_rel
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / w[keep]
    x = v @ (inv[:, None] * (v.T @ b))
    return x, w
