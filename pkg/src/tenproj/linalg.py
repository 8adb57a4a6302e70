"""Symmetric eigendecomposition and the matrix inverse square root.

Provides two vec-space Jacobians of the map M -> G = M**(-1/2) on symmetric
positive-definite matrices:

* ``inv_sqrt_jacobian_exact`` -- the true Frechet derivative, diagonal in
  M's eigenbasis with pair coefficients -1 / (sqrt(d_i d_j) (sqrt(d_i) +
  sqrt(d_j))).
* ``inv_sqrt_jacobian_paper`` -- the simplified Kronecker form
  -1/2 * M**(-3/4) kron M**(-3/4), which is exact only when the
  perturbation commutes with M (e.g. M a multiple of the identity).

Both are materialized only for reference and gradient-check purposes;
``inv_sqrt_differential`` applies the same linear maps without building
the q^2 x q^2 matrices.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import vec

__all__ = [
    "SymEig",
    "sym_eig",
    "inv_sqrt_psd",
    "inv_sqrt_jacobian_exact",
    "inv_sqrt_jacobian_paper",
    "inv_sqrt_differential",
    "JACOBIAN_MODES",
]

JACOBIAN_MODES = ("exact", "paper")


@dataclass(frozen=True)
class SymEig:
    """Spectral decomposition of a symmetric matrix.

    ``values`` are sorted descending; ``vectors`` holds orthonormal
    eigenvector columns, each with its largest-magnitude entry positive.
    """

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T

    def apply(self, fn):
        """Matrix function via the eigendecomposition: Q diag(fn(values)) Q.T."""
        return (self.vectors * fn(self.values)) @ self.vectors.T


def sym_eig(m):
    """Full spectral decomposition of a symmetric matrix.

    Deterministic for a fixed input: eigenvalues sorted descending and each
    eigenvector's sign fixed so its largest-magnitude entry is positive.
    Raises ValueError for non-square or asymmetric input.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"sym_eig expects a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > 1e-12 * scale:
        raise ValueError("sym_eig expects a symmetric matrix")
    w, v = np.linalg.eigh(m)
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return SymEig(values=w, vectors=v)


def _spd_eig(m, what):
    e = sym_eig(m)
    if e.values[-1] <= 0.0:
        raise ValueError(
            f"{what} requires a positive-definite matrix; smallest eigenvalue "
            f"is {e.values[-1]:.3e} (if this matrix is W.T W + eps^2 I, eps "
            "may be too small)"
        )
    return e


def inv_sqrt_psd(m):
    """Inverse square root G of a symmetric positive-definite matrix.

    G is symmetric with G @ G = inv(M), computed as Q diag(l**-1/2) Q.T.
    """
    e = _spd_eig(m, "inv_sqrt_psd")
    return e.apply(lambda d: d**-0.5)


def _pair_coefficients(d):
    """Eigen-coordinate coefficients of the exact differential of M**(-1/2).

    Entry (i, j) is -1 / (sqrt(d_i d_j) (sqrt(d_i) + sqrt(d_j))); continuous
    as d_i -> d_j, so degenerate eigenvalues need no special casing.
    """
    s = np.sqrt(d)
    return -1.0 / (np.outer(s, s) * (s[:, None] + s[None, :]))


def inv_sqrt_jacobian_exact(m):
    """Exact q^2 x q^2 Jacobian J of M -> M**(-1/2) at a SPD matrix.

    Satisfies vec(dG) = J @ vec(dM) + o(||dM||) for symmetric dM. Built in
    the eigenbasis: J = (Q kron Q) diag(vec(F)) (Q kron Q).T with F the pair
    coefficients of the eigenvalues.
    """
    e = _spd_eig(m, "inv_sqrt_jacobian_exact")
    f = _pair_coefficients(e.values)
    qq = np.kron(e.vectors, e.vectors)
    return qq @ (vec(f)[:, None] * qq.T)


def inv_sqrt_jacobian_paper(m):
    """Simplified Jacobian -1/2 * A kron A with A = M**(-3/4).

    Coincides with :func:`inv_sqrt_jacobian_exact` when M is a scalar
    multiple of the identity and differs otherwise; kept as a selectable
    compatibility mode.
    """
    e = _spd_eig(m, "inv_sqrt_jacobian_paper")
    a = e.apply(lambda d: d**-0.75)
    return -0.5 * np.kron(a, a)


def inv_sqrt_differential(eig, s, mode="exact"):
    """Apply the selected dG/dM linear map to a q x q matrix ``s`` without
    materializing the q^2 x q^2 Jacobian.

    ``eig`` is the SymEig of the SPD matrix M. Both variants are
    self-adjoint, so this serves as forward map and adjoint alike.
    """
    if mode not in JACOBIAN_MODES:
        raise ValueError(f"jacobian mode must be one of {JACOBIAN_MODES}, got {mode!r}")
    if mode == "paper":
        a = eig.apply(lambda d: d**-0.75)
        return -0.5 * (a @ s @ a)
    q = eig.vectors
    return q @ (_pair_coefficients(eig.values) * (q.T @ s @ q)) @ q.T
