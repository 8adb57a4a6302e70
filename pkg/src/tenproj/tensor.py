"""Dense 3-order tensor algebra.

Vectorization, mode-k unfolding/folding and k-mode products for 3-order
tensors, plus the structural matrices (Kronecker, commutation, mode
permutation) used by the reference gradient path.

Conventions
-----------
* ``vec`` flattens column-major: the first index varies fastest.
* Unfolding follows the Kolda--Bader convention (column-major reshape of
  the tensor with the selected mode moved to the front).
* Mode indices are 1-based at the API surface: ``mode`` is 1, 2 or 3.

All functions are pure and never mutate their inputs.
"""

import numpy as np

__all__ = [
    "vec",
    "unfold",
    "fold",
    "kmode_product",
    "kronecker",
    "commutation_matrix",
    "mode_permutation_matrix",
]


def _axis(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def vec(x):
    """Flatten a matrix or 3-order tensor into a vector, first index fastest.

    The 2x3 matrix [[1, 2, 3], [4, 5, 6]] maps to (1, 4, 2, 5, 3, 6).
    """
    x = np.asarray(x)
    if x.ndim not in (1, 2, 3):
        raise ValueError(f"vec expects a 1-, 2- or 3-d array, got ndim={x.ndim}")
    return x.reshape(-1, order="F")


def unfold(x, mode):
    """Unfold a 3-order tensor along ``mode`` into a matrix.

    Row ``r`` of the result holds all entries whose mode-``mode`` index is
    ``r``; columns are ordered with the lower remaining mode varying fastest.
    Shapes: mode 1 -> (p1, p2*p3), mode 2 -> (p2, p1*p3), mode 3 -> (p3, p1*p2).
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"unfold expects a 3-d array, got ndim={x.ndim}")
    ax = _axis(mode)
    return np.reshape(np.moveaxis(x, ax, 0), (x.shape[ax], -1), order="F")


def fold(m, mode, dims):
    """Inverse of :func:`unfold`: rebuild a tensor of shape ``dims`` from its
    mode-``mode`` unfolding.
    """
    m = np.asarray(m)
    ax = _axis(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise ValueError(f"dims must have length 3, got {dims}")
    rest = tuple(d for i, d in enumerate(dims) if i != ax)
    expected = (dims[ax], int(np.prod(rest)))
    if m.ndim != 2 or m.shape != expected:
        raise ValueError(
            f"fold: matrix shape {m.shape} does not match mode {mode} of dims "
            f"{dims} (expected {expected})"
        )
    return np.moveaxis(np.reshape(m, (dims[ax],) + rest, order="F"), 0, ax)


def kmode_product(x, mode, m):
    """k-mode product ``x ×_mode m`` of a 3-order tensor with a matrix.

    ``m`` has shape (r, p_mode); the result replaces the size of ``mode``
    by ``r``. Computed as fold(m @ unfold(x, mode)).
    """
    x = np.asarray(x)
    m = np.asarray(m)
    ax = _axis(mode)
    if x.ndim != 3:
        raise ValueError(f"kmode_product expects a 3-d tensor, got ndim={x.ndim}")
    if m.ndim != 2 or m.shape[1] != x.shape[ax]:
        raise ValueError(
            f"kmode_product: matrix shape {m.shape} does not contract mode "
            f"{mode} of tensor shape {x.shape}"
        )
    dims = list(x.shape)
    dims[ax] = m.shape[0]
    return fold(m @ unfold(x, mode), mode, tuple(dims))


def kronecker(a, b):
    """Kronecker product: block (i, j) of the result is a[i, j] * b."""
    return np.kron(np.asarray(a), np.asarray(b))


def commutation_matrix(m, n):
    """The mn x mn permutation matrix K with K @ vec(A) = vec(A.T) for every
    m x n matrix A.
    """
    if m < 1 or n < 1:
        raise ValueError(f"sizes must be positive, got ({m}, {n})")
    k = np.arange(m * n)
    out = np.zeros((m * n, m * n))
    # vec(A.T) position j + n*i reads from vec(A) position i + m*j
    out[k, (k % n) * m + k // n] = 1.0
    return out


def mode_permutation_matrix(mode, dims):
    """The permutation matrix P with vec(Z) = P @ vec(unfold(Z, mode)) for
    every tensor Z of shape ``dims``.

    Built by tracing where each flat position of the unfolding lands in the
    column-major order of the tensor itself; for mode 1 this is the identity.
    """
    ax = _axis(mode)
    dims = tuple(int(d) for d in dims)
    n = int(np.prod(dims))
    idx = np.arange(n).reshape(dims, order="F")
    src = np.reshape(np.moveaxis(idx, ax, 0), (dims[ax], -1), order="F")
    p = np.zeros((n, n))
    p[src.reshape(-1, order="F"), np.arange(n)] = 1.0
    return p
