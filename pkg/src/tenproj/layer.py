"""Trainable orthogonal tensor-projection layer.

The layer maps each 3-order input tensor X (shape p1 x p2 x p3) to
Z = X x1 U1.T x2 U2.T x3 U3.T (shape q1 x q2 x q3), where each projection
matrix is the orthogonalizing reparameterization

    U_k = W_k (W_k.T W_k + eps_k^2 I)**(-1/2)

of an unconstrained parameter matrix W_k. U_k has near-orthonormal columns
(exactly: U_k.T U_k = I - eps_k^2 inv(M_k) with M_k = W_k.T W_k + eps_k^2 I),
so training W_k by plain gradient descent keeps the projection close to the
Stiefel manifold without penalty terms.

Gradients come in two forms:

* the default fast path, which never materializes Kronecker, commutation or
  mode-permutation matrices, and
* a reference path (``backward_reference``, ``dvecZ_dvecU``,
  ``dvecU_dvecW``) that materializes every Jacobian factor explicitly for
  cross-checking.

``jacobian_mode`` selects the Jacobian of M -> M**(-1/2) used in the W
chain: "exact" (the true Frechet derivative, default) or "paper" (the
simplified commuting-case Kronecker form; see :mod:`tenproj.linalg`).
"""

from dataclasses import dataclass

import numpy as np

from .linalg import (
    JACOBIAN_MODES,
    inv_sqrt_differential,
    inv_sqrt_jacobian_exact,
    inv_sqrt_jacobian_paper,
    inv_sqrt_psd,
    sym_eig,
)
from .tensor import commutation_matrix, kronecker, mode_permutation_matrix, unfold, vec

__all__ = [
    "orthogonalize",
    "dvecU_dvecW",
    "LayerGradients",
    "TensorProjectionLayer",
]

MODES = (1, 2, 3)

# Batched single-mode contractions for inputs of shape (n, p1, p2, p3).
# _PROJECT[k] contracts mode k with the rows of a (p_k, q_k) matrix (i.e.
# applies U.T); _BACKPROJECT[k] contracts with its columns (applies U).
_PROJECT = {1: "nabc,ad->ndbc", 2: "nabc,bd->nadc", 3: "nabc,cd->nabd"}
_BACKPROJECT = {1: "nabc,da->ndbc", 2: "nabc,db->nadc", 3: "nabc,dc->nabd"}
# Sum over batch and the two non-k modes of halfproj[k] * grad -> (p_k, q_k).
_ACCUMULATE = {1: "nabc,ndbc->ad", 2: "nabc,nadc->bd", 3: "nabc,nabd->cd"}


def orthogonalize(w, eps):
    """Orthogonalizing reparameterization of a p x q parameter matrix.

    Returns (U, G, M) with M = W.T W + eps^2 I, G = M**(-1/2) and U = W G.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError(f"orthogonalize expects a matrix, got ndim={w.ndim}")
    if not np.all(np.isfinite(w)):
        raise ValueError("orthogonalize: parameter matrix has non-finite entries")
    eps = float(eps)
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    m = w.T @ w + eps**2 * np.eye(w.shape[1])
    g = inv_sqrt_psd(m)
    return w @ g, g, m


def dvecU_dvecW(w, eps, jacobian_mode="exact"):
    """Materialized (p*q) x (p*q) Jacobian of vec(U) with respect to vec(W).

    Composes G.T kron I_p + (I_q kron W) (dvecG/dvecM) (dvecM/dvecW), where
    dvecM/dvecW = K_{q,q} (I_q kron W.T) + I_q kron W.T and dvecG/dvecM is
    selected by ``jacobian_mode``. Reference path only.
    """
    w = np.asarray(w, dtype=float)
    p, q = w.shape
    m = w.T @ w + float(eps) ** 2 * np.eye(q)
    g = inv_sqrt_psd(m)
    if jacobian_mode == "exact":
        j_gm = inv_sqrt_jacobian_exact(m)
    elif jacobian_mode == "paper":
        j_gm = inv_sqrt_jacobian_paper(m)
    else:
        raise ValueError(f"jacobian mode must be one of {JACOBIAN_MODES}, got {jacobian_mode!r}")
    j_mw = commutation_matrix(q, q) @ kronecker(np.eye(q), w.T) + kronecker(np.eye(q), w.T)
    return kronecker(g.T, np.eye(p)) + kronecker(np.eye(q), w) @ j_gm @ j_mw


@dataclass
class LayerGradients:
    """Gradients produced by a backward pass.

    ``dw`` maps each enabled mode (1-based) to the gradient for W_k, shaped
    p_k x q_k; ``dx`` is the gradient for the input batch, shaped like it.
    """

    dw: dict
    dx: np.ndarray


class _ModeState:
    """Per-mode cached quantities from the last orthogonalization."""

    __slots__ = ("u", "g", "m", "eig")

    def __init__(self, u, g, m, eig):
        self.u = u
        self.g = g
        self.m = m
        self.eig = eig


class TensorProjectionLayer:
    """Orthogonality-constrained multilinear projection of 3-order tensors.

    Parameters
    ----------
    input_dims, output_dims : tuples (p1, p2, p3) and (q1, q2, q3)
        Per-sample input and output shapes, q_k <= p_k.
    eps : float or 3-tuple
        Regularizer eps_k of the reparameterization, per mode.
    enabled : 3-tuple of bool, optional
        Which modes carry a trainable projection. Disabled modes must have
        q_k = p_k and act as the identity. Default: mode k is enabled iff
        q_k < p_k.
    jacobian_mode : "exact" or "paper"
        Which dG/dM Jacobian the backward pass chains through.
    seed : anything numpy's default_rng accepts
        Seeds the parameter initialization (uniform on [-a, a] with
        a = sqrt(6 / (p_k + q_k))).

    Batches are 4-d arrays of shape (n, p1, p2, p3). ``forward`` caches the
    batch and the per-mode (U, G, M) state that ``backward`` consumes.
    """

    def __init__(self, input_dims, output_dims, eps=0.01, enabled=None,
                 jacobian_mode="exact", seed=0):
        self.input_dims = tuple(int(d) for d in input_dims)
        self.output_dims = tuple(int(d) for d in output_dims)
        if len(self.input_dims) != 3 or len(self.output_dims) != 3:
            raise ValueError("input_dims and output_dims must be 3-tuples")
        if any(d < 1 for d in self.input_dims + self.output_dims):
            raise ValueError("dimensions must be positive")
        if np.isscalar(eps):
            self.eps = (float(eps),) * 3
        else:
            self.eps = tuple(float(e) for e in eps)
        if len(self.eps) != 3 or any(e <= 0 for e in self.eps):
            raise ValueError("eps must be a positive scalar or a 3-tuple of positives")
        if jacobian_mode not in JACOBIAN_MODES:
            raise ValueError(f"jacobian mode must be one of {JACOBIAN_MODES}, got {jacobian_mode!r}")
        self.jacobian_mode = jacobian_mode

        if enabled is None:
            enabled = tuple(q < p for p, q in zip(self.input_dims, self.output_dims))
        self.enabled = tuple(bool(e) for e in enabled)
        for k in MODES:
            p, q = self.input_dims[k - 1], self.output_dims[k - 1]
            if self.enabled[k - 1]:
                if q > p:
                    raise ValueError(f"mode {k}: output size {q} exceeds input size {p}")
            elif q != p:
                raise ValueError(f"mode {k} is disabled but q_{k}={q} differs from p_{k}={p}")

        self.w = {}
        rng = np.random.default_rng(seed)
        for k in MODES:
            if not self.enabled[k - 1]:
                continue
            p, q = self.input_dims[k - 1], self.output_dims[k - 1]
            a = np.sqrt(6.0 / (p + q))
            self.w[k] = rng.uniform(-a, a, size=(p, q))
        self._cache = None

    # -- parameter bookkeeping -------------------------------------------

    @property
    def enabled_modes(self):
        return tuple(k for k in MODES if self.enabled[k - 1])

    def num_params(self):
        return sum(wk.size for wk in self.w.values())

    # -- forward -----------------------------------------------------------

    def _mode_state(self, k):
        w = self.w[k]
        m = w.T @ w + self.eps[k - 1] ** 2 * np.eye(w.shape[1])
        eig = sym_eig(m)
        if eig.values[-1] <= 0.0:
            raise ValueError(
                f"mode {k}: W.T W + eps^2 I is not positive definite; "
                f"increase eps (currently {self.eps[k - 1]})"
            )
        g = eig.apply(lambda d: d**-0.5)
        return _ModeState(u=w @ g, g=g, m=m, eig=eig)

    def forward(self, x):
        """Project a batch: Z = X x1 U1.T x2 U2.T x3 U3.T per sample.

        ``x`` has shape (n, p1, p2, p3); returns (n, q1, q2, q3). Disabled
        modes are skipped (identity). Caches state for ``backward``.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 4 or x.shape[1:] != self.input_dims:
            raise ValueError(
                f"forward expects a batch of shape (n, {self.input_dims[0]}, "
                f"{self.input_dims[1]}, {self.input_dims[2]}), got {x.shape}"
            )
        states = {k: self._mode_state(k) for k in self.enabled_modes}
        z = x
        for k in self.enabled_modes:
            z = np.einsum(_PROJECT[k], z, states[k].u, optimize=True)
        self._cache = (x, states)
        return z

    # -- backward (fast path) ----------------------------------------------

    def backward(self, dz):
        """Gradients for the cached batch given dL/dZ.

        dX is the multilinear back-projection dZ x1 U1 x2 U2 x3 U3. Each
        dW_k sums per-sample contributions dL/dU_k = unfold_k(X projected on
        all other modes) @ unfold_k(dL/dZ).T and chains them through the
        reparameterization, all without materializing structural matrices.
        """
        x, states = self._require_cache(dz)
        dz = np.asarray(dz, dtype=float)

        dx = dz
        for k in self.enabled_modes:
            dx = np.einsum(_BACKPROJECT[k], dx, states[k].u, optimize=True)

        dw = {}
        for k in self.enabled_modes:
            half = x
            for j in self.enabled_modes:
                if j != k:
                    half = np.einsum(_PROJECT[j], half, states[j].u, optimize=True)
            gamma = np.einsum(_ACCUMULATE[k], half, dz, optimize=True)
            phi = self.w[k].T @ gamma
            psi = inv_sqrt_differential(states[k].eig, phi, self.jacobian_mode)
            dw[k] = gamma @ states[k].g.T + self.w[k] @ (psi + psi.T)
        return LayerGradients(dw=dw, dx=dx)

    def _require_cache(self, dz):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        x, states = self._cache
        dz = np.asarray(dz)
        if dz.ndim != 4 or dz.shape[1:] != self.output_dims or dz.shape[0] != x.shape[0]:
            raise ValueError(
                f"backward expects upstream gradients of shape "
                f"({x.shape[0]}, {self.output_dims[0]}, {self.output_dims[1]}, "
                f"{self.output_dims[2]}), got {dz.shape}"
            )
        return x, states

    # -- reference path ------------------------------------------------------

    def _u_matrices(self):
        """All three U_k, with identities standing in for disabled modes."""
        _, states = self._cache
        return [
            states[k].u if self.enabled[k - 1] else np.eye(self.input_dims[k - 1])
            for k in MODES
        ]

    def dvecZ_dvecU(self, k, xi):
        """Materialized Jacobian of vec(Z_i) with respect to vec(U_k) for one
        cached-forward sample ``xi``:

            P_k [ ((Ub.T kron Ua.T) unfold_k(X).T) kron I_{q_k} ] K_{p_k, q_k}

        with (a, b) the other two modes in ascending order. Reference path.
        """
        if self._cache is None:
            raise RuntimeError("dvecZ_dvecU requires a cached forward pass")
        if k not in MODES:
            raise ValueError(f"mode must be 1, 2 or 3, got {k!r}")
        xi = np.asarray(xi, dtype=float)
        us = self._u_matrices()
        lo, hi = [j for j in MODES if j != k]
        kr = kronecker(us[hi - 1].T, us[lo - 1].T)
        p_k, q_k = self.input_dims[k - 1], self.output_dims[k - 1]
        return (
            mode_permutation_matrix(k, self.output_dims)
            @ kronecker(kr @ unfold(xi, k).T, np.eye(q_k))
            @ commutation_matrix(p_k, q_k)
        )

    def backward_reference(self, dz):
        """Backward pass with every Jacobian of the chain materialized.

        Slow and memory-hungry; exists to validate the fast path on small
        shapes.
        """
        x, _ = self._require_cache(dz)
        dz = np.asarray(dz, dtype=float)
        us = self._u_matrices()

        big = kronecker(us[2].T, kronecker(us[1].T, us[0].T))
        dx = np.stack(
            [(vec(dz[i]) @ big).reshape(self.input_dims, order="F") for i in range(x.shape[0])]
        )

        dw = {}
        for k in self.enabled_modes:
            j_uw = dvecU_dvecW(self.w[k], self.eps[k - 1], self.jacobian_mode)
            row = np.zeros(self.w[k].size)
            for i in range(x.shape[0]):
                row = row + vec(dz[i]) @ self.dvecZ_dvecU(k, x[i]) @ j_uw
            dw[k] = row.reshape(self.w[k].shape, order="F")
        return LayerGradients(dw=dw, dx=dx)
