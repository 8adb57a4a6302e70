# The trainable orthogonal projection layer, step by step: the
# orthogonalizing reparameterization, the batched forward pass, analytic
# gradients checked against finite differences, and what goes wrong when
# the simplified "paper" Jacobian of the inverse square root is used.
# Run: python demos/02_projection_layer.py

import numpy as np

from tenproj import (
    TensorProjectionLayer,
    central_diff_gradient,
    compare_gradients,
    inv_sqrt_jacobian_exact,
    inv_sqrt_jacobian_paper,
    orthogonalize,
)

rng = np.random.default_rng(1)

# %% A raw parameter matrix W becomes a near-orthonormal frame
# U = W (W^T W + eps^2 I)^(-1/2). Exactly: U^T U = I - eps^2 inv(M).
w = rng.standard_normal((5, 3))
eps = 0.05
u, g, m = orthogonalize(w, eps)
print("||U^T U - I||_2 =", np.linalg.norm(u.T @ u - np.eye(3), 2))
print("bound eps^2 / lambda_min(M) =", eps**2 / np.linalg.eigvalsh(m).min())

# %% The layer projects every sample tensor on each enabled mode.
layer = TensorProjectionLayer(input_dims=(6, 5, 4), output_dims=(3, 2, 4),
                              eps=0.05, seed=4)
print("enabled modes:", layer.enabled_modes, "(mode 3 keeps its size)")
x = rng.standard_normal((8, 6, 5, 4))
z = layer.forward(x)
print("batch", x.shape, "->", z.shape)
print("projection never expands norms:",
      all(np.linalg.norm(z[i]) <= np.linalg.norm(x[i]) for i in range(8)))

# %% Analytic gradients vs the finite-difference oracle, L = 0.5 ||Z||^2.
grads = layer.backward(z)    # dL/dZ = Z for this loss
numeric_dx = central_diff_gradient(
    lambda x_new: 0.5 * float(np.sum(layer.forward(x_new) ** 2)), x)
print("dX check:", compare_gradients(grads.dx, numeric_dx, tol=1e-6))
for k in layer.enabled_modes:
    original = layer.w[k].copy()

    def loss(w_new, k=k):
        layer.w[k][...] = w_new
        return 0.5 * float(np.sum(layer.forward(x) ** 2))

    numeric = central_diff_gradient(loss, original)
    layer.w[k][...] = original
    layer.forward(x)
    print(f"dW mode {k} check:", compare_gradients(grads.dw[k], numeric, tol=1e-6))

# %% The backward chain needs the Jacobian of M -> M^(-1/2). The simplified
# Kronecker form -1/2 M^(-3/4) x M^(-3/4) equals the exact Frechet
# derivative only when the perturbation commutes with M.
scalar = 4.0 * np.eye(2)
print("scalar matrix: max |paper - exact| =",
      np.abs(inv_sqrt_jacobian_paper(scalar) - inv_sqrt_jacobian_exact(scalar)).max())
generic = np.diag([4.0, 1.0])
exact = inv_sqrt_jacobian_exact(generic)
rel = np.linalg.norm(inv_sqrt_jacobian_paper(generic) - exact) / np.linalg.norm(exact)
print(f"diag(4,1): relative Frobenius distance {rel:.4f}")

# The same deviation shows up in whole-layer gradients when the layer is
# switched to the paper mode:
approx = TensorProjectionLayer((4, 3, 2), (2, 2, 2), eps=0.05,
                               enabled=(True, True, True),
                               jacobian_mode="paper", seed=2)
xa = rng.standard_normal((2, 4, 3, 2))
za = approx.forward(xa)
ga = approx.backward(za)
original = approx.w[1].copy()

def loss1(w_new):
    approx.w[1][...] = w_new
    return 0.5 * float(np.sum(approx.forward(xa) ** 2))

numeric = central_diff_gradient(loss1, original)
approx.w[1][...] = original
print("paper-mode dW mode 1 check (expected to fail):",
      compare_gradients(ga.dw[1], numeric, tol=1e-6))
