# Walkthrough of the 3-order tensor algebra underneath the projection layer:
# column-major vectorization, mode unfoldings, k-mode products, and the
# structural matrices (Kronecker, commutation, mode permutation) that tie
# them together. Run top to bottom: python demos/01_tensor_ops.py

import numpy as np

from tenproj import (
    commutation_matrix,
    fold,
    kmode_product,
    kronecker,
    mode_permutation_matrix,
    unfold,
    vec,
)

rng = np.random.default_rng(0)

# %% vec flattens column-major: the first index varies fastest.
a = np.array([[1.0, 2.0, 3.0],
              [4.0, 5.0, 6.0]])
print("vec of a 2x3 matrix:", vec(a))          # 1 4 2 5 3 6

# A 2x2x2 tensor whose vec is exactly 1..8: entry (i, j, k) = 1 + i + 2j + 4k.
t = fold(np.array([[1.0, 3, 5, 7], [2, 4, 6, 8]]), 1, (2, 2, 2))
print("vec of the tensor:", vec(t))

# %% Unfolding turns the tensor into a matrix whose rows index one mode.
for mode in (1, 2, 3):
    print(f"mode-{mode} unfolding:\n{unfold(t, mode)}")

# fold inverts unfold exactly, bitwise.
x = rng.standard_normal((3, 4, 2))
for mode in (1, 2, 3):
    assert np.array_equal(fold(unfold(x, mode), mode, x.shape), x)
print("fold(unfold(x)) == x for every mode")

# %% The k-mode product contracts one mode with a matrix.
m = np.array([[1.0, 1.0]])                      # sums along mode 1
print("row sums along mode 1:", vec(kmode_product(t, 1, m)))

# Projecting every mode is one big linear map in vec coordinates:
# vec(x ×1 A1 ×2 A2 ×3 A3) = (A3 ⊗ A2 ⊗ A1) vec(x).
mats = [rng.standard_normal((2, d)) for d in x.shape]
z = kmode_product(kmode_product(kmode_product(x, 1, mats[0]), 2, mats[1]), 3, mats[2])
big = kronecker(mats[2], kronecker(mats[1], mats[0]))
print("Kronecker identity max error:", np.abs(vec(z) - big @ vec(x)).max())

# %% Commutation matrices vectorize transposition...
k23 = commutation_matrix(2, 3)
assert np.array_equal(k23 @ vec(a), vec(a.T))
print("K @ vec(A) == vec(A.T)")

# ...and mode-permutation matrices relate a tensor's vec to its unfoldings.
for mode in (1, 2, 3):
    p = mode_permutation_matrix(mode, x.shape)
    assert np.allclose(p @ vec(unfold(x, mode)), vec(x))
print("P_k @ vec(unfold(x, k)) == vec(x); P_1 is the identity:",
      np.array_equal(mode_permutation_matrix(1, x.shape),
                     np.eye(x.size)))
