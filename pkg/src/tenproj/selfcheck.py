"""Built-in verification suites behind the gradcheck and selftest commands.

``run_gradcheck`` drives every analytic gradient in the package against the
finite-difference oracle on small random shapes and prints the worst
relative error per check. Exit codes: 0 all checks passed; 1 a gradient is
wrong (a bug); 2 the projection gradients were checked in the "paper"
Jacobian mode and disagreed with finite differences, which that mode does
by construction away from commuting perturbations (an approximation, not a
bug). Independent of the configured mode, the discrepancy of the
paper-mode dG/dM map is measured and reported explicitly.

``run_selftest`` is a fast data-free sanity suite over the whole package.
"""

import os
import tempfile

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    MetricsRow,
    load_dataset,
    read_metrics_csv,
    write_idx_images,
    write_idx_labels,
    write_metrics_csv,
)
from .gradcheck import central_diff_gradient, compare_gradients
from .layer import TensorProjectionLayer, orthogonalize
from .linalg import inv_sqrt_jacobian_exact, inv_sqrt_jacobian_paper, inv_sqrt_psd
from .models import build_model
from .nn import AvgPool2D, Conv2D, Dense, conv2d_reference, softmax_cross_entropy
from .tensor import (
    fold,
    kmode_product,
    kronecker,
    mode_permutation_matrix,
    unfold,
    vec,
)

__all__ = ["run_gradcheck", "run_selftest"]

_TOL = 1e-6
_STEP = 1e-5


def _print_check(name, report):
    status = "PASS" if report.passed else "FAIL"
    print(f"[gradcheck] {name:<38s} max rel err {report.max_rel_err:.3e}  {status}")
    return report.passed


def _projection_checks(jacobian_mode, seed):
    """FD-check dX and all dW_k of the projection layer; returns reports."""
    rng = np.random.default_rng(seed)
    p, q = (4, 3, 2), (2, 2, 2)
    layer = TensorProjectionLayer(p, q, eps=0.05, enabled=(True, True, True),
                                  jacobian_mode=jacobian_mode, seed=seed)
    x = rng.standard_normal((2,) + p)

    z = layer.forward(x)
    grads = layer.backward(z)  # dL/dZ = Z for L = 0.5 * sum(Z**2)

    reports = []

    def loss_given_x(x_new):
        return 0.5 * float(np.sum(layer.forward(x_new) ** 2))

    numeric_dx = central_diff_gradient(loss_given_x, x, step=_STEP)
    layer.forward(x)  # restore cache for subsequent W perturbations
    reports.append((f"projection dX ({jacobian_mode})",
                    compare_gradients(grads.dx, numeric_dx, tol=_TOL, step=_STEP)))

    for k in layer.enabled_modes:
        original = layer.w[k].copy()

        def loss_given_w(w_new, k=k):
            layer.w[k][...] = w_new
            return 0.5 * float(np.sum(layer.forward(x) ** 2))

        numeric = central_diff_gradient(loss_given_w, original, step=_STEP)
        layer.w[k][...] = original
        layer.forward(x)
        reports.append((f"projection dW mode {k} ({jacobian_mode})",
                        compare_gradients(grads.dw[k], numeric, tol=_TOL, step=_STEP)))
    return reports


def _network_layer_checks(seed):
    """FD-check the conv, dense, pooling and loss-head gradients."""
    rng = np.random.default_rng(seed)
    reports = []

    conv = Conv2D(2, 3, kernel=(3, 3), stride=(1, 1), padding="same", seed=seed)
    x = rng.standard_normal((2, 4, 4, 2))
    out = conv.forward(x)
    conv.backward(out)
    analytic = [conv.dw.copy(), conv.db.copy()]

    def conv_loss_w(w_new):
        conv.w[...] = w_new
        return 0.5 * float(np.sum(conv.forward(x) ** 2))

    original_w = conv.w.copy()
    numeric = central_diff_gradient(conv_loss_w, original_w, step=_STEP)
    conv.w[...] = original_w
    reports.append(("conv2d dW", compare_gradients(analytic[0], numeric,
                                                   tol=_TOL, step=_STEP)))

    def conv_loss_b(b_new):
        conv.b[...] = b_new
        return 0.5 * float(np.sum(conv.forward(x) ** 2))

    original_b = conv.b.copy()
    numeric = central_diff_gradient(conv_loss_b, original_b, step=_STEP)
    conv.b[...] = original_b
    reports.append(("conv2d db", compare_gradients(analytic[1], numeric,
                                                   tol=_TOL, step=_STEP)))

    out = conv.forward(x)
    dx = conv.backward(out)
    numeric = central_diff_gradient(
        lambda x_new: 0.5 * float(np.sum(conv.forward(x_new) ** 2)), x, step=_STEP)
    reports.append(("conv2d dX", compare_gradients(dx, numeric, tol=_TOL, step=_STEP)))

    dense = Dense(5, 3, seed=seed)
    xd = rng.standard_normal((4, 5))
    out = dense.forward(xd)
    dxd = dense.backward(out)
    numeric = central_diff_gradient(
        lambda x_new: 0.5 * float(np.sum(dense.forward(x_new) ** 2)), xd, step=_STEP)
    reports.append(("dense dX", compare_gradients(dxd, numeric, tol=_TOL, step=_STEP)))

    def dense_loss_w(w_new):
        dense.w[...] = w_new
        return 0.5 * float(np.sum(dense.forward(xd) ** 2))

    original_w = dense.w.copy()
    numeric = central_diff_gradient(dense_loss_w, original_w, step=_STEP)
    dense.w[...] = original_w
    reports.append(("dense dW", compare_gradients(dense.dw, numeric,
                                                  tol=_TOL, step=_STEP)))

    pool = AvgPool2D((2, 2))
    xp = rng.standard_normal((2, 4, 4, 3))
    out = pool.forward(xp)
    dxp = pool.backward(out)
    numeric = central_diff_gradient(
        lambda x_new: 0.5 * float(np.sum(pool.forward(x_new) ** 2)), xp, step=_STEP)
    reports.append(("avgpool dX", compare_gradients(dxp, numeric, tol=_TOL, step=_STEP)))

    logits = rng.standard_normal((5, 4))
    labels = rng.integers(0, 4, size=5)
    _, dlogits = softmax_cross_entropy(logits, labels)
    numeric = central_diff_gradient(
        lambda l_new: softmax_cross_entropy(l_new, labels)[0], logits, step=_STEP)
    reports.append(("softmax cross-entropy dlogits",
                    compare_gradients(dlogits, numeric, tol=_TOL, step=_STEP)))
    return reports


def _paper_mode_discrepancy():
    """Measure the paper-mode dG/dM map against finite differences of the
    inverse square root on a non-commuting test matrix."""
    m = np.diag([4.0, 1.0])
    jac = inv_sqrt_jacobian_paper(m)
    h = _STEP
    worst = 0.0
    rng = np.random.default_rng(7)
    for _ in range(8):
        dm = rng.standard_normal((2, 2))
        dm = dm + dm.T
        fd = (inv_sqrt_psd(m + h * dm) - inv_sqrt_psd(m - h * dm)) / (2 * h)
        an = (jac @ vec(dm)).reshape(2, 2, order="F")
        worst = max(worst, float(np.abs(an - fd).max() / np.abs(fd).max()))
    frob = np.linalg.norm(jac - inv_sqrt_jacobian_exact(m)) / np.linalg.norm(
        inv_sqrt_jacobian_exact(m))
    return worst, frob


def run_gradcheck(config):
    seed = config.seed
    ok = True
    projection_ok = True
    for name, report in _projection_checks(config.jacobian_mode, seed):
        passed = _print_check(name, report)
        projection_ok = projection_ok and passed
    for name, report in _network_layer_checks(seed):
        ok = _print_check(name, report) and ok

    fd_err, frob = _paper_mode_discrepancy()
    print(f"[gradcheck] paper-mode dG/dM on diag(4,1): rel err {fd_err:.3e} vs "
          f"finite differences, rel Frobenius distance {frob:.3e} from the "
          "exact map (expected approximation, not a bug)")

    if not ok:
        print("[gradcheck] FAILURE: a gradient disagrees with the oracle")
        return 1
    if not projection_ok:
        if config.jacobian_mode == "paper":
            print("[gradcheck] projection gradients deviate under "
                  "jacobian_mode=paper; this mode is approximate away from "
                  "commuting perturbations (exit 2 distinguishes it from a bug)")
            return 2
        print("[gradcheck] FAILURE: projection gradients disagree in exact mode")
        return 1
    print("[gradcheck] all checks passed")
    return 0


# --- selftest ---------------------------------------------------------------


def _naive_kmode(x, mode, m):
    """Triple-loop contraction oracle for the k-mode product."""
    q = list(x.shape)
    q[mode - 1] = m.shape[0]
    out = np.zeros(q)
    for idx in np.ndindex(*q):
        total = 0.0
        for j in range(x.shape[mode - 1]):
            src = list(idx)
            src[mode - 1] = j
            total += m[idx[mode - 1], j] * x[tuple(src)]
        out[idx] = total
    return out


def _check(name, fn, failures):
    try:
        fn()
    except AssertionError as exc:
        print(f"[selftest] {name:<34s} FAIL  {exc}")
        failures.append(name)
    else:
        print(f"[selftest] {name:<34s} ok")


def _tensor_identities():
    rng = np.random.default_rng(3)
    for dims in [(2, 3, 4), (5, 5, 5), (1, 4, 2)]:
        x = rng.uniform(-1, 1, size=dims)
        for mode in (1, 2, 3):
            assert np.array_equal(fold(unfold(x, mode), mode, dims), x), "roundtrip"
            m = rng.uniform(-1, 1, size=(3, dims[mode - 1]))
            delta = np.abs(kmode_product(x, mode, m) - _naive_kmode(x, mode, m)).max()
            assert delta <= 1e-12, f"kmode oracle delta {delta:.2e}"
            p = mode_permutation_matrix(mode, dims)
            assert np.allclose(p @ vec(unfold(x, mode)), vec(x), atol=1e-12), "permutation"
        a = [rng.standard_normal((2, d)) for d in dims]
        lhs = vec(kmode_product(kmode_product(kmode_product(x, 1, a[0]), 2, a[1]), 3, a[2]))
        rhs = kronecker(a[2], kronecker(a[1], a[0])) @ vec(x)
        assert np.abs(lhs - rhs).max() <= 1e-12, "multilinear vec identity"


def _orthogonality_identity():
    rng = np.random.default_rng(4)
    w = rng.standard_normal((5, 3))
    eps = 0.05
    u, g, m = orthogonalize(w, eps)
    gap = np.abs(u.T @ u - (np.eye(3) - eps**2 * np.linalg.inv(m))).max()
    assert gap <= 1e-10, f"identity gap {gap:.2e}"
    defect = np.linalg.norm(u.T @ u - np.eye(3), 2)
    bound = eps**2 / np.linalg.eigvalsh(m).min()
    assert defect <= bound * (1 + 1e-9), f"defect {defect:.2e} > bound {bound:.2e}"


def _fast_vs_reference():
    rng = np.random.default_rng(5)
    layer = TensorProjectionLayer((5, 4, 3), (3, 2, 2), eps=0.05,
                                  enabled=(True, True, True), seed=5)
    x = rng.standard_normal((2, 5, 4, 3))
    z = layer.forward(x)
    dz = rng.standard_normal(z.shape)
    fast = layer.backward(dz)
    ref = layer.backward_reference(dz)
    assert np.abs(fast.dx - ref.dx).max() <= 1e-10, "dx mismatch"
    for k in layer.enabled_modes:
        assert np.abs(fast.dw[k] - ref.dw[k]).max() <= 1e-10, f"dw mode {k} mismatch"


def _quick_gradients():
    reports = _projection_checks("exact", seed=11)
    for name, report in reports:
        assert report.passed, f"{name}: {report}"


def _parameter_accounting():
    counts = [c for c in build_model("model1_tp").layer_param_counts() if c]
    assert counts == [320, 18496, 196, 2007680, 6410], counts
    model2 = build_model("model2_avgpool")
    pools = [c for layer, c in zip(model2.layers, model2.layer_param_counts())
             if layer.kind == "avgpool"]
    assert pools == [0, 0], pools


def _conv_paths_agree():
    rng = np.random.default_rng(6)
    conv = Conv2D(2, 3, kernel=(3, 3), stride=(2, 2), padding="same", seed=6)
    x = rng.standard_normal((2, 5, 5, 2))
    fast = conv.forward(x)
    slow = conv2d_reference(x, conv.w, conv.b, stride=(2, 2), padding="same")
    assert np.abs(fast - slow).max() <= 1e-12, "conv fast path deviates"


def _roundtrips():
    rng = np.random.default_rng(8)
    with tempfile.TemporaryDirectory() as tmp:
        images = rng.integers(0, 256, size=(6, 5, 5), dtype=np.uint8)
        labels = rng.integers(0, 10, size=6).astype(np.uint8)
        ipath = os.path.join(tmp, "imgs.idx.gz")
        lpath = os.path.join(tmp, "labs.idx")
        write_idx_images(ipath, images)
        write_idx_labels(lpath, labels)
        loaded_images, loaded_labels = load_dataset(ipath, lpath)
        assert np.array_equal((loaded_images[..., 0] * 255).round().astype(np.uint8),
                              images), "image roundtrip"
        assert np.array_equal(loaded_labels, labels), "label roundtrip"

        rows = [MetricsRow(1, 0.5, 0.4, 0.9, 12.0)]
        mpath = os.path.join(tmp, "m.csv")
        write_metrics_csv(rows, mpath)
        assert read_metrics_csv(mpath) == rows, "metrics roundtrip"

        model = build_model("model1_tp", seed=1)
        twin = build_model("model1_tp", seed=2)
        cpath = os.path.join(tmp, "m.ckpt")
        save_checkpoint(model, cpath)
        load_checkpoint(twin, cpath)
        for a, b in zip(model.params(), twin.params()):
            assert np.array_equal(a, b), "checkpoint roundtrip"


def run_selftest(config):
    del config  # the suite is self-seeding
    failures = []
    _check("tensor identities", _tensor_identities, failures)
    _check("orthogonality identity", _orthogonality_identity, failures)
    _check("fast vs reference backward", _fast_vs_reference, failures)
    _check("projection gradient oracle", _quick_gradients, failures)
    _check("parameter accounting", _parameter_accounting, failures)
    _check("conv fast path vs loops", _conv_paths_agree, failures)
    _check("file format roundtrips", _roundtrips, failures)
    if failures:
        print(f"[selftest] {len(failures)} check(s) failed: {', '.join(failures)}")
        return 1
    print("[selftest] all checks passed")
    return 0
