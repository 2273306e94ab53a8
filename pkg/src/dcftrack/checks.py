"""Verification suites behind the `gradcheck` and `selftest` CLI commands.

Each suite returns a list of (name, value, bound, ok) rows so both the CLI
and the test-suite can gate on the same numbers.
"""

import numpy as np

from . import features as F
from . import oracle
from .cf_layer import CfConfig, cf_backward_x, cf_backward_z, cf_forward, cf_loss
from .spectral import fft2, ifft2
from .tracking import FilterState, update_filter_state
from .training import cosine_window, gaussian_label


def _loss_of_x(x_flat, shape, z, label, cfg):
    g, _ = cf_forward(x_flat.reshape(shape), z, label, cfg)
    return cf_loss(g, np.zeros_like(g))[0]


def _loss_of_z(z_flat, shape, x, label, cfg):
    g, _ = cf_forward(x, z_flat.reshape(shape), label, cfg)
    return cf_loss(g, np.zeros_like(g))[0]


def gradcheck_suite(seed=0, instances=50):
    """Finite-difference validation of every analytic gradient.

    Covers both CF-layer branches, the conv/relu/lrn primitives, and a
    directional end-to-end check through features + window + CF + loss.
    """
    rng = np.random.default_rng(seed)
    rows = []
    cfg = CfConfig(lam=1e-4)

    worst_x = worst_z = 0.0
    for _ in range(instances):
        m, n, d = 5, 5, 2
        x = rng.standard_normal((m, n, d))
        z = rng.standard_normal((m, n, d))
        label = gaussian_label(m, n, 1.0)
        g, ctx = cf_forward(x, z, label, cfg)
        _, dldg = cf_loss(g, np.zeros_like(g))
        gx = cf_backward_x(dldg, ctx)
        gz = cf_backward_z(dldg, ctx)
        worst_x = max(worst_x, oracle.finite_diff_check(
            lambda v: _loss_of_x(v, x.shape, z, label, cfg), gx, x))
        worst_z = max(worst_z, oracle.finite_diff_check(
            lambda v: _loss_of_z(v, z.shape, x, label, cfg), gz, x * 0 + z))
    rows.append(("cf_backward_x vs finite differences", worst_x, 1e-5))
    rows.append(("cf_backward_z vs finite differences", worst_z, 1e-5))

    # conv layer: input, kernel and bias gradients
    layer = F.ConvLayerParams(rng.standard_normal((3, 3, 2, 3)) * 0.5,
                              rng.standard_normal(3) * 0.1, dilation=1, has_relu=False)
    xin = rng.standard_normal((7, 7, 2))
    dout = rng.standard_normal((7, 7, 3))
    dx, dk, db = F.conv2d_backward(dout, xin, layer)

    def conv_loss_x(v):
        return float(np.sum(F.conv2d(v.reshape(xin.shape), layer) * dout))

    def conv_loss_k(v):
        lay = F.ConvLayerParams(v.reshape(layer.kernels.shape), layer.biases, 1, False)
        return float(np.sum(F.conv2d(xin, lay) * dout))

    def conv_loss_b(v):
        lay = F.ConvLayerParams(layer.kernels, v, 1, False)
        return float(np.sum(F.conv2d(xin, lay) * dout))

    rows.append(("conv2d input gradient", oracle.finite_diff_check(conv_loss_x, dx, xin), 1e-6))
    rows.append(("conv2d kernel gradient",
                 oracle.finite_diff_check(conv_loss_k, dk, layer.kernels), 1e-6))
    rows.append(("conv2d bias gradient",
                 oracle.finite_diff_check(conv_loss_b, db, layer.biases), 1e-6))

    # relu away from the kink
    xr = rng.standard_normal((6, 6, 4))
    xr = np.where(np.abs(xr) < 1e-3, xr + 0.1, xr)
    dr = rng.standard_normal(xr.shape)
    rows.append(("relu gradient", oracle.finite_diff_check(
        lambda v: float(np.sum(F.relu(v) * dr)), F.relu_backward(dr, xr), xr), 1e-6))

    # LRN with defaults
    p = F.LrnParams()
    xl = rng.standard_normal((4, 4, 8))
    dl = rng.standard_normal(xl.shape)
    rows.append(("lrn gradient", oracle.finite_diff_check(
        lambda v: float(np.sum(F.lrn(v.reshape(xl.shape), p) * dl)),
        F.lrn_backward(dl, xl, p), xl), 1e-6))

    # end-to-end: image -> features -> window -> CF -> loss, directional
    model = F.init_network("conv1", seed=seed)
    img_x = rng.standard_normal((9, 9, 3)) * 0.3
    img_z = rng.standard_normal((9, 9, 3)) * 0.3
    label = gaussian_label(9, 9, 1.0)
    win = cosine_window(9, 9)[:, :, None]

    def end_to_end(v):
        fx, _ = F.net_forward(v.reshape(img_x.shape), model)
        fz, _ = F.net_forward(img_z, model)
        g, _ = cf_forward(fx * win, fz * win, label, cfg)
        return cf_loss(g, label)[0]

    fx, tape = F.net_forward(img_x, model)
    fz, _ = F.net_forward(img_z, model)
    g, ctx = cf_forward(fx * win, fz * win, label, cfg)
    _, dldg = cf_loss(g, label)
    dimg, _ = F.net_backward(cf_backward_x(dldg, ctx) * win, tape, model)
    err = oracle.finite_diff_check(end_to_end, dimg, img_x)
    rows.append(("end-to-end image gradient (9x9x3)", err, 1e-5))

    return [(name, val, bound, val < bound) for name, val, bound in rows]


def selftest_suite(seed=0, instances=100):
    """Oracle-equivalence checks for the closed forms and the online update."""
    rng = np.random.default_rng(seed)
    rows = []
    cfg = CfConfig(lam=1e-4)

    # DFT definition vs fast transform
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 17))
        n = int(rng.integers(1, 17))
        x = rng.standard_normal((m, n))
        ref = oracle.direct_dft2(x)
        got = fft2(x)
        worst = max(worst, np.max(np.abs(got - ref)) / (np.max(np.abs(ref)) + 1e-30))
    rows.append(("fft2 vs definition DFT", worst, 1e-10))

    # closed-form filter and detection vs dense spatial oracle
    worst_w = worst_g = 0.0
    for _ in range(instances):
        m = int(rng.integers(2, 9))
        n = int(rng.integers(2, 9))
        d = int(rng.integers(1, 4))
        feats = rng.standard_normal((m, n, d))
        z = rng.standard_normal((m, n, d))
        label = gaussian_label(m, n, max(1.0, min(m, n) / 4))
        w_ref = oracle.dense_ridge_solve(feats, label, cfg.lam)

        from .cf_layer import solve_filter
        w_fast = np.real(ifft2(solve_filter(fft2(feats), fft2(label), cfg)))
        worst_w = max(worst_w, np.max(np.abs(w_fast - w_ref)) / np.max(np.abs(w_ref)))

        g_fast, _ = cf_forward(feats, z, label, cfg)
        g_ref = oracle.circular_correlate(w_ref, z)
        worst_g = max(worst_g, np.max(np.abs(g_fast - g_ref)) / np.max(np.abs(g_ref)))
    rows.append(("closed-form filter vs dense ridge solve", worst_w, 1e-9))
    rows.append(("detection response vs spatial correlation", worst_g, 1e-9))

    # recursive filter statistics vs the explicit geometric-weight sum
    beta = 0.008
    m = n = 6
    d = 2
    label_spec_conj = np.conj(fft2(gaussian_label(m, n, 1.0)))
    specs = [fft2(rng.standard_normal((m, n, d))) for _ in range(20)]
    state = FilterState(
        numerator=label_spec_conj[:, :, None] * specs[0],
        denominator=np.sum(np.abs(specs[0]) ** 2, axis=2),
        frame_count=1,
    )
    for s in specs[1:]:
        state = update_filter_state(state, s, label_spec_conj, beta)
    p = len(specs)
    weights = [(1 - beta) ** (p - 1)] + [beta * (1 - beta) ** (p - t) for t in range(2, p + 1)]
    num_ref = sum(wt * label_spec_conj[:, :, None] * s for wt, s in zip(weights, specs))
    den_ref = sum(wt * np.sum(np.abs(s) ** 2, axis=2) for wt, s in zip(weights, specs))
    err = max(
        np.max(np.abs(state.numerator - num_ref)) / np.max(np.abs(num_ref)),
        np.max(np.abs(state.denominator - den_ref)) / np.max(np.abs(den_ref)),
    )
    rows.append(("incremental update vs explicit weighted sum", float(err), 1e-10))
    rows.append(("update weights sum to 1", abs(sum(weights) - 1.0), 1e-12))

    return [(name, val, bound, val < bound) for name, val, bound in rows]


def format_rows(rows):
    lines = []
    for name, val, bound, ok in rows:
        status = "PASS" if ok else "FAIL"
        lines.append(f"[{status}] {name}: {val:.3e} (bound {bound:.0e})")
    return lines
