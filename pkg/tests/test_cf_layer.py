import numpy as np
import pytest

from dcftrack import oracle
from dcftrack.cf_layer import (
    CfConfig,
    cf_backward_x,
    cf_backward_z,
    cf_forward,
    cf_loss,
    solve_filter,
)
from dcftrack.spectral import circshift, fft2, ifft2
from dcftrack.training import gaussian_label


def _random_instance(rng, m=4, n=4, d=2):
    x = rng.standard_normal((m, n, d))
    z = rng.standard_normal((m, n, d))
    label = gaussian_label(m, n, 1.0)
    return x, z, label


class TestSolveFilter:
    def test_unit_spectrum_returns_scaled_label_conj(self):
        m, n = 4, 5
        rng = np.random.default_rng(0)
        label = rng.standard_normal((m, n))
        label_spec = fft2(label)
        lam = 1e-9
        x_spec = np.ones((m, n, 1), dtype=complex)
        w = solve_filter(x_spec, label_spec, CfConfig(lam=lam))
        assert np.allclose(w[:, :, 0], np.conj(label_spec) / (1 + lam), rtol=1e-12)

    def test_huge_regularization_kills_filter(self):
        rng = np.random.default_rng(1)
        x_spec = fft2(rng.standard_normal((4, 4, 2)))
        label_spec = fft2(rng.standard_normal((4, 4)))
        w = solve_filter(x_spec, label_spec, CfConfig(lam=1e12))
        assert np.max(np.abs(w)) < 1e-10

    def test_matches_dense_ridge_oracle(self):
        rng = np.random.default_rng(2)
        x, _, label = _random_instance(rng)
        cfg = CfConfig(lam=1e-4)
        w_fast = np.real(ifft2(solve_filter(fft2(x), fft2(label), cfg)))
        w_ref = oracle.dense_ridge_solve(x, label, cfg.lam)
        assert np.max(np.abs(w_fast - w_ref)) < 1e-9 * np.max(np.abs(w_ref))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            solve_filter(np.ones((4, 4, 2), complex), np.ones((3, 4), complex), CfConfig())

    def test_denominator_keeps_output_finite(self):
        rng = np.random.default_rng(3)
        x_spec = np.zeros((4, 4, 2), dtype=complex)  # zero energy everywhere
        label_spec = fft2(rng.standard_normal((4, 4)))
        w = solve_filter(x_spec, label_spec, CfConfig(lam=1e-4))
        assert np.all(np.isfinite(w.real)) and np.all(np.isfinite(w.imag))


class TestForward:
    def test_self_correlation_reproduces_label(self):
        rng = np.random.default_rng(4)
        m = n = 6
        # nowhere-vanishing spectrum: impulse-dominated patch
        x = rng.standard_normal((m, n, 1)) * 0.01
        x[2, 3, 0] += 5.0
        label = gaussian_label(m, n, 1.0)
        g, _ = cf_forward(x, x, label, CfConfig(lam=1e-12))
        assert np.max(np.abs(g - label)) < 1e-9 * np.max(np.abs(label))

    def test_shifted_search_shifts_response(self):
        rng = np.random.default_rng(5)
        m = n = 8
        x = rng.standard_normal((m, n, 2))
        label = gaussian_label(m, n, 1.0)
        cfg = CfConfig(lam=1e-4)
        g_self, _ = cf_forward(x, x, label, cfg)
        delta = (2, 3)
        g_shift, _ = cf_forward(x, circshift(x, delta), label, cfg)
        assert np.allclose(g_shift, circshift(g_self, delta), atol=1e-10)
        peak_self = np.unravel_index(np.argmax(g_self), g_self.shape)
        peak_shift = np.unravel_index(np.argmax(g_shift), g_shift.shape)
        assert (peak_shift[0] - peak_self[0]) % m == delta[0]
        assert (peak_shift[1] - peak_self[1]) % n == delta[1]

    def test_matches_spatial_correlation_oracle(self):
        rng = np.random.default_rng(6)
        x, z, label = _random_instance(rng)
        cfg = CfConfig(lam=1e-4)
        g, _ = cf_forward(x, z, label, cfg)
        w_ref = oracle.dense_ridge_solve(x, label, cfg.lam)
        g_ref = oracle.circular_correlate(w_ref, z)
        assert np.max(np.abs(g - g_ref)) < 1e-9 * np.max(np.abs(g_ref))

    def test_channel_mismatch_rejected(self):
        label = gaussian_label(4, 4, 1.0)
        with pytest.raises(ValueError):
            cf_forward(np.ones((4, 4, 2)), np.ones((4, 4, 3)), label, CfConfig())

    def test_context_denominator_at_least_lam(self):
        rng = np.random.default_rng(7)
        x, z, label = _random_instance(rng)
        cfg = CfConfig(lam=1e-4)
        _, ctx = cf_forward(x, z, label, cfg)
        assert np.all(ctx.denom >= cfg.lam)


class TestLoss:
    def test_minimum(self):
        g = np.random.default_rng(8).standard_normal((5, 5))
        loss, grad = cf_loss(g, g)
        assert loss == 0.0
        assert np.max(np.abs(grad)) == 0.0

    def test_zero_target(self):
        g = np.random.default_rng(9).standard_normal((4, 6))
        loss, grad = cf_loss(g, np.zeros_like(g))
        assert loss == pytest.approx(np.sum(g ** 2))
        assert np.allclose(grad, 2 * g)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        g = rng.standard_normal((5, 5))
        gt = rng.standard_normal((5, 5))
        _, grad = cf_loss(g, gt)
        err = oracle.finite_diff_check(lambda v: cf_loss(v.reshape(g.shape), gt)[0], grad, g)
        assert err < 1e-7

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cf_loss(np.zeros((3, 3)), np.zeros((3, 4)))


class TestBackward:
    def _ctx(self, rng, m=5, n=5, d=2, lam=1e-4):
        x = rng.standard_normal((m, n, d))
        z = rng.standard_normal((m, n, d))
        label = gaussian_label(m, n, 1.0)
        cfg = CfConfig(lam=lam)
        g, ctx = cf_forward(x, z, label, cfg)
        return x, z, label, cfg, g, ctx

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(11)
        x, z, label, cfg, g, ctx = self._ctx(rng)
        zero = np.zeros_like(g)
        assert np.max(np.abs(cf_backward_z(zero, ctx))) == 0.0
        assert np.max(np.abs(cf_backward_x(zero, ctx))) == 0.0

    def test_identity_filter_passes_gradient_through(self):
        # single channel with unit filter spectrum: backward_z is fft/ifft identity
        m = n = 4
        rng = np.random.default_rng(12)
        label = rng.standard_normal((m, n))
        from dcftrack.cf_layer import CfForwardContext
        ctx = CfForwardContext(
            x_spec=np.ones((m, n, 1), complex),
            z_spec=np.ones((m, n, 1), complex),
            label_spec_conj=np.ones((m, n), complex),
            denom=np.ones((m, n)),
            resp_spec=np.ones((m, n), complex),
        )
        dldg = rng.standard_normal((m, n))
        out = cf_backward_z(dldg, ctx)
        assert np.allclose(out[:, :, 0], dldg, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_z_matches_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        x, z, label, cfg, g, ctx = self._ctx(rng)
        gt = np.zeros_like(g)
        _, dldg = cf_loss(g, gt)
        grad = cf_backward_z(dldg, ctx)

        def f(v):
            gg, _ = cf_forward(x, v.reshape(z.shape), label, cfg)
            return cf_loss(gg, gt)[0]

        assert oracle.finite_diff_check(f, grad, z) < 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_x_matches_finite_differences(self, seed):
        rng = np.random.default_rng(200 + seed)
        x, z, label, cfg, g, ctx = self._ctx(rng)
        gt = np.zeros_like(g)
        _, dldg = cf_loss(g, gt)
        grad = cf_backward_x(dldg, ctx)

        def f(v):
            gg, _ = cf_forward(v.reshape(x.shape), z, label, cfg)
            return cf_loss(gg, gt)[0]

        assert oracle.finite_diff_check(f, grad, x) < 1e-5

    def test_huge_regularization_flattens_x_gradient(self):
        rng = np.random.default_rng(13)
        x, z, label, cfg, g, ctx = self._ctx(rng, lam=1e12)
        _, dldg = cf_loss(g, label)
        assert np.max(np.abs(cf_backward_x(dldg, ctx))) < 1e-6

    def test_backward_linearity_in_upstream(self):
        rng = np.random.default_rng(14)
        x, z, label, cfg, g, ctx = self._ctx(rng)
        dldg = rng.standard_normal(g.shape)
        c = 3.5
        assert np.allclose(cf_backward_z(c * dldg, ctx), c * cf_backward_z(dldg, ctx))
        assert np.allclose(cf_backward_x(c * dldg, ctx), c * cf_backward_x(dldg, ctx))

    def test_directional_derivatives_both_branches(self):
        rng = np.random.default_rng(15)
        x, z, label, cfg, g, ctx = self._ctx(rng)
        gt = gaussian_label(*g.shape, 1.5)
        _, dldg = cf_loss(g, gt)
        gx = cf_backward_x(dldg, ctx)
        gz = cf_backward_z(dldg, ctx)
        eps = 1e-5
        for _ in range(100):
            v = rng.standard_normal(x.shape)
            v /= np.linalg.norm(v)
            for point, grad, branch in ((x, gx, "x"), (z, gz, "z")):
                if branch == "x":
                    fp = cf_loss(cf_forward(point + eps * v, z, label, cfg)[0], gt)[0]
                    fm = cf_loss(cf_forward(point - eps * v, z, label, cfg)[0], gt)[0]
                else:
                    fp = cf_loss(cf_forward(x, point + eps * v, label, cfg)[0], gt)[0]
                    fm = cf_loss(cf_forward(x, point - eps * v, label, cfg)[0], gt)[0]
                fd = (fp - fm) / (2 * eps)
                an = float(np.sum(grad * v))
                assert abs(fd - an) < 1e-5 * max(abs(fd), abs(an), 1e-6)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(16)
        x, z, label, cfg, g, ctx = self._ctx(rng)
        with pytest.raises(ValueError):
            cf_backward_z(np.zeros((2, 2)), ctx)


def test_config_validation():
    with pytest.raises(ValueError):
        CfConfig(lam=0.0)
    with pytest.raises(ValueError):
        CfConfig(lam=-1.0)


def test_degenerate_feature_map_rejected():
    with pytest.raises(ValueError):
        cf_forward(np.ones((4, 4, 0)), np.ones((4, 4, 0)), np.ones((4, 4)), CfConfig())
