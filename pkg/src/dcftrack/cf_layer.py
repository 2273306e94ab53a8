"""Differentiable correlation filter layer.

Forward: closed-form multi-channel ridge-regression filter in the Fourier
domain and the circular-correlation detection response. Backward: analytic
gradients with respect to both feature branches, carried per frequency bin
with the conjugate-gradient convention for complex intermediates
(the gradient flowing back through an inverse DFT of a real loss is the
forward DFT of the spatial gradient).

Shapes: feature maps are (M, N, D) real, spectra (M, N, D) complex,
planes (M, N).
"""

from dataclasses import dataclass

import numpy as np

from .spectral import fft2, ifft2, real_with_imag_check

IMAG_REL_TOL = 1e-8


@dataclass(frozen=True)
class CfConfig:
    """Regularization setting of the ridge problem (lam > 0)."""

    lam: float = 1e-4

    def __post_init__(self):
        if not (self.lam > 0):
            raise ValueError(f"lam must be > 0, got {self.lam}")


@dataclass(frozen=True)
class CfForwardContext:
    """Spectra cached by cf_forward for the backward pass.

    denom already includes the +lam term, so it is >= lam everywhere.
    """

    x_spec: np.ndarray       # (M, N, D) complex, template features
    z_spec: np.ndarray       # (M, N, D) complex, search features
    label_spec_conj: np.ndarray  # (M, N) complex, conj of label spectrum
    denom: np.ndarray        # (M, N) real, sum_k |x_spec^k|^2 + lam
    resp_spec: np.ndarray    # (M, N) complex, response spectrum

    def filter_spec(self):
        """Per-channel filter spectrum implied by the cached quantities."""
        return self.label_spec_conj[:, :, None] * self.x_spec / self.denom[:, :, None]


def _as_feature_map(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] < 1 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have shape (M, N, D) with D >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def solve_filter(x_spec, label_spec, cfg):
    """Closed-form ridge filter, per frequency bin.

    w_spec[l] = conj(label_spec) * x_spec[l] / (sum_k |x_spec[k]|^2 + lam)

    The denominator sums the spectral energy over ALL channels, so every
    channel shares one scalar denominator per bin.
    """
    x_spec = np.asarray(x_spec)
    label_spec = np.asarray(label_spec)
    if x_spec.ndim != 3:
        raise ValueError(f"x_spec must be (M, N, D), got {x_spec.shape}")
    if label_spec.shape != x_spec.shape[:2]:
        raise ValueError(
            f"label_spec shape {label_spec.shape} does not match "
            f"feature plane {x_spec.shape[:2]}"
        )
    if not (np.all(np.isfinite(x_spec.real)) and np.all(np.isfinite(x_spec.imag))):
        raise ValueError("x_spec contains non-finite values")
    denom = np.sum(x_spec.real ** 2 + x_spec.imag ** 2, axis=2) + cfg.lam
    return np.conj(label_spec)[:, :, None] * x_spec / denom[:, :, None]


def cf_forward(x, z, label, cfg):
    """Solve the filter on x and correlate it with z.

    Returns the real response plane g and the context needed by the
    backward passes. g = ifft2(sum_l conj(w_spec[l]) * z_spec[l]).
    """
    x = _as_feature_map(x, "x")
    z = _as_feature_map(z, "z")
    label = np.asarray(label, dtype=np.float64)
    if z.shape[2] != x.shape[2]:
        raise ValueError(f"channel mismatch: x has {x.shape[2]}, z has {z.shape[2]}")
    if z.shape[:2] != x.shape[:2] or label.shape != x.shape[:2]:
        raise ValueError(
            f"spatial shapes must agree: x {x.shape[:2]}, z {z.shape[:2]}, "
            f"label {label.shape}"
        )

    x_spec = fft2(x)
    z_spec = fft2(z)
    label_spec_conj = np.conj(fft2(label))
    denom = np.sum(x_spec.real ** 2 + x_spec.imag ** 2, axis=2) + cfg.lam
    w_spec = label_spec_conj[:, :, None] * x_spec / denom[:, :, None]
    resp_spec = np.sum(np.conj(w_spec) * z_spec, axis=2)
    g = real_with_imag_check(ifft2(resp_spec), IMAG_REL_TOL, "cf_forward response")

    ctx = CfForwardContext(
        x_spec=x_spec,
        z_spec=z_spec,
        label_spec_conj=label_spec_conj,
        denom=denom,
        resp_spec=resp_spec,
    )
    return g, ctx


def cf_loss(g, g_target):
    """Squared-error data term: loss = sum((g - g_target)^2), grad = 2(g - g_target).

    The parameter-norm penalty of the training objective is applied as
    optimizer weight decay, not here.
    """
    g = np.asarray(g, dtype=np.float64)
    g_target = np.asarray(g_target, dtype=np.float64)
    if g.shape != g_target.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {g_target.shape}")
    diff = g - g_target
    return float(np.sum(diff * diff)), 2.0 * diff


def _check_ctx(dldg, ctx):
    dldg = np.asarray(dldg, dtype=np.float64)
    if dldg.shape != ctx.denom.shape:
        raise ValueError(
            f"dldg shape {dldg.shape} does not match context plane {ctx.denom.shape}"
        )
    return dldg


def cf_backward_z(dldg, ctx):
    """Gradient with respect to the search-branch features.

    G = fft2(dldg); d/d z_spec_conj[l] = G * w_spec[l]; spatial gradient is
    its inverse transform (real after the residue check).
    """
    dldg = _check_ctx(dldg, ctx)
    g_spec = fft2(dldg)
    grad_spec = g_spec[:, :, None] * ctx.filter_spec()
    return real_with_imag_check(ifft2(grad_spec), IMAG_REL_TOL, "cf_backward_z")


def cf_backward_x(dldg, ctx):
    """Gradient with respect to the template-branch features.

    Treats each bin's spectrum value and its conjugate as independent
    variables; the two partials recombine through one inverse transform.
    """
    dldg = _check_ctx(dldg, ctx)
    g_spec = fft2(dldg)[:, :, None]
    denom = ctx.denom[:, :, None]
    resp_conj = np.conj(ctx.resp_spec)[:, :, None]
    y_conj = ctx.label_spec_conj[:, :, None]

    d_x = g_spec * (np.conj(ctx.z_spec) * y_conj - resp_conj * np.conj(ctx.x_spec)) / denom
    d_x_conj = g_spec * (-resp_conj * ctx.x_spec) / denom
    grad_spec = d_x_conj + np.conj(d_x)
    return real_with_imag_check(ifft2(grad_spec), IMAG_REL_TOL, "cf_backward_x")
