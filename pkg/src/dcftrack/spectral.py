"""2-D discrete Fourier transforms and small complex-plane helpers.

Convention: forward transform is unnormalized, the inverse carries the
1/(MN) factor, so ifft2(fft2(x)) == x. All planes are numpy arrays with
spatial axes first: (M, N) for a single plane, (M, N, D) for a channel
stack (the transform is applied per channel).
"""

import numpy as np


def _require_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


def _require_plane(a, name):
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1, got shape {a.shape}")
    return a


def fft2(plane):
    """Unnormalized forward 2-D DFT over the first two axes.

    Accepts real or complex input of shape (M, N) or (M, N, D);
    non-power-of-two sizes (e.g. 125) are supported.
    """
    plane = _require_plane(plane, "plane")
    _require_finite(plane, "fft2 input")
    return np.fft.fft2(plane, axes=(0, 1))


def ifft2(spec):
    """Inverse 2-D DFT with 1/(MN) normalization over the first two axes."""
    spec = _require_plane(spec, "spec")
    _require_finite(spec, "ifft2 input")
    return np.fft.ifft2(spec, axes=(0, 1))


def real_with_imag_check(plane, rel_tol=1e-8, what="inverse transform"):
    """Drop a residual imaginary part after asserting it is negligible.

    Guards against silently truncating a genuinely complex result; the
    tolerance is relative to the real part's magnitude.
    """
    re = np.real(plane)
    im_max = np.max(np.abs(np.imag(plane)))
    scale = np.max(np.abs(re)) + 1e-30
    if im_max > rel_tol * scale:
        raise ArithmeticError(
            f"{what}: imaginary residue {im_max:.3e} exceeds "
            f"{rel_tol:.1e} * {scale:.3e}"
        )
    return re


def circshift(plane, shift):
    """Circular shift along the two spatial axes (wrap-around)."""
    return np.roll(plane, shift, axis=(0, 1))
