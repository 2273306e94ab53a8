"""Definition-literal reference implementations for validating the fast path.

Nothing here shares transform or solver code with the main modules: the
DFT is the raw double sum, the ridge solve builds the dense circular
correlation operator, and gradients are checked by central finite
differences. Small sizes only, double precision throughout.
"""

import numpy as np

DFT_SIZE_BUDGET = 4096


def direct_dft2(plane):
    """O((MN)^2) evaluation of the forward DFT definition."""
    plane = np.asarray(plane, dtype=complex)
    m, n = plane.shape
    if m * n > DFT_SIZE_BUDGET:
        raise ValueError(f"{m}x{n} exceeds the brute-force budget")
    mm, nn = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    out = np.empty((m, n), dtype=complex)
    for u in range(m):
        for v in range(n):
            phase = np.exp(-2j * np.pi * (u * mm / m + v * nn / n))
            out[u, v] = np.sum(plane * phase)
    return out


def circular_correlate(w, feats):
    """Spatial-domain multi-channel circular correlation.

    response(m, n) = sum_l sum_{p,q} w[p,q,l] * feats[(m+p)%M, (n+q)%N, l]
    This is the spatial counterpart of summing conj(w_spec) * feat_spec.
    """
    m, n, d = feats.shape
    out = np.zeros((m, n))
    for p in range(m):
        for q in range(n):
            shifted = np.roll(feats, (-p, -q), axis=(0, 1))
            out += np.tensordot(w[p, q], shifted, axes=(0, 2))
    return out


def _correlation_operator(feats):
    """Dense (MN) x (D*MN) matrix A with A @ vec(w) = vec(w-star-feats)."""
    m, n, d = feats.shape
    cols = []
    for l in range(d):
        for p in range(m):
            for q in range(n):
                cols.append(np.roll(feats[:, :, l], (-p, -q), axis=(0, 1)).ravel())
    return np.array(cols).T  # (MN, D*MN)


def dense_ridge_solve(feats, label, lam):
    """Solve the circular ridge regression with a dense operator matrix.

    Returns the spatial filter (M, N, D) minimizing
    ||sum_l w^l star feats^l - label||^2 + lam * sum_l ||w^l||^2.
    Solved as an augmented least-squares system [A; sqrt(lam) I] rather
    than by normal equations, which would square the condition number.
    """
    feats = np.asarray(feats, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    m, n, d = feats.shape
    if m > 8 or n > 8 or d > 3:
        raise ValueError("problem exceeds the brute-force budget (M, N <= 8, D <= 3)")
    a = _correlation_operator(feats)
    k = a.shape[1]
    aug = np.vstack([a, np.sqrt(lam) * np.eye(k)])
    rhs = np.concatenate([label.ravel(), np.zeros(k)])
    w, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return np.moveaxis(w.reshape(d, m, n), 0, 2)


def ridge_loss(w, feats, label, lam):
    resid = circular_correlate(w, feats) - label
    return float(np.sum(resid ** 2) + lam * np.sum(w ** 2))


def finite_diff_check(f, grad, x, eps=1e-5, directions=None, rng=None):
    """Max relative error between analytic `grad` and central differences of `f`.

    Exhaustive per-coordinate below 2000 parameters, otherwise `directions`
    random directional derivatives (default 100). The error is scaled by
    the larger of the two gradient magnitudes.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ValueError("gradient/point shape mismatch")

    def probe(direction):
        fp = f(x + eps * direction)
        fm = f(x - eps * direction)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ArithmeticError("non-finite function value during finite differences")
        return (fp - fm) / (2.0 * eps)

    if x.size <= 2000:
        fd = np.empty(x.size)
        e = np.zeros_like(x)
        flat = e.ravel()
        for i in range(x.size):
            flat[i] = 1.0
            fd[i] = probe(e)
            flat[i] = 0.0
        analytic = grad.ravel()
    else:
        rng = rng or np.random.default_rng(0)
        k = directions or 100
        fd = np.empty(k)
        analytic = np.empty(k)
        for i in range(k):
            v = rng.standard_normal(x.shape)
            v /= np.linalg.norm(v)
            fd[i] = probe(v)
            analytic[i] = float(np.sum(grad * v))

    scale = max(np.max(np.abs(fd)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(fd - analytic)) / scale)
