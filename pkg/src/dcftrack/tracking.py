"""Online tracker: detection over a scale pyramid plus incremental filter update.

The filter is never stored directly; its numerator and denominator are
accumulated with exponential forgetting (rate beta), so memory stays
constant over time. Displacements are decoded from the wrapped argmax of
the circular-correlation response.
"""

from dataclasses import dataclass

import numpy as np

from . import features as F
from .spectral import fft2, ifft2, real_with_imag_check
from .training import (
    BoundingBox,
    cosine_window,
    crop_patch,
    gaussian_label,
    label_sigma,
    normalize_patch,
)


@dataclass(frozen=True)
class HyperParams:
    lam: float = 1e-4
    online_rate: float = 0.008      # beta
    padding: float = 1.5
    input_size: int = 125
    scale_base: float = 1.0375
    scale_levels: int = 3
    label_bandwidth: float = 0.1
    scale_penalty: float = 1.0      # multiplier on non-unit scales; 1.0 = off
    use_window: bool = True

    def __post_init__(self):
        if not (0.0 <= self.online_rate <= 1.0):
            raise ValueError("online_rate must be in [0, 1]")
        if self.scale_levels % 2 == 0 or self.scale_levels < 1:
            raise ValueError("scale_levels must be odd")
        if not self.scale_base > 1:
            raise ValueError("scale_base must be > 1")

    def scale_factors(self):
        half = (self.scale_levels - 1) // 2
        return [self.scale_base ** s for s in range(-half, half + 1)]


@dataclass
class FilterState:
    numerator: np.ndarray     # (M, N, D) complex
    denominator: np.ndarray   # (M, N) real, >= 0 (lam is added at solve time)
    frame_count: int


@dataclass
class TrackerState:
    box: BoundingBox
    filter: FilterState
    params: HyperParams
    model: F.NetworkParams
    window: np.ndarray           # (M, N)
    label_spec_conj: np.ndarray  # (M, N) complex


def peak_to_displacement(index, m, n):
    """Signed cell displacement of a response peak relative to the label center.

    The center cell (m//2, n//2) maps to (0, 0); values wrap into
    [-floor(m/2), ceil(m/2)) per axis.
    """
    u, v = index
    if not (0 <= u < m and 0 <= v < n):
        raise ValueError(f"peak index {index} outside {m}x{n} grid")
    return u - m // 2, v - n // 2


def frame_statistics(state_or_params, model, frame, box):
    """Crop, extract windowed features, and return their per-channel spectra."""
    params = state_or_params
    patch = normalize_patch(crop_patch(frame, box, params.padding, params.input_size))
    feat, _ = F.net_forward(patch, model)
    if params.use_window:
        m = params.input_size
        feat = feat * cosine_window(m, m)[:, :, None]
    return fft2(feat)


def update_filter_state(state, new_feat_spec, label_spec_conj, beta):
    """Exponential-forgetting update of the accumulated filter statistics.

    numerator <- (1-beta)*numerator + beta * conj(label_spec) * feat_spec
    denominator <- (1-beta)*denominator + beta * sum_k |feat_spec^k|^2

    Unrolled, frame t (t >= 2) carries weight beta*(1-beta)^(p-t) and the
    first frame (1-beta)^(p-1); the weights sum to 1, so lam is added once
    when the filter is solved.
    """
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must be in [0, 1]")
    num = conj_label_product(new_feat_spec, label_spec_conj)
    den = np.sum(new_feat_spec.real ** 2 + new_feat_spec.imag ** 2, axis=2)
    return FilterState(
        numerator=(1.0 - beta) * state.numerator + beta * num,
        denominator=(1.0 - beta) * state.denominator + beta * den,
        frame_count=state.frame_count + 1,
    )


def conj_label_product(feat_spec, label_spec_conj):
    return label_spec_conj[:, :, None] * feat_spec


def tracker_init(frame, box, params, model):
    """Build the first-frame filter statistics (frame count 1)."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    if not (0 <= box.cx <= w and 0 <= box.cy <= h):
        raise ValueError(f"box center ({box.cx}, {box.cy}) outside {w}x{h} frame")
    m = params.input_size
    sigma = label_sigma(m, params.padding, params.label_bandwidth)
    label_spec_conj = np.conj(fft2(gaussian_label(m, m, sigma)))
    feat_spec = frame_statistics(params, model, frame, box)
    filt = FilterState(
        numerator=conj_label_product(feat_spec, label_spec_conj),
        denominator=np.sum(feat_spec.real ** 2 + feat_spec.imag ** 2, axis=2),
        frame_count=1,
    )
    return TrackerState(
        box=box,
        filter=filt,
        params=params,
        model=model,
        window=cosine_window(m, m),
        label_spec_conj=label_spec_conj,
    )


def response_map(state, feat_spec):
    """Correlation response of the current filter against search features."""
    p = state.params
    w_spec = state.filter.numerator / (state.filter.denominator + p.lam)[:, :, None]
    resp_spec = np.sum(np.conj(w_spec) * feat_spec, axis=2)
    resp = real_with_imag_check(ifft2(resp_spec), what="tracker response")
    if not np.all(np.isfinite(resp)):
        raise ArithmeticError("non-finite tracker response")
    return resp


def tracker_step(state, frame):
    """Locate the target in a new frame and update the filter.

    Detection runs at every pyramid scale; the globally highest (optionally
    scale-penalized) response wins. The model update uses a fresh crop at
    the relocated box.
    """
    frame = np.asarray(frame)
    p = state.params
    h, w = frame.shape[:2]
    m = p.input_size

    best = None
    for s in p.scale_factors():
        feat_spec = frame_statistics(p, state.model, frame, state.box.scaled(s))
        resp = response_map(state, feat_spec)
        if s != 1.0 and p.scale_penalty != 1.0:
            resp = resp * p.scale_penalty
        idx = np.unravel_index(np.argmax(resp), resp.shape)
        score = resp[idx]
        if best is None or score > best[0]:
            best = (score, s, idx)

    _, s_best, idx = best
    du, dv = peak_to_displacement(idx, m, m)
    # one response cell spans cropWindowPixels/input_size image pixels
    cell_x = p.padding * state.box.w * s_best / m
    cell_y = p.padding * state.box.h * s_best / m
    new_cx = float(np.clip(state.box.cx + dv * cell_x, 0.0, w))
    new_cy = float(np.clip(state.box.cy + du * cell_y, 0.0, h))
    new_box = BoundingBox(new_cx, new_cy, state.box.w * s_best, state.box.h * s_best)

    feat_spec = frame_statistics(p, state.model, frame, new_box)
    state.filter = update_filter_state(
        state.filter, feat_spec, state.label_spec_conj, p.online_rate
    )
    state.box = new_box
    return state, new_box
