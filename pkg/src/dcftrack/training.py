"""Offline training of the Siamese feature extractor through the CF layer.

Also hosts the pieces the tracker reuses: Gaussian labels on the response
grid, sub-pixel patch cropping with border replication, and the cosine
window. Pixel coordinates are continuous with pixel (i, j) covering
[j, j+1) x [i, i+1); a box is stored by its continuous center and size.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import features as F
from .cf_layer import CfConfig, cf_forward, cf_loss, cf_backward_x, cf_backward_z


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got {self.w}x{self.h}")

    def scaled(self, s):
        return BoundingBox(self.cx, self.cy, self.w * s, self.h * s)


@dataclass(frozen=True)
class LabelConfig:
    bandwidth: float = 0.1

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        ok = (self.learning_rate >= 0 and self.momentum >= 0 and self.weight_decay >= 0
              and self.batch_size >= 1 and self.epochs >= 1)
        if not ok:
            raise ValueError("invalid optimizer configuration")


@dataclass(frozen=True)
class PairSpec:
    sequence: int
    i: int
    j: int
    box_i: BoundingBox | None = None
    box_j: BoundingBox | None = None

    def __post_init__(self):
        if not (self.i < self.j and self.j - self.i <= 10):
            raise ValueError(f"frame gap must satisfy 1 <= j-i <= 10, got ({self.i}, {self.j})")


def gaussian_label(m, n, sigma):
    """Gaussian response target peaked (value exactly 1) at cell (m//2, n//2).

    Distances wrap around the grid edges, so circularly shifting the plane
    moves the peak without reshaping it.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    du = np.abs(np.arange(m) - m // 2)
    du = np.minimum(du, m - du)
    dv = np.abs(np.arange(n) - n // 2)
    dv = np.minimum(dv, n - dv)
    return np.exp(-(du[:, None] ** 2 + dv[None, :] ** 2) / (2.0 * sigma ** 2))


def label_sigma(input_size, padding, bandwidth):
    """Response-grid sigma: bandwidth x sqrt of the target area in cells.

    The target occupies input_size/padding cells per axis after cropping
    with the given padding factor and resizing.
    """
    target_cells = input_size / padding
    return bandwidth * np.sqrt(target_cells * target_cells)


def cosine_window(m, n):
    """Separable Hann taper used to suppress circular-boundary artifacts."""
    wu = 0.5 * (1.0 - np.cos(2.0 * np.pi * (np.arange(m) + 0.5) / m))
    wv = 0.5 * (1.0 - np.cos(2.0 * np.pi * (np.arange(n) + 0.5) / n))
    return np.outer(wu, wv)


def crop_patch(image, box, padding, out_size):
    """Axis-aligned crop of (padding*w, padding*h) around the box center,
    bilinearly resampled to out_size x out_size; out-of-frame samples
    replicate the nearest border pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if not (padding > 0 and out_size >= 1):
        raise ValueError("padding must be > 0 and out_size >= 1")
    h, w = image.shape[:2]
    win_w = padding * box.w
    win_h = padding * box.h

    # sample positions in pixel-center coordinates
    xs = box.cx - win_w / 2 + (np.arange(out_size) + 0.5) * (win_w / out_size) - 0.5
    ys = box.cy - win_h / 2 + (np.arange(out_size) + 0.5) * (win_h / out_size) - 0.5

    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = np.clip(x0.astype(np.int64), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y0 = np.clip(y0.astype(np.int64), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    # clamp the interpolation weight together with the coordinate
    fx = np.clip(np.where(xs < 0, 0.0, fx), 0.0, 1.0)
    fy = np.clip(np.where(ys < 0, 0.0, fy), 0.0, 1.0)

    fy_c = fy[:, None, None]
    fx_c = fx[None, :, None]
    top = image[np.ix_(y0, x0)] * (1 - fx_c) + image[np.ix_(y0, x1)] * fx_c
    bot = image[np.ix_(y1, x0)] * (1 - fx_c) + image[np.ix_(y1, x1)] * fx_c
    return top * (1 - fy_c) + bot * fy_c


def normalize_patch(patch):
    """Map 0..255 pixels to zero-centered unit-range values."""
    return patch / 255.0 - 0.5


def sample_pairs(sequence_lengths, max_gap=10):
    """All ordered frame pairs (i, j) with 1 <= j - i <= max_gap, per sequence."""
    pairs = []
    for seq, length in enumerate(sequence_lengths):
        if length < 1:
            raise ValueError("sequence length must be >= 1")
        for i in range(length):
            for j in range(i + 1, min(i + max_gap, length - 1) + 1):
                pairs.append(PairSpec(seq, i, j))
    return pairs


def sgd_step(params, grads, velocity, cfg):
    """One SGD-with-momentum update; weight decay realizes the parameter
    penalty of the training objective.

    v <- momentum*v - lr*(grad + weight_decay*param); param <- param + v
    """
    if velocity is None:
        velocity = F.zero_grads(params)
    for (dk, db), (vk, vb), layer in zip(grads, velocity, params.layers):
        if not (np.all(np.isfinite(dk)) and np.all(np.isfinite(db))):
            raise ValueError("non-finite gradient; step rejected")
        vk *= cfg.momentum
        vk -= cfg.learning_rate * (dk + cfg.weight_decay * layer.kernels)
        vb *= cfg.momentum
        vb -= cfg.learning_rate * (db + cfg.weight_decay * layer.biases)
        layer.kernels += vk
        layer.biases += vb
    return params, velocity


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSequence:
    frames: list              # H x W x 3 float64 arrays, 0..255
    boxes: list               # one BoundingBox per frame

    def __len__(self):
        return len(self.frames)


def _render_patch(rng, size):
    # blocky random texture plus noise: enough structure to localize on
    coarse = rng.uniform(0, 255, size=(size // 4 + 1, size // 4 + 1, 3))
    tex = np.repeat(np.repeat(coarse, 4, axis=0), 4, axis=1)[:size, :size]
    tex = tex + rng.normal(0, 8, size=tex.shape)
    return np.clip(tex, 0, 255)


def make_synthetic_dataset(count, seed, frames_per_sequence=20, frame_size=96,
                           patch_size=32, max_step_frac=0.10, scale_drift=False):
    """Textured rigid patches on noise backgrounds with bounded random walks.

    Per-frame translation is at most max_step_frac * patch_size per axis;
    boxes stay fully inside the frame by construction and are recorded
    exactly. Fixed seed gives a bit-identical dataset.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    max_step = max(1, int(round(max_step_frac * patch_size)))
    sequences = []
    for _ in range(count):
        background = np.clip(
            rng.uniform(0, 255, size=(frame_size, frame_size, 3))
            + rng.normal(0, 4, size=(frame_size, frame_size, 3)),
            0, 255,
        )
        patch = _render_patch(rng, patch_size)
        scale = 1.0
        # start away from the borders when there is room
        lo = min(patch_size, (frame_size - patch_size) // 2)
        hi = max(lo + 1, frame_size - patch_size - lo + 1)
        top = rng.integers(lo, hi)
        left = rng.integers(lo, hi)
        frames, boxes = [], []
        for _ in range(frames_per_sequence):
            if scale_drift:
                scale = float(np.clip(scale * (1.0 + rng.normal(0, 0.01)), 0.8, 1.25))
            ph = pw = max(8, int(round(patch_size * scale)))
            top = int(np.clip(top, 0, frame_size - ph))
            left = int(np.clip(left, 0, frame_size - pw))
            frame = background.copy()
            if scale == 1.0:
                rendered = patch
            else:
                import cv2
                rendered = cv2.resize(patch, (pw, ph), interpolation=cv2.INTER_LINEAR)
            frame[top:top + ph, left:left + pw] = rendered
            frames.append(frame)
            boxes.append(BoundingBox(left + pw / 2.0, top + ph / 2.0, float(pw), float(ph)))
            top += int(rng.integers(-max_step, max_step + 1))
            left += int(rng.integers(-max_step, max_step + 1))
        sequences.append(SyntheticSequence(frames, boxes))
    return sequences


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainSetup:
    architecture: str = "conv1"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    cf: CfConfig = field(default_factory=CfConfig)
    input_size: int = 125
    padding: float = 1.5
    use_window: bool = True
    jitter_cells: int = 0     # uniform translation jitter of the search crop


_CONFIG_KEYS = {
    "architecture": str,
    "learning_rate": float,
    "momentum": float,
    "weight_decay": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "bandwidth": float,
    "lambda": float,
    "input_size": int,
    "padding": float,
    "use_window": bool,
    "jitter_cells": int,
}


def parse_training_config(text):
    """Parse a flat `key = value` config into a TrainSetup; unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        kind = _CONFIG_KEYS[key]
        if kind is bool:
            if val.lower() not in ("true", "false", "0", "1"):
                raise ValueError(f"config line {lineno}: bad boolean {val!r}")
            values[key] = val.lower() in ("true", "1")
        else:
            values[key] = kind(val)

    setup = TrainSetup(
        architecture=values.pop("architecture", "conv1"),
        label=LabelConfig(bandwidth=values.pop("bandwidth", 0.1)),
        cf=CfConfig(lam=values.pop("lambda", 1e-4)),
        input_size=values.pop("input_size", 125),
        padding=values.pop("padding", 1.5),
        use_window=values.pop("use_window", True),
        jitter_cells=values.pop("jitter_cells", 0),
    )
    opt_fields = {k: v for k, v in values.items()}
    return replace(setup, optimizer=OptimizerConfig(**opt_fields))


def _pair_patches(sequences, pair, setup, rng):
    seq = sequences[pair.sequence]
    box_i = pair.box_i or seq.boxes[pair.i]
    box_j = pair.box_j or seq.boxes[pair.j]
    x = normalize_patch(crop_patch(seq.frames[pair.i], box_i, setup.padding, setup.input_size))
    shift = (0, 0)
    if setup.jitter_cells > 0 and rng is not None:
        shift = (int(rng.integers(-setup.jitter_cells, setup.jitter_cells + 1)),
                 int(rng.integers(-setup.jitter_cells, setup.jitter_cells + 1)))
        cell_y = box_j.h * setup.padding / setup.input_size
        cell_x = box_j.w * setup.padding / setup.input_size
        box_j = BoundingBox(box_j.cx - shift[1] * cell_x, box_j.cy - shift[0] * cell_y,
                            box_j.w, box_j.h)
    z = normalize_patch(crop_patch(seq.frames[pair.j], box_j, setup.padding, setup.input_size))
    return x, z, shift


def train_epoch(model, velocity, pairs, sequences, setup, rng=None):
    """One pass over the pair list in mini-batches; returns (model, velocity, mean loss).

    Per batch: crop both patches, run the shared feature net on each branch,
    window, run the CF layer, backpropagate both branches (summing the
    Siamese parameter gradients) and take one SGD step on the batch mean.
    """
    if not pairs:
        raise ValueError("pair list is empty")
    m = setup.input_size
    sigma = label_sigma(setup.input_size, setup.padding, setup.label.bandwidth)
    base_label = gaussian_label(m, m, sigma)
    window = cosine_window(m, m) if setup.use_window else np.ones((m, m))
    win3 = window[:, :, None]

    total_loss = 0.0
    count = 0
    bs = setup.optimizer.batch_size
    for start in range(0, len(pairs), bs):
        batch = pairs[start:start + bs]
        xs, zs, labels = [], [], []
        for pair in batch:
            x, z, shift = _pair_patches(sequences, pair, setup, rng)
            xs.append(x)
            zs.append(z)
            labels.append(np.roll(base_label, shift, axis=(0, 1)))
        x_in = np.stack(xs)
        z_in = np.stack(zs)

        x_feat, x_tape = F.net_forward(x_in, model)
        z_feat, z_tape = F.net_forward(z_in, model)
        x_feat = x_feat * win3
        z_feat = z_feat * win3

        dx_feat = np.empty_like(x_feat)
        dz_feat = np.empty_like(z_feat)
        batch_loss = 0.0
        for b, g_target in enumerate(labels):
            g, ctx = cf_forward(x_feat[b], z_feat[b], base_label, setup.cf)
            loss, dldg = cf_loss(g, g_target)
            batch_loss += loss
            dx_feat[b] = cf_backward_x(dldg, ctx) * win3
            dz_feat[b] = cf_backward_z(dldg, ctx) * win3

        inv_b = 1.0 / len(batch)
        _, gx = F.net_backward(dx_feat * inv_b, x_tape, model)
        _, gz = F.net_backward(dz_feat * inv_b, z_tape, model)
        grads = [(gk1 + gk2, gb1 + gb2) for (gk1, gb1), (gk2, gb2) in zip(gx, gz)]
        model, velocity = sgd_step(model, grads, velocity, setup.optimizer)

        total_loss += batch_loss
        count += len(batch)
    return model, velocity, total_loss / count


def train(sequences, setup, progress=None):
    """Full offline training run over a sequence set; returns (model, epoch losses)."""
    rng = np.random.default_rng(setup.optimizer.seed)
    pairs = sample_pairs([len(s) for s in sequences])
    order = rng.permutation(len(pairs))
    pairs = [pairs[k] for k in order]
    model = F.init_network(setup.architecture, seed=setup.optimizer.seed)
    velocity = None
    losses = []
    for epoch in range(setup.optimizer.epochs):
        model, velocity, loss = train_epoch(model, velocity, pairs, sequences, setup, rng)
        losses.append(loss)
        if progress is not None:
            progress(epoch, loss)
    return model, losses
