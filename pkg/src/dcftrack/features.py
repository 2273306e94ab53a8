"""Lightweight convolutional feature extractor with manual backprop.

Three architecture variants are supported ("conv1", "conv1-dilation",
"conv2"); all use 3x3 kernels, stride 1 and zero padding chosen so the
spatial size is preserved, and all end in an across-channel local response
normalization. Arrays are channels-last: (M, N, C), or (B, M, N, C) with a
leading batch axis (forward and backward accept either).
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConvLayerParams:
    kernels: np.ndarray   # (3, 3, in_channels, out_channels)
    biases: np.ndarray    # (out_channels,)
    dilation: int = 1
    has_relu: bool = False

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.kernels.ndim != 4 or self.kernels.shape[:2] != (3, 3):
            raise ValueError(f"kernels must be (3, 3, cin, cout), got {self.kernels.shape}")
        if self.biases.shape != (self.kernels.shape[3],):
            raise ValueError("bias length must equal output channel count")
        if self.dilation not in (1, 2):
            raise ValueError(f"dilation must be 1 or 2, got {self.dilation}")
        if not (np.all(np.isfinite(self.kernels)) and np.all(np.isfinite(self.biases))):
            raise ValueError("non-finite layer parameters")


@dataclass(frozen=True)
class LrnParams:
    """Across-channel normalization constants (classical defaults)."""

    n: int = 5
    k: float = 1.0
    alpha: float = 1e-4 / 5
    beta: float = 0.75

    def __post_init__(self):
        if self.n < 1 or self.n % 2 == 0:
            raise ValueError(f"window n must be odd and >= 1, got {self.n}")
        if not (self.k > 0 and self.alpha >= 0 and self.beta > 0):
            raise ValueError("require k > 0, alpha >= 0, beta > 0")


# architecture id -> list of (in_channels, out_channels, dilation, has_relu)
ARCHITECTURES = {
    "conv1": [(3, 64, 1, True), (64, 32, 1, False)],
    "conv1-dilation": [(3, 64, 1, True), (64, 32, 2, False)],
    "conv2": [(3, 64, 1, True), (64, 64, 1, True), (64, 128, 1, True), (128, 32, 1, False)],
}

OUTPUT_CHANNELS = 32


@dataclass
class NetworkParams:
    architecture: str
    layers: list = field(default_factory=list)
    lrn: LrnParams = field(default_factory=LrnParams)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        spec = ARCHITECTURES[self.architecture]
        if len(self.layers) != len(spec):
            raise ValueError(
                f"{self.architecture} needs {len(spec)} layers, got {len(self.layers)}"
            )
        for layer, (cin, cout, dil, rl) in zip(self.layers, spec):
            if layer.kernels.shape != (3, 3, cin, cout):
                raise ValueError(
                    f"layer kernel shape {layer.kernels.shape} does not match "
                    f"architecture row (3, 3, {cin}, {cout})"
                )
            if layer.dilation != dil or layer.has_relu != rl:
                raise ValueError("layer dilation/relu flags do not match architecture")
        if self.layers[-1].kernels.shape[3] != OUTPUT_CHANNELS:
            raise ValueError("final layer must emit 32 channels")

    def param_count(self):
        return sum(l.kernels.size + l.biases.size for l in self.layers)

    def copy(self):
        return NetworkParams(
            self.architecture,
            [ConvLayerParams(l.kernels.copy(), l.biases.copy(), l.dilation, l.has_relu)
             for l in self.layers],
            self.lrn,
        )


def init_network(architecture, seed=0, lrn=None, gain=0.1):
    """Seeded random init: kernels ~ N(0, (gain * sqrt(2/(fan_in+fan_out)))^2),
    zero biases.

    The correlation-filter head is invariant to the overall feature scale,
    so gradients through it shrink as the feature magnitude grows; the
    sub-unit gain keeps the net trainable at small learning rates without
    changing what it can represent.
    """
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for cin, cout, dil, rl in ARCHITECTURES[architecture]:
        fan_in, fan_out = 9 * cin, 9 * cout
        std = gain * np.sqrt(2.0 / (fan_in + fan_out))
        layers.append(ConvLayerParams(
            kernels=rng.normal(0.0, std, size=(3, 3, cin, cout)),
            biases=np.zeros(cout),
            dilation=dil,
            has_relu=rl,
        ))
    return NetworkParams(architecture, layers, lrn or LrnParams())


def zero_grads(params):
    """Gradient accumulator shaped like the network parameters."""
    return [(np.zeros_like(l.kernels), np.zeros_like(l.biases)) for l in params.layers]


# ---------------------------------------------------------------------------
# conv / relu / lrn primitives


def _split_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected (M, N, C) or (B, M, N, C), got shape {x.shape}")


def conv2d(x, layer):
    """3x3 convolution, stride 1, zero padding = dilation (size preserving)."""
    xb, squeeze = _split_batch(x)
    if xb.shape[3] != layer.kernels.shape[2]:
        raise ValueError(
            f"input has {xb.shape[3]} channels, layer expects {layer.kernels.shape[2]}"
        )
    b, m, n, cin = xb.shape
    cout = layer.kernels.shape[3]
    d = layer.dilation
    xp = np.pad(xb, ((0, 0), (d, d), (d, d), (0, 0)))
    out = np.empty((b, m, n, cout))
    out[:] = layer.biases
    flat = out.reshape(-1, cout)
    for ki in range(3):
        for kj in range(3):
            patch = xp[:, ki * d:ki * d + m, kj * d:kj * d + n, :].reshape(-1, cin)
            flat += patch @ layer.kernels[ki, kj]
    return out[0] if squeeze else out


def conv2d_backward(dout, x, layer):
    """Gradients of conv2d: returns (dx, dkernels, dbiases)."""
    xb, squeeze = _split_batch(x)
    db_, _ = _split_batch(dout)
    b, m, n, cin = xb.shape
    cout = layer.kernels.shape[3]
    d = layer.dilation
    xp = np.pad(xb, ((0, 0), (d, d), (d, d), (0, 0)))
    dxp = np.zeros_like(xp)
    dk = np.zeros_like(layer.kernels)
    dflat = db_.reshape(-1, cout)
    for ki in range(3):
        for kj in range(3):
            patch = xp[:, ki * d:ki * d + m, kj * d:kj * d + n, :].reshape(-1, cin)
            dk[ki, kj] = patch.T @ dflat
            dxp[:, ki * d:ki * d + m, kj * d:kj * d + n, :] += (
                dflat @ layer.kernels[ki, kj].T
            ).reshape(b, m, n, cin)
    dx = dxp[:, d:d + m, d:d + n, :]
    dbias = dflat.sum(axis=0)
    return (dx[0] if squeeze else dx), dk, dbias


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    # gradient at exactly 0 is defined as 0
    return np.where(np.asarray(x) > 0, dout, 0.0)


def _lrn_scale(x, p):
    """Windowed channel energy s = k + alpha * sum_{c' in W(c)} x_{c'}^2."""
    sq = x * x
    half = (p.n - 1) // 2
    c = x.shape[-1]
    # cumulative sum along channels gives each clipped window in O(1)
    cs = np.concatenate(
        [np.zeros(sq.shape[:-1] + (1,)), np.cumsum(sq, axis=-1)], axis=-1
    )
    lo = np.maximum(np.arange(c) - half, 0)
    hi = np.minimum(np.arange(c) + half, c - 1) + 1
    win = cs[..., hi] - cs[..., lo]
    return p.k + p.alpha * win


def lrn(x, p):
    """Across-channel response normalization: x * s^(-beta)."""
    x = np.asarray(x, dtype=np.float64)
    return x * _lrn_scale(x, p) ** (-p.beta)


def lrn_backward(dout, x, p):
    x = np.asarray(x, dtype=np.float64)
    dout = np.asarray(dout, dtype=np.float64)
    s = _lrn_scale(x, p)
    s_mb = s ** (-p.beta)
    # dL/dx_e = dout_e * s_e^-b - 2*alpha*beta*x_e * sum_{c in W(e)} dout_c x_c s_c^{-b-1}
    inner = dout * x * s_mb / s
    half = (p.n - 1) // 2
    c = x.shape[-1]
    cs = np.concatenate(
        [np.zeros(inner.shape[:-1] + (1,)), np.cumsum(inner, axis=-1)], axis=-1
    )
    lo = np.maximum(np.arange(c) - half, 0)
    hi = np.minimum(np.arange(c) + half, c - 1) + 1
    win = cs[..., hi] - cs[..., lo]
    return dout * s_mb - 2.0 * p.alpha * p.beta * x * win


# ---------------------------------------------------------------------------
# whole-network forward / backward


@dataclass
class FeatureTape:
    """Per-layer activations cached by net_forward for net_backward."""

    architecture: str
    conv_inputs: list     # input to each conv layer
    conv_outputs: list    # pre-relu outputs of each conv layer
    lrn_input: np.ndarray


def net_forward(image, params):
    """Run the declared layer stack; output keeps the spatial size, 32 channels."""
    x, squeeze = _split_batch(image)
    if x.shape[3] != params.layers[0].kernels.shape[2]:
        raise ValueError(
            f"input has {x.shape[3]} channels, network expects "
            f"{params.layers[0].kernels.shape[2]}"
        )
    conv_inputs, conv_outputs = [], []
    for layer in params.layers:
        conv_inputs.append(x)
        x = conv2d(x, layer)
        conv_outputs.append(x)
        if layer.has_relu:
            x = relu(x)
    tape = FeatureTape(params.architecture, conv_inputs, conv_outputs, x)
    out = lrn(x, params.lrn)
    return (out[0] if squeeze else out), tape


def net_backward(dfeatures, tape, params):
    """Reverse-mode gradients; returns (dimage, per-layer [(dkernels, dbiases)])."""
    if tape.architecture != params.architecture or len(tape.conv_inputs) != len(params.layers):
        raise ValueError("tape does not match these network parameters")
    d, squeeze = _split_batch(dfeatures)
    if d.shape != tape.lrn_input.shape:
        raise ValueError(
            f"upstream gradient shape {d.shape} does not match tape "
            f"{tape.lrn_input.shape}"
        )
    d = lrn_backward(d, tape.lrn_input, params.lrn)
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        if layer.has_relu:
            d = relu_backward(d, tape.conv_outputs[i])
        d, dk, db = conv2d_backward(d, tape.conv_inputs[i], layer)
        grads[i] = (dk, db)
    return (d[0] if squeeze else d), grads
