"""Sequence ingestion, OTB-style metrics, trajectory I/O and model files.

Ground-truth and trajectory files hold one `x,y,w,h` box per line with a
1-based top-left corner; internally boxes are continuous center-based
(center = corner - 1 + size/2).
"""

import glob
import json
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import features as F
from .training import BoundingBox

SUCCESS_THRESHOLDS = np.arange(0, 21) * 0.05     # 0.00 .. 1.00
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=float)  # 0 .. 50 px

_IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp")


@dataclass
class Sequence:
    frame_paths: list
    boxes: list | None = None    # one per frame; None for inference-only

    def __post_init__(self):
        if len(self.frame_paths) < 1:
            raise ValueError("a sequence needs at least one frame")
        if self.boxes is not None and len(self.boxes) != len(self.frame_paths):
            raise ValueError(
                f"ground truth has {len(self.boxes)} boxes for "
                f"{len(self.frame_paths)} frames"
            )

    def __len__(self):
        return len(self.frame_paths)


def _parse_box_line(line, lineno, path):
    for sep in (",", "\t"):
        if sep in line:
            parts = line.split(sep)
            break
    else:
        parts = line.split()
    try:
        x, y, w, h = (float(p) for p in parts)
    except (ValueError, TypeError):
        raise ValueError(f"{path}:{lineno}: malformed box line {line!r}") from None
    return BoundingBox(cx=x - 1 + w / 2, cy=y - 1 + h / 2, w=w, h=h)


def read_boxes(path):
    boxes = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                boxes.append(_parse_box_line(line, lineno, path))
    return boxes


def write_boxes(path, boxes):
    """Write boxes in the ground-truth convention, 2 decimal places."""
    with open(path, "w") as fh:
        for b in boxes:
            fh.write(f"{b.cx - b.w / 2 + 1:.2f},{b.cy - b.h / 2 + 1:.2f},"
                     f"{b.w:.2f},{b.h:.2f}\n")


def load_sequence(path):
    """Load an image-directory sequence (optionally with groundtruth_rect.txt).

    Images may sit in the directory itself or in an `img/` subdirectory;
    they are taken in sorted (numbered) order.
    """
    frames = sorted(
        p for p in glob.glob(os.path.join(path, "*"))
        if p.lower().endswith(_IMAGE_EXTS)
    )
    if not frames:
        frames = sorted(
            p for p in glob.glob(os.path.join(path, "img", "*"))
            if p.lower().endswith(_IMAGE_EXTS)
        )
    if not frames:
        raise FileNotFoundError(f"no image frames found under {path}")
    gt_path = os.path.join(path, "groundtruth_rect.txt")
    boxes = None
    if os.path.exists(gt_path):
        boxes = read_boxes(gt_path) or None
        if boxes is not None and len(boxes) != len(frames):
            raise ValueError(
                f"{gt_path}: {len(boxes)} boxes for {len(frames)} frames"
            )
    return Sequence(frames, boxes)


def iou(a, b):
    """Intersection-over-union of two axis-aligned boxes, in [0, 1]."""
    ix = min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2)
    iy = min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def cle(a, b):
    """Euclidean distance between box centers, in pixels."""
    return float(np.hypot(a.cx - b.cx, a.cy - b.cy))


@dataclass
class EvalResult:
    mean_op: float            # fraction of frames with IoU > 0.5
    mean_dp: float            # fraction of frames with CLE <= 20 px
    mean_cle: float
    success_curve: np.ndarray   # fraction with IoU >= t, t in SUCCESS_THRESHOLDS
    precision_curve: np.ndarray  # fraction with CLE <= t, t in PRECISION_THRESHOLDS
    success_auc: float

    def to_dict(self):
        return {
            "mean_op_at_0.5": self.mean_op,
            "mean_dp_at_20px": self.mean_dp,
            "mean_cle_px": self.mean_cle,
            "success_thresholds": SUCCESS_THRESHOLDS.tolist(),
            "success_curve": self.success_curve.tolist(),
            "precision_thresholds": PRECISION_THRESHOLDS.tolist(),
            "precision_curve": self.precision_curve.tolist(),
            "success_auc": self.success_auc,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def evaluate(trajectory, ground_truth):
    """Per-frame IoU/CLE statistics against ground truth.

    OP uses a strict IoU > 0.5 test (ties fail); the success curve uses
    IoU >= t so a perfect trajectory scores AUC 1.
    """
    if len(trajectory) != len(ground_truth):
        raise ValueError(
            f"trajectory has {len(trajectory)} boxes but ground truth has "
            f"{len(ground_truth)}"
        )
    ious = np.array([iou(a, b) for a, b in zip(trajectory, ground_truth)])
    cles = np.array([cle(a, b) for a, b in zip(trajectory, ground_truth)])
    success = np.array([np.mean(ious >= t) for t in SUCCESS_THRESHOLDS])
    precision = np.array([np.mean(cles <= t) for t in PRECISION_THRESHOLDS])
    return EvalResult(
        mean_op=float(np.mean(ious > 0.5)),
        mean_dp=float(np.mean(cles <= 20.0)),
        mean_cle=float(np.mean(cles)),
        success_curve=success,
        precision_curve=precision,
        success_auc=float(np.mean(success)),
    )


# ---------------------------------------------------------------------------
# model serialization


MODEL_MAGIC = b"DCFM"
MODEL_VERSION = 1


class ModelFileError(Exception):
    pass


class BadMagicError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


class ChecksumError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass


def _named_tensors(params):
    tensors = []
    for i, layer in enumerate(params.layers):
        tensors.append((f"layer{i}.kernels", layer.kernels))
        tensors.append((f"layer{i}.biases", layer.biases))
    lrn = params.lrn
    tensors.append(("lrn", np.array([lrn.n, lrn.k, lrn.alpha, lrn.beta])))
    return tensors


def save_model(params, path):
    """Binary model file: magic, version, architecture id, named float32
    tensors with explicit dims, CRC32 trailer. Payload is little-endian."""
    out = bytearray()
    out += MODEL_MAGIC
    out += struct.pack("<I", MODEL_VERSION)
    arch = params.architecture.encode()
    out += struct.pack("<I", len(arch)) + arch
    tensors = _named_tensors(params)
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        nb = name.encode()
        out += struct.pack("<I", len(nb)) + nb
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ChecksumError("file truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_model(path):
    """Validate and load a model file; returns float64 NetworkParams."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a model file")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    r = _Reader(data[:-4])
    r.take(4)  # magic
    version = r.u32()
    if version != MODEL_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    arch = r.take(r.u32()).decode()
    if arch not in F.ARCHITECTURES:
        raise ShapeMismatchError(f"{path}: unknown architecture {arch!r}")
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float64)

    rows = F.ARCHITECTURES[arch]
    layers = []
    for i, (cin, cout, dil, rl) in enumerate(rows):
        try:
            k = tensors[f"layer{i}.kernels"]
            b = tensors[f"layer{i}.biases"]
        except KeyError as exc:
            raise ShapeMismatchError(f"{path}: missing tensor {exc}") from None
        if k.shape != (3, 3, cin, cout) or b.shape != (cout,):
            raise ShapeMismatchError(
                f"{path}: tensor shapes {k.shape}/{b.shape} do not match "
                f"architecture {arch} layer {i}"
            )
        layers.append(F.ConvLayerParams(k, b, dil, rl))
    if "lrn" not in tensors or tensors["lrn"].shape != (4,):
        raise ShapeMismatchError(f"{path}: missing or malformed lrn tensor")
    n, k, alpha, beta = tensors["lrn"]
    lrn = F.LrnParams(n=int(round(n)), k=float(k), alpha=float(alpha), beta=float(beta))
    return F.NetworkParams(arch, layers, lrn)
