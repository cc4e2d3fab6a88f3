"""Resolution-preserving convolutional backbone with explicit gradients.

Every convolution is stride 1 with symmetric zero padding, so feature
maps keep the input H x W throughout. Each block runs three parallel
branches (1x1, 3x3, 5x5 kernels with 64/32/16 output channels by
default), concatenates them to 112 channels and applies a rectifier. A
1x1 head maps the last block's features to per-class logits.

forward/backward are hand-written on top of GEMM so that gradients can
be verified against finite differences and results stay bit-deterministic
for a fixed build (the per-pixel accumulation order never depends on the
image size, which is what makes tiled and monolithic inference agree
exactly away from borders).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, ShapeError, StateError

CHECKPOINT_MAGIC = b"L2HP"


@dataclass(frozen=True)
class RPBackboneConfig:
    num_classes: int
    blocks: int = 5
    branch_kernels: tuple = (1, 3, 5)
    branch_channels: tuple = (64, 32, 16)
    input_channels: int = 3
    precision: str = "f32"  # f32 for training, f64 for gradient checks

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.blocks < 1:
            raise ConfigError("need at least one block")
        if len(self.branch_kernels) != len(self.branch_channels):
            raise ConfigError("branch_kernels and branch_channels length mismatch")
        if any(k % 2 == 0 or k < 1 for k in self.branch_kernels):
            raise ConfigError("kernels must be odd and positive")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision}")

    @property
    def block_channels(self):
        return sum(self.branch_channels)

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "blocks": self.blocks,
            "branch_kernels": list(self.branch_kernels),
            "branch_channels": list(self.branch_channels),
            "input_channels": self.input_channels,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(num_classes=d["num_classes"], blocks=d["blocks"],
                   branch_kernels=tuple(d["branch_kernels"]),
                   branch_channels=tuple(d["branch_channels"]),
                   input_channels=d["input_channels"],
                   precision=d.get("precision", "f32"))


def param_shapes(config):
    """(name, shape) pairs in declaration order; fixes checkpoint layout."""
    shapes = []
    cin = config.input_channels
    for b in range(1, config.blocks + 1):
        for k, ch in zip(config.branch_kernels, config.branch_channels):
            shapes.append((f"block{b}.conv{k}x{k}.weight", (ch, cin, k, k)))
            shapes.append((f"block{b}.conv{k}x{k}.bias", (ch,)))
        cin = config.block_channels
    shapes.append(("head.weight", (config.num_classes, cin, 1, 1)))
    shapes.append(("head.bias", (config.num_classes,)))
    return shapes


def param_count(config):
    return sum(int(np.prod(s)) for _, s in param_shapes(config))


@dataclass
class NetParams:
    tensors: dict  # name -> ndarray, in param_shapes order
    seed: int = 0

    def copy(self):
        return NetParams({k: v.copy() for k, v in self.tensors.items()}, self.seed)

    def astype(self, dtype):
        return NetParams({k: v.astype(dtype) for k, v in self.tensors.items()},
                         self.seed)


def init_params(config, seed):
    """Fan-in-scaled uniform weights (He-style), zero biases; seeded."""
    rng = np.random.default_rng(seed)
    dtype = config.dtype
    tensors = {}
    for name, shape in param_shapes(config):
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return NetParams(tensors, seed)


def receptive_field(config):
    """Radius of the theoretical receptive field (stride-1 chain)."""
    r = sum((max(config.branch_kernels) - 1) // 2 for _ in range(config.blocks))
    return r  # 1x1 head adds nothing


def conv2d(x, w, b):
    """Same-padding stride-1 convolution, (Cin,H,W) -> (Cout,H,W)."""
    co, ci, k, _ = w.shape
    c, h, wd = x.shape
    if c != ci:
        raise ShapeError(f"conv expects {ci} input channels, got {c}")
    n = h * wd
    if k == 1:
        out = w.reshape(co, ci) @ x.reshape(ci, n)
    else:
        r = k // 2
        xp = np.zeros((ci, h + 2 * r, wd + 2 * r), dtype=x.dtype)
        xp[:, r:r + h, r:r + wd] = x
        out = np.zeros((co, n), dtype=x.dtype)
        for dy in range(k):
            for dx in range(k):
                flat = np.ascontiguousarray(xp[:, dy:dy + h, dx:dx + wd]).reshape(ci, n)
                out += np.ascontiguousarray(w[:, :, dy, dx]) @ flat
    out += b[:, None].astype(x.dtype)
    return out.reshape(co, h, wd)


def conv2d_backward(x, w, grad_out):
    """Gradients of conv2d w.r.t. weight, bias, and input."""
    co, ci, k, _ = w.shape
    c, h, wd = x.shape
    n = h * wd
    go = grad_out.reshape(co, n)
    grad_b = go.sum(axis=1)
    if k == 1:
        xf = x.reshape(ci, n)
        grad_w = (go @ xf.T).reshape(co, ci, 1, 1)
        grad_x = (np.ascontiguousarray(w.reshape(co, ci).T) @ go).reshape(ci, h, wd)
        return grad_w, grad_b, grad_x
    r = k // 2
    xp = np.zeros((ci, h + 2 * r, wd + 2 * r), dtype=x.dtype)
    xp[:, r:r + h, r:r + wd] = x
    grad_w = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for dy in range(k):
        for dx in range(k):
            flat = np.ascontiguousarray(xp[:, dy:dy + h, dx:dx + wd]).reshape(ci, n)
            grad_w[:, :, dy, dx] = go @ flat.T
            contrib = np.ascontiguousarray(w[:, :, dy, dx].T) @ go
            gxp[:, dy:dy + h, dx:dx + wd] += contrib.reshape(ci, h, wd)
    grad_x = gxp[:, r:r + h, r:r + wd]
    return grad_w, grad_b, grad_x


def softmax_channels(logits):
    """Numerically stable softmax over the class (first) axis."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


@dataclass
class ForwardResult:
    logits: np.ndarray          # (L, H, W)
    features: list              # B post-activation block outputs, (C, H, W)
    cp_map: np.ndarray          # softmax of logits, (L, H, W)
    cache: dict | None = field(default=None, repr=False)


def forward(params, config, image, keep_cache=True):
    """Run the backbone and head on one (Cin, H, W) image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != config.input_channels:
        raise ShapeError(
            f"expected ({config.input_channels}, H, W) input, got {image.shape}")
    x = image.astype(config.dtype, copy=False)
    block_inputs = []
    features = []
    for b in range(1, config.blocks + 1):
        block_inputs.append(x)
        branches = []
        for k in config.branch_kernels:
            w = params.tensors[f"block{b}.conv{k}x{k}.weight"]
            bias = params.tensors[f"block{b}.conv{k}x{k}.bias"]
            branches.append(conv2d(x, w, bias))
        pre = np.concatenate(branches, axis=0)
        x = np.maximum(pre, 0)
        features.append(x)
    logits = conv2d(x, params.tensors["head.weight"], params.tensors["head.bias"])
    cp = softmax_channels(logits)
    cache = {"block_inputs": block_inputs} if keep_cache else None
    return ForwardResult(logits=logits, features=features, cp_map=cp, cache=cache)


def backward(params, config, result, grad_logits=None, grad_features=None):
    """Parameter gradients for upstream gradients on logits and features.

    grad_features, when given, is a list of B arrays matching the block
    outputs (extra loss terms that attach to intermediate features).
    Returns a name -> gradient dict covering every parameter.
    """
    if result.cache is None:
        raise StateError("forward was run with keep_cache=False")
    block_inputs = result.cache["block_inputs"]
    features = result.features
    grads = {}
    if grad_logits is None:
        grad_logits = np.zeros_like(result.logits)
    gw, gb, gx = conv2d_backward(features[-1], params.tensors["head.weight"],
                                 grad_logits.astype(config.dtype, copy=False))
    grads["head.weight"] = gw
    grads["head.bias"] = gb
    grad_feat = gx
    for b in range(config.blocks, 0, -1):
        if grad_features is not None and grad_features[b - 1] is not None:
            grad_feat = grad_feat + grad_features[b - 1].astype(config.dtype, copy=False)
        grad_pre = grad_feat * (features[b - 1] > 0)
        x = block_inputs[b - 1]
        grad_x_total = None
        c0 = 0
        for k, ch in zip(config.branch_kernels, config.branch_channels):
            w = params.tensors[f"block{b}.conv{k}x{k}.weight"]
            gw, gb, gx = conv2d_backward(x, w, grad_pre[c0:c0 + ch])
            grads[f"block{b}.conv{k}x{k}.weight"] = gw
            grads[f"block{b}.conv{k}x{k}.bias"] = gb
            grad_x_total = gx if grad_x_total is None else grad_x_total + gx
            c0 += ch
        grad_feat = grad_x_total
    return grads


def save_params(params, config, path):
    """Checkpoint: magic, JSON config echo, raw little-endian f32 tensors."""
    blob = json.dumps({"config": config.to_dict(), "seed": params.seed},
                      sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, _ in param_shapes(config):
            f.write(params.tensors[name].astype("<f4", copy=False).tobytes())


def load_params(path):
    """Read a checkpoint; returns (NetParams in f32, RPBackboneConfig)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: missing L2HP magic")
    (blob_len,) = struct.unpack_from("<I", raw, 4)
    meta = json.loads(raw[8:8 + blob_len].decode("utf-8"))
    config = RPBackboneConfig.from_dict(meta["config"])
    off = 8 + blob_len
    tensors = {}
    for name, shape in param_shapes(config):
        count = int(np.prod(shape))
        end = off + 4 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor payload at {name}")
        tensors[name] = np.frombuffer(raw[off:end], dtype="<f4").reshape(shape).astype(
            config.dtype)
        off = end
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")
    return NetParams(tensors, meta.get("seed", 0)), config


def describe(config):
    """Human-readable layer table for `net inspect`."""
    lines = []
    total = 0
    for name, shape in param_shapes(config):
        n = int(np.prod(shape))
        total += n
        lines.append(f"{name:28s} {str(tuple(shape)):>20s} {n:>10d}")
    lines.append(f"{'total parameters':28s} {'':>20s} {total:>10d}")
    lines.append(f"receptive field radius: {receptive_field(config)} px")
    return "\n".join(lines)
