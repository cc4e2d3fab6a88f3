"""Patch training loop and seamless tiled prediction.

Training pairs couple a fine image patch with the nearest-upsampled
coarse label patch. The optimizer is plain SGD with momentum; every
random choice is seeded so a (seed, data, config) triple fully determines
the final checkpoint. Prediction runs per tile and stitches tiles with
crop-center blending: each output pixel is taken from the tile whose
center is nearest, which keeps every kept pixel at least overlap/2 away
from its tile's borders and makes interior results bit-identical to a
monolithic forward pass.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConfigError, DivergenceError
from .grid import UNLABELED, RasterGrid, resample_nearest
from .losses import LossConfig, cas_select, dva_loss, masked_ce
from .network import forward, backward, init_params, receptive_field

LABEL_FACTOR = 10  # coarse label pixels are 10x the image pixel size


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 250
    batch_size: int = 4
    epochs: int = 10
    learning_rate: float = 0.02
    momentum: float = 0.9
    seed: int = 0
    warmup_steps: int = 50  # steps with the CAS bypassed (all labeled = CA)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.patch_size % LABEL_FACTOR:
            raise ConfigError(
                f"patch_size must be a multiple of {LABEL_FACTOR}, got {self.patch_size}")
        if self.learning_rate < 0:
            # rate 0 is allowed: it turns training into a pure evaluation
            # pass that leaves the initial parameters untouched
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class MosaicPolicy:
    tile: int = 512
    overlap: int | None = None  # None: 2 x receptive field radius
    blend: str = "crop-center"  # or "prob-average"

    def __post_init__(self):
        if self.blend not in ("crop-center", "prob-average"):
            raise ConfigError(f"unknown blend {self.blend!r}")


@dataclass
class Pair:
    image: np.ndarray   # (C, P, P) float32
    labels: np.ndarray  # (P, P) uint8, upsampled coarse labels
    x0: int
    y0: int


def make_pairs(image_1m, labels_10m, cfg):
    """Cut aligned training patches; drops patches with no label at all.

    The image must span exactly 10x the label raster on both axes. Patch
    origins lie on a non-overlapping grid and are shuffled by the seed.
    """
    if (image_1m.width != LABEL_FACTOR * labels_10m.width
            or image_1m.height != LABEL_FACTOR * labels_10m.height):
        raise AlignmentError(
            f"image {image_1m.width}x{image_1m.height} is not {LABEL_FACTOR}x the "
            f"label raster {labels_10m.width}x{labels_10m.height}")
    gi, gl = image_1m.georef, labels_10m.georef
    if (abs(gi.origin_x - gl.origin_x) > 1e-6
            or abs(gi.origin_y - gl.origin_y) > 1e-6
            or abs(gl.pixel_size_x - LABEL_FACTOR * gi.pixel_size_x) > 1e-9
            or abs(gl.pixel_size_y - LABEL_FACTOR * gi.pixel_size_y) > 1e-9):
        raise AlignmentError("image/label georeferences are not x10 aligned")
    up = resample_nearest(labels_10m, LABEL_FACTOR, "up")
    labels = up.band(0)
    img = image_1m.data.astype(np.float32, copy=False)
    ps = cfg.patch_size
    xs = list(range(0, image_1m.width - ps + 1, ps))
    ys = list(range(0, image_1m.height - ps + 1, ps))
    positions = [(x, y) for y in ys for x in xs]
    rng = np.random.default_rng(cfg.seed)
    rng.shuffle(positions)
    pairs = []
    for x0, y0 in positions:
        lab = labels[y0:y0 + ps, x0:x0 + ps]
        if not (lab != UNLABELED).any():
            continue
        pairs.append(Pair(image=np.ascontiguousarray(img[:, y0:y0 + ps, x0:x0 + ps]),
                          labels=np.ascontiguousarray(lab), x0=x0, y0=y0))
    return pairs


def _step_gradients(params, net_config, batch, cfg, warmup):
    """Mean loss and mean parameter gradients over one batch."""
    grads_sum = None
    ce_sum = dva_sum = ca_sum = 0.0
    for pair in batch:
        res = forward(params, net_config, pair.image)
        mask = cas_select(res.cp_map, pair.labels, cfg.loss,
                          force_all_labeled=warmup)
        ce, grad_logits = masked_ce(res.cp_map, pair.labels, mask)
        dva, grad_features = dva_loss(res.features, res.cp_map, pair.labels,
                                      mask, cfg.loss)
        g = backward(params, net_config, res, grad_logits, grad_features)
        if grads_sum is None:
            grads_sum = g
        else:
            for k in grads_sum:
                grads_sum[k] += g[k]
        ce_sum += ce
        dva_sum += dva
        ca_sum += mask.ca_fraction
    n = len(batch)
    for k in grads_sum:
        grads_sum[k] /= n
    return ce_sum / n, dva_sum / n, ca_sum / n, grads_sum


def train(pairs, cfg, net_config):
    """SGD training over the pair list; returns (params, step log).

    Each log entry is {"step", "epoch", "ce", "dva", "ca_fraction"}. A
    non-finite loss aborts with DivergenceError carrying the params from
    the last finite step.
    """
    if not pairs:
        raise ConfigError("empty training pair sequence")
    params = init_params(net_config, cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    rng = np.random.default_rng(cfg.seed + 1)
    log = []
    step = 0
    for epoch in range(cfg.epochs):
        order = np.arange(len(pairs))
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            warmup = step < cfg.warmup_steps
            ce, dva, ca_frac, grads = _step_gradients(
                params, net_config, batch, cfg, warmup)
            if not np.isfinite(ce + dva):
                raise DivergenceError(step, last_good_params=params)
            for k, g in grads.items():
                v = velocity[k]
                v *= cfg.momentum
                v -= cfg.learning_rate * g.astype(v.dtype, copy=False)
                params.tensors[k] += v
            log.append({"step": step, "epoch": epoch, "ce": float(ce),
                        "dva": float(dva), "ca_fraction": float(ca_frac)})
            step += 1
    return params, log


def epoch_means(log, key="ce"):
    """Per-epoch mean of a logged quantity, ordered by epoch."""
    sums, counts = {}, {}
    for entry in log:
        e = entry["epoch"]
        sums[e] = sums.get(e, 0.0) + entry[key]
        counts[e] = counts.get(e, 0) + 1
    return [sums[e] / counts[e] for e in sorted(sums)]


def _starts(size, tile, step):
    if size <= tile:
        return [0], size
    s = list(range(0, size - tile + 1, step))
    if s[-1] + tile < size:
        s.append(size - tile)
    return s, tile


def _keep_bounds(starts, winsize, size):
    """Partition [0, size) among windows, splitting overlaps at midpoints."""
    bounds = []
    lo = 0
    for k, s in enumerate(starts):
        if k + 1 < len(starts):
            hi = (s + winsize + starts[k + 1]) // 2
        else:
            hi = size
        bounds.append((lo, hi))
        lo = hi
    return bounds


def predict_tiled(params, net_config, image, policy=None, threads=1):
    """Tiled forward pass mosaicked into (class map, max-probability map).

    crop-center assigns each pixel to the window whose center is nearest;
    with overlap >= 2R the result matches a monolithic forward pass away
    from the image borders. prob-average instead averages the softmax
    probabilities of all windows covering a pixel.
    """
    policy = policy or MosaicPolicy()
    r = receptive_field(net_config)
    tile = policy.tile
    if tile < 2 * r + 1:
        raise ConfigError(f"tile {tile} smaller than 2R+1 = {2 * r + 1}")
    overlap = 2 * r if policy.overlap is None else policy.overlap
    h, w = image.height, image.width
    data = image.data.astype(np.float32, copy=False)
    num_classes = net_config.num_classes
    step = tile - overlap
    xs, tw = _starts(w, tile, step)
    ys, th = _starts(h, tile, step)
    windows = [(xi, yi, x0, y0) for yi, y0 in enumerate(ys)
               for xi, x0 in enumerate(xs)]

    def run(win):
        # summarize inside the worker so the per-tile feature stacks are
        # freed immediately instead of piling up across all tiles
        _, _, x0, y0 = win
        patch = np.ascontiguousarray(data[:, y0:y0 + th, x0:x0 + tw])
        res = forward(params, net_config, patch, keep_cache=False)
        if policy.blend == "crop-center":
            return ((res.cp_map.argmax(axis=0) + 1).astype(np.uint8),
                    res.cp_map.max(axis=0).astype(np.float32))
        return np.asarray(res.cp_map, dtype=np.float64)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, windows))
    else:
        results = [run(win) for win in windows]

    if policy.blend == "crop-center":
        class_map = np.zeros((h, w), dtype=np.uint8)
        max_prob = np.zeros((h, w), dtype=np.float32)
        xb = _keep_bounds(xs, tw, w)
        yb = _keep_bounds(ys, th, h)
        for win, (cls, peak) in zip(windows, results):
            xi, yi, x0, y0 = win
            kx0, kx1 = xb[xi]
            ky0, ky1 = yb[yi]
            class_map[ky0:ky1, kx0:kx1] = cls[ky0 - y0:ky1 - y0, kx0 - x0:kx1 - x0]
            max_prob[ky0:ky1, kx0:kx1] = peak[ky0 - y0:ky1 - y0, kx0 - x0:kx1 - x0]
    else:
        acc = np.zeros((num_classes, h, w), dtype=np.float64)
        cover = np.zeros((h, w), dtype=np.float64)
        for win, cp in zip(windows, results):
            _, _, x0, y0 = win
            acc[:, y0:y0 + th, x0:x0 + tw] += cp
            cover[y0:y0 + th, x0:x0 + tw] += 1.0
        acc /= cover
        class_map = (acc.argmax(axis=0) + 1).astype(np.uint8)
        max_prob = acc.max(axis=0).astype(np.float32)

    return (RasterGrid(class_map, image.georef, nodata=UNLABELED),
            RasterGrid(max_prob, image.georef, nodata=float("nan")))
