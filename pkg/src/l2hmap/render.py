"""Rendering of class maps and report figures to files.

Class maps go to 8-bit RGB PNGs colored by the class scheme, with a
legend JSON written alongside. Report figures (confusion heatmap,
per-region misestimation bars, training curves) are matplotlib files
saved next to the delimited outputs.
"""

from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .grid import UNLABELED


def render_class_map(grid, scheme, png_path, legend_path=None):
    """Write an RGB PNG of a class raster plus an optional legend JSON."""
    vals = grid.band(0)
    palette = np.zeros((256, 3), dtype=np.uint8)
    palette[UNLABELED] = (0, 0, 0)
    for c in scheme.classes:
        palette[c.id] = c.color
    rgb = palette[vals]
    Image.fromarray(rgb, mode="RGB").save(png_path)
    if legend_path:
        legend = {"0": {"name": "UNLABELED", "color": [0, 0, 0]}}
        for c in scheme.classes:
            legend[str(c.id)] = {"name": c.name, "color": list(c.color)}
        with open(legend_path, "w", encoding="utf-8") as f:
            json.dump(legend, f, indent=2)


def render_confusion(cm, path):
    """Log-scaled heatmap of the confusion counts."""
    counts = cm.counts.astype(np.float64)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(cm.class_names),) * 2)
    im = ax.imshow(np.log10(counts + 1.0), cmap="viridis")
    ax.set_xticks(range(len(cm.class_names)), cm.class_names, rotation=45,
                  ha="right", fontsize=8)
    ax.set_yticks(range(len(cm.class_names)), cm.class_names, fontsize=8)
    ax.set_xlabel("reference class")
    ax.set_ylabel("map class")
    fig.colorbar(im, ax=ax, label="log10(count + 1)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_misestimation(stats, scheme, path):
    """Grouped bars of signed area misestimation per region."""
    regions = [st for st in stats if st.misestimation is not None]
    if not regions:
        regions = stats
    classes = sorted({c for st in regions for c in st.map_fractions})
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(regions)), 4))
    width = 0.8 / max(1, len(classes))
    xs = np.arange(len(regions))
    for k, c in enumerate(classes):
        deltas = [(st.misestimation or {}).get(c, 0.0) for st in regions]
        color = tuple(v / 255 for v in scheme.color_of(c)) \
            if c <= scheme.num_classes else None
        ax.bar(xs + k * width, deltas, width, label=scheme.name_of(c), color=color)
    ax.axhline(0.0, color="k", linewidth=0.8)
    ax.set_xticks(xs + 0.4 - width / 2, [str(st.region) for st in regions])
    ax.set_xlabel("region")
    ax.set_ylabel("map fraction - reference fraction")
    ax.legend(fontsize=8, ncol=min(6, len(classes)))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_log(log, path):
    """CE / vague-area loss and CA fraction against the training step."""
    steps = [e["step"] for e in log]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax1.plot(steps, [e["ce"] for e in log], label="masked CE")
    ax1.plot(steps, [e["dva"] for e in log], label="vague-area loss")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(steps, [e["ca_fraction"] for e in log], color="tab:green")
    ax2.set_ylabel("CA fraction")
    ax2.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
