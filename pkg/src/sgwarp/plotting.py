"""Report figures, drawn off-screen with the Agg backend."""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import ListedColormap
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

from .tensor_core import LABEL_NAMES, NUM_LABELS, ImageTensor, SegmentationMap

# background in light grey, parts from tab20
LABEL_CMAP = ListedColormap(
    np.vstack([[0.95, 0.95, 0.95], colormaps["tab20"](np.arange(NUM_LABELS - 1) % 20)[:, :3]]), name="parsing"
)


def _new_figure(width: float, height: float) -> Figure:
    fig = Figure(figsize=(width, height), facecolor="w")
    FigureCanvasAgg(fig)
    return fig


def _show_image(ax, image: ImageTensor, title: str) -> None:
    data = np.clip(image.data, 0.0, 1.0)
    ax.imshow(data[:, :, 0] if image.channels == 1 else data, cmap="gray", vmin=0.0, vmax=1.0,
              interpolation="nearest")
    ax.set_title(title, fontsize=10)
    ax.set_axis_off()


def _show_parsing(ax, seg: SegmentationMap, title: str) -> None:
    ax.imshow(seg.labels, cmap=LABEL_CMAP, vmin=-0.5, vmax=NUM_LABELS - 0.5, interpolation="nearest")
    ax.set_title(title, fontsize=10)
    ax.set_axis_off()


def render_panel(condition: ImageTensor, target: ImageTensor, rendered: ImageTensor,
                 parsings=None, title: str = "") -> Figure:
    """Condition, target, render and error side by side; parsings on a second row if given.

    ``parsings`` is ``(condition, target, warped)``.
    """
    rows = 2 if parsings is not None else 1
    fig = _new_figure(11, 3.6 * rows)
    axes = fig.subplots(rows, 4, squeeze=False)
    _show_image(axes[0, 0], condition, "condition")
    _show_image(axes[0, 1], target, "target")
    _show_image(axes[0, 2], rendered, "rendered")
    err = np.abs(rendered.data - target.data).mean(axis=2)
    im = axes[0, 3].imshow(err, cmap="magma", vmin=0.0, vmax=max(float(err.max()), 1e-6), interpolation="nearest")
    axes[0, 3].set_title("|rendered - target|", fontsize=10)
    axes[0, 3].set_axis_off()
    fig.colorbar(im, ax=axes[0, 3], fraction=0.046, pad=0.04)
    if parsings is not None:
        for ax, seg, name in zip(axes[1], parsings, ("condition parsing", "target parsing", "warped parsing")):
            _show_parsing(ax, seg, name)
        present = sorted(set().union(*(set(s.present_labels()) for s in parsings)))
        key = axes[1, 3]
        key.set_axis_off()
        for i, label in enumerate(present):
            y = 1.0 - 0.08 * (i + 1)
            key.add_patch(Rectangle((0.02, y + 0.01), 0.12, 0.06, color=LABEL_CMAP(label), transform=key.transAxes))
            key.text(0.18, y + 0.04, f"{label} {LABEL_NAMES[label]}", fontsize=8, va="center", transform=key.transAxes)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def scores_figure(rows) -> Figure:
    """Per-fixture SSIM and IoU (left) and the unweighted loss terms (right).

    ``rows`` are dicts with the evaluation CSV columns.
    """
    seeds = [str(r["seed"]) for r in rows]
    x = np.arange(len(rows))
    fig = _new_figure(12, 4)
    ax1, ax2 = fig.subplots(1, 2)
    ax1.plot(x, [r["ssim"] for r in rows], "o-", label="SSIM")
    ax1.plot(x, [r["mean_iou"] for r in rows], "s--", label="mean IoU")
    ax1.set_xticks(x, seeds)
    ax1.set_xlabel("fixture seed")
    ax1.set_ylim(min(0.9, min(min(r["ssim"], r["mean_iou"]) for r in rows) - 0.01), 1.005)
    ax1.legend()
    width = 0.2
    for i, key in enumerate(("adv", "pixel", "perceptual", "ph")):
        ax2.bar(x + (i - 1.5) * width, [r[key] for r in rows], width, label=key)
    ax2.set_xticks(x, seeds)
    ax2.set_xlabel("fixture seed")
    ax2.set_ylabel("loss term (unweighted)")
    ax2.legend()
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path, dpi: int = 100) -> None:
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
