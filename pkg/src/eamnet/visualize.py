"""Figure rendering: attention heatmaps, bridge energy maps, overlays.

Array-producing helpers are separated from file writers so tests can check
the numbers without touching disk. Heatmap and energy files are written at
exactly the canonical canvas size.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
import torch.nn.functional as F

from .data import CANONICAL_SIZE


def minmax_normalize(arr, eps=1e-12):
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo < eps:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def received_attention_map(attn, grid):
    """Attention mass received per pixel: column sums of a row-stochastic
    attention matrix, min-max normalized onto the bottleneck grid."""
    if isinstance(attn, torch.Tensor):
        attn = attn.detach().cpu().numpy()
    if attn.ndim == 3:
        attn = attn[0]
    h, w = grid
    if attn.shape[1] != h * w:
        raise ValueError(
            f"attention has {attn.shape[1]} columns, grid {grid} needs {h * w}")
    return minmax_normalize(attn.sum(axis=0).reshape(h, w))


def energy_map(feature):
    """Mean absolute activation over channels for the first sample."""
    if isinstance(feature, torch.Tensor):
        feature = feature.detach().cpu().numpy()
    return minmax_normalize(np.abs(feature[0]).mean(axis=0))


def _upscale(arr, size):
    t = torch.from_numpy(np.asarray(arr, dtype=np.float32))[None, None]
    up = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return up[0, 0].numpy()


def save_heatmap(arr, path, size=CANONICAL_SIZE, cmap="inferno"):
    """Writes a color-mapped raster at exactly `size` pixels."""
    if arr.shape != tuple(size):
        arr = _upscale(arr, tuple(size))
    plt.imsave(path, np.clip(arr, 0.0, 1.0), cmap=cmap, vmin=0.0, vmax=1.0)


def denormalize_image(image, mean, std):
    """Undoes channel normalization; returns H x W x 3 floats in [0, 1]."""
    arr = image.detach().cpu().numpy().transpose(1, 2, 0)
    return np.clip(arr * std + mean, 0.0, 1.0)


def save_overlay(image_rgb, target_mask, pred_mask, path, title=None):
    """Prediction vs ground truth contours over the input image."""
    if isinstance(target_mask, torch.Tensor):
        target_mask = target_mask.detach().cpu().numpy()
    if isinstance(pred_mask, torch.Tensor):
        pred_mask = pred_mask.detach().cpu().numpy()
    fig, ax = plt.subplots(figsize=(6, 4.2), dpi=120)
    ax.imshow(image_rgb)
    if target_mask.any():
        ax.contour(target_mask, levels=[0.5], colors="lime", linewidths=1.5)
    if pred_mask.any():
        ax.contour(pred_mask, levels=[0.5], colors="red", linewidths=1.2)
    ax.plot([], [], color="lime", label="ground truth")
    ax.plot([], [], color="red", label="prediction")
    ax.legend(loc="lower right", fontsize=8)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
