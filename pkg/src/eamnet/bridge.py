"""External-attention skip bridges.

A learned memory (keys/values independent of the input) attends over the
flattened feature tokens, a depthwise convolution scores the result, and the
top-k channels by L1 score are kept and projected back to the full width.
"""

import torch
import torch.nn as nn

from .attention import _check_feature_map
from .errors import ConfigError, ShapeError


class ExternalAttention(nn.Module):
    """Attention against k_mem learned memory rows (keys and values C wide).

    The token/memory similarity matrix is normalized twice: softmax along
    the token axis, then L1 along the memory axis, so each token's row of
    attention sums to one.
    """

    def __init__(self, channels, k_mem=64):
        super().__init__()
        if channels <= 0 or k_mem <= 0:
            raise ConfigError(
                f"channels and k_mem must be positive, got {channels}, {k_mem}")
        self.channels = channels
        self.k_mem = k_mem
        self.m_k = nn.Parameter(torch.empty(k_mem, channels))
        self.m_v = nn.Parameter(torch.empty(k_mem, channels))
        nn.init.xavier_uniform_(self.m_k)
        nn.init.xavier_uniform_(self.m_v)

    def attention(self, x):
        """Doubly normalized token/memory attention, shape (B, n, k_mem)."""
        _check_feature_map(x)
        if x.shape[1] != self.channels:
            raise ShapeError(
                f"expected {self.channels} channels, got {x.shape[1]}")
        tokens = x.flatten(2).transpose(1, 2)
        scores = tokens @ self.m_k.t()
        attn = torch.softmax(scores, dim=1)
        return attn / attn.sum(dim=2, keepdim=True)

    def forward(self, x):
        b, c, h, w = x.shape
        attn = self.attention(x)
        out = attn @ self.m_v
        return out.transpose(1, 2).reshape(b, c, h, w)


def channel_l1_scores(response):
    """Per-sample, per-channel sum of absolute values over all pixels."""
    _check_feature_map(response)
    return response.abs().sum(dim=(2, 3))


def topk_channel_select(x, scores, k_sel):
    """Keeps the k_sel highest-scoring channels of each sample.

    Channels come out in descending score order; ties keep ascending channel
    index (stable sort). Returns the selected maps and the index lists.
    """
    _check_feature_map(x)
    c = x.shape[1]
    if k_sel < 1 or k_sel > c:
        raise ConfigError(f"k_sel must be in [1, {c}], got {k_sel}")
    if scores.shape != x.shape[:2]:
        raise ShapeError(
            f"scores shaped {tuple(scores.shape)} do not match {tuple(x.shape[:2])}")
    order = torch.sort(scores, dim=1, descending=True, stable=True).indices
    indices = order[:, :k_sel]
    gathered = torch.gather(
        x, 1, indices.view(*indices.shape, 1, 1).expand(-1, -1, *x.shape[2:]))
    return gathered, indices


class ExternalAttentionBridge(nn.Module):
    """Skip connection: external attention, depthwise 3x3 scoring, absolute
    L1 channel scores, top-k selection, then a 1x1 projection restoring the
    full channel count so the decoder sees a fixed width."""

    def __init__(self, channels, k_mem=64, k_sel=None):
        super().__init__()
        k_sel = channels // 2 if k_sel is None else k_sel
        if k_sel < 1 or k_sel > channels:
            raise ConfigError(
                f"k_sel must be in [1, {channels}], got {k_sel}")
        self.channels = channels
        self.k_sel = k_sel
        self.attend = ExternalAttention(channels, k_mem)
        # the scores only pick channel indices, a discrete choice no gradient
        # can reach, so the scoring kernel stays fixed at its random init
        self.score_conv = nn.Conv2d(channels, channels, 3, padding=1,
                                    groups=channels, bias=False)
        self.score_conv.weight.requires_grad_(False)
        self.restore = nn.Conv2d(k_sel, channels, 1, bias=False)

    def select(self, attended):
        response = self.score_conv(attended).abs()
        scores = channel_l1_scores(response)
        return topk_channel_select(attended, scores, self.k_sel)

    def forward(self, x, return_internals=False):
        attended = self.attend(x)
        selected, indices = self.select(attended)
        out = self.restore(selected)
        if return_internals:
            return out, attended, indices
        return out
