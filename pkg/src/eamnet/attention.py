"""Attention primitives: spatial/channel gates, scaled dot-product attention
and the cross-mix attention block used at the bottleneck."""

import math

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError


def _check_feature_map(x):
    if x.dim() != 4:
        raise ShapeError(f"expected a B,C,H,W feature map, got shape {tuple(x.shape)}")
    if min(x.shape[1:]) == 0:
        raise ShapeError(f"degenerate feature map of shape {tuple(x.shape)}")


class SpatialGate(nn.Module):
    """Per-pixel sigmoid gate from channel-pooled statistics.

    Mean and max over channels are stacked into a 2-channel map and passed
    through a 7x7 convolution; the sigmoid of the response gates every
    channel of the input identically.
    """

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def gate(self, x):
        _check_feature_map(x)
        pooled = torch.cat([x.mean(dim=1, keepdim=True),
                            x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x):
        return x * self.gate(x)


class ChannelGate(nn.Module):
    """Per-channel sigmoid gate from global pooled statistics.

    Global average and max pooled vectors share a two-layer bottleneck MLP
    (reduction ratio 4); the summed responses are squashed to a per-channel
    gate broadcast over all pixels.
    """

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels),
        )

    def gate(self, x):
        _check_feature_map(x)
        b, c = x.shape[:2]
        avg = x.mean(dim=(2, 3))
        mx = x.amax(dim=(2, 3))
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx)).view(b, c, 1, 1)

    def forward(self, x):
        return x * self.gate(x)


def attention_weights(q, k):
    """Row-stochastic softmax(q k^T / sqrt(D)) over the last two axes.

    torch.softmax subtracts the row max before exponentiation, so large
    logits stay finite.
    """
    if q.shape[-1] == 0:
        raise ShapeError("attention over zero-width tokens")
    if q.shape[-1] != k.shape[-1] or q.shape[:-2] != k.shape[:-2]:
        raise ShapeError(
            f"query/key shapes do not pair: {tuple(q.shape)} vs {tuple(k.shape)}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    return torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)


def scaled_dot_attention(q, k, v):
    """softmax(q k^T / sqrt(D)) v for token matrices shaped (..., n, D)."""
    if v.shape[-2] != k.shape[-2]:
        raise ShapeError(
            f"key/value token counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    return attention_weights(q, k) @ v


def cross_mix_tokens(xs, xc, w1_q, w1_k, w1_v, w2_q, w2_k, w2_v):
    """Two scaled dot-product attentions with swapped query/key roles.

    xs and xc are token matrices (..., n, C); each w is a C x D projection.
    The first attention queries with the xs stream against xc keys, the
    second swaps the roles, and the two results are summed.
    """
    sa = scaled_dot_attention(xs @ w1_q, xc @ w1_k, xs @ w1_v)
    ca = scaled_dot_attention(xc @ w2_q, xs @ w2_k, xc @ w2_v)
    return sa + ca


class CrossMixAttention(nn.Module):
    """Bottleneck block mixing a spatially gated and a channel gated stream.

    The input is gated two ways, both results are flattened to n x C tokens
    (n = H*W), and two attentions run with crossed pairings: queries/values
    from one stream, keys from the other, and vice versa. Their sum is
    projected back to C channels, reshaped to the map layout and added to
    the input.
    """

    def __init__(self, channels, attn_dim=None, residual=True):
        super().__init__()
        if channels <= 0:
            raise ConfigError(f"channels must be positive, got {channels}")
        dim = channels if attn_dim is None else attn_dim
        if dim < 1:
            raise ConfigError(f"attention dim must be >= 1, got {dim}")
        self.channels = channels
        self.attn_dim = dim
        self.residual = residual
        self.spatial_gate = SpatialGate()
        self.channel_gate = ChannelGate(channels)
        # projections stored as C x D so tokens multiply on the right
        self.w1_q = nn.Parameter(torch.empty(channels, dim))
        self.w1_k = nn.Parameter(torch.empty(channels, dim))
        self.w1_v = nn.Parameter(torch.empty(channels, dim))
        self.w2_q = nn.Parameter(torch.empty(channels, dim))
        self.w2_k = nn.Parameter(torch.empty(channels, dim))
        self.w2_v = nn.Parameter(torch.empty(channels, dim))
        self.output_proj = nn.Parameter(torch.empty(dim, channels))
        for w in (self.w1_q, self.w1_k, self.w1_v,
                  self.w2_q, self.w2_k, self.w2_v, self.output_proj):
            nn.init.xavier_uniform_(w)

    def forward(self, x, return_attention=False):
        _check_feature_map(x)
        b, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        xs = self.spatial_gate(x).flatten(2).transpose(1, 2)
        xc = self.channel_gate(x).flatten(2).transpose(1, 2)
        sa_w = attention_weights(xs @ self.w1_q, xc @ self.w1_k)
        ca_w = attention_weights(xc @ self.w2_q, xs @ self.w2_k)
        mixed = sa_w @ (xs @ self.w1_v) + ca_w @ (xc @ self.w2_v)
        out = (mixed @ self.output_proj).transpose(1, 2).reshape(b, c, h, w)
        if self.residual:
            out = out + x
        if return_attention:
            return out, (sa_w, ca_w)
        return out
