"""Multi-branch convolution blocks and the two pyramid fusion heads."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import SpatialGate, _check_feature_map
from .errors import ConfigError, ShapeError


def conv_bn_relu(in_ch, out_ch, kernel, dilation=1):
    """Bias-free convolution, batch norm, ReLU; padding keeps H and W."""
    if isinstance(kernel, int):
        kernel = (kernel, kernel)
    pad = (dilation * (kernel[0] - 1) // 2, dilation * (kernel[1] - 1) // 2)
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, padding=pad, dilation=dilation, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class GhostSplit(nn.Module):
    """Splits channels into four equal groups; the first passes through raw,
    the other three go through 3x3 convolutions at increasing dilation."""

    def __init__(self, channels, dilation_rates=(1, 2, 3)):
        super().__init__()
        if channels % 4 != 0:
            raise ConfigError(
                f"ghost split needs channels divisible by 4, got {channels}")
        rates = tuple(dilation_rates)
        if len(rates) != 3:
            raise ConfigError(f"expected 3 dilation rates, got {len(rates)}")
        # effective kernel extent of a dilated 3x3 is 2d+1, so strictly
        # increasing rates give strictly growing receptive fields
        if rates[0] < 1 or any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError(
                f"dilation rates must be positive and strictly increasing, got {rates}")
        self.group = channels // 4
        self.transforms = nn.ModuleList(
            conv_bn_relu(self.group, self.group, 3, dilation=d) for d in rates)

    def forward(self, x):
        if x.shape[1] != 4 * self.group:
            raise ShapeError(
                f"expected {4 * self.group} channels, got {x.shape[1]}")
        parts = torch.split(x, self.group, dim=1)
        out = [parts[0]]
        out.extend(t(p) for t, p in zip(self.transforms, parts[1:]))
        return torch.cat(out, dim=1)


class MRCFBlock(nn.Module):
    """Multi-resolution fusion block.

    Parallel branches (1x1; 1x1,3x3; 1x1,3x3,3x3 standing in for a 5x5;
    one 1x1,1xn,nx1 factorised branch per entry of branch_kernel_sizes)
    run at the output width, each feeds a ghost split, and the
    concatenation is fused by a final 1x1 convolution.
    """

    def __init__(self, in_channels, out_channels, branch_kernel_sizes=(7,),
                 dilation_rates=(1, 2, 3)):
        super().__init__()
        if in_channels <= 0 or out_channels <= 0:
            raise ConfigError(
                f"channel counts must be positive, got {in_channels}->{out_channels}")
        if out_channels % 4 != 0:
            raise ConfigError(
                f"out_channels must be divisible by 4, got {out_channels}")
        sizes = tuple(branch_kernel_sizes)
        if not sizes:
            raise ConfigError("need at least one factorised kernel size")
        for n in sizes:
            if n < 3 or n % 2 == 0:
                raise ConfigError(f"factorised kernel sizes must be odd and >= 3, got {n}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        w = out_channels
        branches = [
            conv_bn_relu(in_channels, w, 1),
            nn.Sequential(conv_bn_relu(in_channels, w, 1),
                          conv_bn_relu(w, w, 3)),
            nn.Sequential(conv_bn_relu(in_channels, w, 1),
                          conv_bn_relu(w, w, 3),
                          conv_bn_relu(w, w, 3)),
        ]
        for n in sizes:
            branches.append(nn.Sequential(
                conv_bn_relu(in_channels, w, 1),
                conv_bn_relu(w, w, (1, n)),
                conv_bn_relu(w, w, (n, 1)),
            ))
        self.branches = nn.ModuleList(branches)
        self.ghosts = nn.ModuleList(
            GhostSplit(w, dilation_rates) for _ in branches)
        self.fuse = conv_bn_relu(len(branches) * w, out_channels, 1)

    def forward(self, x):
        _check_feature_map(x)
        if x.shape[1] != self.in_channels:
            raise ShapeError(
                f"expected {self.in_channels} input channels, got {x.shape[1]}")
        feats = [g(b(x)) for b, g in zip(self.branches, self.ghosts)]
        return self.fuse(torch.cat(feats, dim=1))


def _check_pyramid(levels, level_channels):
    if len(levels) != len(level_channels):
        raise ShapeError(
            f"expected {len(level_channels)} pyramid levels, got {len(levels)}")
    batch = levels[0].shape[0]
    for i, (lv, c) in enumerate(zip(levels, level_channels)):
        _check_feature_map(lv)
        if lv.shape[0] != batch:
            raise ShapeError("pyramid levels disagree on batch size")
        if lv.shape[1] != c:
            raise ConfigError(
                f"level {i} has {lv.shape[1]} channels, configured for {c}")
    for a, b in zip(levels, levels[1:]):
        if a.shape[2] <= b.shape[2] or a.shape[3] <= b.shape[3]:
            raise ShapeError("pyramid resolutions must strictly decrease")


class MultiScaleEncodingFusion(nn.Module):
    """Enriches each pyramid level with an adaptively weighted sum of all
    levels rescaled (and channel-aligned) to it.

    Per level, a global-average-pool feeds an MLP whose softmax weights the
    source levels. The level's own path is an identity, so a one-hot weight
    on itself reproduces the input exactly.
    """

    def __init__(self, level_channels):
        super().__init__()
        self.level_channels = tuple(level_channels)
        n = len(self.level_channels)
        if n < 2:
            raise ConfigError("fusion needs at least two pyramid levels")
        self.align = nn.ModuleList()
        for i, ci in enumerate(self.level_channels):
            row = nn.ModuleList(
                nn.Identity() if i == j else nn.Conv2d(cj, ci, 1)
                for j, cj in enumerate(self.level_channels))
            self.align.append(row)
        self.weight_mlps = nn.ModuleList(
            nn.Sequential(nn.Linear(c, max(c // 2, n)),
                          nn.ReLU(inplace=True),
                          nn.Linear(max(c // 2, n), n))
            for c in self.level_channels)

    def source_weights(self, levels):
        """Softmax source weights per level, each row summing to one."""
        _check_pyramid(levels, self.level_channels)
        return [torch.softmax(mlp(lv.mean(dim=(2, 3))), dim=1)
                for mlp, lv in zip(self.weight_mlps, levels)]

    def forward(self, levels):
        weights = self.source_weights(levels)
        out = []
        for i, gi in enumerate(levels):
            acc = None
            for j, gj in enumerate(levels):
                if i == j:
                    f = gi
                else:
                    f = self.align[i][j](F.interpolate(
                        gj, size=gi.shape[2:], mode="bilinear", align_corners=False))
                term = weights[i][:, j].view(-1, 1, 1, 1) * f
                acc = term if acc is None else acc + term
            out.append(acc)
        return out


def msdf_combine(fused, alpha, beta):
    """Elementwise combination fused*alpha*beta + fused*alpha + fused.

    alpha and beta broadcast against fused; the caller supplies them already
    expanded to gate channel groups / pixels.
    """
    return fused * alpha * beta + fused * alpha + fused


class MultiScaleDecodingFusion(nn.Module):
    """Output head compressing a pyramid to one logit map.

    Each level is squeezed to group_width channels and rescaled to out_size;
    the concatenation is gated by a per-level coefficient alpha (pool + MLP,
    sigmoid) and a spatial map beta (channel-pooled 7x7 conv, sigmoid),
    combined as fused*alpha*beta + fused*alpha + fused, then projected to a
    single channel.
    """

    def __init__(self, level_channels, out_size=(224, 320), group_width=4):
        super().__init__()
        self.level_channels = tuple(level_channels)
        self.out_size = tuple(out_size)
        self.group_width = group_width
        n = len(self.level_channels)
        fused = group_width * n
        self.compress = nn.ModuleList(
            nn.Conv2d(c, group_width, 1) for c in self.level_channels)
        hidden = max(fused // 2, n)
        self.alpha_mlp = nn.Sequential(
            nn.Linear(fused, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, n),
        )
        self.beta_gate = SpatialGate()
        self.project = nn.Conv2d(fused, 1, 1)

    def fused_pyramid(self, levels):
        _check_pyramid(levels, self.level_channels)
        if tuple(levels[0].shape[2:]) != self.out_size:
            raise ShapeError(
                f"finest level must be {self.out_size}, got {tuple(levels[0].shape[2:])}")
        maps = []
        for conv, lv in zip(self.compress, levels):
            m = conv(lv)
            if m.shape[2:] != levels[0].shape[2:]:
                m = F.interpolate(m, size=self.out_size, mode="bilinear",
                                  align_corners=False)
            maps.append(m)
        return torch.cat(maps, dim=1)

    def gates(self, fused):
        b = fused.shape[0]
        alpha = torch.sigmoid(self.alpha_mlp(fused.mean(dim=(2, 3))))
        alpha = alpha.repeat_interleave(self.group_width, dim=1).view(b, -1, 1, 1)
        beta = self.beta_gate.gate(fused * alpha)
        return alpha, beta

    def forward(self, levels):
        fused = self.fused_pyramid(levels)
        alpha, beta = self.gates(fused)
        return self.project(msdf_combine(fused, alpha, beta))
