"""Full encoder-decoder assembly with ablation switches and checkpoint IO."""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import CrossMixAttention, _check_feature_map
from .bridge import ExternalAttentionBridge
from .errors import ConfigError, ShapeError
from .multiscale import (MRCFBlock, MultiScaleDecodingFusion,
                         MultiScaleEncodingFusion, conv_bn_relu)

CHECKPOINT_MAGIC = "EAMNET1"
CANONICAL_INPUT = (224, 320)


@dataclass
class ModelConfig:
    stage_channels: tuple = (16, 32, 64, 128)
    input_size: tuple = CANONICAL_INPUT
    use_mrcf: bool = True
    use_cmam: bool = True
    use_eab: bool = True
    k_mem: int = 64
    k_sel: int | None = None   # None: half of each bridge's channel count
    attn_dim: int | None = None  # None: bottleneck channel count
    seed: int = 0

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.input_size = tuple(int(s) for s in self.input_size)

    def validate(self):
        if self.input_size != CANONICAL_INPUT:
            raise ConfigError(
                f"input_size is fixed at {CANONICAL_INPUT}, got {self.input_size}")
        if len(self.stage_channels) != 4:
            raise ConfigError("stage_channels must list four widths")
        if any(c <= 0 for c in self.stage_channels):
            raise ConfigError("stage widths must be positive")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ConfigError(
                f"stage_channels must strictly increase, got {self.stage_channels}")
        if any(c % 4 for c in self.stage_channels):
            raise ConfigError("stage widths must be divisible by 4")
        if self.k_mem < 1:
            raise ConfigError("k_mem must be >= 1")
        if self.k_sel is not None and not 1 <= self.k_sel <= min(self.stage_channels):
            raise ConfigError(
                f"k_sel must be in [1, {min(self.stage_channels)}] to fit every level")
        if self.attn_dim is not None and self.attn_dim < 1:
            raise ConfigError("attn_dim must be >= 1")
        return self


def _stage_block(in_ch, out_ch, use_mrcf):
    if use_mrcf:
        return MRCFBlock(in_ch, out_ch)
    return nn.Sequential(conv_bn_relu(in_ch, out_ch, 3),
                         conv_bn_relu(out_ch, out_ch, 3))


class UpsampleBlock(nn.Module):
    """Bilinear 2x upsample followed by a 3x3 convolution."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = conv_bn_relu(in_ch, out_ch, 3)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="bilinear",
                                       align_corners=False))


class EAMNet(nn.Module):
    """U-shaped segmentation network.

    Encoder stages (multi-branch blocks, or plain double convolutions when
    ablated) feed a cross-scale fusion of the pyramid, external-attention
    bridges replace the raw skips, the bottleneck runs cross-mix attention,
    and the decoder pyramid is compressed to one probability map by the
    multi-scale output head.
    """

    def __init__(self, cfg):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.stage_channels
        cb = 2 * c4
        self.pool = nn.MaxPool2d(2)
        self.enc1 = _stage_block(3, c1, cfg.use_mrcf)
        self.enc2 = _stage_block(c1, c2, cfg.use_mrcf)
        self.enc3 = _stage_block(c2, c3, cfg.use_mrcf)
        self.enc4 = _stage_block(c3, c4, cfg.use_mrcf)
        self.msef = MultiScaleEncodingFusion(cfg.stage_channels)
        self.bottleneck = nn.Sequential(conv_bn_relu(c4, cb, 3),
                                        conv_bn_relu(cb, cb, 3))
        self.cmam = (CrossMixAttention(cb, cfg.attn_dim)
                     if cfg.use_cmam else nn.Identity())
        self.bridges = nn.ModuleList(
            ExternalAttentionBridge(c, cfg.k_mem, cfg.k_sel)
            if cfg.use_eab else nn.Identity()
            for c in cfg.stage_channels)
        self.up4 = UpsampleBlock(cb, c4)
        self.up3 = UpsampleBlock(c4, c3)
        self.up2 = UpsampleBlock(c3, c2)
        self.up1 = UpsampleBlock(c2, c1)
        self.dec4 = _stage_block(2 * c4, c4, cfg.use_mrcf)
        self.dec3 = _stage_block(2 * c3, c3, cfg.use_mrcf)
        self.dec2 = _stage_block(2 * c2, c2, cfg.use_mrcf)
        self.dec1 = _stage_block(2 * c1, c1, cfg.use_mrcf)
        self.msdf = MultiScaleDecodingFusion(cfg.stage_channels,
                                             out_size=cfg.input_size)

    def _check_input(self, x):
        _check_feature_map(x)
        if x.shape[1] != 3:
            raise ShapeError(f"expected 3 input channels, got {x.shape[1]}")
        if tuple(x.shape[2:]) != self.cfg.input_size:
            raise ShapeError(
                f"expected {self.cfg.input_size} input, got {tuple(x.shape[2:])}; "
                "resize upstream, the model does not resample")

    def forward(self, x, capture=None):
        """Per-pixel lesion probabilities, B x 1 x H x W in [0, 1].

        `capture`, if given, is a dict that receives bottleneck attention
        and bridge internals for visualization.
        """
        self._check_input(x)
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        e4 = self.enc4(self.pool(e3))
        fused = self.msef([e1, e2, e3, e4])
        b = self.bottleneck(self.pool(e4))
        if self.cfg.use_cmam and capture is not None:
            b, (sa_w, ca_w) = self.cmam(b, return_attention=True)
            capture["cmam_sa"] = sa_w.detach()
            capture["cmam_ca"] = ca_w.detach()
            capture["cmam_grid"] = (x.shape[2] // 16, x.shape[3] // 16)
        else:
            b = self.cmam(b)
        skips = []
        for bridge, f in zip(self.bridges, fused):
            if self.cfg.use_eab and capture is not None:
                s, attended, indices = bridge(f, return_internals=True)
                capture.setdefault("eab_pre", []).append(attended.detach())
                capture.setdefault("eab_post", []).append(s.detach())
                capture.setdefault("eab_indices", []).append(indices.detach())
            else:
                s = bridge(f)
            skips.append(s)
        d4 = self.dec4(torch.cat([self.up4(b), skips[3]], dim=1))
        d3 = self.dec3(torch.cat([self.up3(d4), skips[2]], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), skips[1]], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), skips[0]], dim=1))
        return torch.sigmoid(self.msdf([d1, d2, d3, d4]))


def build_model(cfg=None):
    """Constructs the network with weight init seeded by cfg.seed."""
    cfg = cfg or ModelConfig()
    cfg.validate()
    torch.manual_seed(cfg.seed)
    return EAMNet(cfg)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(path, model, extra=None):
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(model.cfg),
        "seed": model.cfg.seed,
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuilds the model from a checkpoint file; returns (model, payload)."""
    try:
        payload = torch.load(path, map_location="cpu")
    except Exception as exc:
        raise ConfigError(
            f"unreadable checkpoint {path} (expected magic {CHECKPOINT_MAGIC!r}): {exc}"
        ) from exc
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise ConfigError(
            f"{path} is not a recognized checkpoint (expected magic {CHECKPOINT_MAGIC!r})")
    cfg = ModelConfig(**payload["config"])
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
