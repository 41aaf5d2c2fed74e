"""Training losses: soft Dice, clamped binary cross-entropy, and their
weighted combination."""

from dataclasses import dataclass

from .errors import ConfigError, ShapeError


@dataclass
class LossConfig:
    dice_weight: float = 1.0
    bce_weight: float = 1.0
    dice_smooth: float = 1.0

    def validate(self):
        if self.dice_weight < 0 or self.bce_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.dice_weight == 0 and self.bce_weight == 0:
            raise ConfigError("at least one loss weight must be positive")
        if self.dice_smooth <= 0:
            raise ConfigError("dice_smooth must be positive")
        return self


def _check_pair(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(
            f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.numel() == 0:
        raise ShapeError("empty tensors")


def soft_dice_loss(pred, target, smooth=1.0):
    """1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s), summed over everything."""
    _check_pair(pred, target)
    p = pred.reshape(-1)
    t = target.reshape(-1)
    intersection = (p * t).sum()
    return 1.0 - (2.0 * intersection + smooth) / (p.sum() + t.sum() + smooth)


def bce_loss(pred, target, eps=1e-7):
    """Mean per-pixel binary cross-entropy with probability clamping."""
    _check_pair(pred, target)
    p = pred.clamp(eps, 1.0 - eps)
    return -(target * p.log() + (1.0 - target) * (1.0 - p).log()).mean()


def combined_loss(pred, target, cfg=None):
    cfg = (cfg or LossConfig()).validate()
    loss = 0.0
    if cfg.dice_weight:
        loss = loss + cfg.dice_weight * soft_dice_loss(pred, target, cfg.dice_smooth)
    if cfg.bce_weight:
        loss = loss + cfg.bce_weight * bce_loss(pred, target)
    return loss
