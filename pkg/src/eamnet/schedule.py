"""Cosine annealing learning-rate schedule with warm restarts, in closed
form so any epoch can be queried directly."""

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class ScheduleConfig:
    lr0: float = 0.001
    weight_decay: float = 0.00005
    t0: int = 10
    tmult: int = 2
    eta_min: float = 0.0

    def validate(self):
        if self.lr0 <= 0:
            raise ConfigError("lr0 must be positive")
        if self.t0 < 1 or self.tmult < 1:
            raise ConfigError("t0 and tmult must be >= 1")
        if not 0 <= self.eta_min <= self.lr0:
            raise ConfigError("eta_min must lie in [0, lr0]")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        return self


def restart_epochs(cfg, until):
    """Epochs at which the rate resets to lr0, up to and including `until`."""
    cfg.validate()
    restarts, start, length = [], 0, cfg.t0
    while start + length <= until:
        start += length
        restarts.append(start)
        length *= cfg.tmult
    return restarts


def lr_at(epoch, cfg=None):
    """Learning rate for an integer epoch.

    Cycle lengths grow geometrically (t0, t0*tmult, ...); within a cycle of
    length T at offset t the rate is
    eta_min + (lr0 - eta_min) * (1 + cos(pi * t / T)) / 2.
    """
    cfg = (cfg or ScheduleConfig()).validate()
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    start, length = 0, cfg.t0
    while epoch >= start + length:
        start += length
        length *= cfg.tmult
    t = epoch - start
    return cfg.eta_min + 0.5 * (cfg.lr0 - cfg.eta_min) * (1.0 + math.cos(math.pi * t / length))
