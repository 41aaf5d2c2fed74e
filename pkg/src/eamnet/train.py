"""Training loop: Adam with the warm-restart schedule, per-epoch validation,
best-checkpoint retention."""

from dataclasses import dataclass, field

import torch

from .data import augment as augment_sample
from .errors import ConfigError
from .losses import LossConfig, combined_loss
from .metrics import MetricsReport, compute_metrics
from .schedule import ScheduleConfig, lr_at


class NanLossError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch, batch, value):
        super().__init__(
            f"non-finite loss {value} at epoch {epoch}, batch {batch}; "
            "aborting before the weights are poisoned")
        self.epoch = epoch
        self.batch = batch


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_iou: float
    val_dice: float
    val_acc: float
    val_precision: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)
    best_epoch: int | None = None
    best_dice: float = float("-inf")
    best_state: dict = field(default_factory=dict)


def _clone_state(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def _batches(n, batch_size, generator):
    order = torch.randperm(n, generator=generator).tolist()
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate(model, samples, threshold=0.5, batch_size=8):
    """Per-image metrics over a sample sequence; weights untouched."""
    if len(samples) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    was_training = model.training
    model.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            batch = [samples[i] for i in range(start, min(start + batch_size, len(samples)))]
            images = torch.stack([s.image for s in batch])
            probs = model(images)
            for s, p in zip(batch, probs):
                pred = (p[0] >= threshold).float()
                rows.append((s.sample_id, compute_metrics(pred, s.mask)))
    if was_training:
        model.train()
    return MetricsReport.from_rows(rows)


def fit(model, train_set, val_set, epochs, cfg=None, loss_cfg=None,
        batch_size=8, seed=0, augment=False):
    """Trains in place and returns a TrainingLog.

    The learning rate is set per epoch from the closed-form schedule; the
    state dict with the best validation Dice is retained in the log.
    """
    cfg = (cfg or ScheduleConfig()).validate()
    loss_cfg = (loss_cfg or LossConfig()).validate()
    if epochs < 0:
        raise ConfigError(f"epochs must be non-negative, got {epochs}")
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr0,
                                 weight_decay=cfg.weight_decay)
    log = TrainingLog(best_state=_clone_state(model))
    shuffler = torch.Generator().manual_seed(seed)
    aug_rng = torch.Generator().manual_seed(seed + 1)

    for epoch in range(epochs):
        lr = lr_at(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        losses = []
        for batch_idx, index_batch in enumerate(_batches(len(train_set), batch_size, shuffler)):
            batch = [train_set[i] for i in index_batch]
            if augment:
                batch = [augment_sample(
                    s, int(torch.randint(2 ** 31, (1,), generator=aug_rng)))
                    for s in batch]
            images = torch.stack([s.image for s in batch])
            masks = torch.stack([s.mask for s in batch]).unsqueeze(1)
            optimizer.zero_grad()
            loss = combined_loss(model(images), masks, loss_cfg)
            if not torch.isfinite(loss):
                raise NanLossError(epoch, batch_idx, float(loss.detach()))
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        report = evaluate(model, val_set, batch_size=batch_size)
        log.records.append(EpochRecord(
            epoch=epoch, lr=lr, train_loss=sum(losses) / len(losses),
            val_iou=report.iou, val_dice=report.dice,
            val_acc=report.acc, val_precision=report.precision))
        if report.dice > log.best_dice:
            log.best_dice = report.dice
            log.best_epoch = epoch
            log.best_state = _clone_state(model)
    return log
