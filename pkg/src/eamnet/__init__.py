"""Skin lesion segmentation with cross-mix attention and multi-scale fusion."""

from .attention import (ChannelGate, CrossMixAttention, SpatialGate,
                        attention_weights, cross_mix_tokens,
                        scaled_dot_attention)
from .bridge import (ExternalAttention, ExternalAttentionBridge,
                     channel_l1_scores, topk_channel_select)
from .data import (CANONICAL_SIZE, DatasetBundle, Sample, SplitSpec, augment,
                   compute_channel_stats, load_isic2018, load_ph2, make_split,
                   make_synthetic_dataset, normalize_image, read_split_manifest,
                   resample_pair, split_sizes, write_split_manifest)
from .errors import ConfigError, ShapeError
from .losses import LossConfig, bce_loss, combined_loss, soft_dice_loss
from .metrics import METRIC_NAMES, MetricsReport, compute_metrics, confusion_counts
from .model import (CHECKPOINT_MAGIC, EAMNet, ModelConfig, build_model,
                    count_parameters, load_checkpoint, save_checkpoint)
from .multiscale import (GhostSplit, MRCFBlock, MultiScaleDecodingFusion,
                         MultiScaleEncodingFusion, msdf_combine)
from .schedule import ScheduleConfig, lr_at, restart_epochs
from .train import NanLossError, TrainingLog, evaluate, fit
from .visualize import (denormalize_image, energy_map, minmax_normalize,
                        received_attention_map, save_heatmap, save_overlay)

__version__ = "0.1.0"

__all__ = [
    "CANONICAL_SIZE", "CHECKPOINT_MAGIC", "METRIC_NAMES",
    "ChannelGate", "ConfigError", "CrossMixAttention", "DatasetBundle",
    "EAMNet", "ExternalAttention", "ExternalAttentionBridge", "GhostSplit",
    "LossConfig", "MRCFBlock", "MetricsReport", "ModelConfig",
    "MultiScaleDecodingFusion", "MultiScaleEncodingFusion", "NanLossError",
    "Sample", "ScheduleConfig", "ShapeError", "SpatialGate", "SplitSpec",
    "TrainingLog", "attention_weights", "augment", "bce_loss",
    "channel_l1_scores", "combined_loss", "compute_channel_stats",
    "compute_metrics", "confusion_counts", "count_parameters",
    "cross_mix_tokens", "denormalize_image", "energy_map", "evaluate", "fit",
    "load_checkpoint", "load_isic2018", "load_ph2", "lr_at", "make_split",
    "make_synthetic_dataset", "minmax_normalize", "msdf_combine",
    "normalize_image", "read_split_manifest", "received_attention_map",
    "resample_pair", "restart_epochs", "save_checkpoint", "save_heatmap",
    "save_overlay", "scaled_dot_attention", "soft_dice_loss", "split_sizes",
    "topk_channel_select", "write_split_manifest",
]
