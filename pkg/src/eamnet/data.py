"""Dataset ingestion: directory discovery, deterministic splits, resampling
to the canonical 224x320 canvas, normalization and augmentation.

Loaders return a DatasetBundle whose splits are lazy sequences, so nothing
larger than one sample is pinned in memory at a time. Normalization
statistics are computed from the training split only and applied everywhere.
"""

import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError

CANONICAL_SIZE = (224, 320)  # height, width
MASK_SUFFIX = "_segmentation"
IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff"}


@dataclass
class Sample:
    sample_id: str
    image: torch.Tensor  # 3 x H x W, float32, channel-normalized
    mask: torch.Tensor   # H x W, float32, values exactly 0 or 1


@dataclass
class SplitSpec:
    dataset: str
    seed: int
    train_ids: list
    val_ids: list
    test_ids: list

    def validate(self):
        groups = (self.train_ids, self.val_ids, self.test_ids)
        ids = [i for g in groups for i in g]
        if len(set(ids)) != len(ids):
            raise ConfigError("split id lists overlap")
        return self

    def ids_for(self, split):
        try:
            return {"train": self.train_ids, "val": self.val_ids,
                    "test": self.test_ids}[split]
        except KeyError:
            raise ConfigError(f"unknown split {split!r}") from None


def split_sizes(n, ratios=(0.7, 0.1)):
    """(train, val, test) sizes: floor of each ratio, remainder to test."""
    if n < 0:
        raise ConfigError("dataset size must be non-negative")
    train = int(n * ratios[0])
    val = int(n * ratios[1])
    return train, val, n - train - val


def make_split(ids, seed, dataset, ratios=(0.7, 0.1)):
    """Seeded shuffle of the sorted ids, then contiguous assignment."""
    ordered = sorted(ids)
    random.Random(seed).shuffle(ordered)
    n_train, n_val, _ = split_sizes(len(ordered), ratios)
    return SplitSpec(
        dataset=dataset, seed=seed,
        train_ids=ordered[:n_train],
        val_ids=ordered[n_train:n_train + n_val],
        test_ids=ordered[n_train + n_val:],
    ).validate()


# ---------------------------------------------------------------- file IO

def _read_image(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ValueError(f"unreadable image {Path(path).stem}: {exc}") from exc


def _read_mask(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ValueError(f"unreadable mask {Path(path).stem}: {exc}") from exc
    return (arr >= 0.5).astype(np.float32)


def resample_pair(image, mask, size=CANONICAL_SIZE):
    """Bilinear image resample and nearest mask resample to `size`.

    image: H x W x 3 float array in [0, 1]; mask: H x W binary array.
    The mask is re-binarized at 0.5 after resampling.
    """
    h, w = size
    img = Image.fromarray(np.uint8(np.clip(image, 0.0, 1.0) * 255.0))
    msk = Image.fromarray(np.uint8(np.clip(mask, 0.0, 1.0) * 255.0))
    image_out = np.asarray(img.resize((w, h), Image.BILINEAR),
                           dtype=np.float32) / 255.0
    mask_out = np.asarray(msk.resize((w, h), Image.NEAREST),
                          dtype=np.float32) / 255.0
    return image_out, (mask_out >= 0.5).astype(np.float32)


def normalize_image(image, mean, std):
    """H x W x 3 array to a 3 x H x W tensor, channel-standardized."""
    arr = (image - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def compute_channel_stats(images):
    """Per-channel mean/std over an iterable of H x W x 3 arrays."""
    total = np.zeros(3, dtype=np.float64)
    total_sq = np.zeros(3, dtype=np.float64)
    count = 0
    for img in images:
        total += img.sum(axis=(0, 1))
        total_sq += (img.astype(np.float64) ** 2).sum(axis=(0, 1))
        count += img.shape[0] * img.shape[1]
    if count == 0:
        raise ValueError("no pixels to compute statistics from")
    mean = total / count
    var = np.maximum(total_sq / count - mean ** 2, 0.0)
    std = np.maximum(np.sqrt(var), 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)


# ---------------------------------------------------------------- datasets

class LazySamples(Sequence):
    """Sequence view over (id -> file pair) that loads on indexing."""

    def __init__(self, ids, pairs, mean, std):
        self.ids = list(ids)
        self.pairs = pairs
        self.mean = mean
        self.std = std

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        sample_id = self.ids[i]
        img_path, mask_path = self.pairs[sample_id]
        image, mask = resample_pair(_read_image(img_path), _read_mask(mask_path))
        return Sample(sample_id=sample_id,
                      image=normalize_image(image, self.mean, self.std),
                      mask=torch.from_numpy(mask))


@dataclass
class DatasetBundle:
    name: str
    split: SplitSpec
    mean: np.ndarray
    std: np.ndarray
    train: Sequence
    val: Sequence
    test: Sequence

    def samples_for(self, split):
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[split]
        except KeyError:
            raise ConfigError(f"unknown split {split!r}") from None


def _bundle_from_pairs(name, pairs, split):
    train_images = (resample_pair(_read_image(pairs[i][0]),
                                  _read_mask(pairs[i][1]))[0]
                    for i in split.train_ids)
    mean, std = compute_channel_stats(train_images)
    return DatasetBundle(
        name=name, split=split, mean=mean, std=std,
        train=LazySamples(split.train_ids, pairs, mean, std),
        val=LazySamples(split.val_ids, pairs, mean, std),
        test=LazySamples(split.test_ids, pairs, mean, std),
    )


def discover_isic_pairs(root):
    """Maps image stems to (image, mask) paths anywhere under root.

    Masks carry the "_segmentation" stem suffix. Unpaired files in either
    direction are a hard error listing the offenders.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    images, masks = {}, {}
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if path.stem.lower().endswith(MASK_SUFFIX):
            masks[path.stem[: -len(MASK_SUFFIX)]] = path
        else:
            images[path.stem] = path
    if not images and not masks:
        raise ValueError(f"no images found under {root}")
    missing_masks = sorted(set(images) - set(masks))
    missing_images = sorted(set(masks) - set(images))
    if missing_masks or missing_images:
        raise ValueError(
            "unpaired files: "
            f"images without masks {missing_masks}, masks without images {missing_images}")
    return {stem: (images[stem], masks[stem]) for stem in sorted(images)}


def load_isic2018(root, seed=42):
    """Bundle for an image/mask tree following the "_segmentation" suffix
    convention, split by the seeded 0.7 / 0.1 / remainder rule."""
    pairs = discover_isic_pairs(root)
    split = make_split(pairs.keys(), seed, "isic2018", ratios=(0.7, 0.1))
    return _bundle_from_pairs("isic2018", pairs, split)


def discover_ph2_cases(root):
    """Maps case names to (image, mask) paths for per-case directories.

    Within each case directory the mask is the file whose stem ends in
    "_lesion"; the image is the file matching the case name (or the first
    non-lesion image)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    pairs = {}
    offenders = []
    for case_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        image = mask = None
        for path in sorted(case_dir.rglob("*")):
            if not path.is_file() or path.suffix.lower() not in IMAGE_EXTENSIONS:
                continue
            if path.stem.lower().endswith("_lesion"):
                mask = mask or path
            elif path.stem == case_dir.name:
                image = path
            elif image is None:
                image = path
        if image is None or mask is None:
            offenders.append(case_dir.name)
        else:
            pairs[case_dir.name] = (image, mask)
    if not pairs and not offenders:
        raise ValueError(f"no case directories found under {root}")
    if offenders:
        raise ValueError(f"cases missing an image or lesion mask: {offenders}")
    return pairs


PH2_EXPECTED = 200
PH2_SPLIT = (80, 20, 100)


def load_ph2(root, seed=42):
    """Bundle for the per-case layout; 80/20/100 when all 200 cases are
    present, otherwise a warned proportional 0.4 / 0.1 / remainder fallback."""
    pairs = discover_ph2_cases(root)
    if len(pairs) != PH2_EXPECTED:
        warnings.warn(
            f"expected {PH2_EXPECTED} cases, found {len(pairs)}; "
            "falling back to a proportional 0.4/0.1/0.5 split")
    split = make_split(pairs.keys(), seed, "ph2", ratios=(0.4, 0.1))
    if len(pairs) == PH2_EXPECTED:
        sizes = (len(split.train_ids), len(split.val_ids), len(split.test_ids))
        assert sizes == PH2_SPLIT, sizes
    return _bundle_from_pairs("ph2", pairs, split)


# ---------------------------------------------------------------- synthetic

def _synthetic_pair(rng, size):
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    cy = rng.uniform(0.35 * h, 0.65 * h)
    cx = rng.uniform(0.35 * w, 0.65 * w)
    ry = rng.uniform(0.2 * h, 0.34 * h)
    rx = rng.uniform(0.2 * w, 0.34 * w)
    mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    base = np.array([0.2, 0.28, 0.38], dtype=np.float32)
    lesion = np.array([0.85, 0.55, 0.4], dtype=np.float32)
    image = np.empty((h, w, 3), dtype=np.float32)
    image[:] = base
    image[mask] = lesion
    image += rng.normal(0.0, 0.015, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0), mask.astype(np.float32)


def make_synthetic_dataset(n_images=14, seed=0, size=CANONICAL_SIZE):
    """Deterministic bright-ellipse dataset on the canonical canvas."""
    if n_images < 3:
        raise ConfigError("synthetic dataset needs at least 3 images")
    rng = np.random.default_rng(seed)
    raw = {f"synthetic_{i:03d}": _synthetic_pair(rng, size)
           for i in range(n_images)}
    split = make_split(raw.keys(), seed, "synthetic", ratios=(0.7, 0.1))
    mean, std = compute_channel_stats(raw[i][0] for i in split.train_ids)

    def materialize(ids):
        return [Sample(sample_id=i,
                       image=normalize_image(raw[i][0], mean, std),
                       mask=torch.from_numpy(raw[i][1]))
                for i in ids]

    return DatasetBundle(
        name="synthetic", split=split, mean=mean, std=std,
        train=materialize(split.train_ids),
        val=materialize(split.val_ids),
        test=materialize(split.test_ids),
    )


# ------------------------------------------------------------- augmentation

def flip_horizontal(sample):
    return Sample(sample.sample_id, sample.image.flip(-1), sample.mask.flip(-1))


def flip_vertical(sample):
    return Sample(sample.sample_id, sample.image.flip(-2), sample.mask.flip(-2))


def rotate180(sample):
    return Sample(sample.sample_id, sample.image.flip(-1).flip(-2),
                  sample.mask.flip(-1).flip(-2))


def augment(sample, seed, enabled=True):
    """Random flips and 180 degree rotation, identical on image and mask.

    The canonical canvas is not square, so rotations are restricted to the
    shape-preserving 180 degree case. Identity when disabled.
    """
    if not enabled:
        return sample
    rng = random.Random(seed)
    if rng.random() < 0.5:
        sample = flip_horizontal(sample)
    if rng.random() < 0.5:
        sample = flip_vertical(sample)
    if rng.random() < 0.5:
        sample = rotate180(sample)
    return sample


# ----------------------------------------------------------- split manifest

def write_split_manifest(split, path):
    """Line-delimited manifest: dataset, seed, then one id per line."""
    lines = [f"dataset {split.dataset}", f"seed {split.seed}"]
    for name in ("train", "val", "test"):
        lines.extend(f"{name} {sid}" for sid in split.ids_for(name))
    Path(path).write_text("\n".join(lines) + "\n")


def read_split_manifest(path):
    ids = {"train": [], "val": [], "test": []}
    dataset, seed = None, None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" ")
        if key == "dataset":
            dataset = value
        elif key == "seed":
            seed = int(value)
        elif key in ids:
            ids[key].append(value)
        else:
            raise ValueError(f"unrecognized manifest line: {line!r}")
    if dataset is None or seed is None:
        raise ValueError("manifest missing dataset or seed header")
    return SplitSpec(dataset=dataset, seed=seed, train_ids=ids["train"],
                     val_ids=ids["val"], test_ids=ids["test"]).validate()
