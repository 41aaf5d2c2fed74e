"""Shared fixtures: finite-difference checking and small data factories."""

import random

import pytest
import torch

from eamnet import ModelConfig
from eamnet.data import Sample


def fd_max_rel_error(make_scalar, tensors, step=1e-4, max_coords=None, seed=0):
    """Compare autograd gradients against central differences.

    make_scalar re-runs the forward pass and returns a 0-d tensor; tensors
    are the leaves to differentiate. Coordinates are perturbed in place
    through .data, so the same closure serves both sides of the comparison.
    Returns the worst relative error over all probed coordinates, where the
    error denominator is floored at 1e-4 to keep near-zero gradients from
    blowing up the ratio.
    """
    value = make_scalar()
    grads = torch.autograd.grad(value, tensors, allow_unused=False)
    rng = random.Random(seed)
    worst = 0.0
    with torch.no_grad():
        for tensor, grad in zip(tensors, grads):
            flat = tensor.data.reshape(-1)
            gflat = grad.reshape(-1)
            coords = list(range(flat.numel()))
            if max_coords is not None and len(coords) > max_coords:
                coords = rng.sample(coords, max_coords)
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + step
                hi = make_scalar().item()
                flat[i] = orig - step
                lo = make_scalar().item()
                flat[i] = orig
                fd = (hi - lo) / (2.0 * step)
                err = abs(fd - gflat[i].item())
                worst = max(worst, err / max(abs(fd), abs(gflat[i].item()), 1e-4))
    return worst


@pytest.fixture
def fd_check():
    return fd_max_rel_error


@pytest.fixture
def tiny_cfg():
    def _make(**overrides):
        base = dict(stage_channels=(4, 8, 12, 16), k_mem=8, seed=0)
        base.update(overrides)
        return ModelConfig(**base)
    return _make


def make_sample(sample_id="s0", size=(224, 320), seed=0):
    g = torch.Generator().manual_seed(seed)
    image = torch.rand(3, *size, generator=g)
    mask = torch.zeros(size)
    h, w = size
    mask[h // 4:3 * h // 4, w // 4:3 * w // 4] = 1.0
    return Sample(sample_id=sample_id, image=image, mask=mask)


@pytest.fixture
def sample_factory():
    return make_sample
