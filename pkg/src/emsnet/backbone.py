"""Shared-weight siamese feature extractor.

Preprocess (1x1 conv, per-channel affine, ReLU) followed by two Feature
Blocks. Each Feature Block runs one same-padded convolution per kernel size
in parallel, concatenates them back to ``F`` channels, applies ReLU and adds
the block input. The three intermediate outputs form the feature pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

N_BLOCKS = 2


@dataclass(frozen=True)
class BackboneConfig:
    in_bands: int
    feat_channels: int = 32
    patch_size: int = 5
    kernel_sizes: tuple = (3, 5)

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if self.in_bands < 1:
            raise ConfigError("in_bands must be >= 1")
        if self.feat_channels % 8:
            raise ConfigError(f"feat_channels must be divisible by 8, got {self.feat_channels}")
        if self.feat_channels % len(self.kernel_sizes):
            raise ConfigError(
                f"feat_channels={self.feat_channels} cannot be split evenly over kernel sizes {self.kernel_sizes}"
            )
        if any(k % 2 == 0 or k < 1 for k in self.kernel_sizes):
            raise ConfigError(f"kernel sizes must be odd, got {self.kernel_sizes}")
        if self.patch_size % 2 == 0:
            raise ConfigError(f"patch_size must be odd, got {self.patch_size}")


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    F = cfg.feat_channels
    params = {
        "backbone/preprocess/weight": _he_uniform(rng, (F, cfg.in_bands, 1, 1), cfg.in_bands),
        "backbone/preprocess/scale": np.ones(F),
        "backbone/preprocess/shift": np.zeros(F),
    }
    width = F // len(cfg.kernel_sizes)
    for b in range(1, N_BLOCKS + 1):
        for k in cfg.kernel_sizes:
            params[f"backbone/block{b}/conv{k}/weight"] = _he_uniform(rng, (width, F, k, k), F * k * k)
            params[f"backbone/block{b}/conv{k}/bias"] = np.zeros(width)
    return {name: Tensor(value, requires_grad=True) for name, value in params.items()}


def _batched(x: Tensor) -> Tensor:
    return T.reshape(x, (1,) + x.shape) if x.ndim == 3 else x


def preprocess(x: Tensor, params: dict, cfg: BackboneConfig) -> Tensor:
    """``(N, C_in, p, p) -> (N, F, p, p)``; a 3-d input is treated as one sample."""
    single = x.ndim == 3
    x = _batched(x)
    if x.shape[1] != cfg.in_bands:
        raise ShapeError(f"expected {cfg.in_bands} input bands, got input of shape {x.shape}")
    y = T.conv2d(x, params["backbone/preprocess/weight"])
    # channel-last so the (F,) affine broadcasts along leading axes
    y = T.transpose(y, (0, 2, 3, 1))
    y = y * params["backbone/preprocess/scale"] + params["backbone/preprocess/shift"]
    y = T.relu(T.transpose(y, (0, 3, 1, 2)))
    return T.reshape(y, y.shape[1:]) if single else y


def feature_block(x: Tensor, params: dict, cfg: BackboneConfig, block: int) -> Tensor:
    """``ReLU(concat(conv_k(x) for k in kernel_sizes)) + x``."""
    if cfg.feat_channels % 2:
        raise ConfigError("feature blocks need an even channel count")
    single = x.ndim == 3
    x = _batched(x)
    if x.shape[1] != cfg.feat_channels:
        raise ShapeError(f"feature block expects {cfg.feat_channels} channels, got {x.shape}")
    prefix = f"backbone/block{block}"
    branches = [
        T.conv2d(x, params[f"{prefix}/conv{k}/weight"], params[f"{prefix}/conv{k}/bias"]) for k in cfg.kernel_sizes
    ]
    y = T.relu(T.concat(branches, axis=1)) + x
    return T.reshape(y, y.shape[1:]) if single else y


def pyramid(x: Tensor, params: dict, cfg: BackboneConfig) -> list[Tensor]:
    levels = [preprocess(x, params, cfg)]
    for b in range(1, N_BLOCKS + 1):
        levels.append(feature_block(levels[-1], params, cfg, b))
    return levels


def siamese_forward(x1, x2, params: dict, cfg: BackboneConfig) -> tuple[list[Tensor], list[Tensor]]:
    """Run both epochs through the same parameters.

    The branches are evaluated separately with identical shapes, so swapping
    the inputs swaps the outputs bit for bit.
    """
    x1, x2 = T.as_tensor(x1), T.as_tensor(x2)
    if x1.shape != x2.shape:
        raise ShapeError(f"branch inputs differ in shape: {x1.shape} vs {x2.shape}")
    return pyramid(x1, params, cfg), pyramid(x2, params, cfg)
