"""Tiny backbone, two-level pyramid and level-shared static heads."""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    clamp,
    conv2d,
    exp,
    group_norm,
    load_tensor,
    mul,
    relu,
    save_tensor,
    sigmoid,
)

STRIDES = (8, 16)
WIDTH = 32
NUM_TOWER_CONVS = 4
PRIOR_PROB = 0.01
MAX_LOG_SIZE = 6.0
NORM_GROUPS = 8


class Module:
    """Named parameter container; children are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


class Conv(Module):
    """Square-kernel convolution layer with He-normal weights by default."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, k: int = 3,
                 stride: int = 1, std: float | None = None, bias: float = 0.0,
                 zero: bool = False):
        if zero:
            w = np.zeros((c_out, c_in, k, k))
        else:
            std = math.sqrt(2.0 / (c_in * k * k)) if std is None else std
            w = rng.normal(0.0, std, size=(c_out, c_in, k, k))
        self.weight = Tensor(w.astype(np.float32), requires_grad=True)
        self.bias = Tensor(np.full(c_out, bias, dtype=np.float32), requires_grad=True)
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = NORM_GROUPS):
        self.groups = groups
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return group_norm(x, self.groups, self.gamma, self.beta)


@dataclass
class PyramidFeatures:
    features: list   # Tensor [B, C, H_l, W_l] per level
    strides: tuple = STRIDES


class Backbone(Module):
    """Four conv+relu blocks down to stride 8, plus one stride-2 block for stride 16."""

    def __init__(self, rng: np.random.Generator, width: int = WIDTH):
        self.blocks = [
            Conv(rng, 3, width // 2, stride=2),
            Conv(rng, width // 2, width, stride=2),
            Conv(rng, width, width, stride=2),
            Conv(rng, width, width, stride=1),
        ]
        self.extra = Conv(rng, width, width, stride=2)

    def __call__(self, images: Tensor) -> PyramidFeatures:
        H, W = images.shape[-2:]
        if H % STRIDES[-1] or W % STRIDES[-1]:
            raise DimensionError(f"image size {H}x{W} is not a multiple of {STRIDES[-1]}")
        x = images - 0.5
        for block in self.blocks:
            x = relu(block(x))
        p0 = x
        p1 = relu(self.extra(p0))
        return PyramidFeatures([p0, p1], STRIDES)


def backbone_forward(backbone: Backbone, image: Tensor) -> PyramidFeatures:
    return backbone(image)


@dataclass
class LevelOutput:
    cls_feat: Tensor     # classification tower output [B, C, H, W]
    reg_feat: Tensor     # regression tower output [B, C, H, W]
    cls_logits: Tensor   # [B, 1, H, W]
    proposals: Tensor    # [B, 4, H, W], strictly positive
    stride: int

    @property
    def scores(self) -> Tensor:
        return sigmoid(self.cls_logits)


class StaticHeads(Module):
    """Classification and regression branches shared across pyramid levels."""

    def __init__(self, rng: np.random.Generator, width: int = WIDTH):
        self.cls_tower = [Conv(rng, width, width) for _ in range(NUM_TOWER_CONVS)]
        self.reg_tower = [Conv(rng, width, width) for _ in range(NUM_TOWER_CONVS)]
        self.cls_norm = [GroupNorm(width) for _ in range(NUM_TOWER_CONVS)]
        self.reg_norm = [GroupNorm(width) for _ in range(NUM_TOWER_CONVS)]
        prior = -math.log((1 - PRIOR_PROB) / PRIOR_PROB)
        self.cls_out = Conv(rng, width, 1, std=0.01, bias=prior)
        self.reg_out = Conv(rng, width, 4, std=0.01, bias=0.0)

    def level(self, feat: Tensor, stride: int) -> LevelOutput:
        c = feat
        for conv, norm in zip(self.cls_tower, self.cls_norm):
            c = relu(norm(conv(c)))
        r = feat
        for conv, norm in zip(self.reg_tower, self.reg_norm):
            r = relu(norm(conv(r)))
        raw = clamp(self.reg_out(r), hi=MAX_LOG_SIZE)
        proposals = mul(exp(raw), float(stride))
        return LevelOutput(c, r, self.cls_out(c), proposals, stride)

    def __call__(self, feats: PyramidFeatures) -> list[LevelOutput]:
        return [self.level(f, s) for f, s in zip(feats.features, feats.strides)]


def static_heads_forward(heads: StaticHeads, feats: PyramidFeatures) -> list[LevelOutput]:
    return heads(feats)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | os.PathLike, params: "OrderedDict[str, Tensor]",
                    meta: dict | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    for name, t in params.items():
        save_tensor(os.path.join(path, f"{name}.tensor"), t.data)
    info = {"layers": list(params), "strides": list(STRIDES), "width": WIDTH}
    info.update(meta or {})
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict]:
    with open(os.path.join(path, "meta.json")) as fh:
        meta = json.load(fh)
    arrays = {name: load_tensor(os.path.join(path, f"{name}.tensor")) for name in meta["layers"]}
    return arrays, meta
