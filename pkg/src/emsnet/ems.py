"""Change head: difference fusion, distilled channel attention, refinement, classifier.

Tokens are the channel maps of a difference feature map: an ``F x p x p``
map becomes ``F`` tokens of length ``p*p``. Standard attention scores every
token against every other (an ``F x F`` matrix). The distilled variant
left-multiplies that score matrix by a learned ``C' x F`` matrix before the
row softmax, so only ``C'`` fused tokens come out and the softmax/value
product runs over ``C'`` rows instead of ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

N_LEVELS = 3


@dataclass(frozen=True)
class EmsConfig:
    """Head hyperparameters.

    ``channels`` is the number of feature channels per pyramid level. In
    ``"per_level"`` mode each level gets its own attention over ``channels``
    tokens; in ``"concat"`` mode the levels are stacked first and a single
    attention runs over ``3 * channels`` tokens.
    """

    channels: int
    c_prime: int
    patch_size: int = 5
    d_k: int = 16
    d_v: int | None = None
    embed_dim: int = 64
    refine_hidden: int = 128
    classifier_hidden: int = 32
    distill: str = "learned"
    mode: str = "per_level"

    def __post_init__(self):
        if self.d_v is None:
            object.__setattr__(self, "d_v", self.patch_size * self.patch_size)
        if self.distill not in ("learned", "identity"):
            raise ConfigError(f"distill must be 'learned' or 'identity', got {self.distill!r}")
        if self.mode not in ("per_level", "concat"):
            raise ConfigError(f"mode must be 'per_level' or 'concat', got {self.mode!r}")
        if self.distill == "identity":
            if self.c_prime != self.tokens:
                raise ConfigError(f"identity distillation needs C' == C ({self.tokens}), got {self.c_prime}")
        elif not 1 <= self.c_prime < self.tokens:
            raise ConfigError(f"C' must satisfy 1 <= C' < C = {self.tokens}, got {self.c_prime}")

    @property
    def tokens(self) -> int:
        return self.channels * (N_LEVELS if self.mode == "concat" else 1)

    @property
    def n_attention(self) -> int:
        return N_LEVELS if self.mode == "per_level" else 1

    @property
    def flat_dim(self) -> int:
        return self.n_attention * self.c_prime * self.d_v

    @classmethod
    def from_ratio(cls, channels: int, ratio: float = 1 / 8, mode: str = "per_level", **kw) -> "EmsConfig":
        tokens = channels * (N_LEVELS if mode == "concat" else 1)
        return cls(channels=channels, c_prime=max(1, int(round(ratio * tokens))), mode=mode, **kw)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_ems(cfg: EmsConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    pp = cfg.patch_size ** 2
    params: dict[str, Tensor] = {}
    for level in range(cfg.n_attention):
        prefix = f"ems/level{level}"
        params[f"{prefix}/Wq"] = Tensor(_uniform(rng, (cfg.d_k, pp), 1 / np.sqrt(pp)), requires_grad=True)
        params[f"{prefix}/Wk"] = Tensor(_uniform(rng, (cfg.d_k, pp), 1 / np.sqrt(pp)), requires_grad=True)
        params[f"{prefix}/Wv"] = Tensor(_uniform(rng, (cfg.d_v, pp), 1 / np.sqrt(pp)), requires_grad=True)
        if cfg.distill == "identity":
            params[f"{prefix}/W_distill"] = Tensor(np.eye(cfg.tokens))
        else:
            params[f"{prefix}/W_distill"] = Tensor(
                _uniform(rng, (cfg.c_prime, cfg.tokens), 1 / np.sqrt(cfg.tokens)), requires_grad=True
            )
    layers = [
        ("ems/refine/fc1", cfg.flat_dim, cfg.refine_hidden),
        ("ems/refine/fc2", cfg.refine_hidden, cfg.embed_dim),
        ("ems/classifier/fc1", cfg.embed_dim, cfg.classifier_hidden),
        ("ems/classifier/out", cfg.classifier_hidden, 1),
    ]
    for name, fan_in, fan_out in layers:
        gain = 6.0 if name != "ems/classifier/out" else 1.0
        params[f"{name}/weight"] = Tensor(_uniform(rng, (fan_out, fan_in), np.sqrt(gain / fan_in)), requires_grad=True)
        params[f"{name}/bias"] = Tensor(np.zeros(fan_out), requires_grad=True)
    return params


def diff_fuse(fx: Tensor, fy: Tensor) -> Tensor:
    """Elementwise ``|fx - fy|``."""
    if fx.shape != fy.shape:
        raise ShapeError(f"cannot fuse feature maps of shapes {fx.shape} and {fy.shape}")
    return T.tabs(fx - fy)


def _projections(fd: Tensor, params: dict, prefix: str):
    # (..., C, p, p) -> (..., C, p*p)
    tokens = T.reshape(fd, fd.shape[:-2] + (fd.shape[-2] * fd.shape[-1],))
    q = T.linear(tokens, params[f"{prefix}/Wq"])
    k = T.linear(tokens, params[f"{prefix}/Wk"])
    v = T.linear(tokens, params[f"{prefix}/Wv"])
    return q, k, v


def _scores(q: Tensor, k: Tensor) -> Tensor:
    return T.matmul(q, T.transpose(k)) / np.sqrt(q.shape[-1])


def standard_attention(fd: Tensor, params: dict, prefix: str = "ems/level0", return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_k)) V`` over channel tokens -> ``(..., C, d_v)``."""
    q, k, v = _projections(fd, params, prefix)
    weights = T.softmax(_scores(q, k), axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


def emsa(fd: Tensor, params: dict, prefix: str = "ems/level0", return_weights: bool = False):
    """``softmax(W_distill . Q K^T / sqrt(d_k)) V`` -> ``(..., C', d_v)``."""
    distill = params[f"{prefix}/W_distill"]
    c_prime, c = distill.shape
    if fd.shape[-3] != c:
        raise ShapeError(f"distill matrix expects {c} channels, feature map has shape {fd.shape}")
    if c_prime >= c and not np.array_equal(distill.data, np.eye(c)):
        raise ConfigError(f"distill matrix must have C' < C, got {distill.shape}")
    q, k, v = _projections(fd, params, prefix)
    weights = T.softmax(T.matmul(distill, _scores(q, k)), axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


def multi_level_change(pyr_x: list, pyr_y: list, params: dict, cfg: EmsConfig) -> Tensor:
    """Fuse each pyramid level, distil it, and concatenate the flattened results.

    Returns ``(N, n_attention * C' * d_v)`` for batched pyramids.
    """
    if len(pyr_x) != len(pyr_y) or any(a.shape != b.shape for a, b in zip(pyr_x, pyr_y)):
        raise ShapeError("feature pyramids differ in level count or shapes")
    diffs = [diff_fuse(a, b) for a, b in zip(pyr_x, pyr_y)]
    if cfg.mode == "concat":
        diffs = [T.concat(diffs, axis=-3)]
    parts = []
    for level, fd in enumerate(diffs):
        out = emsa(fd, params, f"ems/level{level}")
        parts.append(T.reshape(out, out.shape[:-2] + (out.shape[-2] * out.shape[-1],)))
    return T.concat(parts, axis=-1)


def refine_change(v: Tensor, params: dict) -> Tensor:
    """Two dense layers with a ReLU between; the output is the embedding ``z``."""
    h = T.relu(T.linear(v, params["ems/refine/fc1/weight"], params["ems/refine/fc1/bias"]))
    return T.linear(h, params["ems/refine/fc2/weight"], params["ems/refine/fc2/bias"])


def classify(z: Tensor, params: dict) -> Tensor:
    """Probability of "changed" per sample: one ReLU hidden layer, then a sigmoid."""
    h = T.relu(T.linear(z, params["ems/classifier/fc1/weight"], params["ems/classifier/fc1/bias"]))
    logit = T.linear(h, params["ems/classifier/out/weight"], params["ems/classifier/out/bias"])
    return T.sigmoid(T.reshape(logit, logit.shape[:-1]))
