"""Training protocol and whole-scene inference."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import hsi
from .errors import CompatibilityError, ConfigError, ContractError, NonFiniteError
from .hsi import ScenePair
from .losses import total_loss
from .model import EmsNetConfig, config_from_params, forward, init_params, predict_proba
from .tensor import Tensor

logger = logging.getLogger(__name__)

# named random substreams derived from the single user seed
STREAM_SAMPLING = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2


def substream(seed: int, stream: int) -> list[int]:
    return [int(seed), stream]


@dataclass
class TrainConfig:
    epochs: int = 200
    lr0: float = 0.0005
    batch_size: int = 64
    seed: int = 0
    n_unchanged: int = 100
    n_changed: int = 100
    tau: float = 0.1
    patch_size: int = 5
    c_prime_ratio: float = 1 / 8
    feat_channels: int = 32
    distill: str = "learned"
    mode: str = "per_level"
    normalize: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.n_unchanged < 1:
            raise ConfigError("training needs at least one unchanged sample")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")

    def model_config(self, in_bands: int) -> EmsNetConfig:
        return EmsNetConfig.build(
            in_bands,
            feat_channels=self.feat_channels,
            patch_size=self.patch_size,
            c_prime_ratio=self.c_prime_ratio,
            distill=self.distill,
            mode=self.mode,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChangeMap:
    prob: np.ndarray
    binary: np.ndarray

    @property
    def height(self) -> int:
        return self.prob.shape[0]

    @property
    def width(self) -> int:
        return self.prob.shape[1]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Cosine decay from ``lr0`` towards 0 over ``cfg.epochs``."""
    if not 0 <= epoch < cfg.epochs:
        raise ContractError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


class Adam:
    def __init__(self, params: list[Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def stratified_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Split sample indices into batches that each contain unchanged samples.

    Both classes are shuffled and dealt evenly across
    ``ceil(N / batch_size)`` batches (fewer if there are not enough
    unchanged samples to go round).
    """
    labels = np.asarray(labels)
    unchanged = rng.permutation(np.flatnonzero(labels == 0))
    changed = rng.permutation(np.flatnonzero(labels != 0))
    n_batches = max(1, min(math.ceil(len(labels) / batch_size), len(unchanged)))
    u_parts = np.array_split(unchanged, n_batches)
    c_parts = np.array_split(changed, n_batches)
    return [np.concatenate([u, c]) for u, c in zip(u_parts, c_parts)]


def prepare_pair(pair: ScenePair, cfg: TrainConfig) -> ScenePair:
    return hsi.normalize_pair(pair) if cfg.normalize else pair


def training_coords(pair: ScenePair, cfg: TrainConfig) -> list:
    return hsi.select_training_samples(pair, cfg.n_unchanged, cfg.n_changed, substream(cfg.seed, STREAM_SAMPLING))


def train(pair: ScenePair, cfg: TrainConfig, on_epoch=None) -> tuple[dict[str, Tensor], list[dict]]:
    """Fit EMS-Net on sampled pixels of ``pair``; returns ``(params, log)``.

    ``log`` has one dict per epoch with the sample-weighted mean
    ``l_supcon``, ``l_croent``, ``total`` and the learning rate used.
    """
    model_cfg = cfg.model_config(pair.bands)
    data = prepare_pair(pair, cfg)
    samples = training_coords(data, cfg)
    batch = hsi.extract_patches(data, [c for c, _ in samples], cfg.patch_size)
    labels = batch.labels

    params = init_params(model_cfg, np.random.default_rng(substream(cfg.seed, STREAM_INIT)))
    optimizer = Adam([p for p in params.values() if p.requires_grad], cfg.beta1, cfg.beta2, cfg.adam_eps)
    shuffle_rng = np.random.default_rng(substream(cfg.seed, STREAM_SHUFFLE))

    log = []
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        sums = np.zeros(3)
        for b, idx in enumerate(stratified_batches(labels, cfg.batch_size, shuffle_rng)):
            try:
                z, y_hat = forward(params, Tensor(batch.x1[idx]), Tensor(batch.x2[idx]), model_cfg)
                report = total_loss(z, y_hat, labels[idx], cfg.tau)
                optimizer.zero_grad()
                report.graph.backward()
            except NonFiniteError as exc:
                raise NonFiniteError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            optimizer.step(lr)
            sums += len(idx) * np.array([report.l_supcon, report.l_croent, report.total])
        means = sums / len(labels)
        entry = {"epoch": epoch, "l_supcon": means[0], "l_croent": means[1], "total": means[2], "lr": lr}
        log.append(entry)
        logger.debug("epoch %d total %.5f", epoch, entry["total"])
        if on_epoch is not None:
            on_epoch(entry)
    return params, log


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EMS_THREADS", "1")))
    except ValueError:
        return 1


def predict_scene(pair: ScenePair, params: dict, cfg: TrainConfig | None = None, chunk: int = 1024) -> ChangeMap:
    """Push every pixel's patch pair through the network.

    Ties at exactly 0.5 count as changed. Work is sharded over
    ``EMS_THREADS`` threads; shards write to fixed positions.
    """
    cfg = cfg or TrainConfig()
    model_cfg = config_from_params(params)
    if pair.bands != model_cfg.backbone.in_bands:
        raise CompatibilityError(f"scene has {pair.bands} bands, model was trained on {model_cfg.backbone.in_bands}")
    data = prepare_pair(pair, cfg)
    coords = hsi.all_pixel_coords(data.shape)
    prob = np.empty(len(coords))

    def run(start):
        part = hsi.extract_patches(data, coords[start:start + chunk], model_cfg.backbone.patch_size)
        prob[start:start + chunk] = predict_proba(params, part.x1, part.x2, model_cfg)

    starts = range(0, len(coords), chunk)
    threads = _threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, starts))
    else:
        for s in starts:
            run(s)
    prob = prob.reshape(data.shape)
    return ChangeMap(prob, (prob >= 0.5).astype(np.int64))
