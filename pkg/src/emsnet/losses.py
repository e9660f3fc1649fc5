"""Training objective: supervised contrastive loss on the unchanged class plus BCE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, LossError
from .tensor import Tensor

PROB_EPS = 1e-12


@dataclass
class EmbeddingBatch:
    z: Tensor
    y: np.ndarray
    tau: float = 0.1


@dataclass
class LossReport:
    l_supcon: float
    l_croent: float
    total: float
    graph: Tensor | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {"l_supcon": self.l_supcon, "l_croent": self.l_croent, "total": self.total}


def supcon_loss(z, y=None, tau: float = 0.1) -> Tensor:
    """Supervised contrastive loss anchored on unchanged samples (label 0).

    Embeddings are L2-normalised. For each unchanged anchor ``i`` the
    positives are the other unchanged embeddings plus the re-normalised
    unchanged centre ``z_u``; the denominator runs over every embedding of
    both classes plus ``z_u``, except the anchor itself. Changed samples only
    ever appear as negatives. The result is the mean over anchors of
    ``-1/|P(i)| * sum_p log softmax_i(p)``.
    """
    if isinstance(z, EmbeddingBatch):
        z, y, tau = z.z, z.y, z.tau
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    y = np.asarray(y).astype(np.int64).ravel()
    z = T.as_tensor(z)
    if z.ndim != 2 or z.shape[0] != len(y):
        raise LossError(f"embeddings {z.shape} do not match {len(y)} labels")
    unchanged = np.flatnonzero(y == 0)
    if len(unchanged) == 0:
        raise LossError("supervised contrastive loss needs at least one unchanged sample")
    n, n_u = len(y), len(unchanged)

    zn = T.l2_normalize(z, axis=-1)
    anchors = T.take(zn, unchanged)
    center = T.l2_normalize(T.mean(anchors, axis=0, keepdims=True), axis=-1)
    candidates = T.concat([zn, center], axis=0)
    sim = T.matmul(anchors, T.transpose(candidates)) / tau  # (n_u, n + 1)

    rows = np.arange(n_u)
    in_denominator = np.ones((n_u, n + 1))
    in_denominator[rows, unchanged] = 0.0
    positive = np.zeros((n_u, n + 1))
    positive[:, unchanged] = 1.0
    positive[:, n] = 1.0
    positive[rows, unchanged] = 0.0
    n_pos = positive.sum(axis=1)

    # work column-major so per-anchor constants broadcast along leading axes
    sim_t = T.transpose(sim)  # (n + 1, n_u)
    row_max = np.max(np.where(in_denominator > 0, sim.data, -np.inf), axis=1)
    shifted = sim_t - Tensor(row_max)
    denom = T.tsum(T.exp(shifted) * Tensor(in_denominator.T), axis=0)
    log_prob = shifted - T.log(denom)
    weights = Tensor((positive / n_pos[:, None]).T)
    return -T.tsum(log_prob * weights) / n_u


def cross_entropy_loss(y_hat, y) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-12, 1 - 1e-12]."""
    y_hat = T.as_tensor(y_hat)
    y = Tensor(np.asarray(y, dtype=np.float64).reshape(y_hat.shape))
    p = T.clip(y_hat, PROB_EPS, 1.0 - PROB_EPS)
    ll = y * T.log(p) + (1.0 - y) * T.log(1.0 - p)
    return -T.mean(ll)


def total_loss(z, y_hat, y, tau: float = 0.1) -> LossReport:
    """Unweighted sum of the contrastive and cross-entropy terms."""
    l_sup = supcon_loss(z, y, tau)
    l_ce = cross_entropy_loss(y_hat, y)
    total = l_sup + l_ce
    return LossReport(l_sup.item(), l_ce.item(), total.item(), graph=total)
