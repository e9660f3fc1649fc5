"""The full network: siamese backbone followed by the change head."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig, init_backbone, siamese_forward
from .ems import EmsConfig, classify, init_ems, multi_level_change, refine_change
from .errors import CompatibilityError
from .tensor import Tensor


@dataclass(frozen=True)
class EmsNetConfig:
    backbone: BackboneConfig
    head: EmsConfig

    @classmethod
    def build(
        cls,
        in_bands: int,
        feat_channels: int = 32,
        patch_size: int = 5,
        kernel_sizes=(3, 5),
        c_prime_ratio: float = 1 / 8,
        distill: str = "learned",
        mode: str = "per_level",
        **head_kw,
    ) -> "EmsNetConfig":
        backbone = BackboneConfig(in_bands, feat_channels, patch_size, tuple(kernel_sizes))
        head = EmsConfig.from_ratio(
            feat_channels, c_prime_ratio, mode=mode, patch_size=patch_size, distill=distill, **head_kw
        )
        return cls(backbone, head)

    def to_dict(self) -> dict:
        return {"backbone": asdict(self.backbone), "head": asdict(self.head)}


def init_params(cfg: EmsNetConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = init_backbone(cfg.backbone, rng)
    params.update(init_ems(cfg.head, rng))
    return params


def forward(params: dict, x1, x2, cfg: EmsNetConfig) -> tuple[Tensor, Tensor]:
    """Return ``(z, y_hat)``: embeddings ``(N, E)`` and change probabilities ``(N,)``."""
    pyr_x, pyr_y = siamese_forward(x1, x2, params, cfg.backbone)
    z = refine_change(multi_level_change(pyr_x, pyr_y, params, cfg.head), params)
    return z, classify(z, params)


def predict_proba(params: dict, x1: np.ndarray, x2: np.ndarray, cfg: EmsNetConfig) -> np.ndarray:
    with T.no_grad():
        _, y_hat = forward(params, Tensor(x1), Tensor(x2), cfg)
    return y_hat.data


def config_from_params(params: dict) -> EmsNetConfig:
    """Recover the architecture from parameter names and shapes (e.g. a loaded checkpoint)."""
    shape = {name: np.shape(getattr(v, "data", v)) for name, v in params.items()}
    try:
        feat, in_bands = shape["backbone/preprocess/weight"][:2]
        kernel_sizes = tuple(
            sorted(int(n.split("/conv")[1].split("/")[0]) for n in shape if n.startswith("backbone/block1/conv") and n.endswith("/weight"))
        )
        d_k, pp = shape["ems/level0/Wq"]
        d_v = shape["ems/level0/Wv"][0]
        c_prime, tokens = shape["ems/level0/W_distill"]
        refine_hidden, _ = shape["ems/refine/fc1/weight"]
        embed_dim = shape["ems/refine/fc2/weight"][0]
        classifier_hidden = shape["ems/classifier/fc1/weight"][0]
    except (KeyError, ValueError, IndexError) as exc:
        raise CompatibilityError(f"parameters do not describe an EMS-Net model: {exc}") from exc
    patch = int(round(np.sqrt(pp)))
    mode = "per_level" if tokens == feat else "concat"
    distill = "learned"
    if c_prime == tokens:
        distill = "identity"
    head = EmsConfig(
        channels=int(feat),
        c_prime=int(c_prime),
        patch_size=patch,
        d_k=int(d_k),
        d_v=int(d_v),
        embed_dim=int(embed_dim),
        refine_hidden=int(refine_hidden),
        classifier_hidden=int(classifier_hidden),
        distill=distill,
        mode=mode,
    )
    return EmsNetConfig(BackboneConfig(int(in_bands), int(feat), patch, kernel_sizes), head)


def params_from_arrays(arrays: dict, trainable: bool = True) -> dict[str, Tensor]:
    cfg = config_from_params(arrays)
    out = {}
    for name, value in arrays.items():
        frozen = name.endswith("W_distill") and cfg.head.distill == "identity"
        out[name] = Tensor(value, requires_grad=trainable and not frozen)
    return out
