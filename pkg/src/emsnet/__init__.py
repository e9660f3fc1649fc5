"""EMS-Net hyperspectral change detection with a small numpy autodiff core."""

__version__ = "0.1.0"

from .baselines import cva, isfa, otsu_threshold
from .hsi import HsiCube, PatchBatch, ScenePair, extract_patches, generate_synthetic_pair, load_envi
from .losses import cross_entropy_loss, supcon_loss, total_loss
from .metrics import compute_metrics, confusion_matrix, render_error_map
from .model import EmsNetConfig, forward, init_params
from .tensor import Tensor
from .train import TrainConfig, lr_at, predict_scene

__all__ = [
    "EmsNetConfig",
    "HsiCube",
    "PatchBatch",
    "ScenePair",
    "Tensor",
    "TrainConfig",
    "compute_metrics",
    "confusion_matrix",
    "cross_entropy_loss",
    "cva",
    "extract_patches",
    "forward",
    "generate_synthetic_pair",
    "init_params",
    "isfa",
    "load_envi",
    "lr_at",
    "otsu_threshold",
    "predict_scene",
    "render_error_map",
    "supcon_loss",
    "total_loss",
]
