"""Hyperspectral scenes: containers, ingestion, synthesis and patch sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import formats
from .errors import ConfigError, DataError, ShapeError


@dataclass
class HsiCube:
    """A single hyperspectral image stored as ``(height, width, bands)``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] < 1:
            raise ShapeError(f"cube must be (H, W, C) with C >= 1, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("cube contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


@dataclass
class ScenePair:
    """Co-registered bi-temporal cubes with a binary reference map (1 = changed)."""

    t1: HsiCube
    t2: HsiCube
    reference: np.ndarray
    name: str = "scene"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.reference = (np.asarray(self.reference) != 0).astype(np.int64)
        if self.t1.values.shape != self.t2.values.shape:
            raise ShapeError(f"t1 {self.t1.values.shape} and t2 {self.t2.values.shape} differ")
        if self.reference.shape != self.t1.values.shape[:2]:
            raise ShapeError(f"reference {self.reference.shape} does not match cube {self.t1.values.shape[:2]}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.reference.shape

    @property
    def bands(self) -> int:
        return self.t1.bands


@dataclass
class PatchBatch:
    """Square patches around ``pixel_coords`` from both epochs, ``(N, C, p, p)`` each."""

    x1: np.ndarray
    x2: np.ndarray
    labels: np.ndarray
    pixel_coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "PatchBatch":
        return PatchBatch(self.x1[idx], self.x2[idx], self.labels[idx], self.pixel_coords[idx])


# -- ingestion -------------------------------------------------------------------
def load_envi(header_path: str | os.PathLike) -> HsiCube:
    return HsiCube(formats.read_envi(header_path))


def load_scene(scene_dir: str | os.PathLike, name: str | None = None) -> ScenePair:
    """Read ``t1.hdr``, ``t2.hdr`` and ``reference.pgm`` from a directory."""
    scene_dir = Path(scene_dir)
    for fname in ("t1.hdr", "t2.hdr", "reference.pgm"):
        if not (scene_dir / fname).exists():
            raise FileNotFoundError(f"missing scene file: {scene_dir / fname}")
    return ScenePair(
        load_envi(scene_dir / "t1.hdr"),
        load_envi(scene_dir / "t2.hdr"),
        formats.read_reference(scene_dir / "reference.pgm"),
        name=name or scene_dir.name,
    )


def save_scene(pair: ScenePair, scene_dir: str | os.PathLike, interleave: str = "bsq") -> list[Path]:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tag, cube in (("t1", pair.t1), ("t2", pair.t2)):
        hdr = scene_dir / f"{tag}.hdr"
        raw = formats.write_envi(hdr, cube.values, interleave=interleave, description=f"{pair.name} {tag}")
        written += [hdr, raw]
    formats.write_binary_map(scene_dir / "reference.pgm", pair.reference)
    written.append(scene_dir / "reference.pgm")
    return written


def normalize_per_band(cube: HsiCube) -> HsiCube:
    """Min-max scale every band to [0, 1]; constant bands become zeros."""
    v = cube.values
    lo = v.min(axis=(0, 1), keepdims=True)
    span = v.max(axis=(0, 1), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return HsiCube(np.where(span > 0, (v - lo) / safe, 0.0))


def normalize_pair(pair: ScenePair) -> ScenePair:
    return ScenePair(normalize_per_band(pair.t1), normalize_per_band(pair.t2), pair.reference, pair.name, dict(pair.meta))


# -- synthetic scenes -------------------------------------------------------------
N_CLASSES = 4


def class_signatures(bands: int, n_classes: int = N_CLASSES) -> np.ndarray:
    """Smooth spectra: a shared continuum plus one narrow Gaussian bump per class.

    Bumps are spaced so that they barely overlap, which keeps every pair of
    classes at (almost) the same spectral distance.
    """
    b = np.arange(bands, dtype=np.float64)
    spacing = bands / n_classes
    width = spacing / 4.0
    continuum = 0.2 + 0.1 * np.sin(np.pi * b / max(bands - 1, 1))
    sigs = []
    for k in range(n_classes):
        center = (k + 0.5) * spacing - 0.5
        sigs.append(continuum + 0.6 * np.exp(-0.5 * ((b - center) / width) ** 2))
    return np.stack(sigs)


def _region_mask(shape, kind, cy, cx, ry, rx) -> np.ndarray:
    rows, cols = np.ogrid[:shape[0], :shape[1]]
    if kind == "rect":
        return (np.abs(rows - cy) <= ry) & (np.abs(cols - cx) <= rx)
    return ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0


def plant_regions(height, width, n_regions, rng, max_tries=1000):
    """Random non-overlapping rectangles/ellipses as ``(kind, cy, cx, ry, rx)`` tuples."""
    min_r = (max(1, height // 12), max(1, width // 12))
    max_r = (max(min_r[0], height // 6), max(min_r[1], width // 6))
    worst_area = n_regions * (2 * max_r[0] + 1) * (2 * max_r[1] + 1)
    if n_regions < 0:
        raise ConfigError("n_change_regions must be >= 0")
    if n_regions and (worst_area > 0.5 * height * width or 2 * max_r[0] + 1 > height or 2 * max_r[1] + 1 > width):
        raise ConfigError(
            f"{n_regions} change regions of up to {2 * max_r[0] + 1}x{2 * max_r[1] + 1} px "
            f"exceed the {height}x{width} image area budget"
        )
    regions, occupied = [], np.zeros((height, width), dtype=bool)
    tries = 0
    while len(regions) < n_regions:
        tries += 1
        if tries > max_tries:
            raise ConfigError(f"could not place {n_regions} non-overlapping change regions")
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        ry = int(rng.integers(min_r[0], max_r[0] + 1))
        rx = int(rng.integers(min_r[1], max_r[1] + 1))
        cy = int(rng.integers(ry, height - ry))
        cx = int(rng.integers(rx, width - rx))
        mask = _region_mask((height, width), kind, cy, cx, ry, rx)
        if np.any(mask & occupied):
            continue
        occupied |= mask
        regions.append((kind, cy, cx, ry, rx))
    return regions


def generate_synthetic_pair(
    height: int = 64,
    width: int = 64,
    bands: int = 16,
    n_change_regions: int = 3,
    noise_sigma: float = 0.02,
    seed: int = 0,
) -> ScenePair:
    """Build a bi-temporal scene with planted land-cover swaps.

    ``t1`` tiles the image with four spectral classes in contiguous Voronoi
    cells, modulated by a smooth brightness field and a faint fixed texture.
    ``t2`` is ``t1`` plus Gaussian noise, except that inside each planted
    rectangle/ellipse the class signature is replaced by another class. The
    reference marks exactly the planted pixels.
    """
    if bands < 8:
        raise ConfigError(f"bands must be >= 8, got {bands}")
    if height < 8 or width < 8:
        raise ConfigError(f"image must be at least 8x8, got {height}x{width}")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    sigs = class_signatures(bands)

    seeds = rng.uniform([0, 0], [height, width], size=(2 * N_CLASSES, 2))
    rows, cols = np.mgrid[:height, :width]
    d2 = (rows[..., None] - seeds[:, 0]) ** 2 + (cols[..., None] - seeds[:, 1]) ** 2
    classes = np.argmin(d2, axis=-1) % N_CLASSES

    phase = rng.uniform(0, 2 * np.pi, size=2)
    brightness = 1.0 + 0.05 * np.sin(2 * np.pi * rows / height + phase[0]) * np.cos(2 * np.pi * cols / width + phase[1])
    texture = 0.005 * rng.standard_normal((height, width, bands))
    t1 = sigs[classes] * brightness[..., None] + texture

    reference = np.zeros((height, width), dtype=np.int64)
    classes2 = classes.copy()
    regions = plant_regions(height, width, n_change_regions, rng)
    for region in regions:
        mask = _region_mask((height, width), *region)
        offset = int(rng.integers(1, N_CLASSES))
        classes2[mask] = (classes[mask] + offset) % N_CLASSES
        reference[mask] = 1

    noise = noise_sigma * rng.standard_normal((height, width, bands))
    t2 = sigs[classes2] * brightness[..., None] + texture + noise
    return ScenePair(HsiCube(t1), HsiCube(t2), reference, name=f"synthetic-{seed}", meta={"regions": regions})


# -- sampling & patches ----------------------------------------------------------
def select_training_samples(pair: ScenePair, n_unchanged: int, n_changed: int, seed: int) -> list:
    """Draw ``n_unchanged`` + ``n_changed`` distinct pixels uniformly per class.

    Returns a list of ``((row, col), label)`` with the unchanged samples first.
    """
    rng = np.random.default_rng(seed)
    ref = pair.reference.ravel()
    width = pair.shape[1]
    out = []
    for label, n in ((0, n_unchanged), (1, n_changed)):
        pool = np.flatnonzero(ref == label)
        if n > len(pool):
            raise DataError(
                f"requested {n} {'changed' if label else 'unchanged'} samples, only {len(pool)} available "
                f"(unchanged={int(np.sum(ref == 0))}, changed={int(np.sum(ref == 1))})"
            )
        chosen = pool[rng.choice(len(pool), size=n, replace=False)] if n else pool[:0]
        out.extend(((int(i // width), int(i % width)), label) for i in chosen)
    return out


def _windows(cube: np.ndarray, radius: int) -> np.ndarray:
    padded = np.pad(cube, ((radius, radius), (radius, radius), (0, 0)), mode="reflect")
    size = 2 * radius + 1
    # (H, W, C, p, p)
    return sliding_window_view(padded, (size, size), axis=(0, 1))


def extract_patches(pair: ScenePair, coords, patch_size: int = 5) -> PatchBatch:
    """Cut reflect-padded ``p x p`` patches centred on each ``(row, col)``."""
    if patch_size % 2 == 0 or patch_size < 1:
        raise ConfigError(f"patch size must be a positive odd number, got {patch_size}")
    radius = patch_size // 2
    if radius >= min(pair.shape):
        raise ConfigError(f"patch size {patch_size} too large for a {pair.shape} scene")
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    r, c = coords[:, 0], coords[:, 1]
    x1 = np.ascontiguousarray(_windows(pair.t1.values, radius)[r, c])
    x2 = np.ascontiguousarray(_windows(pair.t2.values, radius)[r, c])
    return PatchBatch(x1, x2, pair.reference[r, c].copy(), coords)


def all_pixel_coords(shape) -> np.ndarray:
    rows, cols = np.mgrid[:shape[0], :shape[1]]
    return np.stack([rows.ravel(), cols.ravel()], axis=1)
