"""Haze synthesis with the atmospheric scattering model.

A clear image ``J`` seen through a homogeneous medium becomes
``I = J * t + A * (1 - t)`` with transmission ``t = exp(-beta * depth)``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Union

import numpy as np
from PIL import Image

from .data import HAZY, DatasetSplit, IdentitySample, quantize
from .errors import ConfigError, DimensionError, IngestionError

logger = logging.getLogger(__name__)

DEPTH_KINDS = ("ramp", "radial", "constant")
HAZY_SUFFIX = "_hazy"

DepthFn = Callable[[int, IdentitySample], np.ndarray]
DepthSource = Union[str, DepthFn]


@dataclass(frozen=True)
class HazeParams:
    atmospheric_light: float = 0.9
    beta_lo: float = 1.0
    beta_hi: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.atmospheric_light <= 1.0:
            raise ConfigError("atmospheric light must lie in (0, 1]")
        if not 0.0 < self.beta_lo <= self.beta_hi:
            raise ConfigError("beta range must satisfy 0 < lo <= hi")


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    return np.exp(-beta * np.asarray(depth, dtype=np.float64))


def compose_haze(clear: np.ndarray, t: np.ndarray, A: float) -> np.ndarray:
    """Per pixel and channel ``clear * t + A * (1 - t)``; ``t`` is H x W."""
    clear = np.asarray(clear, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if clear.shape[:2] != t.shape:
        raise DimensionError(f"image {clear.shape} and transmission {t.shape} differ in size")
    if not 0.0 < A <= 1.0:
        raise ConfigError("atmospheric light must lie in (0, 1]")
    t3 = t[..., None] if clear.ndim == 3 else t
    return clear * t3 + A * (1.0 - t3)


def sample_beta(params: HazeParams, rng: np.random.Generator) -> float:
    if params.beta_lo == params.beta_hi:
        return float(params.beta_lo)
    return float(rng.uniform(params.beta_lo, params.beta_hi))


def synthetic_depth(kind: str, H: int, W: int, level: float = 0.0) -> np.ndarray:
    """Procedural relative depth in [0, 1].

    ``ramp`` grows linearly from the top row (0) to the bottom row (1);
    ``radial`` is distance from the image center scaled so corners reach 1;
    ``constant`` is ``level`` everywhere.
    """
    if kind == "ramp":
        col = np.linspace(0.0, 1.0, H) if H > 1 else np.zeros(1)
        return np.repeat(col[:, None], W, axis=1)
    if kind == "radial":
        yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
        dist = np.hypot(yy - (H - 1) / 2.0, xx - (W - 1) / 2.0)
        corner = dist.max()
        return dist / corner if corner > 0 else dist
    if kind == "constant":
        if not 0.0 <= level <= 1.0:
            raise ConfigError("constant depth level must lie in [0, 1]")
        return np.full((H, W), float(level))
    raise ConfigError(f"unknown depth kind {kind!r}; expected one of {DEPTH_KINDS}")


def normalize_depth(raw: np.ndarray) -> np.ndarray:
    """Per-image min-max scaling to [0, 1]; flat maps become all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def read_depth_png(path: str | Path) -> np.ndarray:
    """16-bit grayscale PNG -> min-max normalized depth."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"missing depth map {path}")
    with Image.open(path) as im:
        raw = np.asarray(im, dtype=np.float64)
    if raw.ndim != 2:
        raise DimensionError(f"depth map {path} is not single-channel")
    return normalize_depth(raw / 65535.0)


def write_depth_png(path: str | Path, depth: np.ndarray) -> None:
    data = np.round(np.clip(depth, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(path, format="PNG")


def folder_depth_source(folder: str | Path) -> DepthFn:
    """Depth maps stored as ``<folder>/<image stem>.png``."""
    folder = Path(folder)

    def lookup(index: int, sample: IdentitySample) -> np.ndarray:
        stem = Path(sample.name).stem
        path = folder / f"{stem}.png"
        if not path.exists():
            raise IngestionError(f"no depth map for image {sample.name!r} (looked for {path})")
        return read_depth_png(path)

    return lookup


def resolve_depth_source(source: DepthSource, level: float = 0.0) -> DepthFn:
    if callable(source):
        return source
    if isinstance(source, str) and source.startswith("constant:"):
        source, level = "constant", float(source.split(":", 1)[1])
    if source in DEPTH_KINDS:
        return lambda i, s: synthetic_depth(source, s.pixels.shape[0], s.pixels.shape[1], level)
    path = Path(source)
    if path.is_dir():
        return folder_depth_source(path)
    raise ConfigError(f"depth source {source!r} is neither a known kind nor a folder")


def hazy_name(name: str) -> str:
    p = Path(name)
    return f"{p.stem}{HAZY_SUFFIX}{p.suffix or '.png'}"


def beta_for_index(params: HazeParams, index: int, stream: int = 0) -> float:
    """Extinction coefficient of image ``index``, independent of processing order."""
    return sample_beta(params, np.random.default_rng([params.seed, stream, index]))


def hazify_sample(sample: IdentitySample, depth: np.ndarray, beta: float, A: float,
                  quantized: bool = True) -> IdentitySample:
    if depth.shape != sample.pixels.shape[:2]:
        raise DimensionError(
            f"depth {depth.shape} does not match image {sample.name or '?'} {sample.pixels.shape[:2]}")
    hazy = compose_haze(sample.pixels, transmission(depth, beta), A)
    if quantized:
        hazy = quantize(hazy)
    return replace(sample, pixels=hazy, domain=HAZY, name=hazy_name(sample.name) if sample.name else "")


def hazify_dataset(split: DatasetSplit, depth_source: DepthSource, params: HazeParams,
                   stream: int = 0, workers: int = 1, level: float = 0.0,
                   quantized: bool = True) -> tuple[DatasetSplit, list[float]]:
    """Hazy twin of ``split`` at equal indices plus the beta drawn for each image.

    ``stream`` separates the beta sequences of different splits sharing a seed.
    """
    depth_fn = resolve_depth_source(depth_source, level)

    def one(i: int) -> tuple[IdentitySample, float]:
        sample = split.samples[i]
        beta = beta_for_index(params, i, stream)
        return hazify_sample(sample, depth_fn(i, sample), beta, params.atmospheric_light, quantized), beta

    indices = range(len(split))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]
    return DatasetSplit([r[0] for r in results], split.role), [r[1] for r in results]
