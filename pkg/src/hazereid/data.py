"""Synthetic pedestrian datasets, Market-1501 style folder I/O, query/gallery
splitting and minibatch sampling."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
from PIL import Image

from .errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

CLEAR = "clear"
HAZY = "hazy"
ROLES = ("train", "query", "gallery")

MIN_HEIGHT, MIN_WIDTH = 6, 4
NOISE_SIGMA = 0.02
PALETTE_LO, PALETTE_HI = 0.25, 0.75  # clothing colors; extremes saturate under haze


@dataclass(frozen=True)
class IdentitySample:
    pixels: np.ndarray  # H x W x 3, values in [0, 1]
    person_id: int
    camera_id: int
    domain: str = CLEAR
    seq: int = 0
    name: str = ""

    def __post_init__(self):
        if self.person_id < 0:
            raise ValueError(f"person_id must be >= 0, got {self.person_id}")
        if self.camera_id < 1:
            raise ValueError(f"camera_id must be >= 1, got {self.camera_id}")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be H x W x 3, got {self.pixels.shape}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")


@dataclass
class DatasetSplit:
    samples: list[IdentitySample] = field(default_factory=list)
    role: str = "train"

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def id_set(self) -> set[int]:
        return {s.person_id for s in self.samples}

    @property
    def camera_set(self) -> set[int]:
        return {s.camera_id for s in self.samples}

    @property
    def person_ids(self) -> np.ndarray:
        return np.array([s.person_id for s in self.samples], dtype=int)

    @property
    def camera_ids(self) -> np.ndarray:
        return np.array([s.camera_id for s in self.samples], dtype=int)

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.samples]

    def flat_pixels(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, 0))
        return np.stack([s.pixels.reshape(-1) for s in self.samples])

    def class_labels(self) -> tuple[np.ndarray, list[int]]:
        """Contiguous class indices 0..C-1 and the sorted person ids they map to."""
        ids = sorted(self.id_set)
        lookup = {pid: i for i, pid in enumerate(ids)}
        return np.array([lookup[s.person_id] for s in self.samples], dtype=int), ids

    def subset(self, indices, role: str | None = None) -> "DatasetSplit":
        return DatasetSplit([self.samples[i] for i in indices], role or self.role)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so in-memory data equals its PNG round trip."""
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0) / 255.0


def market_name(person_id: int, camera_id: int, seq: int, suffix: str = "") -> str:
    return f"{person_id:04d}_c{camera_id}s1_{seq:06d}_00{suffix}.png"


# ---------------------------------------------------------------------------
# procedural identities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Attributes:
    skin: np.ndarray
    torso: np.ndarray
    legs: np.ndarray
    hat: np.ndarray
    build: int  # body width in columns
    headgear: bool

    def vector(self) -> np.ndarray:
        return np.concatenate([self.skin, self.torso, self.legs, self.hat,
                               [self.build, float(self.headgear)]])


@dataclass(frozen=True)
class CameraNuisance:
    brightness: float
    contrast: float
    shift: tuple[int, int]


def _identity_attributes(rng: np.random.Generator, W: int) -> Attributes:
    widest = max(2, W // 2)
    return Attributes(
        skin=rng.uniform(0.35, 0.85) * np.array([1.0, 0.8, 0.65]),
        torso=rng.uniform(PALETTE_LO, PALETTE_HI, 3),
        legs=rng.uniform(PALETTE_LO, PALETTE_HI, 3),
        hat=rng.uniform(0.0, 1.0, 3),
        build=int(rng.integers(max(1, widest - 1), widest + 1)),
        headgear=bool(rng.random() < 0.3),
    )


def camera_nuisance(camera_id: int) -> CameraNuisance:
    """Fixed per camera id, shared by every dataset the generator renders."""
    rng = np.random.default_rng([7919, camera_id])
    magnitude = rng.integers(1, 3, size=2)
    sign = rng.choice([-1, 1], size=2)
    return CameraNuisance(
        brightness=float(rng.uniform(-0.1, 0.1)),
        contrast=float(rng.uniform(0.8, 1.2)),
        shift=(int(magnitude[0] * sign[0]), int(magnitude[1] * sign[1])),
    )


def render_figure(attr: Attributes, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    """Blocky pedestrian (head, torso, legs in a centered column) on a grayish scene."""
    img = np.empty((H, W, 3))
    img[:] = rng.uniform(0.15, 0.65) + rng.normal(0.0, 0.05, 3)
    head_end = max(1, round(H * 0.25))
    torso_end = max(head_end + 1, round(H * 0.6))
    left = (W - attr.build) // 2
    body = slice(left, left + attr.build)
    head_w = max(1, attr.build - 1)
    head = slice((W - head_w) // 2, (W - head_w) // 2 + head_w)
    jitter = lambda: rng.normal(0.0, 0.03, 3)  # noqa: E731
    img[0:head_end, head] = attr.skin + jitter()
    if attr.headgear:
        img[0, head] = attr.hat + jitter()
    img[head_end:torso_end, body] = attr.torso + jitter()
    img[torso_end:H, body] = attr.legs + jitter()
    return np.clip(img, 0.0, 1.0)


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    H, W, _ = img.shape
    padded = np.pad(img, ((abs(dy), abs(dy)), (abs(dx), abs(dx)), (0, 0)), mode="edge")
    y0 = abs(dy) - dy
    x0 = abs(dx) - dx
    return padded[y0:y0 + H, x0:x0 + W]


def apply_camera(img: np.ndarray, cam: CameraNuisance, rng: np.random.Generator) -> np.ndarray:
    out = cam.contrast * (img - 0.5) + 0.5 + cam.brightness
    out = _shift(out, *cam.shift)
    out = out + rng.normal(0.0, NOISE_SIGMA, out.shape)
    return np.clip(out, 0.0, 1.0)


def identity_attributes(seed: int, person_id: int, W: int) -> Attributes:
    return _identity_attributes(np.random.default_rng([seed, 104729, person_id]), W)


def generate_synthetic_identities(n_ids: int, imgs_per_id: int, n_cams: int,
                                  H: int = 8, W: int = 8, seed: int = 0,
                                  id_offset: int = 0, role: str = "train") -> DatasetSplit:
    """Render ``n_ids * imgs_per_id`` images, cycling each identity through the cameras.

    Person ids run from ``id_offset + 1``; id 0 is reserved for junk in Market naming.
    """
    if n_ids < 2:
        raise ConfigError("n_ids must be at least 2")
    if n_cams < 2:
        raise ConfigError("n_cams must be at least 2")
    if imgs_per_id < 1:
        raise ConfigError("imgs_per_id must be at least 1")
    if H < MIN_HEIGHT or W < MIN_WIDTH:
        raise ConfigError(f"{H}x{W} is too small to render a figure (min {MIN_HEIGHT}x{MIN_WIDTH})")
    cameras = {c: camera_nuisance(c) for c in range(1, n_cams + 1)}
    samples = []
    for pid in range(id_offset + 1, id_offset + n_ids + 1):
        attr = identity_attributes(seed, pid, W)
        for k in range(imgs_per_id):
            cam_id = 1 + k % n_cams
            rng = np.random.default_rng([seed, pid, k])
            cam = cameras[cam_id]
            img = render_figure(attr, H, W, rng)
            img = quantize(apply_camera(img, cam, rng))
            samples.append(IdentitySample(img, pid, cam_id, CLEAR, k, market_name(pid, cam_id, k)))
    return DatasetSplit(samples, role)


# ---------------------------------------------------------------------------
# Market-style names and folders
# ---------------------------------------------------------------------------

class ParsedName(NamedTuple):
    person_id: int
    camera_id: int
    distractor: bool
    junk: bool


_NAME = re.compile(r"^(-?\d+)_c(\d+)")


def parse_market_filename(name: str) -> ParsedName:
    m = _NAME.match(Path(name).name)
    if m is None:
        raise ParseError(f"not a Market-style filename: {name!r}")
    pid, cam = int(m.group(1)), int(m.group(2))
    if pid < -1:
        raise ParseError(f"invalid person id in {name!r}")
    return ParsedName(pid, cam, pid == -1, pid == 0)


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_image(path: Path, pixels: np.ndarray) -> None:
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_split(folder: str | Path, role: str | None = None, domain: str = CLEAR) -> DatasetSplit:
    """Read every PNG/JPG in ``folder``; distractor and junk images are skipped."""
    folder = Path(folder)
    if not folder.is_dir():
        raise FileNotFoundError(f"dataset folder not found: {folder}")
    samples, skipped = [], 0
    paths = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    for seq, path in enumerate(paths):
        parsed = parse_market_filename(path.name)
        if parsed.distractor or parsed.junk:
            skipped += 1
            continue
        samples.append(IdentitySample(read_image(path), parsed.person_id, parsed.camera_id,
                                      domain, seq, path.name))
    if skipped:
        logger.warning("%s: skipped %d distractor/junk images", folder, skipped)
    return DatasetSplit(samples, role or folder.name)


def save_split(split: DatasetSplit, folder: str | Path) -> None:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for s in split.samples:
        write_image(folder / s.name, s.pixels)


def write_manifest(path: str | Path, splits: dict[str, DatasetSplit], seed: int, extra: dict | None = None) -> None:
    rows = [
        {"split": role, "person_id": s.person_id, "camera_id": s.camera_id, "filename": s.name}
        for role, split in splits.items() for s in split.samples
    ]
    doc = {"generator_seed": seed, **(extra or {}), "images": rows}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# splitting and batching
# ---------------------------------------------------------------------------

def split_query_gallery(split: DatasetSplit, queries_per_id: int,
                        seed: int) -> tuple[DatasetSplit, DatasetSplit]:
    """Pick ``queries_per_id`` queries per identity, each keeping a cross-camera
    positive in the gallery.  Single-camera identities go entirely to the gallery."""
    rng = np.random.default_rng(seed)
    by_id: dict[int, list[int]] = {}
    for i, s in enumerate(split.samples):
        by_id.setdefault(s.person_id, []).append(i)
    query_idx, gallery_idx, excluded = [], [], 0
    for pid in sorted(by_id):
        members = by_id[pid]
        cams = {split.samples[i].camera_id for i in members}
        if queries_per_id <= 0:
            gallery_idx.extend(members)
            continue
        if len(cams) < 2:
            excluded += 1
            gallery_idx.extend(members)
            continue
        order = [members[j] for j in rng.permutation(len(members))]
        chosen: list[int] = []
        for i in order:
            if len(chosen) == queries_per_id:
                break
            trial = chosen + [i]
            rest = [j for j in members if j not in trial]
            rest_cams = {split.samples[j].camera_id for j in rest}
            if all(rest_cams - {split.samples[q].camera_id} for q in trial):
                chosen = trial
        query_idx.extend(chosen)
        gallery_idx.extend(j for j in members if j not in chosen)
    if excluded:
        logger.warning("%d single-camera identities excluded from queries", excluded)
    return split.subset(sorted(query_idx), "query"), split.subset(sorted(gallery_idx), "gallery")


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator,
                  drop_last: bool = False) -> Iterator[np.ndarray]:
    """Index batches covering one random permutation of ``range(n)``."""
    if batch_size < 1 or batch_size > n:
        raise ConfigError(f"batch size {batch_size} must lie in [1, {n}]")
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = perm[start:start + batch_size]
        if drop_last and idx.size < batch_size:
            return
        yield idx


def sample_training_batch(split: DatasetSplit, batch_size: int,
                          rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """First batch of a fresh epoch permutation: flattened pixels and person ids."""
    idx = next(epoch_batches(len(split), batch_size, rng))
    sub = split.subset(idx)
    return sub.flat_pixels(), sub.person_ids


def with_domain(split: DatasetSplit, domain: str) -> DatasetSplit:
    return DatasetSplit([replace(s, domain=domain) for s in split.samples], split.role)
