"""Multi-layer perceptrons used as feature extractor, identity classifier and
domain discriminator, plus checkpoint serialization."""
from __future__ import annotations

import copy
import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ExtractorConfig:
    input_dim: int = 8 * 8 * 3
    hidden: tuple[int, ...] = (128, 64)
    feature_dim: int = 32
    slope: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("layer widths must be at least 1")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be at least 2")
        if not 0.0 <= self.slope < 1.0:
            raise ConfigError("leaky slope must lie in [0, 1)")


def _uniform_layer(rng: np.random.Generator, fan_in: int, fan_out: int,
                   zero: bool = False) -> tuple[Tensor, Tensor]:
    if zero:
        return (Tensor(np.zeros((fan_in, fan_out)), requires_grad=True),
                Tensor(np.zeros(fan_out), requires_grad=True))
    bound = 1.0 / np.sqrt(fan_in)
    W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=fan_out)
    return Tensor(W, requires_grad=True), Tensor(b, requires_grad=True)


class MLP:
    """Stack of affine layers with leaky-ReLU between them (none after the last)."""

    def __init__(self, widths: list[int], slope: float, seed: int, zero_last: bool = False):
        rng = np.random.default_rng(seed)
        self.widths = list(widths)
        self.slope = slope
        self.layers: list[tuple[Tensor, Tensor]] = []
        for i, (m, n) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            self.layers.append(_uniform_layer(rng, m, n, zero=zero_last and last))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise DimensionError(f"expected input width {self.widths[0]}, got shape {x.shape}")
        h = x
        for i, (W, b) in enumerate(self.layers):
            h = ad.affine(h, W, b)
            if i < len(self.layers) - 1:
                h = ad.leaky_relu(h, self.slope)
        return h

    def parameters(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))

    def weight_norm_product(self) -> float:
        """Product of layer spectral norms; a Lipschitz constant for slopes <= 1."""
        return float(np.prod([np.linalg.norm(W.data, 2) for W, _ in self.layers]))


class Extractor(MLP):
    def __init__(self, config: ExtractorConfig):
        super().__init__([config.input_dim, *config.hidden, config.feature_dim],
                         config.slope, config.seed)
        self.config = config


class ClassifierHead(MLP):
    def __init__(self, feature_dim: int, num_classes: int, seed: int):
        if num_classes < 2:
            raise ConfigError("classifier needs at least two classes")
        super().__init__([feature_dim, num_classes], 0.0, seed)
        self.num_classes = num_classes


class Discriminator(MLP):
    """Two-way clear/hazy classifier over features."""

    def __init__(self, feature_dim: int, hidden: int = 32, slope: float = 0.1,
                 seed: int = 0, zero_last: bool = False):
        if hidden < 1:
            raise ConfigError("discriminator hidden width must be at least 1")
        super().__init__([feature_dim, hidden, 2], slope, seed, zero_last=zero_last)


def init_model(config: ExtractorConfig) -> Extractor:
    return Extractor(config)


def extract(model: MLP, batch) -> Tensor:
    """Unnormalized features for a batch of flattened (or image-shaped) pixels."""
    if not isinstance(batch, Tensor):
        arr = np.asarray(batch, dtype=np.float64)
        batch = Tensor(arr.reshape(arr.shape[0], int(np.prod(arr.shape[1:]))))
    return model_forward(model, batch)


def discriminate(disc: Discriminator, features: Tensor) -> Tensor:
    return model_forward(disc, features)


def model_forward(model: MLP, x: Tensor) -> Tensor:
    if x.shape[0] == 0:
        if x.ndim != 2 or x.shape[1] != model.widths[0]:
            raise DimensionError(f"expected input width {model.widths[0]}, got shape {x.shape}")
        return Tensor(np.zeros((0, model.widths[-1])))
    return model(x)


def clone_frozen(model: MLP) -> MLP:
    """Deep copy with every parameter detached from gradient tracking."""
    twin = copy.deepcopy(model)
    for p in twin.parameters():
        p.requires_grad = False
        p.grad = None
    return twin


def clone_trainable(model: MLP) -> MLP:
    twin = copy.deepcopy(model)
    for p in twin.parameters():
        p.requires_grad = True
        p.grad = np.zeros_like(p.data)
    return twin


def checksum(model: MLP) -> str:
    h = hashlib.sha256()
    for p in model.parameters():
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Pretrained extractor plus its source classifier."""

    extractor: Extractor
    classifier: ClassifierHead | None = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    shapes: dict[str, list[int]] = {}
    for prefix, model in (("extractor", ckpt.extractor), ("classifier", ckpt.classifier)):
        if model is None:
            continue
        for i, (W, b) in enumerate(model.layers):
            for tag, t in (("W", W), ("b", b)):
                key = f"{prefix}.{i}.{tag}"
                arrays[key] = np.asarray(t.data, dtype=np.float64)
                shapes[key] = list(t.shape)
    header = {
        "format_version": CHECKPOINT_FORMAT,
        "extractor_config": asdict(ckpt.extractor.config),
        "num_classes": None if ckpt.classifier is None else ckpt.classifier.num_classes,
        "shapes": shapes,
        "meta": ckpt.meta,
    }
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    Path(path).write_bytes(_npz_bytes(arrays))


def _npz_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    # np.savez stamps wall-clock time into the archive; fix it for reproducible bytes
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for key in sorted(arrays):
            info = zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w") as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arrays[key]), allow_pickle=False)
    return buf.getvalue()


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(bytes(z["__header__"]).decode())
        if header.get("format_version") != CHECKPOINT_FORMAT:
            raise ConfigError(f"unsupported checkpoint format {header.get('format_version')}")
        cfg = header["extractor_config"]
        cfg["hidden"] = tuple(cfg["hidden"])
        extractor = Extractor(ExtractorConfig(**cfg))
        _fill(extractor, "extractor", z, header["shapes"])
        classifier = None
        if header["num_classes"] is not None:
            classifier = ClassifierHead(extractor.config.feature_dim, header["num_classes"], 0)
            _fill(classifier, "classifier", z, header["shapes"])
    return Checkpoint(extractor, classifier, header.get("meta", {}))


def _fill(model: MLP, prefix: str, z, shapes: dict) -> None:
    for i, (W, b) in enumerate(model.layers):
        for tag, t in (("W", W), ("b", b)):
            key = f"{prefix}.{i}.{tag}"
            arr = z[key]
            if list(arr.shape) != shapes[key] or arr.shape != t.shape:
                raise DimensionError(f"checkpoint tensor {key} has shape {arr.shape}, expected {t.shape}")
            t.data = arr.astype(np.float64).copy()
