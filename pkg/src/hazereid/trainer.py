"""Source pretraining and hazy target adaptation with a frozen teacher."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Adam, Tensor
from .data import DatasetSplit, epoch_batches
from .errors import ConfigError, ContractError
from .haze import DepthSource, HazeParams, hazify_dataset
from .models import (Checkpoint, ClassifierHead, Discriminator, Extractor, ExtractorConfig,
                     checksum, clone_frozen, clone_trainable, discriminate, extract)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    pretrain_epochs: int = 40
    adapt_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.00035
    milestones: tuple[float, ...] = (1 / 3, 3 / 4)
    decay: float = 0.1
    adapt_lr: float | None = None  # None: same as lr
    adapt_milestones: tuple[float, ...] = ()
    disc_lr: float | None = None  # None: same as the student
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    hidden: tuple[int, ...] = (128, 64)
    feature_dim: int = 32
    slope: float = 0.1
    disc_hidden: int = 32
    model_seed: int = 0
    data_seed: int = 0
    haze_seed: int = 0
    use_isl: bool = True
    use_idkl: bool = True
    source_ce_replay: bool = False

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(float(m) for m in self.milestones))
        object.__setattr__(self, "adapt_milestones", tuple(float(m) for m in self.adapt_milestones))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for ms in (self.milestones, self.adapt_milestones):
            if any(not 0.0 < m < 1.0 for m in ms) or any(a >= b for a, b in zip(ms, ms[1:])):
                raise ConfigError("milestones must be strictly increasing fractions in (0, 1)")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if self.batch_size < 1 or self.pretrain_epochs < 0 or self.adapt_epochs < 0:
            raise ConfigError("batch size must be positive and epoch counts non-negative")
        if self.lr <= 0 or (self.adapt_lr or 1.0) <= 0 or (self.disc_lr or 1.0) <= 0:
            raise ConfigError("learning rates must be positive")

    def extractor_config(self, input_dim: int) -> ExtractorConfig:
        return ExtractorConfig(input_dim, self.hidden, self.feature_dim, self.slope, self.model_seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["adapt_milestones"] = list(self.adapt_milestones)
        d["hidden"] = list(self.hidden)
        return d


def milestone_epochs(total: int, milestones) -> list[int]:
    return [int(round(m * total)) for m in milestones]


def lr_at(epoch: int, total: int, config: TrainConfig, phase: str = "pretrain") -> float:
    """Staircase schedule: multiply by ``decay`` at each milestone epoch."""
    if phase == "pretrain":
        base, milestones = config.lr, config.milestones
    else:
        base, milestones = config.adapt_lr or config.lr, config.adapt_milestones
    passed = sum(epoch >= m for m in milestone_epochs(total, milestones))
    return base * config.decay ** passed


@dataclass
class RunLog:
    phase: str
    records: list[dict] = field(default_factory=list)
    checkpoints: dict[str, str] = field(default_factory=dict)

    def append(self, record: dict) -> None:
        if record["epoch"] != len(self.records):
            raise ContractError("epochs must be logged contiguously from 0")
        self.records.append(record)

    def to_jsonl(self) -> str:
        return "".join(json.dumps({"phase": self.phase, **r}, sort_keys=True) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())


def _set_lr(opt: Adam | None, lr: float) -> None:
    if opt is not None:
        opt.lr = lr


# ---------------------------------------------------------------------------
# pretraining
# ---------------------------------------------------------------------------

def pretrain(source: DatasetSplit, config: TrainConfig) -> tuple[Checkpoint, RunLog]:
    """Supervised training of extractor + classifier with label-smoothed CE."""
    if len(source) == 0:
        raise ConfigError("cannot pretrain on an empty split")
    x = source.flat_pixels()
    labels, ids = source.class_labels()
    if len(ids) < 2:
        raise ConfigError("source split needs at least two identities")
    extractor = Extractor(config.extractor_config(x.shape[1]))
    classifier = ClassifierHead(config.feature_dim, len(ids), config.model_seed + 1)
    params = extractor.parameters() + classifier.parameters()
    opt = Adam(params, lr=config.lr)
    targets = L.smooth_target_matrix(labels, len(ids), config.weights.epsilon)
    rng = np.random.default_rng([config.data_seed, 1])
    log = RunLog("pretrain")
    batch = min(config.batch_size, len(source))
    for epoch in range(config.pretrain_epochs):
        lr = lr_at(epoch, config.pretrain_epochs, config)
        _set_lr(opt, lr)
        ces = []
        for idx in epoch_batches(len(source), batch, rng):
            logits = classifier(extract(extractor, x[idx]))
            loss = L.ce_smoothed(logits, targets[idx])
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            ces.append(loss.item())
        log.append({"epoch": epoch, "lr": lr, "ce": float(np.mean(ces)),
                    "checksum": checksum(extractor)})
    meta = {"phase": "pretrain", "source_ids": ids, "config": config.to_dict()}
    return Checkpoint(extractor, classifier, meta), log


def source_ce(extractor: Extractor, classifier: ClassifierHead, x: np.ndarray, labels: np.ndarray,
              epsilon: float) -> float:
    logits = classifier(extract(extractor, x))
    return L.ce_smoothed(logits, L.smooth_target_matrix(labels, classifier.num_classes, epsilon)).item()


# ---------------------------------------------------------------------------
# adaptation
# ---------------------------------------------------------------------------

@dataclass
class AdaptState:
    teacher: Extractor
    student: Extractor
    disc: Discriminator
    student_opt: Adam
    disc_opt: Adam
    classifier: ClassifierHead | None = None


def adversarial_round(state: AdaptState, clear: np.ndarray, hazy: np.ndarray,
                      config: TrainConfig, clear_ids=None, hazy_ids=None,
                      replay: tuple[np.ndarray, np.ndarray] | None = None) -> dict:
    """One discriminator update then one student update on an index-paired batch.

    Returns the loss values seen by the student step (``ce`` is 0 without replay).
    """
    clear, hazy = np.asarray(clear, float), np.asarray(hazy, float)
    if clear.shape != hazy.shape:
        raise ContractError(f"clear batch {clear.shape} and hazy batch {hazy.shape} are not paired")
    if clear_ids is not None and not np.array_equal(np.asarray(clear_ids), np.asarray(hazy_ids)):
        raise ContractError("clear and hazy batches are not index-paired")
    w = config.weights
    n = clear.shape[0]

    # teacher features are constants: frozen parameters, no gradient path
    f_t = extract(state.teacher, clear)

    # discriminator step, student features detached
    f_s_detached = extract(state.student, hazy).detach()
    logits = discriminate(state.disc, ad.concat([f_t, f_s_detached], axis=0))
    domain = np.concatenate([np.full(n, L.CLEAR), np.full(n, L.HAZY)])
    d_loss = L.disc_ce(logits, domain)
    state.disc_opt.zero_grad()
    ad.backward(d_loss)
    state.disc_opt.step()

    # student step, discriminator frozen
    f_s = extract(state.student, hazy)
    isl = L.isl_loss(L.pairwise_l2_matrix(f_t), L.pairwise_l2_matrix(f_s))
    h_t = discriminate(state.disc, f_t)
    idkl = L.idkl_loss(h_t, discriminate(state.disc, f_s), w.delta)
    lam1 = w.lambda1 if config.use_isl else 0.0
    lam2 = w.lambda2 if config.use_idkl else 0.0
    terms = []
    if config.use_isl:
        terms.append(ad.mul(isl, lam1))
    if config.use_idkl:
        terms.append(ad.mul(idkl, lam2))
    ce_value = 0.0
    if replay is not None:
        if state.classifier is None:
            raise ContractError("source replay needs the pretrained classifier")
        rx, rlabels = replay
        ce = L.ce_smoothed(state.classifier(extract(state.student, rx)),
                           L.smooth_target_matrix(rlabels, state.classifier.num_classes, w.epsilon))
        ce_value = ce.item()
        terms.append(ce)
    if terms:
        total = terms[0]
        for t in terms[1:]:
            total = ad.add(total, t)
        state.student_opt.zero_grad()
        ad.backward(total)
        state.student_opt.step()
        # gradients that leaked into D through the student path are discarded
        state.disc_opt.zero_grad()
    return {
        "disc_ce": d_loss.item(),
        "isl": isl.item(),
        "idkl": idkl.item(),
        "ce": ce_value,
        "total": ce_value + lam1 * isl.item() + lam2 * idkl.item(),
    }


def _cycle_batches(n: int, batch: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        yield from epoch_batches(n, batch, rng)


def adapt(ckpt: Checkpoint, target: DatasetSplit, haze: HazeParams | None, config: TrainConfig,
          depth: DepthSource = "ramp", source: DatasetSplit | None = None
          ) -> tuple[Checkpoint, RunLog]:
    """Train a student copy of ``ckpt`` on clear/hazy target pairs against a frozen teacher."""
    if haze is None:
        raise ConfigError("adaptation needs haze parameters")
    if len(target) == 0:
        raise ConfigError("empty target split")
    if config.source_ce_replay and (source is None or ckpt.classifier is None):
        raise ConfigError("source_ce_replay needs a labeled source split and a classifier")
    hazy, _ = hazify_dataset(target, depth, haze, stream=0)
    clear_x, hazy_x = target.flat_pixels(), hazy.flat_pixels()
    pair_ids = target.person_ids

    teacher = clone_frozen(ckpt.extractor)
    student = clone_trainable(ckpt.extractor)
    disc = Discriminator(ckpt.extractor.config.feature_dim, config.disc_hidden,
                         config.slope, seed=config.model_seed + 2)
    classifier = clone_trainable(ckpt.classifier) if config.source_ce_replay else None
    student_params = student.parameters() + (classifier.parameters() if classifier else [])
    state = AdaptState(teacher, student, disc, Adam(student_params, lr=config.lr),
                       Adam(disc.parameters(), lr=config.lr), classifier)

    replay_stream = None
    if config.source_ce_replay:
        src_x = source.flat_pixels()
        src_labels, src_ids = source.class_labels()
        if src_ids != list(ckpt.meta.get("source_ids", src_ids)):
            raise ConfigError("replay source identities differ from the pretraining source")
        replay_stream = _cycle_batches(len(source), min(config.batch_size, len(source)),
                                       np.random.default_rng([config.data_seed, 3]))

    disc_scale = (config.disc_lr or config.adapt_lr or config.lr) / (config.adapt_lr or config.lr)
    teacher_sum = checksum(teacher)
    rng = np.random.default_rng([config.data_seed, 2])
    batch = min(config.batch_size, len(target))
    log = RunLog("adapt")
    for epoch in range(config.adapt_epochs):
        lr = lr_at(epoch, config.adapt_epochs, config, "adapt")
        _set_lr(state.student_opt, lr)
        _set_lr(state.disc_opt, lr * disc_scale)
        rows = []
        for idx in epoch_batches(len(target), batch, rng):
            replay = None
            if replay_stream is not None:
                ridx = next(replay_stream)
                replay = (src_x[ridx], src_labels[ridx])
            rows.append(adversarial_round(state, clear_x[idx], hazy_x[idx], config,
                                          pair_ids[idx], pair_ids[idx], replay))
        if checksum(teacher) != teacher_sum:
            raise ContractError("teacher parameters changed during adaptation")
        record = {"epoch": epoch, "lr": lr,
                  "lambda1": config.weights.lambda1 if config.use_isl else 0.0,
                  "lambda2": config.weights.lambda2 if config.use_idkl else 0.0,
                  "teacher_checksum": teacher_sum, "student_checksum": checksum(student)}
        for key in ("disc_ce", "isl", "idkl", "ce", "total"):
            record[key] = float(np.mean([r[key] for r in rows]))
        log.append(record)
    meta = dict(ckpt.meta)
    meta.update({"phase": "adapt", "adapt_config": config.to_dict(), "haze": asdict(haze),
                 "teacher_checksum": teacher_sum})
    return Checkpoint(student, ckpt.classifier if classifier is None else classifier, meta), log
