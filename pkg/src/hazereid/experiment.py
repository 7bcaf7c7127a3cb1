"""Toy ablation: one pretrain per seed, then baseline / +ISL / +IDKL / +both
evaluated on the hazy target query and gallery."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import trainer
from .config import ExperimentSpec
from .data import DatasetSplit, generate_synthetic_identities, split_query_gallery
from .evaluation import EvalReport, evaluate_model
from .haze import hazify_dataset

logger = logging.getLogger(__name__)

# name -> (use_isl, use_idkl); the baseline is the unadapted teacher
CONFIGS = {
    "baseline": None,
    "+ISL": (True, False),
    "+IDKL": (False, True),
    "+ISL+IDKL": (True, True),
}
METRICS = ("rank1", "rank5", "rank10", "mAP", "overlap")
TEST_ID_GAP = 1000
# haze streams per role so query and gallery draw independent betas
STREAMS = {"train": 0, "query": 1, "gallery": 2}


@dataclass
class ToyData:
    source: DatasetSplit
    target: DatasetSplit
    query: DatasetSplit
    gallery: DatasetSplit


def toy_data(spec: ExperimentSpec, seed: int) -> ToyData:
    """Disjoint source, target-train and target-test identities for one seed."""
    gen = lambda n, s, offset, role: generate_synthetic_identities(  # noqa: E731
        n, spec.per_id, spec.cams, spec.height, spec.width, s, offset, role)
    source = gen(spec.source_ids, seed * 10 + 1, 0, "train")
    target = gen(spec.target_ids, seed * 10 + 2, TEST_ID_GAP, "train")
    test = gen(spec.target_ids, seed * 10 + 2, 2 * TEST_ID_GAP, "gallery")
    query, gallery = split_query_gallery(test, spec.queries_per_id, seed)
    return ToyData(source, target, query, gallery)


@dataclass
class AblationRow:
    config: str
    seed: int
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    overlap: float

    @classmethod
    def from_report(cls, config: str, seed: int, report: EvalReport) -> "AblationRow":
        return cls(config, seed, report.cmc[1], report.cmc[5], report.cmc[10],
                   report.mAP, report.overlap)


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)
    spec: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.rows})

    def averages(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in CONFIGS:
            sel = [r for r in self.rows if r.config == name]
            if sel:
                out[name] = {m: float(np.mean([getattr(r, m) for r in sel])) for m in METRICS}
        return out

    def to_json(self) -> str:
        doc = {"spec": self.spec, "rows": [asdict(r) for r in self.rows],
               "average": self.averages()}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "AblationTable":
        doc = json.loads(text)
        return cls([AblationRow(**r) for r in doc["rows"]], doc.get("spec", {}))

    def to_text(self) -> str:
        head = f"{'config':<11} {'seed':>4} " + " ".join(f"{m:>8}" for m in METRICS)
        lines = [head, "-" * len(head)]
        fmt = lambda vals: " ".join(  # noqa: E731
            f"{vals[m]:8.4f}" if m == "overlap" else f"{100 * vals[m]:8.2f}" for m in METRICS)
        for r in self.rows:
            lines.append(f"{r.config:<11} {r.seed:>4} " + fmt(asdict(r)))
        lines.append("-" * len(head))
        for name, vals in self.averages().items():
            lines.append(f"{name:<11} {'avg':>4} " + fmt(vals))
        return "\n".join(lines) + "\n"


def hazy_eval_splits(spec: ExperimentSpec, query: DatasetSplit, gallery: DatasetSplit,
                     seed: int) -> tuple[DatasetSplit, DatasetSplit]:
    params = spec.haze_params(seed)
    qh, _ = hazify_dataset(query, spec.depth, params, STREAMS["query"], spec.workers)
    gh, _ = hazify_dataset(gallery, spec.depth, params, STREAMS["gallery"], spec.workers)
    return qh, gh


def run_seed(spec: ExperimentSpec, seed: int, data: ToyData) -> list[AblationRow]:
    base_cfg = spec.train_config(seed)
    ckpt, _ = trainer.pretrain(data.source, base_cfg)
    qh, gh = hazy_eval_splits(spec, data.query, data.gallery, seed)
    rows = []
    for name, flags in CONFIGS.items():
        if flags is None:
            model = ckpt.extractor
        else:
            cfg = _with_flags(base_cfg, *flags)
            student, _ = trainer.adapt(ckpt, data.target, spec.haze_params(seed), cfg,
                                       depth=spec.depth, source=data.source)
            model = student.extractor
        report, _ = evaluate_model(model, qh, gh)
        rows.append(AblationRow.from_report(name, seed, report))
        logger.info("seed %d %-10s rank1 %.3f mAP %.3f", seed, name, report.cmc[1], report.mAP)
    return rows


def _with_flags(cfg: trainer.TrainConfig, use_isl: bool, use_idkl: bool) -> trainer.TrainConfig:
    return replace(cfg, use_isl=use_isl, use_idkl=use_idkl)


def run_ablation(spec: ExperimentSpec, seeds=None,
                 data_for_seed: Callable[[int], ToyData] | None = None) -> AblationTable:
    """Four configurations per seed from one shared pretrain."""
    seeds = list(spec.seeds if seeds is None else seeds)
    data_for_seed = data_for_seed or (lambda s: toy_data(spec, s))
    table = AblationTable(spec=_spec_dict(spec, seeds))
    for seed in seeds:
        table.rows.extend(run_seed(spec, seed, data_for_seed(seed)))
    return table


def _spec_dict(spec: ExperimentSpec, seeds) -> dict:
    d = asdict(spec)
    d["seeds"] = list(seeds)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
