"""Retrieval evaluation: ranking, CMC, mAP and positive/negative score statistics."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DatasetSplit
from .errors import ConfigError, DimensionError
from .models import MLP, extract

logger = logging.getLogger(__name__)

DEFAULT_RANKS = (1, 5, 10)
HIST_BINS = 100


@dataclass
class RankingResult:
    query: int
    order: np.ndarray  # gallery indices, best first, junk removed
    relevant: np.ndarray  # bool flag per position of ``order``
    excluded: np.ndarray  # same-id same-camera gallery indices

    def first_hit(self) -> int:
        """1-based position of the first relevant item."""
        return int(np.argmax(self.relevant)) + 1


@dataclass
class EvalReport:
    cmc: dict[int, float]
    mAP: float
    ap: list[float]
    pos_mean: float
    pos_std: float
    neg_mean: float
    neg_std: float
    overlap: float
    n_queries: int
    n_dropped: int
    pos_hist: list[float] = field(default_factory=list)
    neg_hist: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "cmc": {str(k): v for k, v in self.cmc.items()},
            "mAP": self.mAP,
            "pos_mean": self.pos_mean,
            "pos_std": self.pos_std,
            "neg_mean": self.neg_mean,
            "neg_std": self.neg_std,
            "overlap": self.overlap,
            "n_queries": self.n_queries,
            "n_dropped": self.n_dropped,
        }

    def to_json(self) -> str:
        doc = asdict(self)
        doc["cmc"] = {str(k): v for k, v in self.cmc.items()}
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def l2_normalize(features: np.ndarray) -> tuple[np.ndarray, int]:
    """Unit-norm rows; zero rows stay zero.  Returns the normalized matrix and
    the number of zero rows."""
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    zero = (norms[:, 0] == 0)
    safe = np.where(norms == 0, 1.0, norms)
    return features / safe, int(zero.sum())


def embed_split(model: MLP, split: DatasetSplit | np.ndarray) -> np.ndarray:
    pixels = split.flat_pixels() if isinstance(split, DatasetSplit) else np.asarray(split)
    if pixels.shape[0] == 0:
        return np.zeros((0, model.widths[-1]))
    feats, zeros = l2_normalize(extract(model, pixels).data)
    if zeros:
        logger.warning("%d zero feature vectors left unnormalized", zeros)
    return feats


def euclidean_distances(q: np.ndarray, g: np.ndarray) -> np.ndarray:
    diff = q[:, None, :] - g[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def rank_queries(q_feats: np.ndarray, q_ids, q_cams, g_feats: np.ndarray, g_ids, g_cams,
                 drop_without_positive: bool = True) -> list[RankingResult]:
    """Gallery ordered by ascending distance for each query (ties by gallery index).

    Same-id same-camera gallery items are excluded.  Queries left with no
    positive are dropped with a warning unless ``drop_without_positive`` is off.
    """
    q_feats, g_feats = np.asarray(q_feats, float), np.asarray(g_feats, float)
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    if g_feats.shape[0] == 0:
        raise ConfigError("empty gallery")
    if q_feats.shape[1:] != g_feats.shape[1:]:
        raise DimensionError(f"query dim {q_feats.shape[1:]} != gallery dim {g_feats.shape[1:]}")
    dist = euclidean_distances(q_feats, g_feats)
    results, dropped = [], 0
    for i in range(q_feats.shape[0]):
        junk = (g_ids == q_ids[i]) & (g_cams == q_cams[i])
        order = np.lexsort((np.arange(len(g_ids)), dist[i]))
        order = order[~junk[order]]
        relevant = g_ids[order] == q_ids[i]
        if not relevant.any() and drop_without_positive:
            dropped += 1
            continue
        results.append(RankingResult(i, order, relevant, np.flatnonzero(junk)))
    if dropped:
        logger.warning("%d queries have no cross-camera positive and were dropped", dropped)
    return results


def cmc(results: Sequence[RankingResult], ranks: Sequence[int] = DEFAULT_RANKS) -> dict[int, float]:
    if not results:
        return {k: 0.0 for k in ranks}
    hits = np.array([r.first_hit() for r in results])
    return {k: float(np.mean(hits <= k)) for k in ranks}


def average_precision(relevant: np.ndarray) -> float:
    relevant = np.asarray(relevant, dtype=bool)
    positions = np.flatnonzero(relevant) + 1
    if positions.size == 0:
        return 0.0
    precision_at_hits = np.arange(1, positions.size + 1) / positions
    return float(precision_at_hits.mean())


def map_score(results: Sequence[RankingResult]) -> float:
    if not results:
        return 0.0
    return float(np.mean([average_precision(r.relevant) for r in results]))


def histogram_overlap(pos_hist: np.ndarray, neg_hist: np.ndarray) -> float:
    return float(np.minimum(pos_hist, neg_hist).sum())


def _mass_histogram(scores: np.ndarray) -> np.ndarray:
    counts, _ = np.histogram(np.clip(scores, -1.0, 1.0), bins=HIST_BINS, range=(-1.0, 1.0))
    total = counts.sum()
    return counts / total if total else counts.astype(float)


def similarity_distributions(q_feats: np.ndarray, g_feats: np.ndarray, q_ids, q_cams,
                             g_ids, g_cams) -> dict:
    """Cosine scores of positive and negative query-gallery pairs (junk excluded)."""
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    scores = np.asarray(q_feats) @ np.asarray(g_feats).T
    same = q_ids[:, None] == g_ids[None, :]
    junk = same & (q_cams[:, None] == g_cams[None, :])
    pos = scores[same & ~junk]
    neg = scores[~same]
    pos_hist, neg_hist = _mass_histogram(pos), _mass_histogram(neg)
    stat = lambda x, f: float(f(x)) if x.size else 0.0  # noqa: E731
    return {
        "pos": pos, "neg": neg,
        "pos_mean": stat(pos, np.mean), "pos_std": stat(pos, np.std),
        "neg_mean": stat(neg, np.mean), "neg_std": stat(neg, np.std),
        "pos_hist": pos_hist, "neg_hist": neg_hist,
        "overlap": histogram_overlap(pos_hist, neg_hist),
    }


def evaluate_features(q_feats, q_ids, q_cams, g_feats, g_ids, g_cams,
                      ranks: Sequence[int] = DEFAULT_RANKS) -> tuple[EvalReport, list[RankingResult]]:
    results = rank_queries(q_feats, q_ids, q_cams, g_feats, g_ids, g_cams)
    dist = similarity_distributions(q_feats, g_feats, q_ids, q_cams, g_ids, g_cams)
    report = EvalReport(
        cmc=cmc(results, ranks),
        mAP=map_score(results),
        ap=[average_precision(r.relevant) for r in results],
        pos_mean=dist["pos_mean"], pos_std=dist["pos_std"],
        neg_mean=dist["neg_mean"], neg_std=dist["neg_std"],
        overlap=dist["overlap"],
        n_queries=len(results),
        n_dropped=len(q_ids) - len(results),
        pos_hist=dist["pos_hist"].tolist(),
        neg_hist=dist["neg_hist"].tolist(),
    )
    return report, results


def evaluate_model(model: MLP, query: DatasetSplit, gallery: DatasetSplit,
                   ranks: Sequence[int] = DEFAULT_RANKS) -> tuple[EvalReport, list[RankingResult]]:
    return evaluate_features(embed_split(model, query), query.person_ids, query.camera_ids,
                             embed_split(model, gallery), gallery.person_ids, gallery.camera_ids, ranks)


# ---------------------------------------------------------------------------
# dumps for offline inspection
# ---------------------------------------------------------------------------

def write_rankings_csv(path: str | Path, results: Sequence[RankingResult], query: DatasetSplit,
                       gallery: DatasetSplit, top_k: int = 8) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query"] + [f"top{i + 1}" for i in range(top_k)]
                        + [f"match{i + 1}" for i in range(top_k)])
        for r in results:
            top = r.order[:top_k]
            writer.writerow([query.samples[r.query].name]
                            + [gallery.samples[j].name for j in top]
                            + [int(f) for f in r.relevant[:top_k]])


def write_histograms(folder: str | Path, report: EvalReport) -> None:
    folder = Path(folder)
    centers = np.linspace(-1.0, 1.0, HIST_BINS + 1)
    centers = (centers[:-1] + centers[1:]) / 2.0
    for tag, hist in (("pos", report.pos_hist), ("neg", report.neg_hist)):
        lines = [f"{c:.4f}\t{h:.6f}" for c, h in zip(centers, hist)]
        (folder / f"hist_{tag}.tsv").write_text("score\tmass\n" + "\n".join(lines) + "\n")
