"""Acceptance criteria, one check per criterion.

Each check returns ``(passed, detail)``; the pytest wrappers record a
``criterion N: PASS|FAIL`` line shown in the terminal summary.  Running the file
directly (``python3 tests/test_acceptance.py``) prints the same lines.
"""
from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hazereid import autodiff as ad  # noqa: E402
from hazereid import evaluation as ev  # noqa: E402
from hazereid import haze, losses as L, trainer  # noqa: E402
from hazereid.autodiff import Tensor  # noqa: E402
from hazereid.config import ExperimentSpec  # noqa: E402
from hazereid.experiment import run_ablation, toy_data  # noqa: E402
from hazereid.haze import HazeParams  # noqa: E402
from hazereid.models import (ClassifierHead, Discriminator, ExtractorConfig, checksum,  # noqa: E402
                             clone_frozen, clone_trainable, discriminate, extract, init_model)

from oracles import retrieval_oracle  # noqa: E402

FD_TOL = 1e-4
FD_STEP = 1e-5


# ---------------------------------------------------------------------------
# 1. gradient suite
# ---------------------------------------------------------------------------

def _gradient_cases(seed: int, B: int):
    """Closures for each objective over small networks with all coordinates checked."""
    rng = np.random.default_rng([seed, B])
    cfg = ExtractorConfig(input_dim=12, hidden=(6,), feature_dim=4, slope=0.1, seed=seed)
    teacher = init_model(cfg)
    student = clone_trainable(teacher)
    for p in student.parameters():  # move the student off the teacher
        p.data = p.data + rng.normal(0, 0.05, p.shape)
    disc = Discriminator(4, hidden=5, slope=0.1, seed=seed + 100)
    head = ClassifierHead(4, 5, seed=seed + 200)
    xc = rng.random((B, 12))
    xh = 0.6 * xc + 0.36
    xs = rng.random((B, 12))
    targets = L.smooth_target_matrix(rng.integers(0, 5, B), 5, 0.1)
    domain = np.concatenate([np.full(B, L.CLEAR), np.full(B, L.HAZY)])
    w = L.LossWeights()

    def ce_term():
        return L.ce_smoothed(head(extract(student, xs)), targets)

    def isl_term():
        return L.isl_loss(L.pairwise_l2_matrix(extract(teacher, xc)),
                          L.pairwise_l2_matrix(extract(student, xh)))

    def disc_term():
        feats = ad.concat([extract(teacher, xc), extract(student, xh).detach()], axis=0)
        return L.disc_ce(discriminate(disc, feats), domain)

    frozen_d = clone_frozen(disc)

    def idkl_term():
        return L.idkl_loss(discriminate(frozen_d, extract(teacher, xc)),
                           discriminate(frozen_d, extract(student, xh)), w.delta)

    def total_term():
        return L.total_student_loss(ce_term(), isl_term(), idkl_term(), w)

    # ISL is checked through both extractors, so the teacher copy is trainable here;
    # the total loss only moves student-side parameters
    return {
        "ce": (ce_term, student.parameters() + head.parameters()),
        "isl": (isl_term, teacher.parameters() + student.parameters()),
        "disc": (disc_term, disc.parameters()),
        "idkl": (idkl_term, student.parameters()),
        "total": (total_term, student.parameters() + head.parameters()),
    }, frozen_d


def check_gradients():
    start = time.perf_counter()
    worst: dict[str, float] = {}
    leaked = False
    for seed in range(3):
        for B in (1, 2, 8):
            cases, frozen_d = _gradient_cases(seed, B)
            for name, (f, params) in cases.items():
                err = ad.finite_difference_check(f, params, h=FD_STEP)
                worst[name] = max(worst.get(name, 0.0), err)
            leaked |= any(p.grad is not None for p in frozen_d.parameters())
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= FD_TOL and elapsed < 30 and not leaked
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f" time={elapsed:.1f}s"
    return ok, detail


# ---------------------------------------------------------------------------
# 2. haze exactness
# ---------------------------------------------------------------------------

def check_haze():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    J = rng.random((10, 100, 3))
    depth = rng.random((10, 100))
    A = 0.9
    worst_formula = worst_contraction = 0.0
    for beta in (1.0, 1.5, 2.0):
        t = haze.transmission(depth, beta)
        I = haze.compose_haze(J, t, A)
        for y in range(10):
            for x in range(100):
                for c in range(3):
                    ref = J[y, x, c] * t[y, x] + A * (1.0 - t[y, x])
                    worst_formula = max(worst_formula, abs(I[y, x, c] - ref))
        contraction = np.abs(np.abs(I - A) - t[..., None] * np.abs(J - A))
        worst_contraction = max(worst_contraction, float(contraction.max()))
    img = rng.random((8, 8, 3))
    ramp = haze.synthetic_depth("ramp", 8, 8)
    sweep = [float(np.abs(haze.compose_haze(img, haze.transmission(ramp, b), A) - img).mean())
             for b in (1.0, 1.25, 1.5, 1.75, 2.0)]
    monotone = all(a <= b for a, b in zip(sweep, sweep[1:]))
    elapsed = time.perf_counter() - start
    # "exact" contraction is checked to a few ulps of values in [0, 1]
    ok = worst_formula <= 1e-12 and worst_contraction <= 1e-15 and monotone and elapsed < 5
    detail = (f"formula={worst_formula:.1e} contraction={worst_contraction:.1e} "
              f"sweep={[round(s, 4) for s in sweep]} time={elapsed:.2f}s")
    return ok, detail


# ---------------------------------------------------------------------------
# 3. loss identities
# ---------------------------------------------------------------------------

def check_losses():
    rng = np.random.default_rng(0)
    M = L.pairwise_l2_matrix(Tensor(rng.normal(size=(6, 3))))
    isl_self = L.isl_loss(M, M).item()
    isl_example = L.isl_loss(Tensor([[0.0, 5.0], [5.0, 0.0]]), Tensor(np.zeros((2, 2)))).item()
    h = Tensor(rng.normal(size=(5, 2)))
    idkl_self = L.idkl_loss(h, h, 10.0).item()
    idkl_closed = L.idkl_loss(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]]), 1.0).item()
    closed = (math.e - 1) / (math.e + 1)
    row_err = max(abs(L.smooth_targets(c, C, eps).sum() - 1.0)
                  for C in (2, 5, 751) for c in (0, C - 1) for eps in (0.0, 0.1, 0.5))
    ce = L.ce_smoothed(Tensor(np.zeros((4, 5))), L.smooth_target_matrix([0, 1, 2, 4], 5, 0.1)).item()
    ok = (isl_self == 0.0 and isl_example == 2.5 and idkl_self == 0.0
          and abs(idkl_closed - closed) <= 1e-9 and row_err <= 1e-12
          and abs(ce - 1.60944) <= 1e-5 and abs(ce - math.log(5)) <= 1e-9)
    detail = (f"isl(M,M)={isl_self} isl2x2={isl_example} idkl(h,h)={idkl_self} "
              f"idkl={idkl_closed:.11f} rows={row_err:.1e} ce={ce:.10f}")
    return ok, detail


# ---------------------------------------------------------------------------
# 4. retrieval oracle
# ---------------------------------------------------------------------------

def _instance(rng, k):
    n_q, n_g = int(rng.integers(1, 8)), int(rng.integers(1, 21))
    dim = int(rng.integers(1, 5))
    if k % 2:  # small integer grid: many exact ties
        q, g = rng.integers(-2, 3, (n_q, dim)).astype(float), rng.integers(-2, 3, (n_g, dim)).astype(float)
    else:
        q, g = rng.normal(size=(n_q, dim)), rng.normal(size=(n_g, dim))
    n_ids, n_cams = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    return (q, rng.integers(0, n_ids, n_q), rng.integers(1, n_cams + 1, n_q),
            g, rng.integers(0, n_ids, n_g), rng.integers(1, n_cams + 1, n_g))


def check_retrieval():
    rng = np.random.default_rng(2024)
    ranks = tuple(range(1, 21))
    mismatches = non_monotone = evaluated = 0
    for k in range(200):
        inst = _instance(rng, k)
        results = ev.rank_queries(*inst)
        rates, mAP = ev.cmc(results, ranks), ev.map_score(results)
        o_rates, o_map, _, _ = retrieval_oracle(*inst, ranks=ranks)
        evaluated += bool(results)
        if rates != o_rates or abs(mAP - o_map) > 1e-12:
            mismatches += 1
        vals = [rates[r] for r in ranks]
        non_monotone += any(a > b for a, b in zip(vals, vals[1:]))
    single = all(ev.average_precision(np.eye(30)[k - 1]) == 1.0 / k for k in range(1, 31))
    ok = mismatches == 0 and non_monotone == 0 and single
    detail = (f"instances=200 with_queries={evaluated} mismatches={mismatches} "
              f"non_monotone={non_monotone} ap_1/k={single}")
    return ok, detail


# ---------------------------------------------------------------------------
# 5. frozen teacher and no-op adaptation
# ---------------------------------------------------------------------------

def check_frozen_and_noop():
    spec = ExperimentSpec()
    data = toy_data(spec, 0)
    cfg = spec.train_config(0)
    ckpt, _ = trainer.pretrain(data.source, cfg)
    before = checksum(ckpt.extractor)
    _, log = trainer.adapt(ckpt, data.target, spec.haze_params(0), cfg)
    per_epoch = {r["teacher_checksum"] for r in log.records}
    frozen = per_epoch == {before} and checksum(ckpt.extractor) == before
    from dataclasses import replace
    noop_cfg = replace(cfg, use_isl=False, use_idkl=False, source_ce_replay=False)
    student, _ = trainer.adapt(ckpt, data.target, spec.haze_params(0), noop_cfg)
    noop = all(a.data.tobytes() == b.data.tobytes()
               for a, b in zip(student.extractor.parameters(), ckpt.extractor.parameters()))
    return frozen and noop, f"teacher_constant={frozen} epochs={len(log.records)} noop_bit_identical={noop}"


# ---------------------------------------------------------------------------
# 6 and 7. toy ablation and determinism
# ---------------------------------------------------------------------------

_ABLATION: dict = {}


def ablation_run():
    if "table" not in _ABLATION:
        cpu = time.process_time()
        _ABLATION["table"] = run_ablation(ExperimentSpec())
        _ABLATION["cpu"] = time.process_time() - cpu
    return _ABLATION["table"], _ABLATION["cpu"]


def check_ablation():
    table, cpu = ablation_run()
    avg = table.averages()
    base, isl, idkl, both = (avg[k] for k in ("baseline", "+ISL", "+IDKL", "+ISL+IDKL"))
    gain = 100 * (both["rank1"] - base["rank1"])
    ok = (gain >= 10.0 and isl["rank1"] > base["rank1"] and idkl["rank1"] > base["rank1"]
          and both["overlap"] < base["overlap"] and cpu < 300)
    detail = (f"rank1 base={100 * base['rank1']:.2f} +ISL={100 * isl['rank1']:.2f} "
              f"+IDKL={100 * idkl['rank1']:.2f} both={100 * both['rank1']:.2f} (gain {gain:+.2f}) "
              f"overlap base={base['overlap']:.4f} both={both['overlap']:.4f} cpu={cpu:.1f}s")
    return ok, detail


def check_determinism():
    table, _ = ablation_run()
    again = run_ablation(ExperimentSpec())
    same = table.to_json().encode() == again.to_json().encode()
    return same, f"byte_identical={same} bytes={len(table.to_json())}"


CRITERIA = [
    (1, "gradient suite", check_gradients),
    (2, "haze exactness", check_haze),
    (3, "loss identities", check_losses),
    (4, "retrieval oracle", check_retrieval),
    (5, "frozen teacher and no-op", check_frozen_and_noop),
    (6, "toy ablation", check_ablation),
    (7, "determinism", check_determinism),
]


def _line(num, title, ok, detail):
    return f"criterion {num} ({title}): {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("num, title, check", CRITERIA, ids=[f"c{n}" for n, _, _ in CRITERIA])
def test_criterion(num, title, check, acceptance_log):
    ok, detail = check()
    line = _line(num, title, ok, detail)
    acceptance_log.append(line)
    print(line)
    assert ok, line


if __name__ == "__main__":
    import logging
    logging.disable(logging.WARNING)
    failed = 0
    for num, title, check in CRITERIA:
        ok, detail = check()
        failed += not ok
        print(_line(num, title, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
