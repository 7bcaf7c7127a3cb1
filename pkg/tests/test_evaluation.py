import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hazereid import evaluation as ev
from hazereid.data import generate_synthetic_identities, split_query_gallery
from hazereid.errors import ConfigError
from hazereid.models import ExtractorConfig, init_model

from oracles import retrieval_oracle


def random_instance(rng, n_q, n_g, n_ids=4, n_cams=3, dim=3):
    q = ev.l2_normalize(rng.normal(size=(n_q, dim)))[0]
    g = ev.l2_normalize(rng.normal(size=(n_g, dim)))[0]
    return (q, rng.integers(0, n_ids, n_q), rng.integers(1, n_cams + 1, n_q),
            g, rng.integers(0, n_ids, n_g), rng.integers(1, n_cams + 1, n_g))


def test_l2_normalize():
    rng = np.random.default_rng(0)
    f, zeros = ev.l2_normalize(np.vstack([rng.normal(size=(4, 5)), np.zeros((1, 5))]))
    np.testing.assert_allclose(np.linalg.norm(f[:4], axis=1), 1.0, atol=1e-12)
    assert zeros == 1 and np.all(f[4] == 0)


def test_cosine_equals_distance_identity():
    f = ev.l2_normalize(np.random.default_rng(1).normal(size=(6, 4)))[0]
    d = ev.euclidean_distances(f, f)
    np.testing.assert_allclose(f @ f.T, 1 - 0.5 * d ** 2, atol=1e-12)


def test_embed_duplicates_identical():
    model = init_model(ExtractorConfig())
    split = generate_synthetic_identities(2, 2, 2)
    split.samples.append(split.samples[0])
    f = ev.embed_split(model, split)
    assert f[0].tobytes() == f[-1].tobytes()


def test_cross_camera_duplicate_ranks_first():
    rng = np.random.default_rng(2)
    g = ev.l2_normalize(rng.normal(size=(6, 4)))[0]
    q = g[3:4].copy()
    g_ids = np.array([0, 1, 2, 7, 3, 4])
    res = ev.rank_queries(q, [7], [1], g, g_ids, [1, 1, 1, 2, 1, 1])
    assert res[0].order[0] == 3 and res[0].first_hit() == 1


def test_same_camera_positive_is_junk(caplog):
    g = np.eye(3)
    res = ev.rank_queries(np.eye(3)[:1], [5], [1], g, [5, 1, 2], [1, 1, 1])
    assert res == []
    assert "dropped" in caplog.text
    res = ev.rank_queries(np.eye(3)[:1], [5], [1], g, [5, 5, 2], [1, 2, 1])
    assert 0 not in res[0].order and res[0].excluded.tolist() == [0]


def test_empty_gallery():
    with pytest.raises(ConfigError):
        ev.rank_queries(np.zeros((1, 2)), [1], [1], np.zeros((0, 2)), [], [])


def test_ties_broken_by_index():
    g = np.array([[1.0, 0.0]] * 4)
    res = ev.rank_queries(np.array([[0.0, 1.0]]), [1], [1], g, [2, 1, 3, 1], [1, 2, 1, 2])
    assert res[0].order.tolist() == [0, 1, 2, 3]


def _result(flags):
    flags = np.array(flags, dtype=bool)
    return ev.RankingResult(0, np.arange(flags.size), flags, np.array([], int))


def test_cmc_examples():
    rates = ev.cmc([_result([0, 0, 1, 0, 0])], [1, 5])
    assert rates == {1: 0.0, 5: 1.0}
    assert ev.cmc([_result([1, 0]), _result([1, 1])], [1, 5, 10]) == {1: 1.0, 5: 1.0, 10: 1.0}


def test_average_precision_examples():
    assert abs(ev.average_precision([1, 0, 1]) - (1 + 2 / 3) / 2) <= 1e-15
    assert ev.average_precision([1, 1, 1, 0]) == 1.0
    for k in range(1, 12):
        flags = np.zeros(12)
        flags[k - 1] = 1
        assert ev.average_precision(flags) == 1.0 / k


def test_overlap_limits():
    scores = np.linspace(-0.9, 0.9, 50)
    h = ev._mass_histogram(scores)
    assert abs(ev.histogram_overlap(h, h) - 1.0) <= 1e-12
    assert ev.histogram_overlap(ev._mass_histogram(np.full(5, 0.9)),
                                ev._mass_histogram(np.full(5, -0.9))) == 0.0


def test_similarity_distribution_partition():
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    out = ev.similarity_distributions(q, g, [1], [1], [1, 2, 1], [2, 1, 1])
    assert out["pos"].tolist() == [1.0]  # third item is junk
    assert out["neg"].tolist() == [0.0]
    assert out["overlap"] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 20))
def test_matches_oracle(seed, n_q, n_g):
    inst = random_instance(np.random.default_rng(seed), n_q, n_g)
    report, results = ev.evaluate_features(*inst)
    cmc, mAP, _, aps = retrieval_oracle(*inst)
    assert report.cmc == cmc
    assert abs(report.mAP - mAP) <= 1e-12
    np.testing.assert_allclose(report.ap, aps, rtol=0, atol=1e-12)
    assert report.cmc[1] <= report.cmc[5] <= report.cmc[10]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_orthogonal_invariance(seed):
    rng = np.random.default_rng(seed)
    q, qi, qc, g, gi, gc = random_instance(rng, 5, 15, dim=4)
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a, ra = ev.evaluate_features(q, qi, qc, g, gi, gc)
    b, rb = ev.evaluate_features(q @ Q, qi, qc, g @ Q, gi, gc)
    assert a.cmc == b.cmc and abs(a.mAP - b.mAP) <= 1e-12
    assert [r.order.tolist() for r in ra] == [r.order.tolist() for r in rb]


def test_report_and_dumps(tmp_path):
    split = generate_synthetic_identities(5, 4, 2, seed=1)
    q, g = split_query_gallery(split, 1, 0)
    model = init_model(ExtractorConfig())
    report, results = ev.evaluate_model(model, q, g)
    assert report.n_queries == 5 and report.n_dropped == 0
    assert abs(report.mAP - np.mean(report.ap)) <= 1e-15
    assert all(0.0 <= v <= 1.0 for v in report.cmc.values())
    assert abs(sum(report.pos_hist) - 1) < 1e-12 and len(report.neg_hist) == 100
    ev.write_rankings_csv(tmp_path / "r.csv", results, q, g)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 6 and lines[1].startswith(q.samples[0].name)
    ev.write_histograms(tmp_path, report)
    assert len((tmp_path / "hist_pos.tsv").read_text().splitlines()) == 101
    assert '"mAP"' in report.to_json()
