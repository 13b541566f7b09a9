import numpy as np
import pytest

import fairsample.sampling as sampling
from fairsample.data import Dataset, LabelPool, make_biased_fixture
from fairsample.influence import InfluenceScore
from fairsample.model import TrainConfig, forward, init_model
from fairsample.sampling import (BaselineKind, FisConfig, baseline_run, fis_run, fis_select_round,
                                 jtt_weights, select_fair_candidates)

import handcalc
from conftest import linear_model, zero_model

PARAMS = (0.0, 0.5, 0.0, -0.25)
VAL = [(-1.8, 0, 0), (1.2, 0, 0), (0.6, 0, 1), (-1.0, 0, 1)]
CANDIDATES = [-2.0, -1.0, 0.0, 1.0, 2.0]


def small_bundle(seed=0):
    return make_biased_fixture(seed=seed, n_train=200, n_pool=600, n_val=150, n_test=300)


def small_cfg(**kw):
    base = dict(rounds=3, budget_per_round=32, tolerance=0.05,
                train=TrainConfig(learning_rate=0.05, epochs=5, batch_size=64),
                warm_epochs=20, hidden_sizes=(16,), seed=0)
    base.update(kw)
    return FisConfig(**base)


def toy_pool():
    m = linear_model([[PARAMS[0], PARAMS[1]]], [PARAMS[2], PARAMS[3]])
    val = Dataset(np.array([[x] for x, _, _ in VAL]), [y for _, y, _ in VAL],
                  [g for _, _, g in VAL])
    pool = LabelPool(Dataset(np.array(CANDIDATES)[:, None], [0, 1, 0, 1, 0], None))
    return m, val, pool


def hand_scores():
    """Influence pairs of every toy candidate, labels guessed by min |infl_acc|."""
    out = []
    for i, c in enumerate(CANDIDATES):
        acc = [handcalc.infl_acc(PARAMS, (c, k), VAL, 0.1) for k in (0, 1)]
        k = 0 if abs(acc[0]) <= abs(acc[1]) else 1
        out.append((i, k, acc[k], handcalc.infl_fair(PARAMS, (c, k), VAL, 0.1)))
    return out


# -- selection -----------------------------------------------------------------


def test_hand_fixture_top_two():
    m, val, pool = toy_pool()
    expected = sorted((f, i) for i, _, a, f in hand_scores() if a <= 0 and f <= 0)
    assert [i for _, i in expected] == [1, 0, 2]
    cfg = FisConfig(budget_per_round=2, influence_eta=0.1)
    selected, scores = fis_select_round(m, pool, val, cfg)
    assert selected == [1, 0]
    for s, (i, k, a, f) in zip(scores, hand_scores()):
        assert (s.candidate_id, s.guessed_label) == (i, k)
        assert s.infl_acc == pytest.approx(a, rel=1e-12)
        assert s.infl_fair == pytest.approx(f, rel=1e-12)


def test_exhaustion_returns_all_eligible():
    m, val, pool = toy_pool()
    selected, _ = fis_select_round(m, pool, val, FisConfig(budget_per_round=5, influence_eta=0.1))
    assert selected == [1, 0, 2]


def test_already_selected_are_skipped():
    m, val, pool = toy_pool()
    cfg = FisConfig(budget_per_round=2, influence_eta=0.1)
    selected, scores = fis_select_round(m, pool, val, cfg, exclude=[1])
    assert selected == [0, 2]
    assert [s.candidate_id for s in scores] == [0, 2, 3, 4]


def test_no_fair_candidates_gives_empty_selection():
    scores = [InfluenceScore(i, 0, -1.0, 0.1 * (i + 1), "MinInfluence") for i in range(6)]
    assert select_fair_candidates(scores, 3) == ([], 0)


def test_zero_fairness_gradient_falls_back_to_id_order():
    rng = np.random.default_rng(0)
    half = rng.standard_normal((6, 10))
    # identical groups: gap is exactly zero, so every infl_fair is zero
    val = Dataset(np.vstack([half, half]), [0, 1, 1, 0, 1, 0] * 2, [0] * 6 + [1] * 6)
    pool = LabelPool(Dataset(rng.standard_normal((40, 10)), np.zeros(40, int), None))
    m = init_model((10, 8, 2), seed=1)
    selected, scores = fis_select_round(m, pool, val, FisConfig(budget_per_round=7, influence_eta=0.01))
    assert all(s.infl_fair == 0.0 for s in scores)
    expected = [s.candidate_id for s in scores if s.infl_acc <= 0][:7]
    assert selected == expected
    assert selected == sorted(selected)


# -- full runs -----------------------------------------------------------------


@pytest.fixture(scope="module")
def fis_result():
    b = small_bundle()
    return b, fis_run(b, small_cfg())


def test_fis_selection_soundness(fis_result):
    _, res = fis_result
    for rec in res.records[1:]:
        dump = {s.candidate_id: s for s in res.influence_dumps[rec.round]}
        assert len(rec.selected_ids) <= 32
        for i in rec.selected_ids:
            assert dump[i].infl_acc <= 0 and dump[i].infl_fair <= 0
        for s in rec.selected_scores:
            assert s["infl_acc"] <= 0 and s["infl_fair"] <= 0


def test_fis_budget_ledger_and_monotone_set(fis_result):
    b, res = fis_result
    seen = []
    for rec in res.records[1:]:
        assert not set(rec.selected_ids) & set(seen)
        seen += rec.selected_ids
        assert rec.budget_consumed == len(seen)
    assert b.pool_U.budget_used == len(seen) == len(set(seen))
    assert b.pool_U.queried_ids == sorted(seen)


def test_fis_output_filter(fis_result):
    _, res = fis_result
    val0 = res.records[0].val_accuracy
    for t in res.output_models:
        assert res.records[t].val_accuracy > val0
        assert res.records[t].accepted
    for rec in res.records[1:]:
        assert rec.in_output_set == (rec.accepted and rec.val_accuracy > val0)
        assert rec.output_threshold == val0


def test_fis_tolerance_threshold(fis_result):
    _, res = fis_result
    last = res.records[0].val_accuracy
    for rec in res.records[1:]:
        assert rec.tolerance_threshold == pytest.approx(last - 0.05)
        assert rec.accepted == (rec.val_accuracy >= rec.tolerance_threshold)
        if rec.accepted:
            last = rec.val_accuracy


def test_fis_deterministic(fis_result):
    _, res = fis_result
    again = fis_run(small_bundle(), small_cfg())
    assert [r.to_dict() for r in again.records] == [r.to_dict() for r in res.records]


def test_fis_reduces_dp_gap_on_biased_fixture():
    b = make_biased_fixture(seed=0)
    cfg = FisConfig(train=TrainConfig(learning_rate=0.05, epochs=10, batch_size=64),
                    warm_epochs=40, seed=0)
    res = fis_run(b, cfg)
    warm, final = res.warm_start.test_fairness, res.final.test_fairness
    assert final["dp_gap"] < warm["dp_gap"]
    assert final["accuracy"] >= warm["accuracy"] - cfg.tolerance


def test_empty_round_keeps_warm_start(monkeypatch):
    monkeypatch.setattr(sampling, "select_fair_candidates", lambda scores, r: ([], 0))
    b = small_bundle(1)
    res = fis_run(b, small_cfg(rounds=1))
    assert res.records[1].selected_ids == []
    assert res.checkpoints[1].params.tobytes() == res.checkpoints[0].params.tobytes()
    assert res.records[1].val_accuracy == res.records[0].val_accuracy
    assert res.output_models == {}
    assert b.pool_U.budget_used == 0


def test_config_validation():
    with pytest.raises(ValueError):
        FisConfig(rounds=0)
    with pytest.raises(ValueError):
        FisConfig(budget_per_round=0)
    with pytest.raises(ValueError):
        FisConfig(tolerance=-0.1)
    with pytest.raises(ValueError):
        FisConfig(metric="accuracy")


def test_budget_larger_than_pool():
    with pytest.raises(ValueError, match="exceeds pool"):
        fis_run(small_bundle(), small_cfg(rounds=30, budget_per_round=32))


def test_empty_train_set():
    b = small_bundle()
    b.train_P = b.train_P.subset([])
    with pytest.raises(ValueError, match="empty"):
        fis_run(b, small_cfg())


# -- baselines -----------------------------------------------------------------


def test_erm_is_warm_start_only():
    res = baseline_run(small_bundle(), "ERM", small_cfg())
    assert len(res.records) == 1
    assert res.records[0].strategy == "ERM"


def test_random_reproducible():
    a = baseline_run(small_bundle(), "Random", small_cfg())
    b = baseline_run(small_bundle(), "Random", small_cfg())
    c = baseline_run(small_bundle(), "Random", small_cfg(seed=1))
    ids = lambda r: [rec.selected_ids for rec in r.records]
    assert ids(a) == ids(b)
    assert ids(a) != ids(c)
    assert all(len(s) == 32 for s in ids(a)[1:])


def test_uncertainty_ties_fall_back_to_id_order():
    b = small_bundle()
    pick = sampling._baseline_selector(BaselineKind.Uncertainty, small_cfg(budget_per_round=5))
    ids = np.arange(3, 50)
    selected, _ = pick(zero_model((10, 4, 2)), b.pool_U, b.validation_Qv, ids, 1)
    assert selected == [3, 4, 5, 6, 7]


def test_uncertainty_prefers_high_entropy():
    b = small_bundle()
    cfg = small_cfg(budget_per_round=4)
    m = sampling.warm_start(b, cfg)
    pick = sampling._baseline_selector(BaselineKind.Uncertainty, cfg)
    ids = np.arange(len(b.pool_U))
    selected, _ = pick(m, b.pool_U, b.validation_Qv, ids, 1)
    margin = np.abs(forward(m, b.pool_U.X)[:, 1] - 0.5)
    assert set(selected) == set(np.argsort(margin, kind="stable")[:4])


def test_influence_only_picks_most_negative_acc():
    res = baseline_run(small_bundle(), "InfluenceOnly", small_cfg(rounds=1))
    scores = res.influence_dumps[1]
    assert all(s.strategy_used == "MaxPrediction" for s in scores)
    best = sorted(scores, key=lambda s: (s.infl_acc, s.candidate_id))[:32]
    assert res.records[1].selected_ids == [s.candidate_id for s in best]


def test_jtt_identity_weight_matches_plain_training():
    res = baseline_run(small_bundle(), "JTT", small_cfg(jtt_weight=1.0))
    assert res.checkpoints[1].params.tobytes() == res.checkpoints[0].params.tobytes()


def test_jtt_upweights_mistakes():
    m = linear_model([[0.0, 1.0]], [0.0, 0.0])
    X = np.array([[-1.0], [1.0], [2.0], [-3.0]])
    np.testing.assert_array_equal(jtt_weights(m, X, [0, 0, 1, 1], 20.0), [1, 20, 1, 20])


def test_jtt_run_records_second_pass():
    res = baseline_run(small_bundle(), "JTT", small_cfg())
    assert [r.round for r in res.records] == [0, 1]
    assert res.records[1].budget_consumed == 0
