import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairsample.bounds import (CONSTANT_KEYS, BoundConfig, SweepSpec, bound_sweep, check_both,
                               check_disparity_bound, check_generalization_bound,
                               concentration_term, dist, estimate_constants, generalization_rhs,
                               mixture_risk, phi_constant)
from fairsample.data import make_synthetic_mixture
from fairsample.model import TrainConfig, init_model, losses, sgd_train

from conftest import zero_model

FAST = BoundConfig(train=TrainConfig(learning_rate=0.05, epochs=10, batch_size=64),
                   samples_per_component=200, reference_size=400)


def simplex(n):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n).filter(
        lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


def fixed_mixture(fQ=(0.25, 0.25, 0.25, 0.25), seed=3, n=500):
    return make_synthetic_mixture(4, 5, 2, 2, (0.4, 0.4, 0.1, 0.1), fQ, seed=seed,
                                  n_train=n, n_test=n)


# -- dist ----------------------------------------------------------------------


def test_dist_fixtures():
    assert dist([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert dist([1, 0], [0, 1]) == 2.0
    assert dist([0.5, 0.5], [0.8, 0.2]) == pytest.approx(0.6, abs=1e-15)


def test_dist_errors():
    with pytest.raises(ValueError):
        dist([0.5, 0.5], [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        dist([0.5, 0.4], [0.5, 0.5])
    with pytest.raises(ValueError):
        dist([1.5, -0.5], [0.5, 0.5])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.tuples(simplex(n), simplex(n), simplex(n))))
def test_dist_is_metric(vecs):
    a, b, c = vecs
    ab = dist(a, b)
    assert ab == dist(b, a)
    assert 0.0 <= ab <= 2.0 + 1e-12
    assert dist(a, a) == 0.0
    assert ab <= dist(a, c) + dist(c, b) + 1e-12


# -- risk identity and rhs pieces ----------------------------------------------


def test_mixture_risk_identity():
    tr, _, _ = fixed_mixture(n=2000)
    m = init_model((5, 8, 2), seed=0)
    loss = losses(m, tr.X, tr.labels)
    assert abs(mixture_risk(loss, tr.components, 4) - loss.mean()) < 1e-9


def test_concentration_term():
    assert concentration_term(200, 0.05) == pytest.approx(math.sqrt(math.log(80) / 400))
    with pytest.raises(ValueError):
        concentration_term(100, 0.0)
    with pytest.raises(ValueError):
        concentration_term(0, 0.05)


def test_generalization_rhs_increases_with_dist():
    values = [generalization_rhs(0.7, d, 1000, 0.05, 0.3) for d in np.linspace(0, 2, 9)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_phi_constant_by_hand():
    L, G, eta = 2.0, 3.0, 0.1
    base = eta ** 2 * (1 + 2 * eta ** 2 * L ** 2)
    assert phi_constant(L, G, eta, 3) == pytest.approx(4 * L ** 2 * G ** 2 * (1 + base + base ** 2))
    assert phi_constant(L, G, eta, 0) == 0.0


# -- constants -----------------------------------------------------------------


def test_zero_model_loss_bound_is_ln2():
    _, _, mix = fixed_mixture()
    c = estimate_constants(zero_model((5, 4, 2)), mix, 50, seed=0)
    np.testing.assert_allclose(c["component_losses"], math.log(2), rtol=1e-14)
    assert c["loss_bound"] == pytest.approx(math.log(2), rel=1e-14)


def test_gradient_bound_monotone_in_samples():
    _, _, mix = fixed_mixture()
    m = init_model((5, 8, 2), seed=1)
    Gs = [estimate_constants(m, mix, n, seed=2)["G"] for n in (10, 50, 200, 800)]
    assert all(b >= a for a, b in zip(Gs, Gs[1:]))


def test_estimate_constants_seeded_fixture():
    tr, _, mix = fixed_mixture()
    m = sgd_train(init_model((5, 16, 2), seed=0), tr.X, tr.labels, TrainConfig(0.05, 10, 64))[0]
    c = estimate_constants(m, mix, 200, seed=1)
    assert c["samples"] == 800
    assert c["loss_bound"] == pytest.approx(0.7818581404597938, rel=1e-9)
    assert c["G"] == pytest.approx(6.581597269756864, rel=1e-9)
    assert c["L"] == pytest.approx(0.43848357272524013, rel=1e-9)


def test_estimate_constants_needs_samples():
    _, _, mix = fixed_mixture()
    with pytest.raises(ValueError):
        estimate_constants(zero_model((5, 2)), mix, 0)


# -- bound checks --------------------------------------------------------------


def test_identical_distributions_have_nonnegative_slack():
    tr, te, mix = make_synthetic_mixture(4, 5, 2, 2, (0.4, 0.4, 0.1, 0.1), (0.4, 0.4, 0.1, 0.1),
                                         seed=0, n_train=1000, n_test=1000)
    rep = check_generalization_bound(tr, te, mix, 0.05, FAST)
    assert rep.slack >= 0
    # only sampling noise separates the empirical frequencies
    assert rep.constants["dist_PQ"] < 0.1


def test_single_group_disparity():
    tr, te, mix = make_synthetic_mixture(2, 3, 2, 2, (0.5, 0.5), (0.3, 0.7), seed=0,
                                         n_train=400, n_test=400)
    assert set(te.groups) == {0}
    rep = check_disparity_bound(tr, te, mix, k=0, cfg=FAST)
    assert rep.lhs == 0.0
    assert rep.rhs >= 0


def test_delta_zero_rejected():
    tr, te, mix = fixed_mixture()
    with pytest.raises(ValueError):
        check_generalization_bound(tr, te, mix, 0.0, FAST)


def test_group_missing_from_test_rejected():
    tr, te, mix = fixed_mixture()
    te1 = te.subset(np.flatnonzero(te.groups == 0))
    with pytest.raises(ValueError, match="group 1"):
        check_disparity_bound(tr, te1, mix, k=1, cfg=FAST)


def test_missing_component_tags_rejected():
    tr, te, mix = fixed_mixture()
    with pytest.raises(ValueError, match="component"):
        check_generalization_bound(tr, replace(te, components=None), mix, 0.05, FAST)


def test_reports_carry_every_constant():
    tr, te, mix = fixed_mixture(fQ=(0.1, 0.2, 0.3, 0.4))
    for rep in check_both(tr, te, mix, cfg=FAST):
        for key in CONSTANT_KEYS:
            assert math.isfinite(rep.constants[key])
        assert rep.slack == pytest.approx(rep.rhs - rep.lhs)
        d = rep.to_dict()
        assert set(d) == {"kind", "lhs", "rhs", "slack", "constants", "sample_counts"}


def test_disparity_rhs_assembly():
    tr, te, mix = fixed_mixture(fQ=(0.1, 0.2, 0.3, 0.4))
    _, rep = check_both(tr, te, mix, cfg=FAST)
    c = rep.constants
    expected = (c["G_k"] * c["dist_PkQk"] + c["G_P"] * c["dist_PQ"]
                + c["Phi"] * c["dist_PkP"] ** 2 + c["Upsilon"])
    assert rep.rhs == pytest.approx(expected, rel=1e-12)
    assert c["Upsilon"] == pytest.approx(
        concentration_term(c["N_P"], 0.05) + concentration_term(c["N_Pk"], 0.05)
        + c["varpi"] + c["varpi_k"], rel=1e-12)
    assert c["Phi"] == pytest.approx(phi_constant(c["L"], c["G"], c["eta"], c["T"]), rel=1e-12)


def test_sweep_threads_match_serial():
    spec = SweepSpec(n_train=300, n_test=300)
    cfg = BoundConfig(train=TrainConfig(0.05, 5, 64), samples_per_component=100,
                      reference_size=300)
    serial = bound_sweep(spec, cfg, trials=3, seed=4, threads=1)
    threaded = bound_sweep(spec, cfg, trials=3, seed=4, threads=3)
    assert [g.to_json() + d.to_json() for g, d in serial] == \
           [g.to_json() + d.to_json() for g, d in threaded]
