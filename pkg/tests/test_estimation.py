import math

import numpy as np
import pytest
import sympy as sp

from fltradeoff.attack import AttackConfig, RecoveryCounts
from fltradeoff.data import LEFTOVER_ID
from fltradeoff.divergence import LN2, BeliefPMF, js_discrete
from fltradeoff.errors import (
    DegenerateEstimate,
    EmptyClassSet,
    EpsOutOfRange,
    SmoothingRequired,
    SupportMismatch,
    ZeroPriorMass,
)
from fltradeoff.estimation import (
    EstimationConfig,
    TradeoffConstants,
    c1_error_bound,
    chernoff_failure_prob,
    class_conditional_from_counts,
    combine_xi,
    conditional_from_counts,
    drop_leftover,
    estimate_c1k,
    estimate_c2,
    estimate_class_conditional,
    estimate_conditional,
    estimate_constants,
    estimate_f_o,
    prepare_models,
    privacy_estimate_error_bound,
    privacy_leakage_metric,
    privacy_upper_bound_two_case,
    smooth,
)
from fltradeoff.flsim import FLConfig, train_federated
from fltradeoff import model as lr
from fltradeoff.mechanisms import MechanismSpec

ABC = ["a", "b", "c"]


# --- model preparation ---------------------------------------------------------


def test_prepare_models(blobs):
    data = blobs[0][0]
    untouched = prepare_models(data, 3, 0, 0.5, 1)
    init = prepare_models(data, 3, 0, 0.5, 1)
    assert all(np.array_equal(a, b) for a, b in zip(untouched, init))
    trained = prepare_models(data, 8, 50, 0.5, 1)
    for w0, w in zip(prepare_models(data, 8, 0, 0.5, 1), trained):
        assert lr.loss(w, data.features, data.labels, 4) < lr.loss(w0, data.features, data.labels, 4)


# --- conditionals ----------------------------------------------------------------


def test_conditional_from_counts_examples():
    counts = RecoveryCounts(8, 1, ("a", "b"))
    counts.add(0, "a", 3)
    counts.add(0, "b", 1)
    counts.add(0, LEFTOVER_ID, 4)
    pmf = conditional_from_counts(counts)[0]
    np.testing.assert_allclose(pmf.mass, [0.375, 0.125, 0.5])
    none = RecoveryCounts(5, 1, ("a",))
    none.add(0, LEFTOVER_ID, 5)
    assert conditional_from_counts(none)[0] == BeliefPMF.point(["a", LEFTOVER_ID], LEFTOVER_ID)
    with pytest.raises(DegenerateEstimate):
        drop_leftover(conditional_from_counts(none)[0])


def test_estimate_conditional_point_mass(blobs):
    data = blobs[0][0]
    cfg = EstimationConfig(attack=AttackConfig(trials=10))
    w = np.random.default_rng(3).normal(size=lr.num_params(2, 4))
    cond = estimate_conditional([w], data, None, cfg, 0, batch_index=[5])[0]
    assert cond == BeliefPMF.point(list(data.candidate_pool) + [LEFTOVER_ID], data.ids[5])
    he = MechanismSpec("paillier", 1e6, w.size, delta=1.0)
    cond_he = estimate_conditional([w], data, he, cfg.__class__(attack=AttackConfig(trials=3, he_prime_bits=32)), 0)[0]
    assert cond_he[LEFTOVER_ID] == 1.0


def test_class_conditional_examples(blobs):
    f = class_conditional_from_counts([2, 6], [0, 1], 4)
    np.testing.assert_allclose(f.values, [0.25, 0.75])
    assert not f.degenerate
    single = class_conditional_from_counts([5], [3], 5)
    assert single.values.tolist() == [1.0]
    zero = class_conditional_from_counts([0, 0], [0, 1], 4)
    assert zero.degenerate and zero.total == 0
    with pytest.raises(EmptyClassSet):
        class_conditional_from_counts([], [], 4)
    data = blobs[0][0]
    w = np.random.default_rng(3).normal(size=lr.num_params(2, 4))
    out = estimate_class_conditional([w], data, None, EstimationConfig(attack=AttackConfig(trials=6)), 0)
    # S = 1 and exact recovery: one class gets T hits, normalized by |C| T.
    assert out[0].total == pytest.approx(1 / len(out[0].classes))


def test_estimate_f_o():
    p = BeliefPMF(ABC, [0.2, 0.3, 0.5])
    assert estimate_f_o([p]) == p
    two = estimate_f_o([BeliefPMF.point(ABC, "a"), BeliefPMF.point(ABC, "b")])
    np.testing.assert_allclose(two.mass, [0.5, 0.5, 0.0])
    rng = np.random.default_rng(0)
    many = estimate_f_o({i: BeliefPMF(ABC, rng.dirichlet(np.ones(3))) for i in range(7)})
    assert math.fsum(many.mass) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(SupportMismatch):
        estimate_f_o([p, BeliefPMF(["x", "y", "z"], [0.2, 0.3, 0.5])])


# --- constants --------------------------------------------------------------------


def test_estimate_c1k_examples():
    u = BeliefPMF.uniform(ABC)
    assert estimate_c1k(u, u) == 0.0
    assert estimate_c1k(BeliefPMF(["a", "b"], [1, 0]), BeliefPMF(["a", "b"], [0, 1])) == pytest.approx(math.sqrt(LN2))
    k = BeliefPMF(ABC, [0.375, 0.125, 0.5])
    assert estimate_c1k(k, u) == math.sqrt(js_discrete(k, u))
    with pytest.raises(SupportMismatch):
        estimate_c1k(k, BeliefPMF.uniform(["x", "y", "z"]))


def test_estimate_c2_examples():
    u = BeliefPMF.uniform(ABC)
    assert estimate_c2(u, u, 0.0) == (0.0, 0.0)
    # Max ratio e on one entry.
    prior = BeliefPMF(["a", "b"], [1 / (1 + math.e), math.e / (1 + math.e)])
    post = BeliefPMF(["a", "b"], [math.e / (1 + math.e), 1 / (1 + math.e)])
    xi, c2 = estimate_c2(post, prior, 0.0)
    assert xi == pytest.approx(1.0, rel=1e-12)
    assert c2 == pytest.approx(0.5 * (math.e**2 - 1), rel=1e-12)
    with pytest.raises(SmoothingRequired):
        estimate_c2(BeliefPMF.point(ABC, "a"), u, 0.0)
    assert math.isfinite(estimate_c2(BeliefPMF.point(ABC, "a"), u, 1e-6)[0])
    with pytest.raises(ZeroPriorMass):
        estimate_c2(u, BeliefPMF(ABC, [0.5, 0.5, 0.0]), 1e-6)
    assert combine_xi([0.2, 1.5, 0.7]) == 1.5


def test_smooth():
    s = smooth(BeliefPMF.point(ABC, "a"), 0.1)
    np.testing.assert_allclose(s.mass, np.array([1.1, 0.1, 0.1]) / 1.3)
    assert smooth(s, 0.0) is s


def test_tradeoff_constants_invariants():
    c = TradeoffConstants.from_xi([0.2, 0.4], 0.5)
    assert c.c1 == pytest.approx(0.3) and c.c2 == pytest.approx(0.5 * math.expm1(1.0))
    assert TradeoffConstants.from_dict(c.to_dict()) == c
    assert TradeoffConstants.from_dict({"c1": 0.5, "c2": 1.0}).xi == pytest.approx(0.5 * math.log(3))
    with pytest.raises(ValueError):
        TradeoffConstants(1.0, (1.0,), 1.0, 0.1)
    with pytest.raises(ValueError):
        TradeoffConstants(0.3, (0.2, 0.2), 1.0, 0.1)
    with pytest.raises(ValueError):
        TradeoffConstants(0.3, (0.3,), 5.0, 0.1, provenance="estimated")
    with pytest.raises(ValueError):
        TradeoffConstants.from_dict({"c2": 1.0})


# --- metric and bounds ---------------------------------------------------------------


def test_leakage_metric_examples():
    c = TradeoffConstants.simple(0.5, 1.0)
    assert privacy_leakage_metric(c, 0.0) == 1.0
    assert privacy_leakage_metric(c, 0.2) == pytest.approx(0.8)
    c2 = TradeoffConstants.simple(0.3, 1.5)
    assert privacy_leakage_metric(c2, 2 * 0.3 / 1.5) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        privacy_leakage_metric(c, 1.5)


def test_two_case_bound_examples():
    assert privacy_upper_bound_two_case(0.3, 2.0, 0.0) == 0.6
    assert privacy_upper_bound_two_case(0.1, 1.0, 0.5) == pytest.approx(1.4)
    # The raw branches evaluate to C1 and 2 C1 at C2 TV = C1, so they
    # cannot both equal C1 there; the max form is continuous instead.
    c1, c2 = 0.4, 2.0
    tv = c1 / c2
    assert 2 * c1 - c2 * tv == pytest.approx(c1)
    assert 3 * c2 * tv - c1 == pytest.approx(2 * c1)
    for split in (c1 / c2, 0.75 * c1 / c2):
        lo = privacy_upper_bound_two_case(c1, c2, split * (1 - 1e-13))
        hi = privacy_upper_bound_two_case(c1, c2, split * (1 + 1e-13))
        assert abs(hi - lo) < 1e-12


def test_chernoff_examples():
    u = BeliefPMF.uniform(["a", "b", "c", "d"])
    assert chernoff_failure_prob(0.5, 100, u) == pytest.approx(8 * math.exp(-25 / 12))
    assert chernoff_failure_prob(0.5, 10**7, u) == pytest.approx(0.0, abs=1e-300)
    assert chernoff_failure_prob(0.5, 400, u) < chernoff_failure_prob(0.5, 200, u)
    assert chernoff_failure_prob(0.1, 1, u) == 1.0
    with pytest.raises(EpsOutOfRange):
        chernoff_failure_prob(1.0, 10, u)


def _c1_bound_symbolic(eps) -> float:
    e = sp.Rational(eps)
    radicand = (1 + e) * sp.log((1 + e) / (1 - e)) / 2 + (e + sp.Max(sp.log(1 + e), sp.log(1 / (1 - e)))) / 2
    return float(sp.N(sp.sqrt(radicand), 30))


@pytest.mark.parametrize("eps", ["1/1000", "1/20", "1/10", "1/5", "1/2", "9/10"])
def test_c1_error_bound_symbolic(eps):
    x = float(sp.Rational(eps))
    assert c1_error_bound(x) == pytest.approx(_c1_bound_symbolic(eps), rel=1e-13)
    assert privacy_estimate_error_bound(x) == 1.5 * c1_error_bound(x)


def test_c1_error_bound_shape():
    grid = np.linspace(1e-6, 0.99, 200)
    vals = [c1_error_bound(e) for e in grid]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert c1_error_bound(1e-12) < 1e-5
    with pytest.raises(EpsOutOfRange):
        c1_error_bound(0.0)
    with pytest.raises(EpsOutOfRange):
        privacy_estimate_error_bound(1.0)


# --- pipeline ------------------------------------------------------------------------


def test_estimate_constants_pipeline(blobs):
    clients, test = blobs
    w_star = train_federated(FLConfig(rounds=20), clients, test).global_model
    cfg = EstimationConfig(num_models=3, sgd_steps=10, attack=AttackConfig(trials=20))
    a = estimate_constants(clients, w_star, cfg, seed=4)
    b = estimate_constants(clients, w_star, cfg, seed=4, jobs=2)
    assert a.to_dict() == b.to_dict()
    c = a.constants
    assert 0 <= c.c1 <= math.sqrt(LN2)
    assert c.provenance == "estimated"
    assert c.xi == max(x.xi for x in a.clients)
    d = a.to_dict()
    assert d["error_bounds"]["privacy"] == 1.5 * d["error_bounds"]["c1"]
    assert len(d["f_o_per_client"]) == 2
