import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fltradeoff.errors import InfeasibleBudget, InvalidMechanism, NonMonotoneBound
from fltradeoff.estimation import TradeoffConstants
from fltradeoff.tuner import (
    Feasibility,
    MechanismShape,
    TooTightError,
    TuneRequest,
    UtilityCapError,
    audit_monotone,
    closed_form,
    nfl_check,
    optimal_n,
    optimal_r,
    optimal_rho,
    optimal_sigma2,
    privacy_bound_curve,
    sample_curves,
    semiprime_at_least,
    solve_generic,
)


def consts(c1, c2, c4=1.0, c5=0.0):
    return TradeoffConstants.simple(c1, c2, c4=c4, c5=c5)


SHAPES = {
    "randomization": MechanismShape("randomization", 4, sigma0=(1.0,) * 4),
    "paillier": MechanismShape("paillier", 3, delta=2.0),
    "secret_sharing": MechanismShape("secret_sharing", 3, delta=1.5),
    "compression": MechanismShape("compression", 5),
}


def test_closed_form_examples():
    assert optimal_sigma2(consts(0.5, 200.0), 0.9, [1.0] * 4) == pytest.approx(0.025)
    assert optimal_rho(consts(0.5, 1.0), 0.8, 1) == pytest.approx(0.8)
    assert optimal_rho(consts(0.5, 1.0), 0.8, 2) == pytest.approx(math.sqrt(0.8))
    # (2 C1 - eps) / C2 = 0.75 leaves a quarter of the mass.
    assert optimal_n(consts(0.5, 1.0), 0.25, 2.0, 1) == pytest.approx(4.0)
    assert optimal_r(consts(0.5, 1.0), 0.25, 1.0, 2) == pytest.approx(2.0)
    assert optimal_n(consts(0.5, 1.0), 1.0, 2.0, 3) == pytest.approx(2.0)
    assert optimal_r(consts(0.5, 1.0), 1.0, 1.7, 3) == pytest.approx(1.7)
    with pytest.raises(InfeasibleBudget):
        optimal_rho(consts(0.5, 1.0), 0.0, 1)
    with pytest.raises(InfeasibleBudget):
        optimal_sigma2(consts(0.5, 1.0), 0.5, [1.0])


@pytest.mark.parametrize("kind", sorted(SHAPES))
def test_closed_form_plugs_back(kind):
    shape = SHAPES[kind]
    c = consts(0.4, 150.0 if kind == "randomization" else 1.2)
    for eps in (0.1, 0.3, 0.5, 0.79):
        g = closed_form(shape, c, eps)
        assert privacy_bound_curve(shape, c, g) == pytest.approx(eps, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(sorted(SHAPES)),
    st.floats(0.05, 0.8),
    st.floats(0.05, 0.95),
)
def test_bisection_agrees_with_closed_form(kind, c1, frac):
    shape = SHAPES[kind]
    c2 = 2.0 * c1 / 0.9 if kind != "randomization" else 300.0 * c1
    eps = 2 * c1 * frac
    rep = solve_generic(TuneRequest(shape, consts(c1, c2), eps))
    assert rep.feasibility is Feasibility.FEASIBLE
    assert rep.gamma_star == pytest.approx(rep.gamma_star_closed_form, rel=1e-6)
    assert rep.residual <= 1e-9
    assert privacy_bound_curve(shape, consts(c1, c2), rep.gamma_star) <= eps + 1e-15


def test_slack_budget_returns_identity():
    rep = solve_generic(TuneRequest(SHAPES["compression"], consts(0.3, 1.0), 0.7))
    assert rep.feasibility is Feasibility.SLACK
    assert rep.gamma_star == 1.0 and rep.binding_constraint == "none"


def test_too_tight_carries_report():
    with pytest.raises(TooTightError) as exc:
        solve_generic(TuneRequest(SHAPES["paillier"], consts(0.5, 0.5), 0.2))
    rep = exc.value.report
    assert rep.feasibility is Feasibility.TOO_TIGHT and math.isnan(rep.gamma_star)
    assert rep.bound_curves
    with pytest.raises(TooTightError):
        solve_generic(TuneRequest(SHAPES["compression"], consts(0.5, 0.5), 0.5))


def test_utility_cap():
    req = TuneRequest(SHAPES["compression"], consts(0.5, 1.0), 0.2, phi=0.01)
    with pytest.raises(UtilityCapError) as exc:
        solve_generic(req)
    assert exc.value.report.binding_constraint == "utility"
    # Paillier has zero utility loss, so a zero cap is still feasible.
    rep = solve_generic(TuneRequest(SHAPES["paillier"], consts(0.5, 1.0), 0.5, phi=0.0))
    assert rep.feasibility is Feasibility.FEASIBLE
    assert rep.semiprime_n >= rep.gamma_star


def test_budget_sensitivity():
    shape = SHAPES["compression"]
    c = consts(0.5, 1.0)
    rhos = [solve_generic(TuneRequest(shape, c, e)).gamma_star for e in (0.2, 0.4, 0.6, 0.8)]
    assert all(b > a for a, b in zip(rhos, rhos[1:]))
    sig = [solve_generic(TuneRequest(SHAPES["randomization"], consts(0.5, 200.0), e)).gamma_star for e in (0.2, 0.5, 0.9)]
    assert all(b < a for a, b in zip(sig, sig[1:]))


def test_objective_and_report_fields():
    shape = MechanismShape("secret_sharing", 2, delta=1.0, num_clients=3)
    rep = solve_generic(TuneRequest(shape, consts(0.5, 1.0), 0.25, eta_u=0.0, eta_e=2.0))
    assert rep.objective == pytest.approx(2.0 * 3 * 2 * math.log(rep.gamma_star))
    d = rep.to_dict()
    assert d["feasibility"] == "Feasible" and d["solver"]["residual"] <= 1e-9
    assert len(d["bound_curves"]) == 65


def test_audit_monotone():
    rows = sample_curves(SHAPES["secret_sharing"], consts(0.5, 1.0), np.linspace(1.5, 6, 20))
    audit_monotone(rows)
    rows[5]["privacy"] += 1.0
    with pytest.raises(NonMonotoneBound):
        audit_monotone(rows)


def test_shape_validation():
    with pytest.raises(InvalidMechanism):
        MechanismShape("sparsity", 3)
    with pytest.raises(InvalidMechanism):
        MechanismShape("paillier", 3)
    with pytest.raises(InvalidMechanism):
        MechanismShape("randomization", 3, sigma0=(1.0,))
    with pytest.raises(ValueError):
        TuneRequest(SHAPES["compression"], consts(0.5, 1.0), 0.0)


def test_semiprime_at_least():
    assert semiprime_at_least(4.0) == 6
    assert semiprime_at_least(34.2) == 35
    assert semiprime_at_least(49) == 51
    assert semiprime_at_least(1e20) is None


def test_nfl_check_examples():
    holds, slack = nfl_check(0.5, 0.5 * math.log(3), 0.2, 0.3)
    assert holds and slack == pytest.approx(0.0)
    assert nfl_check(0.6, 0.0, 0.5, 1.0) == (False, pytest.approx(-0.1))
