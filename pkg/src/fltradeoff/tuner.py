"""Optimal protection parameters under a privacy budget.

The privacy bound ``2 C1 - C2 * TV(gamma)`` falls as a mechanism distorts
more, while the utility and efficiency bounds rise. The least-distorting
parameter meeting the budget is therefore optimal. This module provides
closed forms for the four tunable mechanisms and a generic bisection solver
that cross-checks them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .divergence import gaussian_noise_ratio
from .errors import InfeasibleBudget, InfeasibleBudgetTooTight, InfeasibleUtilityCap, InvalidMechanism, NonMonotoneBound
from .mechanisms import MechanismKind, compression_tv, identity_gamma, paillier_tv, secret_sharing_tv

BISECTION_RTOL = 1e-12
BISECTION_MAX_ITER = 200
MONOTONE_RTOL = 1e-12
SEMIPRIME_SEARCH_LIMIT = 10**15
TUNABLE = (
    MechanismKind.RANDOMIZATION,
    MechanismKind.PAILLIER,
    MechanismKind.SECRET_SHARING,
    MechanismKind.COMPRESSION,
)


class Feasibility(str, enum.Enum):
    FEASIBLE = "Feasible"
    TOO_TIGHT = "InfeasibleBudgetTooTight"
    SLACK = "InfeasibleBudgetSlack"
    UTILITY_CAP = "InfeasibleUtilityCap"


@dataclass(frozen=True)
class MechanismShape:
    """Mechanism kind plus the metadata its bounds depend on."""

    kind: MechanismKind
    dim_m: int
    delta: float | None = None
    sigma0: tuple[float, ...] | None = None
    num_clients: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind(self.kind))
        if self.sigma0 is not None:
            object.__setattr__(self, "sigma0", tuple(float(v) for v in np.atleast_1d(self.sigma0)))
        if self.kind not in TUNABLE:
            raise InvalidMechanism(f"{self.kind.value} has no tunable privacy bound")
        if self.dim_m < 1:
            raise InvalidMechanism("dim_m must be positive")
        if self.kind in (MechanismKind.PAILLIER, MechanismKind.SECRET_SHARING) and not (self.delta and self.delta > 0):
            raise InvalidMechanism("delta > 0 is required")
        if self.kind is MechanismKind.RANDOMIZATION and (self.sigma0 is None or len(self.sigma0) != self.dim_m):
            raise InvalidMechanism("sigma0 of length m is required")

    @property
    def identity(self) -> float:
        return identity_gamma(self.kind, self.dim_m, self.delta)

    @property
    def protective_sign(self) -> int:
        """+1 when larger gamma distorts more, -1 otherwise."""
        return -1 if self.kind is MechanismKind.COMPRESSION else 1

    def distortion(self, gamma: float) -> float:
        k = self.kind
        if k is MechanismKind.RANDOMIZATION:
            return gaussian_noise_ratio(self.sigma0, gamma) / 100.0
        if k is MechanismKind.PAILLIER:
            return paillier_tv(gamma, self.delta, self.dim_m)
        if k is MechanismKind.SECRET_SHARING:
            return secret_sharing_tv(gamma, self.delta, self.dim_m)
        return compression_tv(gamma, self.dim_m)


def privacy_bound_curve(shape: MechanismShape, constants, gamma: float) -> float:
    return 2.0 * constants.c1 - constants.c2 * shape.distortion(gamma)


def utility_bound_curve(shape: MechanismShape, constants, gamma: float) -> float:
    k = shape.kind
    if k is MechanismKind.RANDOMIZATION:
        return 1.5 * constants.c4 * gaussian_noise_ratio(shape.sigma0, gamma)
    if k is MechanismKind.COMPRESSION:
        return constants.c4 * compression_tv(gamma, shape.dim_m)
    return 0.0


def efficiency_bound_curve(shape: MechanismShape, constants, gamma: float) -> float:
    k = shape.kind
    if k is MechanismKind.RANDOMIZATION:
        return 1.5 * constants.c5 * gaussian_noise_ratio(shape.sigma0, gamma)
    if k is MechanismKind.SECRET_SHARING:
        return shape.num_clients * shape.dim_m * math.log(gamma)
    return constants.c5 * shape.distortion(gamma)


# ---------------------------------------------------------------------------
# Closed forms


def _ratio(constants, eps: float) -> float:
    return (2.0 * constants.c1 - eps) / constants.c2 if constants.c2 > 0 else math.inf


def optimal_sigma2(constants, eps: float, sigma0: Sequence[float]) -> float:
    """Noise variance at which the randomization bound equals ``eps``."""
    gap = 2.0 * constants.c1 - eps
    if gap < 0 or 100.0 * gap > constants.c2:
        raise InfeasibleBudget("need eps <= 2 C1 and 100 (2 C1 - eps) <= C2")
    root = math.sqrt(float(np.sum(np.asarray(sigma0, dtype=float) ** -2.0)))
    return 100.0 * gap / (constants.c2 * root)


def optimal_n(constants, eps: float, delta: float, m: int) -> float:
    """Real-valued Paillier modulus at which the bound equals ``eps``."""
    ratio = _ratio(constants, eps)
    if not 0 <= ratio < 1:
        raise InfeasibleBudget("need 0 <= (2 C1 - eps) / C2 < 1")
    return math.sqrt(2.0 * delta) * math.exp(-math.log1p(-ratio) / (2 * m))


def optimal_r(constants, eps: float, delta: float, m: int) -> float:
    """Secret-sharing mask bound at which the bound equals ``eps``."""
    ratio = _ratio(constants, eps)
    if not 0 <= ratio < 1:
        raise InfeasibleBudget("need 0 <= (2 C1 - eps) / C2 < 1")
    return delta * math.exp(-math.log1p(-ratio) / m)


def optimal_rho(constants, eps: float, m: int) -> float:
    """Compression keep probability at which the bound equals ``eps``."""
    ratio = _ratio(constants, eps)
    if not 0 <= ratio < 1:
        raise InfeasibleBudget("need 0 <= (2 C1 - eps) / C2 < 1")
    return math.exp(math.log1p(-ratio) / m)


def closed_form(shape: MechanismShape, constants, eps: float) -> float:
    k = shape.kind
    if k is MechanismKind.RANDOMIZATION:
        return optimal_sigma2(constants, eps, shape.sigma0)
    if k is MechanismKind.PAILLIER:
        return optimal_n(constants, eps, shape.delta, shape.dim_m)
    if k is MechanismKind.SECRET_SHARING:
        return optimal_r(constants, eps, shape.delta, shape.dim_m)
    return optimal_rho(constants, eps, shape.dim_m)


# ---------------------------------------------------------------------------
# Generic solver


@dataclass(frozen=True)
class TuneRequest:
    shape: MechanismShape
    constants: Any
    budget: float
    eta_u: float = 1.0
    eta_e: float = 1.0
    phi: float | None = None
    curve_points: int = 65

    def __post_init__(self):
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if self.eta_u < 0 or self.eta_e < 0 or not self.eta_u + self.eta_e > 0:
            raise ValueError("preferences must be non-negative with a positive sum")


@dataclass
class TuneReport:
    kind: str
    gamma_star: float
    gamma_star_closed_form: float | None
    feasibility: Feasibility
    iterations: int
    residual: float
    identity_gamma: float
    bound_curves: list[dict[str, float]] = field(default_factory=list)
    binding_constraint: str = "privacy"
    objective: float = 0.0
    budget: float = 0.0
    preferences: tuple[float, float] = (1.0, 1.0)
    phi: float | None = None
    semiprime_n: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "gamma_star": self.gamma_star,
            "gamma_star_closed_form": self.gamma_star_closed_form,
            "feasibility": self.feasibility.value,
            "identity_gamma": self.identity_gamma,
            "budget": self.budget,
            "preferences": {"eta_u": self.preferences[0], "eta_e": self.preferences[1]},
            "phi": self.phi,
            "binding_constraint": self.binding_constraint,
            "objective": self.objective,
            "semiprime_n": self.semiprime_n,
            "solver": {"iterations": self.iterations, "residual": self.residual},
            "bound_curves": self.bound_curves,
        }


class _Infeasible:
    """Mixin carrying the partially filled report."""

    report: TuneReport


class TooTightError(InfeasibleBudgetTooTight, _Infeasible):
    def __init__(self, msg: str, report: TuneReport):
        super().__init__(msg)
        self.report = report


class UtilityCapError(InfeasibleUtilityCap, _Infeasible):
    def __init__(self, msg: str, report: TuneReport):
        super().__init__(msg)
        self.report = report


def _far_end(shape: MechanismShape, f: Callable[[float], float], eps: float) -> float:
    """Most-distorting point to search: saturation, the open end at 0, or a grown bracket."""
    k = shape.kind
    if k is MechanismKind.RANDOMIZATION:
        return 1.0 / math.sqrt(float(np.sum(np.asarray(shape.sigma0) ** -2.0)))
    if k is MechanismKind.COMPRESSION:
        return 0.0
    g = shape.identity * 2.0
    for _ in range(2000):
        if f(g) <= eps or not math.isfinite(g * 2):
            return g
        g *= 2.0
    return g


def bisect_budget(shape: MechanismShape, constants, eps: float) -> tuple[float, int]:
    """Least-distorting ``gamma`` with ``privacy_bound_curve <= eps``.

    Assumes the identity point is infeasible and the far end feasible.
    """
    f = lambda g: privacy_bound_curve(shape, constants, g)  # noqa: E731
    lo, hi = shape.identity, _far_end(shape, f, eps)
    it = 0
    while it < BISECTION_MAX_ITER:
        if abs(hi - lo) <= BISECTION_RTOL * max(abs(hi), abs(lo)):
            break
        mid = 0.5 * (lo + hi)
        if f(mid) <= eps:
            hi = mid
        else:
            lo = mid
        it += 1
    # One interpolation step inside the final bracket; keep it only if feasible.
    f_lo, f_hi = f(lo), f(hi)
    if f_lo != f_hi and math.isfinite(f_lo) and math.isfinite(f_hi):
        g = lo + (f_lo - eps) / (f_lo - f_hi) * (hi - lo)
        if min(lo, hi) <= g <= max(lo, hi):
            # Rounding may leave g just infeasible: nudge toward hi in growing steps.
            for j in range(52, -1, -1):
                if f(g) <= eps:
                    hi = g
                    break
                g = g + (hi - g) * 2.0 ** -j
    return hi, it


def semiprime_at_least(x: float, limit: int = SEMIPRIME_SEARCH_LIMIT, max_steps: int = 100_000) -> int | None:
    """Smallest ``p q >= x`` with distinct primes ``p, q``; None when out of search range."""
    import sympy

    start = max(6, math.ceil(x))
    if start > limit:
        return None
    for n in range(start, start + max_steps):
        f = sympy.factorint(n)
        if len(f) == 2 and all(e == 1 for e in f.values()):
            return n
    return None


def _curve_grid(shape: MechanismShape, gamma_star: float, points: int) -> np.ndarray:
    ident = shape.identity
    k = shape.kind
    if k is MechanismKind.COMPRESSION:
        return np.linspace(1.0, 1e-3, points)
    if k is MechanismKind.RANDOMIZATION:
        sat = 1.0 / math.sqrt(float(np.sum(np.asarray(shape.sigma0) ** -2.0)))
        return np.linspace(0.0, 1.5 * max(sat, gamma_star), points)
    top = max(4.0 * ident, 2.0 * gamma_star if math.isfinite(gamma_star) else 0.0)
    return np.linspace(ident, top, points)


def sample_curves(shape: MechanismShape, constants, grid: Sequence[float]) -> list[dict[str, float]]:
    return [
        {
            "gamma": float(g),
            "privacy": privacy_bound_curve(shape, constants, g),
            "utility": utility_bound_curve(shape, constants, g),
            "efficiency": efficiency_bound_curve(shape, constants, g),
        }
        for g in grid
    ]


def audit_monotone(rows: list[dict[str, float]]) -> None:
    """Rows must be ordered by increasing distortion."""
    for a, b in zip(rows[:-1], rows[1:]):
        if b["privacy"] > a["privacy"] + MONOTONE_RTOL * (1 + abs(a["privacy"])):
            raise NonMonotoneBound(f"privacy bound increases between gamma={a['gamma']} and {b['gamma']}")
        for key in ("utility", "efficiency"):
            if b[key] < a[key] - MONOTONE_RTOL * (1 + abs(a[key])):
                raise NonMonotoneBound(f"{key} bound decreases between gamma={a['gamma']} and {b['gamma']}")


def solve_generic(req: TuneRequest) -> TuneReport:
    """Solve for the optimal parameter by bisection and cross-check the closed form.

    Returns a report with ``Feasible`` or ``InfeasibleBudgetSlack`` status.

    Raises:
        TooTightError: no parameter in range meets the budget.
        UtilityCapError: the privacy-optimal parameter exceeds the utility cap.
        NonMonotoneBound: sampled curves contradict the monotonicity the solver relies on.
    """
    shape, c, eps = req.shape, req.constants, req.budget
    ident = shape.identity
    report = TuneReport(
        kind=shape.kind.value, gamma_star=ident, gamma_star_closed_form=None,
        feasibility=Feasibility.FEASIBLE, iterations=0, residual=0.0, identity_gamma=ident,
        budget=eps, preferences=(req.eta_u, req.eta_e), phi=req.phi,
    )
    f = lambda g: privacy_bound_curve(shape, c, g)  # noqa: E731

    if f(ident) <= eps:
        report.gamma_star = ident
        report.residual = abs(f(ident) - eps)
        if eps > 2.0 * c.c1:
            report.feasibility = Feasibility.SLACK
            report.binding_constraint = "none"
            report.gamma_star_closed_form = ident
        else:
            report.gamma_star_closed_form = closed_form(shape, c, eps)
    else:
        far = _far_end(shape, f, eps)
        limit = f(far) if shape.kind is not MechanismKind.COMPRESSION else 2.0 * c.c1 - c.c2
        feasible_far = f(far) <= eps if shape.kind is not MechanismKind.COMPRESSION else limit < eps
        if not feasible_far:
            report.feasibility = Feasibility.TOO_TIGHT
            report.gamma_star = math.nan
            report.binding_constraint = "privacy"
            report.bound_curves = sample_curves(shape, c, _curve_grid(shape, math.nan, req.curve_points))
            raise TooTightError(f"budget {eps} is below the attainable bound {limit}", report)
        g, it = bisect_budget(shape, c, eps)
        report.gamma_star, report.iterations = g, it
        report.residual = abs(f(g) - eps)
        report.gamma_star_closed_form = closed_form(shape, c, eps)

    rows = sample_curves(shape, c, _curve_grid(shape, report.gamma_star, req.curve_points))
    audit_monotone(rows)
    report.bound_curves = rows
    g = report.gamma_star
    report.objective = req.eta_u * utility_bound_curve(shape, c, g) + req.eta_e * efficiency_bound_curve(shape, c, g)
    if shape.kind is MechanismKind.PAILLIER:
        report.semiprime_n = semiprime_at_least(g)
    if req.phi is not None and utility_bound_curve(shape, c, g) > req.phi:
        report.feasibility = Feasibility.UTILITY_CAP
        report.binding_constraint = "utility"
        raise UtilityCapError("privacy budget forces utility loss above the cap", report)
    return report


# ---------------------------------------------------------------------------
# Tradeoff diagnostic


def nfl_rhs(eps_p: float, xi: float, avg_tv: float) -> float:
    return eps_p + 0.5 * math.expm1(2.0 * xi) * avg_tv


def nfl_check(c1: float, xi: float, eps_p: float, avg_tv: float) -> tuple[bool, float]:
    """Whether ``C1 <= eps_p + (e^{2 xi} - 1)/2 * avg_tv``, and the slack."""
    slack = nfl_rhs(eps_p, xi, avg_tv) - c1
    return slack >= 0, slack
