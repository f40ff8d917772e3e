"""Estimators for the tradeoff constants and their error bounds.

The pipeline prepares a family of models per client, attacks each of them
repeatedly to obtain empirical posteriors over the candidate pool, averages
them into ``f^O`` and compares that with the prior. ``C1`` is the mean
square-root JS across clients; ``C2`` derives from the largest log ratio
between the posterior at the trained model and the prior.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import model as lr
from .attack import AttackConfig, RecoveryCounts, dlg_attack, exposed_gradient, match_batch, run_attack_rounds, select_private_batch
from .data import LEFTOVER_ID, ClientDataset
from .divergence import LN2, BeliefPMF, sqrt_js
from .errors import (
    DegenerateEstimate,
    EmptyClassSet,
    EpsOutOfRange,
    InvalidPMF,
    SmoothingRequired,
    SupportMismatch,
    ZeroPriorMass,
)
from .mechanisms import MechanismKind, MechanismSpec
from .paillier import paillier_keygen
from ._seeding import seed_sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimationConfig:
    """Settings for model preparation and posterior estimation.

    ``batch_size`` is the mini-batch size of the preparation SGD; the
    attacked batch size lives in ``attack.batch_size``. ``prior`` defaults
    to uniform over the candidate pool plus the leftover bucket.
    """

    num_models: int = 8
    sgd_steps: int = 50
    learning_rate: float = 0.5
    batch_size: int = 4
    attack: AttackConfig = field(default_factory=AttackConfig)
    prior: BeliefPMF | None = None
    smoothing_alpha: float = 1e-6
    init_scale: float = 1.0
    include_leftover: bool = True

    def __post_init__(self):
        if self.num_models < 1 or self.sgd_steps < 0 or self.batch_size < 1:
            raise ValueError("num_models >= 1, sgd_steps >= 0 and batch_size >= 1 are required")
        if not self.learning_rate > 0 or self.smoothing_alpha < 0:
            raise ValueError("learning_rate must be positive and smoothing_alpha non-negative")

    def prior_for(self, data: ClientDataset) -> BeliefPMF:
        ids = list(data.candidate_pool) + ([LEFTOVER_ID] if self.include_leftover else [])
        if self.prior is None:
            return BeliefPMF.uniform(ids)
        if set(self.prior.support_ids) != set(ids):
            raise SupportMismatch("prior support must equal the candidate pool (plus d0 when included)")
        return BeliefPMF(ids, [self.prior[i] for i in ids])


@dataclass(frozen=True)
class TradeoffConstants:
    c1: float
    c1_per_client: tuple[float, ...]
    c2: float
    xi: float
    c4: float = 1.0
    c5: float = 0.0
    provenance: str = "supplied"

    def __post_init__(self):
        object.__setattr__(self, "c1_per_client", tuple(float(v) for v in self.c1_per_client) or (float(self.c1),))
        if self.provenance not in ("estimated", "supplied"):
            raise ValueError("provenance must be 'estimated' or 'supplied'")
        if not 0 <= self.c1 <= math.sqrt(LN2) + 1e-12:
            raise ValueError("c1 must lie in [0, sqrt(ln 2)]")
        if abs(self.c1 - float(np.mean(self.c1_per_client))) > 1e-12:
            raise ValueError("c1 must equal the mean of c1_per_client")
        if self.c2 < 0 or self.xi < 0 or self.c4 < 0 or self.c5 < 0:
            raise ValueError("c2, xi, c4 and c5 must be non-negative")
        if self.provenance == "estimated" and not math.isclose(self.c2, 0.5 * math.expm1(2 * self.xi), rel_tol=1e-12, abs_tol=1e-300):
            raise ValueError("estimated c2 must equal (e^{2 xi} - 1) / 2")

    @classmethod
    def from_xi(cls, c1_per_client: Sequence[float], xi: float, c4: float = 1.0, c5: float = 0.0, provenance: str = "estimated"):
        c1k = tuple(float(v) for v in c1_per_client)
        return cls(float(np.mean(c1k)), c1k, 0.5 * math.expm1(2 * xi), xi, c4, c5, provenance)

    @classmethod
    def simple(cls, c1: float, c2: float, c4: float = 1.0, c5: float = 0.0) -> "TradeoffConstants":
        """Supplied constants with ``xi`` inferred from ``c2``."""
        return cls(c1, (c1,), c2, 0.5 * math.log1p(2 * c2), c4, c5, "supplied")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["c1_per_client"] = list(self.c1_per_client)
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TradeoffConstants":
        keys = {"c1", "c1_per_client", "c2", "xi", "c4", "c5", "provenance"}
        fields = {k: data[k] for k in keys if k in data}
        missing = {"c1", "c2"} - set(fields)
        if missing:
            raise ValueError(f"constants need fields {sorted(missing)}")
        fields.setdefault("c1_per_client", ())
        if "xi" not in fields:
            # Supplied files may omit xi; it is implied by c2.
            fields["xi"] = 0.5 * math.log1p(2 * float(fields["c2"]))
        return cls(**fields)


# ---------------------------------------------------------------------------
# Model preparation and posterior estimation


def prepare_models(
    data: ClientDataset,
    M: int,
    R: int,
    eta: float,
    rng_seed=None,
    batch_size: int = 4,
    init_scale: float = 1.0,
) -> list[np.ndarray]:
    """``M`` independently initialized models, each trained ``R`` SGD steps on ``data``."""
    if M < 1 or R < 0:
        raise ValueError("M must be >= 1 and R >= 0")
    S = min(batch_size, len(data))
    streams = seed_sequence(rng_seed).spawn(M)
    models = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        w = lr.init_params(data.n_features, data.n_classes, rng, init_scale)
        for _ in range(R):
            idx = rng.choice(len(data), size=S, replace=False)
            w = w - eta * lr.grad(w, data.features[idx], data.labels[idx], data.n_classes)
        models.append(w)
    return models


def conditional_from_counts(counts: RecoveryCounts) -> dict[int, BeliefPMF]:
    """``M_d^m / (S T)`` for every model."""
    denom = counts.batch_size * counts.trials
    return {
        m: BeliefPMF(counts.support, [row[d] / denom for d in counts.support])
        for m, row in sorted(counts.counts.items())
    }


def drop_leftover(pmf: BeliefPMF) -> BeliefPMF:
    """Remove the leftover bucket and renormalize."""
    keep = [i for i, d in enumerate(pmf.support_ids) if d != LEFTOVER_ID]
    w = pmf.mass[keep]
    if not w.sum() > 0:
        raise DegenerateEstimate("all mass sits on the leftover bucket")
    return BeliefPMF([pmf.support_ids[i] for i in keep], w / w.sum())


def estimate_conditional(
    models: Sequence[np.ndarray],
    data: ClientDataset,
    mechanism: MechanismSpec | None,
    cfg: EstimationConfig,
    rng_seed=None,
    batch_index: Sequence[int] | None = None,
) -> dict[int, BeliefPMF]:
    """Empirical posterior over pool plus ``d0`` for every model."""
    counts = run_attack_rounds(models, data, mechanism, cfg.attack, rng_seed, batch_index)
    cond = conditional_from_counts(counts)
    if not cfg.include_leftover:
        cond = {m: drop_leftover(p) for m, p in cond.items()}
    return cond


@dataclass(frozen=True)
class ClassFrequencies:
    """Per-class recovery frequencies normalized by ``|C_k| T``.

    The values need not sum to one; ``degenerate`` marks the all-zero case.
    """

    classes: tuple[int, ...]
    values: np.ndarray

    @property
    def degenerate(self) -> bool:
        return not np.any(self.values > 0)

    @property
    def total(self) -> float:
        return float(np.sum(self.values))


def class_conditional_from_counts(class_counts: Sequence[int], classes: Sequence[int], trials: int) -> ClassFrequencies:
    classes = tuple(int(c) for c in classes)
    if not classes:
        raise EmptyClassSet("the client has no classes")
    vals = np.asarray(class_counts, dtype=float) / (len(classes) * trials)
    return ClassFrequencies(classes, vals)


def estimate_class_conditional(
    models: Sequence[np.ndarray],
    data: ClientDataset,
    mechanism: MechanismSpec | None,
    cfg: EstimationConfig,
    rng_seed=None,
    batch_index: Sequence[int] | None = None,
) -> dict[int, ClassFrequencies]:
    """Class-level recovery frequencies, one vector per model."""
    classes = tuple(sorted(set(int(c) for c in data.labels)))
    if not classes:
        raise EmptyClassSet("the client has no classes")
    acfg = cfg.attack
    S = acfg.batch_size
    batch_ss, trial_ss, key_ss = seed_sequence(rng_seed).spawn(3)
    idx = np.array(batch_index) if batch_index is not None else select_private_batch(data, S, batch_ss)
    X, y = data.features[idx], data.labels[idx]
    keypair = None
    if mechanism is not None and mechanism.kind is MechanismKind.PAILLIER:
        keypair = paillier_keygen(acfg.he_prime_bits, int(key_ss.generate_state(1)[0]))
    out = {}
    for mi, (w, ss) in enumerate(zip(models, trial_ss.spawn(len(models)))):
        rng = np.random.default_rng(ss)
        point = w - acfg.step_size * lr.grad(w, X, y, data.n_classes) if acfg.attack_point == "updated" else np.asarray(w)
        g = lr.grad(point, X, y, data.n_classes)
        tally = np.zeros(len(classes))
        for _ in range(acfg.trials):
            rec = dlg_attack(point, exposed_gradient(g, mechanism, rng, keypair), data, S, acfg, rng)
            for label, hit in zip(y, match_batch(rec, X, acfg)):
                if hit:
                    tally[classes.index(int(label))] += 1
        out[mi] = class_conditional_from_counts(tally, classes, acfg.trials)
    return out


def estimate_f_o(conditionals: Mapping[int, BeliefPMF] | Sequence[BeliefPMF]) -> BeliefPMF:
    """Coordinate-wise mean of per-model posteriors."""
    pmfs = list(conditionals.values()) if isinstance(conditionals, Mapping) else list(conditionals)
    if not pmfs:
        raise ValueError("no conditionals supplied")
    ids = pmfs[0].support_ids
    if any(p.support_ids != ids for p in pmfs):
        raise SupportMismatch("conditionals must share a support")
    mean = np.mean([p.mass for p in pmfs], axis=0)
    return BeliefPMF(ids, mean / math.fsum(mean))


def smooth(pmf: BeliefPMF, alpha: float) -> BeliefPMF:
    """Additive smoothing ``(p + alpha) / (1 + alpha N)``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 0:
        return pmf
    return BeliefPMF(pmf.support_ids, (pmf.mass + alpha) / (1.0 + alpha * len(pmf)))


def estimate_c1k(f_o_hat: BeliefPMF, prior: BeliefPMF, smoothing_alpha: float = 0.0) -> float:
    """Square-root JS between the averaged posterior and the prior."""
    if f_o_hat.support_ids != prior.support_ids:
        raise SupportMismatch("posterior and prior supports differ")
    return sqrt_js(smooth(f_o_hat, smoothing_alpha), prior)


def estimate_c2(conditional_at_true_w: BeliefPMF, prior: BeliefPMF, smoothing_alpha: float) -> tuple[float, float]:
    """Largest absolute log posterior-to-prior ratio and ``C2 = (e^{2 xi} - 1)/2``."""
    if conditional_at_true_w.support_ids != prior.support_ids:
        raise SupportMismatch("posterior and prior supports differ")
    if np.any(prior.mass <= 0):
        raise ZeroPriorMass("the prior must be strictly positive")
    if smoothing_alpha == 0 and np.any(conditional_at_true_w.mass == 0):
        raise SmoothingRequired("zero posterior entry; pass smoothing_alpha > 0")
    post = smooth(conditional_at_true_w, smoothing_alpha).mass
    xi = float(np.max(np.abs(np.log(post) - np.log(prior.mass))))
    return xi, 0.5 * math.expm1(2.0 * xi)


def combine_xi(xis: Sequence[float]) -> float:
    return float(max(xis))


# ---------------------------------------------------------------------------
# Leakage metric, bounds and error analysis


def privacy_leakage_metric(c: TradeoffConstants, avg_tv: float) -> float:
    """``2 C1 - C2 * avg_tv`` (not clamped)."""
    if not 0 <= avg_tv <= 1:
        raise ValueError("avg_tv must lie in [0, 1]")
    return 2.0 * c.c1 - c.c2 * avg_tv


def privacy_upper_bound_two_case(c1k: float, c2: float, tv: float) -> float:
    """``max(2 C1 - C2 TV, 3 C2 TV - C1)``.

    The maximum is continuous in ``tv``; the lines cross at ``C2 TV = 3 C1 / 4``,
    so for ``C2 TV >= C1`` the second line is the active one.
    """
    if not 0 <= tv <= 1:
        raise ValueError("tv must lie in [0, 1]")
    x = c2 * tv
    return max(2.0 * c1k - x, 3.0 * x - c1k)


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise EpsOutOfRange("eps must lie strictly between 0 and 1")


def chernoff_failure_prob(eps: float, T: int, kappa1: BeliefPMF) -> float:
    """Probability bound that some relative frequency error exceeds ``eps``."""
    _check_eps(eps)
    if T < 1:
        raise ValueError("T must be >= 1")
    s = 2.0 * math.fsum(math.exp(-eps * eps * T * k / 3.0) for k in kappa1.mass)
    return min(1.0, max(0.0, s))


def c1_error_bound(eps: float) -> float:
    """Worst-case ``|C1_hat - C1|`` under relative frequency error ``eps``."""
    _check_eps(eps)
    a = (1 + eps) * math.log((1 + eps) / (1 - eps)) / 2.0
    b = (eps + max(math.log1p(eps), -math.log1p(-eps))) / 2.0
    return math.sqrt(a + b)


def privacy_estimate_error_bound(eps: float) -> float:
    return 1.5 * c1_error_bound(eps)


# ---------------------------------------------------------------------------
# End-to-end pipeline


@dataclass
class ClientEstimate:
    c1: float
    xi: float
    f_o: BeliefPMF
    conditional_at_w_star: BeliefPMF
    chernoff: float


@dataclass
class EstimationReport:
    constants: TradeoffConstants
    clients: list[ClientEstimate]
    error_eps: float
    trials: int

    def to_dict(self) -> dict[str, Any]:
        # The error bound uses the 3/2 constant while the metric uses 2 C1.
        return {
            **self.constants.to_dict(),
            "xi_per_client": [c.xi for c in self.clients],
            "error_bounds": {
                "eps": self.error_eps,
                "c1": c1_error_bound(self.error_eps),
                "privacy": privacy_estimate_error_bound(self.error_eps),
                "privacy_error_constant": 1.5,
                "metric_c1_multiplier": 2.0,
            },
            "chernoff": {
                "eps": self.error_eps,
                "trials": self.trials,
                "failure_prob_per_client": [c.chernoff for c in self.clients],
            },
            "f_o_per_client": [c.f_o.as_dict() for c in self.clients],
        }


def estimate_client(
    data: ClientDataset,
    w_star: np.ndarray,
    cfg: EstimationConfig,
    seed: int,
    error_eps: float = 0.1,
) -> ClientEstimate:
    """Estimate ``C1_k`` and ``xi_k`` for one client from the unprotected attack."""
    prep_ss, attack_ss, batch_ss = seed_sequence(seed).spawn(3)
    batch = select_private_batch(data, cfg.attack.batch_size, batch_ss)
    models = prepare_models(data, cfg.num_models, cfg.sgd_steps, cfg.learning_rate, prep_ss, cfg.batch_size, cfg.init_scale)
    conds = estimate_conditional(models, data, None, cfg, attack_ss, batch)
    f_o = estimate_f_o(conds)
    prior = cfg.prior_for(data)
    c1k = estimate_c1k(f_o, prior)
    at_star = estimate_conditional([w_star], data, None, cfg, attack_ss, batch)[0]
    xi, _ = estimate_c2(at_star, prior, cfg.smoothing_alpha)
    chern = chernoff_failure_prob(error_eps, cfg.attack.trials, f_o)
    return ClientEstimate(c1k, xi, f_o, at_star, chern)


def estimate_constants(
    clients: Sequence[ClientDataset],
    w_star: np.ndarray,
    cfg: EstimationConfig,
    seed: int = 0,
    c4: float = 1.0,
    c5: float = 0.0,
    error_eps: float = 0.1,
    jobs: int = 1,
) -> EstimationReport:
    """Estimate constants for every client; per-client seeds are ``seed + k``."""
    def one(k: int) -> ClientEstimate:
        return estimate_client(clients[k], w_star, cfg, seed + k, error_eps)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per = list(pool.map(one, range(len(clients))))
    else:
        per = [one(k) for k in range(len(clients))]
    consts = TradeoffConstants.from_xi([c.c1 for c in per], combine_xi([c.xi for c in per]), c4, c5, "estimated")
    return EstimationReport(consts, per, error_eps, cfg.attack.trials)
