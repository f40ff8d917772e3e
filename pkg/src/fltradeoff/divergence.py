"""Distances between probability distributions.

Discrete distances (KL, JS, TV) operate on :class:`BeliefPMF` objects that
share a support. Parametric helpers cover nested uniform boxes and diagonal
Gaussians, together with a one-dimensional quadrature oracle for Gaussian TV.
All logarithms are natural, so JS lies in ``[0, ln 2]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import rel_entr

from .errors import (
    AbsoluteContinuityViolation,
    DimensionMismatch,
    InvalidPMF,
    NonPositiveVariance,
    NotNested,
    QuadratureFailure,
    SupportMismatch,
)

LN2 = math.log(2.0)
PMF_SUM_TOL = 1e-12


@dataclass(frozen=True)
class BeliefPMF:
    """A probability mass function over a finite set of data identifiers.

    Attributes:
        support_ids: Unique identifiers, one per mass entry.
        mass: Non-negative probabilities summing to one (within 1e-12).
    """

    support_ids: tuple[str, ...]
    mass: np.ndarray

    def __init__(self, support_ids: Iterable[str], mass: Iterable[float]):
        ids = tuple(str(s) for s in support_ids)
        arr = np.array(list(mass) if not isinstance(mass, np.ndarray) else mass, dtype=float)
        if arr.ndim != 1 or arr.shape[0] != len(ids):
            raise InvalidPMF(f"{len(ids)} identifiers but mass has shape {arr.shape}")
        if len(set(ids)) != len(ids):
            raise InvalidPMF("support identifiers must be unique")
        if len(ids) == 0:
            raise InvalidPMF("empty support")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidPMF("masses must be finite and non-negative")
        total = float(math.fsum(arr))
        if abs(total - 1.0) > PMF_SUM_TOL:
            raise InvalidPMF(f"masses sum to {total!r}, not 1")
        arr.setflags(write=False)
        object.__setattr__(self, "support_ids", ids)
        object.__setattr__(self, "mass", arr)

    @classmethod
    def uniform(cls, support_ids: Iterable[str]) -> "BeliefPMF":
        ids = list(support_ids)
        return cls(ids, np.full(len(ids), 1.0 / len(ids)))

    @classmethod
    def point(cls, support_ids: Iterable[str], at: str) -> "BeliefPMF":
        ids = list(support_ids)
        mass = np.zeros(len(ids))
        mass[ids.index(at)] = 1.0
        return cls(ids, mass)

    @classmethod
    def from_weights(cls, support_ids: Iterable[str], weights: Iterable[float]) -> "BeliefPMF":
        """Normalize non-negative weights into a PMF."""
        w = np.asarray(list(weights), dtype=float)
        total = w.sum()
        if not total > 0:
            raise InvalidPMF("weights must have positive total")
        return cls(support_ids, w / total)

    @classmethod
    def from_dict(cls, mapping: Mapping[str, float]) -> "BeliefPMF":
        return cls(list(mapping.keys()), list(mapping.values()))

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.support_ids, self.mass)}

    def __len__(self) -> int:
        return len(self.support_ids)

    def __getitem__(self, ident: str) -> float:
        return float(self.mass[self.support_ids.index(ident)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BeliefPMF):
            return NotImplemented
        return self.support_ids == other.support_ids and np.array_equal(self.mass, other.mass)

    def __hash__(self) -> int:
        return hash((self.support_ids, self.mass.tobytes()))


@dataclass(frozen=True)
class DiagGaussianSpec:
    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if mean.shape != var.shape or mean.ndim != 1 or mean.size < 1:
            raise DimensionMismatch("mean and variances must be equal-length vectors")
        if np.any(~(var > 0)):
            raise NonPositiveVariance("all variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", var)


@dataclass(frozen=True)
class UniformBoxSpec:
    """Axis-aligned box ``[c - low, c + high]`` in each dimension."""

    centers: np.ndarray
    half_widths_low: np.ndarray
    half_widths_high: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.centers, dtype=float))
        lo = np.atleast_1d(np.asarray(self.half_widths_low, dtype=float))
        hi = np.atleast_1d(np.asarray(self.half_widths_high, dtype=float))
        if not (c.shape == lo.shape == hi.shape) or c.ndim != 1 or c.size < 1:
            raise DimensionMismatch("box fields must be equal-length vectors")
        if np.any(~(lo + hi > 0)) or np.any(lo < 0) or np.any(hi < 0):
            raise NotNested("every interval needs positive width")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "half_widths_low", lo)
        object.__setattr__(self, "half_widths_high", hi)

    @classmethod
    def symmetric(cls, centers: Sequence[float], half_width: float | Sequence[float]) -> "UniformBoxSpec":
        c = np.atleast_1d(np.asarray(centers, dtype=float))
        h = np.broadcast_to(np.asarray(half_width, dtype=float), c.shape).copy()
        return cls(c, h, h.copy())

    @property
    def lower(self) -> np.ndarray:
        return self.centers - self.half_widths_low

    @property
    def upper(self) -> np.ndarray:
        return self.centers + self.half_widths_high

    @property
    def widths(self) -> np.ndarray:
        return self.half_widths_low + self.half_widths_high


def _aligned(p: BeliefPMF, q: BeliefPMF) -> tuple[np.ndarray, np.ndarray]:
    if p.support_ids != q.support_ids:
        raise SupportMismatch("distributions are defined over different supports")
    return p.mass, q.mass


def kl_discrete(p: BeliefPMF, q: BeliefPMF) -> float:
    """Kullback-Leibler divergence ``sum p ln(p/q)`` in nats."""
    a, b = _aligned(p, q)
    if np.any((a > 0) & (b == 0)):
        raise AbsoluteContinuityViolation("p has mass where q has none")
    return max(0.0, float(math.fsum(rel_entr(a, b))))


def _js_terms(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Per-entry a ln(a/m) + b ln(b/m) with m = (a+b)/2, written so every term
    # is >= 0 and swapping a and b gives bit-identical output.
    m = 0.5 * (a + b)
    out = np.zeros_like(m)
    pos = m > 0
    if not np.any(pos):
        return out
    d = np.abs(a[pos] - b[pos]) / (a[pos] + b[pos])
    mp = m[pos]
    small = d <= 0.5
    t = np.empty_like(d)
    ds = d[small]
    # (1+d)ln(1+d) + (1-d)ln(1-d) = ln(1-d^2) + 2 d atanh(d); accurate for small d.
    t[small] = mp[small] * (np.log1p(-ds * ds) + 2.0 * ds * np.arctanh(ds))
    big = ~small
    if np.any(big):
        ab, bb, mb = a[pos][big], b[pos][big], mp[big]
        lo, hi = np.minimum(ab, bb), np.maximum(ab, bb)
        t[big] = rel_entr(hi, mb) + rel_entr(lo, mb)
    out[pos] = np.maximum(t, 0.0)
    return out


def js_nonnegative(a: Sequence[float], b: Sequence[float]) -> float:
    """JS functional ``1/2 sum [a ln(2a/(a+b)) + b ln(2b/(a+b))]`` on raw vectors.

    The inputs need not be normalized; this is the form used when a
    perturbed estimate is compared with a reference without renormalizing.
    """
    av = np.asarray(a, dtype=float)
    bv = np.asarray(b, dtype=float)
    if av.shape != bv.shape:
        raise DimensionMismatch("vectors differ in length")
    if np.any(av < 0) or np.any(bv < 0):
        raise InvalidPMF("entries must be non-negative")
    return 0.5 * math.fsum(_js_terms(av, bv))


def js_discrete(p: BeliefPMF, q: BeliefPMF) -> float:
    """Jensen-Shannon divergence in nats; exactly symmetric, within ``[0, ln 2]``."""
    a, b = _aligned(p, q)
    return min(LN2, js_nonnegative(a, b))


def sqrt_js(p: BeliefPMF, q: BeliefPMF) -> float:
    """Square root of :func:`js_discrete` (a metric on the simplex)."""
    return math.sqrt(js_discrete(p, q))


def tv_discrete(p: BeliefPMF, q: BeliefPMF) -> float:
    a, b = _aligned(p, q)
    return min(1.0, 0.5 * math.fsum(np.abs(a - b)))


def tv_uniform_nested(inner: UniformBoxSpec, outer: UniformBoxSpec) -> float:
    """TV between uniform laws on nested boxes: ``1 - prod(inner_w / outer_w)``."""
    if inner.centers.shape != outer.centers.shape:
        raise DimensionMismatch("boxes have different dimensions")
    if np.any(inner.lower < outer.lower) or np.any(inner.upper > outer.upper):
        raise NotNested("inner box is not contained in the outer box")
    ratio = float(np.prod(inner.widths / outer.widths))
    return min(1.0, max(0.0, 1.0 - ratio))


def gaussian_noise_ratio(sigma0: Sequence[float], sigma_eps2: float) -> float:
    """``min{1, sigma_eps2 * sqrt(sum 1/sigma_i^4)}`` for variances ``sigma_i^2``."""
    var = np.atleast_1d(np.asarray(sigma0, dtype=float))
    if var.size == 0 or np.any(~(var > 0)):
        raise NonPositiveVariance("plaintext variances must be positive")
    if sigma_eps2 < 0:
        raise NonPositiveVariance("noise variance must be non-negative")
    return min(1.0, sigma_eps2 * math.sqrt(float(np.sum(var ** -2.0))))


def tv_gaussian_diag_bounds(sigma0: Sequence[float], sigma_eps2: float) -> tuple[float, float]:
    """Bracket for ``TV(N(mu, S0) || N(mu, S0 + sigma_eps2 I))``.

    Args:
        sigma0: Diagonal variances of the plaintext Gaussian.
        sigma_eps2: Variance of the added isotropic noise.

    Returns:
        ``(lower, upper)`` = ``(t/100, 3t/2)`` with ``t`` from :func:`gaussian_noise_ratio`.
    """
    t = gaussian_noise_ratio(sigma0, sigma_eps2)
    return t / 100.0, 1.5 * t


def _normal_pdf(x: float, mu: float, var: float) -> float:
    return math.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def _pdf_crossings(mu1: float, var1: float, mu2: float, var2: float) -> list[float]:
    # Roots of log phi1 - log phi2, a quadratic a x^2 + b x + c.
    a = 0.5 / var2 - 0.5 / var1
    b = mu1 / var1 - mu2 / var2
    c = 0.5 * mu2 * mu2 / var2 - 0.5 * mu1 * mu1 / var1 + 0.5 * math.log(var2 / var1)
    if abs(a) < 1e-300:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    s = math.sqrt(disc)
    return sorted({(-b - s) / (2 * a), (-b + s) / (2 * a)})


def tv_gaussian_1d_numeric(
    mu1: float,
    var1: float,
    mu2: float,
    var2: float,
    *,
    tol: float = 1e-8,
    max_evals: int = 2_000_000,
) -> float:
    """TV between two 1-D Gaussians by adaptive Simpson quadrature.

    Integrates ``|phi1 - phi2| / 2`` over the means +- 12 combined standard
    deviations, pre-split at the density crossing points.

    Raises:
        QuadratureFailure: if the evaluation budget is exhausted before the
            absolute tolerance is met.
    """
    if not (var1 > 0 and var2 > 0):
        raise NonPositiveVariance("variances must be positive")
    if mu1 == mu2 and var1 == var2:
        return 0.0
    spread = 12.0 * math.sqrt(var1 + var2)
    lo, hi = min(mu1, mu2) - spread, max(mu1, mu2) + spread

    def f(x: float) -> float:
        return 0.5 * abs(_normal_pdf(x, mu1, var1) - _normal_pdf(x, mu2, var2))

    breaks = {lo, hi, mu1, mu2}
    breaks.update(x for x in _pdf_crossings(mu1, var1, mu2, var2) if lo < x < hi)
    for s in (math.sqrt(var1), math.sqrt(var2)):
        for k in (-3, -1, 1, 3):
            for mu in (mu1, mu2):
                x = mu + k * s
                if lo < x < hi:
                    breaks.add(x)
    edges = sorted(breaks)
    panels = [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]

    evals = 0
    total = 0.0
    panel_tol = tol / len(panels)
    for a, b in panels:
        fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
        evals += 3
        whole = (b - a) / 6.0 * (fa + 4 * fm + fb)
        stack = [(a, b, fa, fm, fb, whole, panel_tol, 0)]
        while stack:
            a0, b0, fa0, fm0, fb0, s0, t0, depth = stack.pop()
            m0 = 0.5 * (a0 + b0)
            fl, fr = f(0.5 * (a0 + m0)), f(0.5 * (m0 + b0))
            evals += 2
            if evals > max_evals:
                raise QuadratureFailure("adaptive Simpson exceeded its evaluation budget")
            left = (m0 - a0) / 6.0 * (fa0 + 4 * fl + fm0)
            right = (b0 - m0) / 6.0 * (fm0 + 4 * fr + fb0)
            err = left + right - s0
            if abs(err) <= 15.0 * t0 or depth >= 60:
                if depth >= 60 and abs(err) > 15.0 * t0:
                    raise QuadratureFailure("adaptive Simpson hit its depth limit")
                total += left + right + err / 15.0
            else:
                stack.append((a0, m0, fa0, fl, fm0, left, 0.5 * t0, depth + 1))
                stack.append((m0, b0, fm0, fr, fb0, right, 0.5 * t0, depth + 1))
    return min(1.0, max(0.0, total))


def hellinger_gaussian(
    mu1: Sequence[float],
    cov1: Sequence[float],
    mu2: Sequence[float],
    cov2: Sequence[float],
) -> float:
    """Hellinger distance between Gaussians with diagonal covariances."""
    m1, m2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    v1, v2 = np.atleast_1d(np.asarray(cov1, float)), np.atleast_1d(np.asarray(cov2, float))
    if not (m1.shape == m2.shape == v1.shape == v2.shape) or m1.ndim != 1:
        raise DimensionMismatch("means and covariances must share one dimension")
    if np.any(~(v1 > 0)) or np.any(~(v2 > 0)):
        raise NonPositiveVariance("covariance diagonals must be positive")
    avg = 0.5 * (v1 + v2)
    log_bc = (
        0.25 * np.sum(np.log(v1))
        + 0.25 * np.sum(np.log(v2))
        - 0.5 * np.sum(np.log(avg))
        - 0.125 * np.sum((m1 - m2) ** 2 / avg)
    )
    h2 = -math.expm1(min(0.0, float(log_bc)))
    return min(1.0, math.sqrt(max(0.0, h2)))


def js_bound_from_tv(xi: float, tv: float) -> float:
    """Upper bound ``(e^{2 xi} - 1)^2 tv^2 / 4`` on the posterior shift JS."""
    return 0.25 * math.expm1(2.0 * xi) ** 2 * tv * tv
