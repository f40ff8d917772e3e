"""Fully discrete worlds for brute-force checks of the leakage inequalities.

A world has a finite parameter set ``W``, a finite data pool ``D``, an
explicit channel ``f(d | w)``, a prior over ``D`` and two laws over ``W``:
the unprotected ``P^O`` and the protected ``P^S``. Every quantity in the
bounds can then be evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .divergence import BeliefPMF, js_bound_from_tv, js_discrete, sqrt_js, tv_discrete
from .estimation import privacy_upper_bound_two_case
from .tuner import nfl_rhs

# Absolute slack for comparisons of quantities computed in floating point.
CHECK_ATOL = 1e-12


@dataclass(frozen=True)
class DiscreteWorld:
    channel: np.ndarray  # shape (|W|, |D|); row w is f(. | w)
    prior: np.ndarray  # shape (|D|,)
    p_orig: np.ndarray  # shape (|W|,)
    p_prot: np.ndarray  # shape (|W|,)

    @property
    def data_ids(self) -> list[str]:
        return [f"d{i + 1}" for i in range(self.channel.shape[1])]

    @property
    def param_ids(self) -> list[str]:
        return [f"w{i + 1}" for i in range(self.channel.shape[0])]

    def _pmf(self, v: np.ndarray, ids: list[str]) -> BeliefPMF:
        return BeliefPMF(ids, v / math.fsum(v))

    @property
    def f_prior(self) -> BeliefPMF:
        return self._pmf(self.prior, self.data_ids)

    @property
    def f_orig(self) -> BeliefPMF:
        return self._pmf(self.p_orig @ self.channel, self.data_ids)

    @property
    def f_prot(self) -> BeliefPMF:
        return self._pmf(self.p_prot @ self.channel, self.data_ids)

    @property
    def xi(self) -> float:
        return float(np.max(np.abs(np.log(self.channel) - np.log(self.prior)[None, :])))

    @property
    def c2(self) -> float:
        return 0.5 * math.expm1(2.0 * self.xi)

    @property
    def tv(self) -> float:
        return tv_discrete(self._pmf(self.p_orig, self.param_ids), self._pmf(self.p_prot, self.param_ids))

    @property
    def c1(self) -> float:
        return sqrt_js(self.f_orig, self.f_prior)

    @property
    def leakage(self) -> float:
        return sqrt_js(self.f_prot, self.f_prior)


def random_world(rng: np.random.Generator, max_pool: int = 8, max_params: int = 8) -> DiscreteWorld:
    """Draw a world with Dirichlet(1) channel rows, prior and parameter laws."""
    nd = int(rng.integers(2, max_pool + 1))
    nw = int(rng.integers(2, max_params + 1))
    channel = rng.dirichlet(np.ones(nd), size=nw)
    # Keep every entry strictly positive so xi is finite.
    channel = np.maximum(channel, 1e-12)
    channel /= channel.sum(axis=1, keepdims=True)
    prior = np.maximum(rng.dirichlet(np.ones(nd)), 1e-12)
    prior /= prior.sum()
    return DiscreteWorld(channel, prior, rng.dirichlet(np.ones(nw)), rng.dirichlet(np.ones(nw)))


def random_worlds(n: int, seed: int = 0, max_pool: int = 8, max_params: int = 8) -> Iterator[DiscreteWorld]:
    rng = np.random.default_rng(seed)
    for _ in range(n):
        yield random_world(rng, max_pool, max_params)


@dataclass(frozen=True)
class BoundCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + CHECK_ATOL

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, "slack": self.slack}


def check_world(world: DiscreteWorld) -> list[BoundCheck]:
    """Evaluate the posterior-shift bound, the two-case bound and the tradeoff inequality."""
    tv, xi, c1, c2 = world.tv, world.xi, world.c1, world.c2
    leak = world.leakage
    return [
        BoundCheck("js_tv", js_discrete(world.f_prot, world.f_orig), js_bound_from_tv(xi, tv)),
        BoundCheck("two_case", leak, privacy_upper_bound_two_case(c1, c2, tv)),
        # Checked against the exact leakage; the affine metric would make it trivial.
        BoundCheck("nfl", c1, nfl_rhs(leak, xi, tv)),
    ]
