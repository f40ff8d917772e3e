"""Gradient-matching reconstruction attack of a semi-honest server.

Given a model and an observed (possibly protected) batch gradient, the
attacker searches for the batch whose gradient best matches the
observation. ``CANDIDATE_MATCH`` searches the finite candidate pool;
``CONTINUOUS_DLG`` optimizes features directly, trying every label.
Ciphertext observations carry no usable signal and always fail.
"""

from __future__ import annotations

import enum
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from . import model as lr
from .data import LEFTOVER_ID, ClientDataset
from .errors import DimensionMismatch, PoolTooSmall
from .mechanisms import MechanismKind, MechanismSpec, as_param_vector, protect
from .paillier import EncryptedVector, paillier_keygen
from ._seeding import seed_sequence

logger = logging.getLogger(__name__)


class Similarity(str, enum.Enum):
    NEG_SQUARED_ERROR = "neg_squared_error"
    PSNR = "psnr"


class AttackMode(str, enum.Enum):
    CANDIDATE_MATCH = "candidate_match"
    CONTINUOUS_DLG = "continuous_dlg"


@dataclass(frozen=True)
class AttackConfig:
    """Attack settings.

    ``batch_size`` is the size ``S`` of the private batch behind each
    observed gradient. ``step_size`` is the learning rate of the one SGD
    step that produces the attacked model when ``attack_point`` is
    ``"updated"``; with ``"original"`` the attack runs at the prepared model.
    ``optimizer`` selects L-BFGS or backtracking gradient descent (initial
    step ``dlg_lr``) for the continuous mode.
    """

    trials: int = 200
    threshold: float = -1e-6
    similarity: Similarity = Similarity.NEG_SQUARED_ERROR
    mode: AttackMode = AttackMode.CANDIDATE_MATCH
    dlg_steps: int = 300
    dlg_lr: float = 0.5
    dlg_restarts: int = 3
    optimizer: str = "lbfgs"
    batch_size: int = 1
    step_size: float = 0.1
    attack_point: str = "updated"
    exhaustive_limit: int = 5000
    he_prime_bits: int = 64

    def __post_init__(self):
        object.__setattr__(self, "similarity", Similarity(self.similarity))
        object.__setattr__(self, "mode", AttackMode(self.mode))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.mode is AttackMode.CONTINUOUS_DLG and self.dlg_steps < 1:
            raise ValueError("dlg_steps must be >= 1 in continuous mode")
        if self.batch_size < 1 or self.dlg_restarts < 1 or not self.dlg_lr > 0:
            raise ValueError("batch_size, dlg_restarts and dlg_lr must be positive")
        if self.attack_point not in ("updated", "original"):
            raise ValueError("attack_point must be 'updated' or 'original'")
        if self.optimizer not in ("lbfgs", "gd"):
            raise ValueError("optimizer must be 'lbfgs' or 'gd'")

    def replace(self, **changes) -> "AttackConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return AttackConfig(**fields)


@dataclass
class Reconstruction:
    features: np.ndarray
    labels: np.ndarray
    objective: float
    candidate_ids: tuple[str, ...] | None = None
    failed: bool = False

    def __len__(self) -> int:
        return 0 if self.failed else self.features.shape[0]


@dataclass
class RecoveryCounts:
    """Per-model recovery counts ``M_d^m``, including the leftover bucket ``d0``."""

    trials: int
    batch_size: int
    support: tuple[str, ...]
    counts: dict[int, dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.support = tuple(self.support)
        if LEFTOVER_ID not in self.support:
            self.support = self.support + (LEFTOVER_ID,)

    def new_model(self, m: int) -> None:
        self.counts.setdefault(m, {d: 0 for d in self.support})

    def add(self, m: int, ident: str, k: int = 1) -> None:
        self.new_model(m)
        self.counts[m][ident] += k

    def total(self, m: int) -> int:
        return sum(self.counts[m].values())

    def check_conservation(self) -> bool:
        return all(self.total(m) == self.batch_size * self.trials for m in self.counts)

    def merge(self, other: "RecoveryCounts") -> "RecoveryCounts":
        """Combine counts from a disjoint set of trials on the same models."""
        if self.support != other.support or self.batch_size != other.batch_size:
            raise ValueError("cannot merge counts over different supports or batch sizes")
        out = RecoveryCounts(self.trials + other.trials, self.batch_size, self.support)
        for src in (self, other):
            for m, row in src.counts.items():
                for d, c in row.items():
                    out.add(m, d, c)
        return out

    def leftover_fraction(self) -> float:
        tot = sum(self.total(m) for m in self.counts)
        return sum(r[LEFTOVER_ID] for r in self.counts.values()) / tot if tot else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "trials": self.trials,
            "batch_size": self.batch_size,
            "support": list(self.support),
            "counts": {str(m): dict(row) for m, row in sorted(self.counts.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RecoveryCounts":
        out = cls(int(data["trials"]), int(data["batch_size"]), tuple(data["support"]))
        for m, row in data["counts"].items():
            for d, c in row.items():
                out.add(int(m), d, int(c))
        return out


def similarity(d_tilde, d, kind: Similarity = Similarity.NEG_SQUARED_ERROR) -> float:
    a = np.asarray(d_tilde, dtype=float).reshape(-1)
    b = np.asarray(d, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch("compared data have different feature dimensions")
    sq = float(np.sum((a - b) ** 2))
    if Similarity(kind) is Similarity.NEG_SQUARED_ERROR:
        return -sq
    mse = sq / a.size
    if mse == 0:
        return math.inf
    peak = max(float(np.max(np.abs(b))), 1e-12)
    return 10.0 * math.log10(peak * peak / mse)


def recovered(d_tilde, d, cfg: AttackConfig) -> bool:
    """Strict test ``similarity(d_tilde, d) > threshold``."""
    return similarity(d_tilde, d, cfg.similarity) > cfg.threshold


# ---------------------------------------------------------------------------
# Reconstruction


def _candidate_match(w, g_obs, pool: ClientDataset, S: int, cfg: AttackConfig) -> Reconstruction:
    G = lr.per_example_grads(w, pool.features, pool.labels, pool.n_classes)
    N = G.shape[0]
    if S == 1:
        obj = np.sum((G - g_obs) ** 2, axis=1)
        best = (int(np.argmin(obj)),)
        val = float(obj[best[0]])
    elif math.comb(N, S) <= cfg.exhaustive_limit:
        combos = np.array(list(itertools.combinations(range(N), S)))
        obj = np.sum((G[combos].mean(axis=1) - g_obs) ** 2, axis=1)
        i = int(np.argmin(obj))
        best, val = tuple(int(v) for v in combos[i]), float(obj[i])
    else:
        best, val = _greedy_batch(G, g_obs, S)
    idx = list(best)
    return Reconstruction(
        pool.features[idx].copy(), pool.labels[idx].copy(), val, tuple(pool.ids[i] for i in idx)
    )


def _greedy_batch(G: np.ndarray, g_obs: np.ndarray, S: int) -> tuple[tuple[int, ...], float]:
    # Greedy on the batch sum, then single swaps until no improvement.
    target = S * g_obs
    chosen: list[int] = []
    acc = np.zeros_like(g_obs)
    for j in range(S):
        avail = [i for i in range(G.shape[0]) if i not in chosen]
        scale = S / (j + 1)
        scores = [np.sum((scale * (acc + G[i]) - target) ** 2) for i in avail]
        pick = avail[int(np.argmin(scores))]
        chosen.append(pick)
        acc = acc + G[pick]

    def cost(idx):
        return float(np.sum((G[list(idx)].mean(axis=0) - g_obs) ** 2))

    cur = cost(chosen)
    improved = True
    while improved:
        improved = False
        for pos in range(S):
            for cand in range(G.shape[0]):
                if cand in chosen:
                    continue
                trial = chosen.copy()
                trial[pos] = cand
                c = cost(trial)
                if c < cur - 1e-18:
                    chosen, cur, improved = trial, c, True
    return tuple(chosen), cur


def matching_objective(x_flat, labels, W, G_obs):
    """Gradient-matching loss ``||mean_s grad(x_s, y_s) - G_obs||^2`` and its feature gradient."""
    S = len(labels)
    C, F1 = W.shape
    X = x_flat.reshape(S, F1 - 1)
    Xa = np.hstack([X, np.ones((S, 1))])
    P = softmax(Xa @ W.T, axis=1)
    R = P.copy()
    R[np.arange(S), labels] -= 1.0
    E = (R.T @ Xa) / S - G_obs
    f = float(np.sum(E * E))
    grads = np.empty_like(X)
    for s in range(S):
        p = P[s]
        JEx = p * (E @ Xa[s]) - p * (p @ (E @ Xa[s]))
        grads[s] = (2.0 / S * (E.T @ R[s] + W.T @ JEx))[: F1 - 1]
    return f, grads.reshape(-1)


def _descend(x0, labels, W, G, cfg: AttackConfig):
    if cfg.optimizer == "lbfgs":
        res = minimize(
            matching_objective, x0, args=(labels, W, G), jac=True, method="L-BFGS-B",
            options={"maxiter": cfg.dlg_steps, "ftol": 1e-20, "gtol": 1e-14},
        )
        return res.x, float(res.fun)
    x = x0.copy()
    f, g = matching_objective(x, labels, W, G)
    step = cfg.dlg_lr
    for _ in range(cfg.dlg_steps):
        while True:
            xn = x - step * g
            fn, gn = matching_objective(xn, labels, W, G)
            if fn <= f - 1e-4 * step * float(g @ g) or step < 1e-14:
                break
            step *= 0.5
        x, f, g = xn, fn, gn
        step *= 2.0
        if f < 1e-20:
            break
    return x, f


def _continuous_dlg(w, g_obs, pool: ClientDataset, S: int, cfg: AttackConfig, rng) -> Reconstruction:
    C, F = pool.n_classes, pool.n_features
    W = lr.weights_matrix(w, F, C)
    G = g_obs.reshape(C, F + 1)
    label_sets = list(itertools.combinations_with_replacement(range(C), S))
    if len(label_sets) > cfg.exhaustive_limit:
        pick = rng.choice(len(label_sets), size=cfg.exhaustive_limit, replace=False)
        label_sets = [label_sets[i] for i in sorted(pick)]
    scale = float(np.std(pool.features)) or 1.0
    best_x, best_f, best_y = None, math.inf, None
    for labels in label_sets:
        labels = np.array(labels)
        for _ in range(cfg.dlg_restarts):
            x0 = rng.normal(0.0, 2.0 * scale, size=S * F)
            x, f = _descend(x0, labels, W, G, cfg)
            if f < best_f:
                best_x, best_f, best_y = x, f, labels
            if f < 1e-12:
                break
    return Reconstruction(best_x.reshape(S, F), best_y, best_f)


def dlg_attack(
    model_w,
    observed_grad,
    pool: ClientDataset,
    S: int,
    cfg: AttackConfig,
    rng_seed=None,
) -> Reconstruction:
    """Reconstruct ``S`` data points whose batch gradient matches ``observed_grad``."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if S > len(pool.candidate_pool) or S > len(pool):
        raise PoolTooSmall(f"pool of {len(pool)} cannot supply a batch of {S}")
    w = as_param_vector(model_w)
    m = lr.num_params(pool.n_features, pool.n_classes)
    if w.size != m:
        raise DimensionMismatch(f"model has {w.size} parameters, expected {m}")
    if isinstance(observed_grad, EncryptedVector):
        return Reconstruction(np.empty((0, pool.n_features)), np.empty(0, dtype=int), math.inf, failed=True)
    g = as_param_vector(observed_grad)
    if g.size != w.size:
        raise DimensionMismatch("gradient and model dimensions differ")
    if cfg.mode is AttackMode.CANDIDATE_MATCH:
        return _candidate_match(w, g, pool, S, cfg)
    return _continuous_dlg(w, g, pool, S, cfg, rng)


def match_batch(rec: Reconstruction, true_X: np.ndarray, cfg: AttackConfig) -> list[bool]:
    """Greedily pair each true datum with an unused reconstruction above threshold."""
    used: set[int] = set()
    flags = []
    for x in true_X:
        best, best_sim = None, -math.inf
        for j in range(len(rec)):
            if j in used:
                continue
            s = similarity(rec.features[j], x, cfg.similarity)
            if s > cfg.threshold and s > best_sim:
                best, best_sim = j, s
        if best is not None:
            used.add(best)
        flags.append(best is not None)
    return flags


def exposed_gradient(
    grad_vec: np.ndarray,
    mechanism: MechanismSpec | None,
    rng: np.random.Generator,
    keypair=None,
):
    """What the server sees when a client shares ``grad_vec`` under ``mechanism``."""
    return protect(mechanism, grad_vec, rng, keypair).exposed()


def select_private_batch(data: ClientDataset, S: int, rng_seed) -> np.ndarray:
    data.require_pool(S)
    rng = np.random.default_rng(rng_seed)
    return np.sort(rng.choice(len(data), size=S, replace=False))


def run_attack_rounds(
    models: Sequence[np.ndarray],
    client_data: ClientDataset,
    mechanism: MechanismSpec | None,
    cfg: AttackConfig,
    rng_seed=None,
    batch_index: Iterable[int] | None = None,
) -> RecoveryCounts:
    """Attack every model ``cfg.trials`` times and count recoveries.

    The client's private batch is fixed across models and trials (drawn
    from ``rng_seed`` unless ``batch_index`` is given); mechanism noise is
    redrawn on every trial. The exposed gradient is evaluated at the same
    point that is handed to the attacker.
    """
    S = cfg.batch_size
    client_data.require_pool(S)
    ss = seed_sequence(rng_seed)
    batch_ss, trial_ss, key_ss = ss.spawn(3)
    idx = np.array(list(batch_index)) if batch_index is not None else select_private_batch(client_data, S, batch_ss)
    X, y = client_data.features[idx], client_data.labels[idx]
    ids = [client_data.ids[i] for i in idx]
    keypair = None
    if mechanism is not None and mechanism.kind is MechanismKind.PAILLIER:
        keypair = paillier_keygen(cfg.he_prime_bits, int(key_ss.generate_state(1)[0]))
    counts = RecoveryCounts(cfg.trials, S, tuple(client_data.candidate_pool))
    C = client_data.n_classes
    model_ss = trial_ss.spawn(len(models))
    for mi, w in enumerate(models):
        counts.new_model(mi)
        w = as_param_vector(w)
        point = w
        if cfg.attack_point == "updated":
            point = w - cfg.step_size * lr.grad(w, X, y, C)
        g = lr.grad(point, X, y, C)
        rng = np.random.default_rng(model_ss[mi])
        for _ in range(cfg.trials):
            obs = exposed_gradient(g, mechanism, rng, keypair)
            rec = dlg_attack(point, obs, client_data, S, cfg, rng)
            flags = match_batch(rec, X, cfg)
            for ident, hit in zip(ids, flags):
                if hit:
                    counts.add(mi, ident)
            counts.add(mi, LEFTOVER_ID, S - sum(flags))
    return counts


def attack_transcript(transcript, client: int, data: ClientDataset, cfg: AttackConfig, rng_seed=None) -> list[Reconstruction]:
    """Attack each message a client sent during federated training.

    With one local step the weight delta equals ``-lr * grad``, so the
    gradient is recovered by rescaling before matching.
    """
    rng = np.random.default_rng(rng_seed)
    out = []
    for msg in transcript.for_client(client):
        obs = msg.shared.exposed()
        if not isinstance(obs, EncryptedVector):
            obs = -np.asarray(obs, dtype=float) / (transcript.learning_rate * transcript.local_steps)
        out.append(dlg_attack(msg.model, obs, data, cfg.batch_size, cfg, rng))
    return out
