"""Deterministic horizontal federated averaging over logistic regression.

Each round every client starts from the current global model, runs
``local_steps`` SGD steps on mini-batches of its records, protects the
resulting weight delta and sends it to the server. The server aggregates
the deltas with weights ``n_k / n``. Batch sampling and mechanism noise
draw from separate random streams, so a lossless mechanism reproduces the
unprotected trajectory exactly.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import model as lr
from .data import ClientDataset, concat
from .errors import DimensionMismatch, EmptyDataset, PoolTooSmall
from .mechanisms import MechanismKind, MechanismSpec, ProtectedMessage, protect
from .paillier import EncryptedVector, PaillierKeypair, decrypt_vector, paillier_keygen, weighted_sum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FLConfig:
    num_clients: int = 2
    rounds: int = 50
    local_steps: int = 1
    learning_rate: float = 0.5
    batch_size: int = 4
    mechanism: MechanismSpec | None = None
    seed: int = 0
    init_scale: float = 0.01
    paillier_prime_bits: int = 128
    scale_bits: int = 32

    def __post_init__(self):
        if self.num_clients < 1 or self.batch_size < 1 or self.rounds < 1 or self.local_steps < 1:
            raise ValueError("num_clients, rounds, local_steps and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def replace(self, **changes) -> "FLConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return FLConfig(**fields)


@dataclass
class Message:
    round: int
    client: int
    model: np.ndarray
    shared: ProtectedMessage
    seconds: float = 0.0

    @property
    def nbytes(self) -> int:
        return self.shared.nbytes


@dataclass
class Transcript:
    """Everything a semi-honest server observes during training."""

    messages: list[Message] = field(default_factory=list)
    mechanism: MechanismSpec | None = None
    learning_rate: float = 0.0
    local_steps: int = 1

    def for_client(self, k: int) -> list[Message]:
        return [m for m in self.messages if m.client == k]

    def mean_bytes(self) -> float:
        return float(np.mean([m.nbytes for m in self.messages])) if self.messages else 0.0

    def to_dict(self) -> dict[str, Any]:
        # Wall-clock timings are left out so exports are reproducible.
        return {
            "mechanism": None if self.mechanism is None else self.mechanism.to_dict(),
            "learning_rate": self.learning_rate,
            "local_steps": self.local_steps,
            "messages": [
                {
                    "round": m.round,
                    "client": m.client,
                    "model": [float(v) for v in m.model],
                    "shared": m.shared.to_json(),
                    "nbytes": m.nbytes,
                }
                for m in self.messages
            ],
        }


@dataclass
class FLResult:
    global_model: np.ndarray
    transcript: Transcript
    utility: float


def fedavg(updates: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    """Weighted mean of client updates; the plain coordinate mean when sizes agree."""
    U = np.stack([np.asarray(u, dtype=float) for u in updates])
    sizes = np.asarray(sizes, dtype=float)
    if np.all(sizes == sizes[0]):
        return U.mean(axis=0)
    return np.tensordot(sizes / sizes.sum(), U, axes=1)


def _validate(cfg: FLConfig, data: Sequence[ClientDataset]) -> tuple[int, int]:
    if not data:
        raise EmptyDataset("no client datasets supplied")
    if len(data) != cfg.num_clients:
        raise DimensionMismatch(f"config expects {cfg.num_clients} clients, got {len(data)}")
    n_features = data[0].n_features
    n_classes = max(d.n_classes for d in data)
    for d in data:
        if d.n_features != n_features:
            raise DimensionMismatch("clients disagree on the feature dimension")
        if len(d) < cfg.batch_size:
            raise PoolTooSmall(f"client with {len(d)} records cannot supply batches of {cfg.batch_size}")
    m = lr.num_params(n_features, n_classes)
    if cfg.mechanism is not None and cfg.mechanism.dim_m != m:
        raise DimensionMismatch(f"mechanism dimension {cfg.mechanism.dim_m} != model size {m}")
    return n_features, n_classes


def _local_train(w, d: ClientDataset, cfg: FLConfig, rng: np.random.Generator, n_classes: int) -> np.ndarray:
    w_local = w.copy()
    for _ in range(cfg.local_steps):
        idx = rng.choice(len(d), size=cfg.batch_size, replace=False)
        w_local = w_local - cfg.learning_rate * lr.grad(w_local, d.features[idx], d.labels[idx], n_classes)
    return w_local


def train_federated(
    cfg: FLConfig,
    data: Sequence[ClientDataset],
    test: ClientDataset | None = None,
    keypair: PaillierKeypair | None = None,
) -> FLResult:
    """Run FedAvg and return the final model, the transcript and held-out accuracy.

    Args:
        cfg: Simulation settings, including the optional mechanism.
        data: One dataset per client.
        test: Held-out records for the utility; the pooled client data is
            used when omitted.
        keypair: Paillier keys; generated from the seed when needed.
    """
    n_features, n_classes = _validate(cfg, data)
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, batch_ss, mech_ss, key_ss = ss.spawn(4)
    w = lr.init_params(n_features, n_classes, np.random.default_rng(init_ss), cfg.init_scale)
    batch_rng = np.random.default_rng(batch_ss)
    mech_rng = np.random.default_rng(mech_ss)
    spec = cfg.mechanism
    he = spec is not None and spec.kind is MechanismKind.PAILLIER
    if he and keypair is None:
        keypair = paillier_keygen(cfg.paillier_prime_bits, int(key_ss.generate_state(1)[0]))
    sizes = [len(d) for d in data]
    transcript = Transcript(mechanism=spec, learning_rate=cfg.learning_rate, local_steps=cfg.local_steps)

    for rnd in range(cfg.rounds):
        msgs = []
        for k, d in enumerate(data):
            t0 = time.perf_counter()
            delta = _local_train(w, d, cfg, batch_rng, n_classes) - w
            msg = protect(spec, delta, mech_rng, keypair, cfg.scale_bits)
            msgs.append(Message(rnd, k, w.copy(), msg, time.perf_counter() - t0))
        if he:
            agg = weighted_sum([m.shared.payload for m in msgs], sizes)
            update = decrypt_vector(keypair, agg, divisor=sum(sizes))
        else:
            update = fedavg([m.shared.plaintext_view() for m in msgs], sizes)
        w = w + update
        transcript.messages.extend(msgs)

    held_out = test if test is not None else concat(data)
    utility = lr.accuracy(w, held_out.features, held_out.labels, n_classes)
    logger.debug("trained %d rounds, utility %.4f", cfg.rounds, utility)
    return FLResult(w, transcript, utility)


def train_centralized(cfg: FLConfig, data: ClientDataset) -> np.ndarray:
    """Plain mini-batch SGD on one dataset using the simulator's random streams."""
    n_features, n_classes = data.n_features, data.n_classes
    init_ss, batch_ss, _, _ = np.random.SeedSequence(cfg.seed).spawn(4)
    w = lr.init_params(n_features, n_classes, np.random.default_rng(init_ss), cfg.init_scale)
    rng = np.random.default_rng(batch_ss)
    for _ in range(cfg.rounds):
        w = _local_train(w, data, cfg, rng, n_classes)
    return w


@dataclass
class UtilityLoss:
    mean: float
    stderr: float
    per_seed: list[float]
    protected: list[float]
    unprotected: list[float]


def _run_pair(cfg: FLConfig, data, mechanism, test, seed: int) -> tuple[float, float]:
    base = train_federated(cfg.replace(mechanism=None, seed=seed), data, test).utility
    prot = train_federated(cfg.replace(mechanism=mechanism, seed=seed), data, test).utility
    return base, prot


def measure_utility_loss(
    cfg: FLConfig,
    data: Sequence[ClientDataset],
    mechanism: MechanismSpec | None,
    num_seeds: int,
    test: ClientDataset | None = None,
    jobs: int = 1,
) -> UtilityLoss:
    """Mean over seeds of unprotected minus protected held-out accuracy.

    Seeds are ``cfg.seed, cfg.seed + 1, ...``; both arms of a pair share the
    seed, so batch sampling is common to them.
    """
    if num_seeds < 1:
        raise ValueError("num_seeds must be >= 1")
    seeds = [cfg.seed + s for s in range(num_seeds)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(lambda s: _run_pair(cfg, data, mechanism, test, s), seeds))
    else:
        pairs = [_run_pair(cfg, data, mechanism, test, s) for s in seeds]
    base = [p[0] for p in pairs]
    prot = [p[1] for p in pairs]
    diffs = [b - p for b, p in pairs]
    se = float(np.std(diffs, ddof=1) / math.sqrt(len(diffs))) if len(diffs) > 1 else 0.0
    return UtilityLoss(float(np.mean(diffs)), se, diffs, prot, base)


@dataclass
class EfficiencyReduction:
    bytes: float
    bytes_protected: float
    bytes_unprotected: float
    seconds: float


def measure_efficiency_reduction(
    cfg: FLConfig,
    data: Sequence[ClientDataset],
    mechanism: MechanismSpec | None,
    test: ClientDataset | None = None,
) -> EfficiencyReduction:
    """Protected minus unprotected mean bytes per client message (and seconds)."""
    base = train_federated(cfg.replace(mechanism=None), data, test).transcript
    prot = train_federated(cfg.replace(mechanism=mechanism), data, test).transcript
    sec = float(np.mean([m.seconds for m in prot.messages]) - np.mean([m.seconds for m in base.messages]))
    return EfficiencyReduction(
        prot.mean_bytes() - base.mean_bytes(), prot.mean_bytes(), base.mean_bytes(), sec
    )


def encrypted_payload(msg: Message) -> bool:
    return isinstance(msg.shared.payload, EncryptedVector)
