"""Protection mechanisms applied to shared model information.

Each mechanism is described by a :class:`MechanismSpec` holding its scalar
protection parameter ``gamma`` and shape metadata. The module provides the
randomized maps themselves, the closed-form distortion extent
``TV(P^O || P^S)`` and the utility/efficiency upper bounds built on it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .divergence import gaussian_noise_ratio, hellinger_gaussian
from .errors import (
    DimensionMismatch,
    InvalidMechanism,
    NegativeVariance,
    NonPositiveBound,
    RhoOutOfRange,
)
from .paillier import EncryptedVector, PaillierKeypair, encrypt_vector

FLOAT_BYTES = 8
SPARSE_INDEX_BYTES = 4
SPARSE_HEADER_BYTES = 4


class MechanismKind(str, enum.Enum):
    RANDOMIZATION = "randomization"
    PAILLIER = "paillier"
    SECRET_SHARING = "secret_sharing"
    COMPRESSION = "compression"
    SPARSITY = "sparsity"


# Name of the protection parameter in serialized form, per kind.
GAMMA_FIELD = {
    MechanismKind.RANDOMIZATION: "sigma_eps2",
    MechanismKind.PAILLIER: "n",
    MechanismKind.SECRET_SHARING: "r",
    MechanismKind.COMPRESSION: "rho",
    MechanismKind.SPARSITY: "d",
}


def as_param_vector(w: Any) -> np.ndarray:
    """Validate model information as a finite 1-D float vector."""
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vectors must be finite")
    return arr


def _vec(x) -> tuple[float, ...] | None:
    if x is None:
        return None
    return tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class MechanismSpec:
    """A protection mechanism and its parameter.

    ``gamma`` is the noise variance (randomization), the Paillier modulus
    ``n``, the secret-sharing mask bound ``r``, the keep probability
    ``rho`` (compression) or the number of uploaded coordinates ``d``
    (sparsity). ``delta`` is the plaintext half-width used by the two
    cryptographic mechanisms; ``sigma0`` holds the plaintext variances used
    by randomization and sparsity. ``filler_var`` is the variance of the
    Gaussian the server substitutes for coordinates dropped by sparsity.
    """

    kind: MechanismKind
    gamma: float
    dim_m: int
    delta: float | None = None
    sigma0: tuple[float, ...] | None = None
    filler_var: tuple[float, ...] | None = None

    def __post_init__(self):
        kind = MechanismKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "sigma0", _vec(self.sigma0))
        object.__setattr__(self, "filler_var", _vec(self.filler_var))
        if self.delta is not None:
            object.__setattr__(self, "delta", float(self.delta))
        m, g = int(self.dim_m), self.gamma
        object.__setattr__(self, "dim_m", m)
        if m < 1:
            raise InvalidMechanism("dim_m must be a positive integer")
        if not math.isfinite(g):
            raise InvalidMechanism("gamma must be finite")
        if kind is MechanismKind.COMPRESSION and not 0 < g <= 1:
            raise RhoOutOfRange("compression keep probability must lie in (0, 1]")
        if kind in (MechanismKind.PAILLIER, MechanismKind.SECRET_SHARING):
            if self.delta is None or not self.delta > 0:
                raise InvalidMechanism("delta > 0 is required for this mechanism")
        if kind is MechanismKind.SECRET_SHARING and not g >= self.delta:
            raise InvalidMechanism("secret-sharing mask bound r must satisfy r >= delta")
        if kind is MechanismKind.PAILLIER:
            if g < 6:
                raise InvalidMechanism("Paillier modulus n must be at least 6")
            if 2 * self.delta > g * g:
                raise InvalidMechanism("Paillier requires 2*delta <= n^2")
        if kind is MechanismKind.RANDOMIZATION:
            if g < 0:
                raise NegativeVariance("noise variance must be non-negative")
            if self.sigma0 is None or len(self.sigma0) != m:
                raise InvalidMechanism("randomization needs sigma0 of length m")
        if kind is MechanismKind.SPARSITY:
            if not (0 <= g <= m and float(g).is_integer()):
                raise InvalidMechanism("sparsity keeps an integer d with 0 <= d <= m")
            if self.sigma0 is None or len(self.sigma0) != m:
                raise InvalidMechanism("sparsity needs sigma0 of length m")
            if self.filler_var is not None and len(self.filler_var) != m - int(g):
                raise InvalidMechanism("filler_var must cover the m - d dropped coordinates")

    def with_gamma(self, gamma: float) -> "MechanismSpec":
        return MechanismSpec(self.kind, gamma, self.dim_m, self.delta, self.sigma0, self.filler_var)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, GAMMA_FIELD[self.kind]: self.gamma, "m": self.dim_m}
        if self.kind is MechanismKind.SPARSITY:
            out["d"] = int(self.gamma)
        if self.delta is not None:
            out["delta"] = self.delta
        if self.sigma0 is not None:
            out["sigma0"] = list(self.sigma0)
        if self.filler_var is not None:
            out["filler_var"] = list(self.filler_var)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MechanismSpec":
        data = dict(data)
        try:
            kind = MechanismKind(data.pop("kind"))
        except (KeyError, ValueError) as exc:
            raise InvalidMechanism(f"unknown or missing mechanism kind: {exc}") from exc
        name = GAMMA_FIELD[kind]
        if name not in data or "m" not in data:
            raise InvalidMechanism(f"{kind.value} needs fields {name!r} and 'm'")
        gamma = data.pop(name)
        m = data.pop("m")
        allowed = {"delta", "sigma0", "filler_var"}
        extra = set(data) - allowed
        if extra:
            raise InvalidMechanism(f"unknown mechanism fields: {sorted(extra)}")
        return cls(kind, gamma, m, data.get("delta"), data.get("sigma0"), data.get("filler_var"))


def identity_gamma(kind: MechanismKind, dim_m: int, delta: float | None = None) -> float:
    """Parameter value at which the mechanism leaves information undistorted."""
    kind = MechanismKind(kind)
    if kind is MechanismKind.RANDOMIZATION:
        return 0.0
    if kind is MechanismKind.COMPRESSION:
        return 1.0
    if kind is MechanismKind.SECRET_SHARING:
        return float(delta)
    if kind is MechanismKind.PAILLIER:
        return math.sqrt(2.0 * float(delta))
    return float(dim_m)


# ---------------------------------------------------------------------------
# Randomized maps


def _gen(rng_seed) -> np.random.Generator:
    return rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)


def apply_randomization(w, sigma_eps2: float, rng_seed=None) -> np.ndarray:
    """Add i.i.d. ``N(0, sigma_eps2)`` noise to every coordinate."""
    w = as_param_vector(w)
    if sigma_eps2 < 0:
        raise NegativeVariance("noise variance must be non-negative")
    if sigma_eps2 == 0:
        return w.copy()
    return w + _gen(rng_seed).normal(0.0, math.sqrt(sigma_eps2), size=w.shape)


@dataclass(frozen=True)
class SharePair:
    """Two additive shares held as exact dyadic rationals."""

    share1: tuple[Fraction, ...]
    share2: tuple[Fraction, ...]

    def reconstruct(self) -> np.ndarray:
        return np.array([float(a + b) for a, b in zip(self.share1, self.share2)])

    def as_float(self, which: int = 1) -> np.ndarray:
        src = self.share1 if which == 1 else self.share2
        return np.array([float(v) for v in src])

    @property
    def nbytes(self) -> int:
        return sum(_dyadic_nbytes(v) for v in self.share1) + sum(_dyadic_nbytes(v) for v in self.share2)


def _dyadic_nbytes(v: Fraction) -> int:
    # Signed mantissa plus a 2-byte power-of-two exponent.
    return (abs(v.numerator).bit_length() + 8) // 8 + 2


def apply_secret_sharing(w, r: float, rng_seed=None) -> SharePair:
    """Split ``w`` into ``share1 = w + u`` and ``share2 = -u``, ``u ~ U[-r, r]``.

    Arithmetic is done on exact rationals so ``share1 + share2 == w``
    holds bit for bit after conversion back to floats.
    """
    w = as_param_vector(w)
    if not r > 0:
        raise NonPositiveBound("mask bound r must be positive")
    u = _gen(rng_seed).uniform(-r, r, size=w.shape)
    s1 = tuple(Fraction(float(a)) + Fraction(float(b)) for a, b in zip(w, u))
    s2 = tuple(Fraction(float(a)) - b for a, b in zip(w, s1))
    return SharePair(s1, s2)


def apply_compression(w, rho, rng_seed=None) -> np.ndarray:
    """Keep coordinate ``i`` as ``w_i / rho_i`` with probability ``rho_i``, else 0."""
    w = as_param_vector(w)
    rho_arr = np.broadcast_to(np.asarray(rho, dtype=float), w.shape)
    if np.any(~(rho_arr > 0)) or np.any(rho_arr > 1):
        raise RhoOutOfRange("keep probabilities must lie in (0, 1]")
    keep = _gen(rng_seed).random(w.shape) < rho_arr
    return np.where(keep, w / rho_arr, 0.0)


def apply_sparsity(w, d: int) -> np.ndarray:
    """Upload the first ``d`` coordinates; the rest are sent as zeros."""
    w = as_param_vector(w)
    d = int(d)
    if not 0 <= d <= w.size:
        raise InvalidMechanism("d must lie in [0, m]")
    out = np.zeros_like(w)
    out[:d] = w[:d]
    return out


# ---------------------------------------------------------------------------
# Closed-form distortion and bounds


def randomization_tv(sigma_eps2: float, sigma0: Sequence[float]) -> float:
    return gaussian_noise_ratio(sigma0, sigma_eps2) / 100.0


def paillier_tv(n: float, delta: float, m: int) -> float:
    # Logs avoid overflow of n * n for large moduli.
    log_ratio = math.log(2.0 * delta) - 2.0 * math.log(n)
    return -math.expm1(m * log_ratio) if log_ratio < 0 else 0.0


def secret_sharing_tv(r: float, delta: float, m: int) -> float:
    return -math.expm1(m * math.log(delta / r)) if r > delta else 0.0


def compression_tv(rho: float, m: int) -> float:
    if rho <= 0:
        return 1.0
    return -math.expm1(m * math.log(rho)) if rho < 1 else 0.0


def sparsity_hellinger(spec: MechanismSpec) -> float:
    """Hellinger distance between dropped plaintext coordinates and the filler."""
    d = int(spec.gamma)
    rest = spec.dim_m - d
    if rest == 0:
        return 0.0
    var_o = np.asarray(spec.sigma0[d:])
    var_g = np.asarray(spec.filler_var) if spec.filler_var is not None else np.ones(rest)
    return hellinger_gaussian(np.zeros(rest), var_o, np.zeros(rest), var_g)


def distortion_tv(spec: MechanismSpec) -> float:
    """Closed-form distortion extent ``TV(P^O || P^S)`` for one client.

    Randomization uses the lower constant 1/100 of the Gaussian bracket. For
    sparsity the value is the Hellinger-based bound ``min(1, sqrt(2) h)``.
    """
    k = spec.kind
    if k is MechanismKind.RANDOMIZATION:
        return randomization_tv(spec.gamma, spec.sigma0)
    if k is MechanismKind.PAILLIER:
        # Plaintext box of width 2*delta nested in a ciphertext box of width n^2.
        return paillier_tv(spec.gamma, spec.delta, spec.dim_m)
    if k is MechanismKind.SECRET_SHARING:
        return secret_sharing_tv(spec.gamma, spec.delta, spec.dim_m)
    if k is MechanismKind.COMPRESSION:
        return compression_tv(spec.gamma, spec.dim_m)
    return min(1.0, math.sqrt(2.0) * sparsity_hellinger(spec))


def utility_loss_bound(spec: MechanismSpec, c4: float) -> float:
    """Upper bound on the utility loss for utilities valued in ``[0, c4]``."""
    if c4 < 0:
        raise ValueError("c4 must be non-negative")
    k = spec.kind
    if k in (MechanismKind.PAILLIER, MechanismKind.SECRET_SHARING):
        return 0.0
    if k is MechanismKind.RANDOMIZATION:
        return 1.5 * c4 * gaussian_noise_ratio(spec.sigma0, spec.gamma)
    if k is MechanismKind.COMPRESSION:
        return c4 * compression_tv(spec.gamma, spec.dim_m)
    return math.sqrt(2.0) * c4 * sparsity_hellinger(spec)


def efficiency_reduction_bound(spec: MechanismSpec, c5: float, num_clients: int = 2) -> float:
    """Upper bound on the efficiency reduction for costs valued in ``[0, c5]``.

    Secret sharing uses ``K * m * ln r`` with ``K = num_clients``.
    Randomization uses the upper Gaussian constant ``3/2``, since the 1/100
    factor only bounds TV from below.
    """
    if c5 < 0:
        raise ValueError("c5 must be non-negative")
    k = spec.kind
    if k is MechanismKind.SECRET_SHARING:
        return num_clients * spec.dim_m * math.log(spec.gamma)
    if k is MechanismKind.RANDOMIZATION:
        return 1.5 * c5 * gaussian_noise_ratio(spec.sigma0, spec.gamma)
    return c5 * distortion_tv(spec)


# ---------------------------------------------------------------------------
# Wire messages


@dataclass
class ProtectedMessage:
    """One protected update as transmitted by a client.

    ``payload`` is a float vector, a :class:`SharePair` or an
    :class:`EncryptedVector` depending on the mechanism.
    """

    kind: MechanismKind | None
    payload: Any
    nbytes: int
    meta: dict = field(default_factory=dict)

    def exposed(self):
        """What a semi-honest server observes from this message."""
        if isinstance(self.payload, SharePair):
            return self.payload.as_float(1)
        return self.payload

    def plaintext_view(self) -> np.ndarray:
        """Float vector usable for aggregation (not defined for ciphertexts)."""
        if isinstance(self.payload, SharePair):
            return self.payload.reconstruct()
        if isinstance(self.payload, EncryptedVector):
            raise TypeError("ciphertexts must be aggregated homomorphically")
        return np.asarray(self.payload, dtype=float)

    def to_json(self) -> Any:
        if isinstance(self.payload, EncryptedVector):
            return {"ciphertexts": self.payload.to_hex(), "scale_bits": self.payload.scale_bits}
        if isinstance(self.payload, SharePair):
            return {"share1": [str(v) for v in self.payload.share1], "share2": [str(v) for v in self.payload.share2]}
        return [float(v) for v in self.payload]


def protect(
    spec: MechanismSpec | None,
    w,
    rng_seed=None,
    keypair: PaillierKeypair | None = None,
    scale_bits: int = 32,
) -> ProtectedMessage:
    """Apply ``spec`` to ``w`` and package the result with its wire size."""
    w = as_param_vector(w)
    rng = _gen(rng_seed)
    if spec is None:
        return ProtectedMessage(None, w.copy(), FLOAT_BYTES * w.size)
    if spec.dim_m != w.size:
        raise DimensionMismatch(f"mechanism dimension {spec.dim_m} != vector length {w.size}")
    k = spec.kind
    if k is MechanismKind.RANDOMIZATION:
        return ProtectedMessage(k, apply_randomization(w, spec.gamma, rng), FLOAT_BYTES * w.size)
    if k is MechanismKind.COMPRESSION:
        out = apply_compression(w, spec.gamma, rng)
        nnz = int(np.count_nonzero(out))
        # The sender picks whichever of the sparse and dense encodings is smaller.
        sparse = SPARSE_HEADER_BYTES + nnz * (SPARSE_INDEX_BYTES + FLOAT_BYTES)
        return ProtectedMessage(k, out, min(sparse, FLOAT_BYTES * w.size))
    if k is MechanismKind.SPARSITY:
        d = int(spec.gamma)
        return ProtectedMessage(k, apply_sparsity(w, d), max(1, FLOAT_BYTES * d))
    if k is MechanismKind.SECRET_SHARING:
        shares = apply_secret_sharing(w, spec.gamma, rng)
        return ProtectedMessage(k, shares, shares.nbytes)
    if keypair is None:
        raise InvalidMechanism("Paillier protection needs a keypair")
    seed = int(rng.integers(0, 2**63 - 1))
    enc = encrypt_vector(keypair, w, seed, scale_bits)
    return ProtectedMessage(k, enc, enc.nbytes)
