"""Paillier additively homomorphic encryption with fixed-point encoding.

Textbook construction with ``g = n + 1``. Big-integer arithmetic uses gmpy2.
Not hardened for production use: no constant-time guarantees.
"""

from __future__ import annotations

import math
import random
import secrets
from dataclasses import dataclass
from typing import Iterable, Sequence

import gmpy2
import numpy as np

from .errors import CiphertextNotInGroup, PlaintextOutOfRange, PrimeGenerationFailure

MAX_PRIME_ATTEMPTS = 10_000
DEFAULT_SCALE_BITS = 32


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    g: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def ciphertext_bytes(self) -> int:
        return (self.n_sq.bit_length() + 7) // 8


@dataclass(frozen=True)
class PaillierKeypair:
    """Public modulus, generator and private decryption parameters.

    ``p`` and ``q`` are kept so tests can check the construction.
    """

    n: int
    g: int
    lam: int
    mu: int
    p: int
    q: int

    @property
    def public(self) -> PaillierPublicKey:
        return PaillierPublicKey(self.n, self.g)

    @property
    def n_sq(self) -> int:
        return self.n * self.n


def _rng(seed) -> random.Random:
    if seed is None:
        return secrets.SystemRandom()
    if isinstance(seed, random.Random):
        return seed
    return random.Random(int(seed))


def _L(x: int, n: int) -> int:
    return (x - 1) // n


def keypair_from_primes(p: int, q: int) -> PaillierKeypair:
    """Build a keypair from explicit primes (``g = n + 1``)."""
    p, q = int(p), int(q)
    if p == q or not gmpy2.is_prime(p) or not gmpy2.is_prime(q):
        raise PrimeGenerationFailure("p and q must be distinct primes")
    n = p * q
    if math.gcd(n, (p - 1) * (q - 1)) != 1:
        raise PrimeGenerationFailure("gcd(pq, (p-1)(q-1)) != 1")
    g = n + 1
    lam = (p - 1) * (q - 1) // math.gcd(p - 1, q - 1)
    n_sq = n * n
    u = _L(int(gmpy2.powmod(g, lam, n_sq)), n)
    try:
        mu = int(gmpy2.invert(u, n))
    except ZeroDivisionError as exc:  # pragma: no cover - impossible with g = n + 1
        raise PrimeGenerationFailure("L(g^lambda) is not invertible mod n") from exc
    return PaillierKeypair(n=n, g=g, lam=lam, mu=mu, p=p, q=q)


def _random_prime(bits: int, rng: random.Random) -> int:
    for _ in range(MAX_PRIME_ATTEMPTS):
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if gmpy2.is_prime(cand, 40):
            return cand
    raise PrimeGenerationFailure(f"no {bits}-bit prime found")


def paillier_keygen(prime_bits: int, rng_seed=None) -> PaillierKeypair:
    """Generate a keypair whose primes have exactly ``prime_bits`` bits."""
    if prime_bits < 3:
        raise PrimeGenerationFailure("prime_bits must be at least 3")
    rng = _rng(rng_seed)
    for _ in range(MAX_PRIME_ATTEMPTS):
        p = _random_prime(prime_bits, rng)
        q = _random_prime(prime_bits, rng)
        if p != q and math.gcd(p * q, (p - 1) * (q - 1)) == 1:
            return keypair_from_primes(p, q)
    raise PrimeGenerationFailure("could not find a valid prime pair")


def _random_unit(n: int, rng: random.Random) -> int:
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def paillier_encrypt(pk, m: int, rng_seed=None) -> int:
    """Encrypt ``0 <= m < n`` as ``g^m r^n mod n^2``."""
    n = pk.n
    m = int(m)
    if not 0 <= m < n:
        raise PlaintextOutOfRange(f"plaintext must lie in [0, {n})")
    n_sq = n * n
    r = _random_unit(n, _rng(rng_seed))
    # g = n + 1 gives g^m = 1 + m n (mod n^2).
    gm = (1 + m * n) % n_sq if pk.g == n + 1 else int(gmpy2.powmod(pk.g, m, n_sq))
    return int(gm * gmpy2.powmod(r, n, n_sq) % n_sq)


def _check_ciphertext(n: int, c: int) -> int:
    c = int(c)
    if not 0 < c < n * n or math.gcd(c, n) != 1:
        raise CiphertextNotInGroup("ciphertext is not a unit modulo n^2")
    return c


def paillier_decrypt(sk: PaillierKeypair, c: int) -> int:
    c = _check_ciphertext(sk.n, c)
    u = _L(int(gmpy2.powmod(c, sk.lam, sk.n_sq)), sk.n)
    return u * sk.mu % sk.n


def paillier_add(pk, c1: int, c2: int) -> int:
    """Ciphertext of the plaintext sum modulo ``n``."""
    n = pk.n
    return _check_ciphertext(n, c1) * _check_ciphertext(n, c2) % (n * n)


def paillier_scale(pk, c: int, k: int) -> int:
    """Ciphertext of ``k * m mod n`` for a non-negative integer ``k``."""
    n = pk.n
    return int(gmpy2.powmod(_check_ciphertext(n, c), int(k), n * n))


def encode_fixed_point(x: float, n: int, scale_bits: int = DEFAULT_SCALE_BITS) -> int:
    """Map a real to ``Z_n`` as ``round(x * 2^f)`` with two's-complement wrap."""
    v = int(round(float(x) * (1 << scale_bits)))
    if abs(v) >= n // 2:
        raise PlaintextOutOfRange("value too large for the modulus at this scale")
    return v % n


def decode_fixed_point(v: int, n: int, scale_bits: int = DEFAULT_SCALE_BITS, divisor: int = 1) -> float:
    v = int(v) % n
    if v > n // 2:
        v -= n
    return v / (divisor * (1 << scale_bits))


@dataclass(frozen=True)
class EncryptedVector:
    """Paillier ciphertexts for a real vector under fixed-point encoding."""

    public_key: PaillierPublicKey
    ciphertexts: tuple[int, ...]
    scale_bits: int = DEFAULT_SCALE_BITS

    def __len__(self) -> int:
        return len(self.ciphertexts)

    @property
    def nbytes(self) -> int:
        return len(self.ciphertexts) * self.public_key.ciphertext_bytes

    def to_hex(self) -> list[str]:
        return [format(c, "x") for c in self.ciphertexts]


def encrypt_vector(pk, values: Sequence[float], rng_seed=None, scale_bits: int = DEFAULT_SCALE_BITS) -> EncryptedVector:
    rng = _rng(rng_seed)
    pub = pk.public if isinstance(pk, PaillierKeypair) else pk
    cts = tuple(paillier_encrypt(pub, encode_fixed_point(v, pub.n, scale_bits), rng) for v in values)
    return EncryptedVector(pub, cts, scale_bits)


def weighted_sum(vectors: Sequence[EncryptedVector], weights: Iterable[int]) -> EncryptedVector:
    """Homomorphic ``sum_k w_k x_k`` for non-negative integer weights."""
    weights = [int(w) for w in weights]
    if not vectors or len(vectors) != len(weights):
        raise ValueError("need one weight per encrypted vector")
    pub = vectors[0].public_key
    dim = len(vectors[0])
    out = []
    for j in range(dim):
        acc = 1  # trivial encryption of 0 with r = 1
        for vec, w in zip(vectors, weights):
            acc = acc * paillier_scale(pub, vec.ciphertexts[j], w) % pub.n_sq
        out.append(acc)
    return EncryptedVector(pub, tuple(out), vectors[0].scale_bits)


def decrypt_vector(sk: PaillierKeypair, vec: EncryptedVector, divisor: int = 1) -> np.ndarray:
    return np.array(
        [decode_fixed_point(paillier_decrypt(sk, c), sk.n, vec.scale_bits, divisor) for c in vec.ciphertexts]
    )
