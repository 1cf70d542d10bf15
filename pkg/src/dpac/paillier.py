"""Paillier cryptosystem with the g = N + 1 simplification and a signed fixed-point codec.

Keys, ciphertexts and the codec are immutable values.  Every randomized
operation takes an explicit ``random.Random`` so that runs are reproducible.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction

import gmpy2

DEFAULT_KEY_BITS = 1024
DEFAULT_SCALE = 2**40
MAX_PRIME_ATTEMPTS = 10_000


class PaillierError(Exception):
    """Base class for cryptosystem failures."""


class KeyGenerationError(PaillierError):
    """Prime search gave up; retrying with another seed is safe."""


class IntegrityError(PaillierError):
    """A ciphertext is not a unit modulo N."""


class CodecRangeError(PaillierError, ValueError):
    """A real value does not fit the signed plaintext range."""


@dataclass(frozen=True)
class PublicKey:
    n: int

    @property
    def nsquare(self) -> int:
        return self.n * self.n

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def bits(self) -> int:
        return self.n.bit_length()


@dataclass(frozen=True)
class PaillierKeypair:
    public: PublicKey
    p: int
    q: int

    @property
    def n(self) -> int:
        return self.public.n

    @cached_property
    def lam(self) -> int:
        # phi(N) works in place of lcm(p-1, q-1) when g = N + 1
        return (self.p - 1) * (self.q - 1)

    @cached_property
    def mu(self) -> int:
        return int(gmpy2.invert(self.lam, self.n))

    def to_record(self) -> dict:
        """Serialize as hex strings ``{"N", "p", "q"}``."""
        return {"N": hex(self.n), "p": hex(self.p), "q": hex(self.q)}

    @classmethod
    def from_record(cls, record: dict) -> "PaillierKeypair":
        p, q = (int(record[k], 0) for k in ("p", "q"))
        n = int(record["N"], 0)
        if p * q != n or p == q:
            raise ValueError("key record is inconsistent: N != p*q or p == q")
        return cls(PublicKey(n), p, q)


@dataclass(frozen=True)
class Ciphertext:
    value: int
    n: int

    def __post_init__(self):
        if not 0 < self.value < self.n * self.n:
            raise IntegrityError("ciphertext outside (0, N^2)")


def _random_prime(bits: int, rng: random.Random) -> int:
    for _ in range(MAX_PRIME_ATTEMPTS):
        # top two bits set so that p*q has exactly 2*bits bits
        cand = rng.getrandbits(bits) | (3 << (bits - 2)) | 1
        if gmpy2.is_prime(cand, 50):
            return cand
    raise KeyGenerationError(f"no {bits}-bit prime found in {MAX_PRIME_ATTEMPTS} draws")


def keygen(bits: int = DEFAULT_KEY_BITS, rng: random.Random | None = None) -> PaillierKeypair:
    """Generate a keypair whose modulus has exactly ``bits`` bits.

    Deterministic for a seeded ``rng``.
    """
    if bits < 16 or bits % 2:
        raise ValueError("key size must be an even number of bits >= 16")
    rng = rng if rng is not None else random.Random()
    half = bits // 2
    for _ in range(MAX_PRIME_ATTEMPTS):
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if math.gcd(n, (p - 1) * (q - 1)) == 1 and n.bit_length() == bits:
            return PaillierKeypair(PublicKey(n), p, q)
    raise KeyGenerationError("could not find a distinct prime pair")


def _blinding(n: int, rng: random.Random) -> int:
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def encrypt(pub: PublicKey, m: int, rng: random.Random) -> Ciphertext:
    """Encrypt ``0 <= m < N`` as ``(N+1)^m * r^N mod N^2``."""
    n = pub.n
    if not 0 <= m < n:
        raise ValueError(f"plaintext {m} outside [0, N)")
    nsq = pub.nsquare
    # (N+1)^m = 1 + m*N mod N^2
    gm = (1 + m * n) % nsq
    rn = gmpy2.powmod(_blinding(n, rng), n, nsq)
    return Ciphertext(int(gm * rn % nsq), n)


def decrypt(keypair: PaillierKeypair, c: Ciphertext) -> int:
    n = keypair.n
    if c.n != n:
        raise ValueError("ciphertext was produced under a different public key")
    if math.gcd(c.value, n) != 1:
        raise IntegrityError("ciphertext is not coprime to N")
    nsq = n * n
    u = int(gmpy2.powmod(c.value, keypair.lam, nsq))
    return (u - 1) // n * keypair.mu % n


def c_add(pub: PublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    """Homomorphic addition: the product of ciphertexts decrypts to ``m1 + m2 mod N``."""
    if c1.n != pub.n or c2.n != pub.n:
        raise ValueError("modulus mismatch in homomorphic addition")
    return Ciphertext(c1.value * c2.value % pub.nsquare, pub.n)


def c_scale(pub: PublicKey, c: Ciphertext, k: int) -> Ciphertext:
    """Homomorphic scaling by a positive integer ``k``."""
    if c.n != pub.n:
        raise ValueError("modulus mismatch in homomorphic scaling")
    if k < 1:
        raise ValueError("scalar must be a positive integer")
    return Ciphertext(int(gmpy2.powmod(c.value, k, pub.nsquare)), pub.n)


def round_half_away(x) -> int:
    """Round a float, int or Fraction to the nearest integer, ties away from zero."""
    if isinstance(x, int):
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            raise CodecRangeError(f"cannot encode non-finite value {x}")
        a = abs(x)
        if a >= 2.0**52:
            r = int(a)
        else:
            r = math.floor(a)
            if a - r >= 0.5:  # exact: a - floor(a) is representable
                r += 1
        return -r if x < 0 else r
    x = Fraction(x)
    r = (abs(x.numerator) * 2 + x.denominator) // (2 * x.denominator)
    return -r if x < 0 else r


def scaled_int(x, scale: int) -> int:
    """``round_half_away(x * scale)`` computed without floating error."""
    if isinstance(x, float) and scale & (scale - 1) == 0:
        # multiplying by a power of two is exact unless it overflows
        v = x * scale
        if math.isfinite(v):
            return round_half_away(v)
    return round_half_away(Fraction(x) * scale)


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point encoding of reals into ``Z_N``.

    A real ``x`` maps to ``round(x * scale)`` reduced mod ``N``; negative values
    land in the upper half ``[N/2, N)``.
    """

    n: int
    scale: int = DEFAULT_SCALE

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be a positive integer")

    @property
    def max_int(self) -> int:
        """Largest signed magnitude representable, ``ceil(N/2) - 1``."""
        return (self.n - 1) // 2

    def check_int(self, v: int) -> int:
        if abs(v) > self.max_int:
            raise CodecRangeError(
                f"fixed-point magnitude {abs(v)} (~2^{abs(v).bit_length()}) exceeds "
                f"the signed range of a {self.n.bit_length()}-bit modulus"
            )
        return v

    def to_int(self, x) -> int:
        """Signed scaled integer for ``x`` (range-checked)."""
        return self.check_int(scaled_int(x, self.scale))

    def wrap(self, v: int) -> int:
        """Signed integer -> plaintext residue."""
        return self.check_int(v) % self.n

    def unwrap(self, m: int) -> int:
        """Plaintext residue -> signed integer."""
        return m - self.n if m > self.max_int else m

    def encode(self, x) -> int:
        return self.wrap(scaled_int(x, self.scale))

    def decode(self, m: int) -> float:
        return self.unwrap(m) / self.scale

    def decode_exact(self, m: int) -> Fraction:
        return Fraction(self.unwrap(m), self.scale)


def encode_fixed(x, codec: FixedPointCodec) -> int:
    return codec.encode(x)


def decode_fixed(m: int, codec: FixedPointCodec) -> float:
    return codec.decode(m)
