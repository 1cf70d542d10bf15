"""Distributed shuffling: correlated zero-sum randomness from encrypted neighbour exchanges.

Each agent perturbs its value, and every neighbouring pair exchanges Paillier
ciphertexts so that agent ``i`` learns ``a_{j->i} (dbar_j - dbar_i)`` under its
own key and nothing else.  Weighting those by its private gain gives

    Delta_i = sum_j a_{i->j} a_{j->i} (dbar_j - dbar_i),

which sums to zero over the network.  All arithmetic after the fixed-point
encoding is exact integer arithmetic, so the zero sum is exact.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import paillier as pl
from .netgraph import WeightedGraph
from .privacy import one_minus_alpha
from .simnet import CIPHERTEXT, PUBLIC_KEY, SHUFFLE, Message, Network

PAILLIER = "paillier"
PLAINTEXT = "plaintext"


class ProtocolError(RuntimeError):
    """A decrypted share disagrees with the protocol's invariants."""


@dataclass(frozen=True)
class ShuffleConfig:
    """Crypto settings for one shuffle.

    ``backend="plaintext"`` evaluates the closed form directly on the encoded
    integers; it yields exactly the same ``Delta`` as the ciphertext pipeline
    for the same noise and gains, at a fraction of the cost.
    """

    key_bits: int = pl.DEFAULT_KEY_BITS
    scale: int = pl.DEFAULT_SCALE
    backend: str = PAILLIER
    reuse_keys: bool = False

    def __post_init__(self):
        if self.backend not in (PAILLIER, PLAINTEXT):
            raise ValueError(f"unknown shuffle backend {self.backend!r}")
        if self.scale < 1:
            raise ValueError("scale must be a positive integer")


@dataclass
class ShuffleOutcome:
    """Result of one shuffle.

    ``delta_int`` and ``noisy_int`` live in the fixed-point domain (scaled by
    ``scale``); ``gains[(i, j)]`` is ``a_{i->j}``.
    """

    n: int
    abar: int
    scale: int
    data: np.ndarray
    eta: np.ndarray
    noisy_int: list[int]
    gains: dict[tuple[int, int], int]
    delta_int: list[int]
    backend: str = PAILLIER
    keys: list[pl.PaillierKeypair] | None = field(default=None, repr=False)

    @property
    def denominator(self) -> int:
        """``C (n abar^2 + 1)``: dividing ``delta_int`` by it gives ``zeta * Delta``."""
        return self.scale * (self.n * self.abar**2 + 1)

    @property
    def zeta(self) -> float:
        return 1.0 / (self.n * self.abar**2 + 1)

    @property
    def delta(self) -> np.ndarray:
        return np.array([d / self.scale for d in self.delta_int])

    @property
    def noisy(self) -> np.ndarray:
        return np.array([v / self.scale for v in self.noisy_int])

    def zeta_delta(self) -> np.ndarray:
        """``zeta * Delta_i`` as correctly rounded floats."""
        den = self.denominator
        return np.array([d / den for d in self.delta_int])

    def zeta_delta_exact(self) -> list[Fraction]:
        den = self.denominator
        return [Fraction(d, den) for d in self.delta_int]


def gain_bounds(abar: int) -> tuple[int, int]:
    """Integer interval ``[ceil(abar / sqrt 2), abar]``."""
    lo = math.isqrt(abar * abar // 2)
    while 2 * lo * lo < abar * abar:
        lo += 1
    while lo > 1 and 2 * (lo - 1) ** 2 >= abar * abar:
        lo -= 1
    return lo, abar


def _as_abar(abar) -> int:
    if float(abar) != int(abar):
        raise ValueError("abar must be an integer")
    abar = int(abar)
    if abar < 2:
        raise ValueError("abar must be >= 2")
    return abar


def draw_gains(graph: WeightedGraph, abar: int, rng: random.Random) -> dict[tuple[int, int], int]:
    """Uniform integer gains ``a_{i->j}`` per directed edge, drawn in ``(i, j)`` order."""
    lo, hi = gain_bounds(abar)
    return {(i, j): rng.randint(lo, hi) for i in range(graph.n) for j in graph.neighbors[i]}


def closed_form_delta(graph: WeightedGraph, noisy_int: Sequence[int],
                      gains: dict[tuple[int, int], int]) -> list[int]:
    """Plaintext oracle ``Delta_i = sum_j a_{i->j} a_{j->i} (dbar_j - dbar_i)``."""
    return [sum(gains[i, j] * gains[j, i] * (noisy_int[j] - noisy_int[i]) for j in graph.neighbors[i])
            for i in range(graph.n)]


def _check_range(noisy_int: Sequence[int], abar: int, keys: Sequence[pl.PaillierKeypair]) -> None:
    # decrypted shares are a_{j->i} (dbar_j - dbar_i); both must fit the signed range
    worst = 2 * max(abs(v) for v in noisy_int) * abar
    for k in keys:
        limit = (k.n - 1) // 2
        if worst > limit:
            raise pl.CodecRangeError(
                f"shuffle shares reach ~2^{worst.bit_length()} but a {k.n.bit_length()}-bit key "
                f"holds only ~2^{limit.bit_length()}; enlarge key_bits or reduce scale"
            )


def generate_keys(n: int, key_bits: int, rng: random.Random) -> list[pl.PaillierKeypair]:
    return [pl.keygen(key_bits, rng) for _ in range(n)]


def run_dishuf(network: Network, data: Sequence[float], eta: Sequence[float], abar,
               config: ShuffleConfig = ShuffleConfig(), rng: random.Random | None = None,
               gain_rng: random.Random | None = None,
               keys: Sequence[pl.PaillierKeypair] | None = None) -> ShuffleOutcome:
    """Run the shuffle on ``network`` with explicit noise draws ``eta``.

    Args:
      network: message fabric; every inter-agent payload passes through it in
        the shuffle phase.
      data: private values ``d_i``.
      eta: perturbations ``eta_i`` (already sampled).
      abar: integer gain ceiling; gains are drawn from ``[ceil(abar/sqrt2), abar]``.
      config: key size, fixed-point scale and backend.
      rng: randomness for key generation and encryption blinding.
      gain_rng: randomness for the gains; defaults to ``rng``.  Passing a
        dedicated stream makes both backends draw identical gains.
      keys: per-agent keypairs; generated from ``rng`` when omitted.

    Raises:
      CodecRangeError: encoded shares would overflow a key's plaintext range.
      ProtocolError: a decrypted share is inconsistent.
    """
    graph = network.graph
    n = graph.n
    abar = _as_abar(abar)
    rng = rng if rng is not None else random.Random()
    gain_rng = gain_rng if gain_rng is not None else rng
    data = np.asarray(data, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if data.shape != (n,) or eta.shape != (n,):
        raise ValueError("data and eta must have one entry per agent")

    # step 1: perturb, in the fixed-point domain so d_i keeps full precision
    C = config.scale
    noisy_int = [pl.scaled_int(float(d), C) + pl.scaled_int(float(e), C) for d, e in zip(data, eta)]

    if config.backend == PLAINTEXT:
        gains = draw_gains(graph, abar, gain_rng)
        delta = closed_form_delta(graph, noisy_int, gains)
        return ShuffleOutcome(n, abar, C, data, eta, noisy_int, gains, delta, PLAINTEXT)

    if keys is None:
        keys = generate_keys(n, config.key_bits, rng)
    if len(keys) != n:
        raise ValueError("need one keypair per agent")
    _check_range(noisy_int, abar, keys)
    codecs = [pl.FixedPointCodec(k.n, C) for k in keys]

    # step 2: E_i(-dbar_i) and the public key go to every neighbour
    own_ct = [pl.encrypt(keys[i].public, codecs[i].wrap(-noisy_int[i]), rng) for i in range(n)]
    msgs = []
    for i in range(n):
        for j in graph.neighbors[i]:
            msgs.append(Message(i, j, PUBLIC_KEY, keys[i].public))
            msgs.append(Message(i, j, CIPHERTEXT, own_ct[i]))
    inbox = network.exchange(SHUFFLE, msgs)

    # steps 3-4: c_ij = E_j(dbar_i) E_j(-dbar_j), raised to a_{i->j}
    gains = draw_gains(graph, abar, gain_rng)
    msgs = []
    for i in range(n):
        received: dict[int, dict[str, object]] = {}
        for m in inbox[i]:
            received.setdefault(m.sender, {})[m.kind] = m.payload
        for j in graph.neighbors[i]:
            pub_j = received[j][PUBLIC_KEY]
            codec_j = pl.FixedPointCodec(pub_j.n, C)
            mine = pl.encrypt(pub_j, codec_j.wrap(noisy_int[i]), rng)
            c_ij = pl.c_add(pub_j, mine, received[j][CIPHERTEXT])
            msgs.append(Message(i, j, CIPHERTEXT, pl.c_scale(pub_j, c_ij, gains[i, j])))
    inbox = network.exchange(SHUFFLE, msgs)

    # steps 5-6: decrypt a_{j->i} (dbar_j - dbar_i) and weight by a_{i->j}
    delta = []
    for i in range(n):
        total = 0
        for m in inbox[i]:
            share = codecs[i].unwrap(pl.decrypt(keys[i], m.payload))
            total += gains[i, m.sender] * share
        delta.append(total)
    if sum(delta) != 0:
        raise ProtocolError(f"shuffle outputs sum to {sum(delta)} instead of 0")
    return ShuffleOutcome(n, abar, C, data, eta, noisy_int, gains, delta, PAILLIER, list(keys))


@dataclass(frozen=True, eq=False)
class ShuffleWeightMatrix:
    """``A`` with ``A_ij = -zeta a_{i->j} a_{j->i}`` on edges and zero row sums; ``P = I - A``."""

    zeta: float
    A: np.ndarray
    P: np.ndarray


def shuffle_matrix(outcome: ShuffleOutcome, graph: WeightedGraph | None = None) -> ShuffleWeightMatrix:
    n, abar = outcome.n, outcome.abar
    den = n * abar * abar + 1
    A = np.zeros((n, n))
    for (i, j), a in outcome.gains.items():
        A[i, j] = -(a * outcome.gains[j, i]) / den
    A[np.diag_indices(n)] = -A.sum(axis=1)
    return ShuffleWeightMatrix(1.0 / den, A, np.eye(n) - A)


@dataclass(frozen=True, eq=False)
class SpectrumCheck:
    eigenvalues: np.ndarray
    lambda2: float
    bound: float
    passed: bool


def verify_spectrum(matrix: ShuffleWeightMatrix, n: int, abar, tol: float = 1e-12) -> SpectrumCheck:
    """Check ``lambda_2(A) >= 1 - alpha`` and that every eigenvalue lies in ``[0, 2)``."""
    try:
        lam = np.linalg.eigvalsh(matrix.A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise ArithmeticError(f"eigensolver failed: {exc}") from exc
    bound = one_minus_alpha(n, float(abar))
    ok = bool(lam[1] >= bound and lam[0] >= -tol and lam[-1] < 2)
    return SpectrumCheck(lam, float(lam[1]), bound, ok)
