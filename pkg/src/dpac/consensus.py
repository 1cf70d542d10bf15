"""Average consensus iteration and the four differentially private initializations.

Numeric modes for ``iterate``:

``float``
    Plain float64 iteration ``x <- (I - L) x``.  With shuffle noise around
    ``1e14`` the network sum drifts by rounding, so the limit is only accurate
    to roughly ``1e-2``.
``exact``
    Integer arithmetic over a common denominator; the float weights are dyadic
    rationals, so every state is represented exactly.  Cost grows with the
    iteration count; meant for validation runs.
``split``
    The average ``m`` of ``x(0)`` is computed exactly once (the iteration
    conserves it), and only the zero-sum deviation ``y = x - m`` is iterated in
    floats, re-centred every step and kept in block-floating-point so that
    deviations of any magnitude decay without overflow or drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .dishuf import ShuffleOutcome
from .netgraph import WeightedGraph, iteration_matrix
from .privacy import (DISHUF_GAUSSIAN, DISHUF_LAPLACE, DPCA_GAUSSIAN, DPCA_LAPLACE, GAUSSIAN,
                      LAPLACE, OSP_GAUSSIAN, OSP_LAPLACE, NoisePlan)
from .simnet import Network

FLOAT = "float"
EXACT = "exact"
SPLIT = "split"
PRECISIONS = (FLOAT, EXACT, SPLIT)

DEFAULT_MAX_ITERS = 1_000_000
DEFAULT_REL_TOL = 1e-9
# block-floating-point: rescale a deviation row once it falls below 2**-RESCALE_BITS
RESCALE_BITS = 512
MAX_FLOAT_BITS = 1000


def sample_noise(family: str, scale: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean i.i.d. noise.

    Gaussian draws use numpy's ziggurat sampler with standard deviation
    ``scale``; Laplace draws use numpy's inverse-CDF sampler with scale
    parameter ``scale`` (variance ``2 scale^2``).
    """
    if scale == 0:
        return np.zeros(size)
    if family == GAUSSIAN:
        return rng.normal(0.0, scale, size)
    if family == LAPLACE:
        return rng.laplace(0.0, scale, size)
    raise ValueError(f"unknown noise family {family!r}")


@dataclass(frozen=True)
class StopRule:
    """Stop once every state is within ``tol`` of the consensus value.

    ``tol=None`` means ``1e-9 * (1 + |mean(x(0))|)``.
    """

    max_iters: int = DEFAULT_MAX_ITERS
    tol: float | None = None

    def tolerance(self, mean: float) -> float:
        return self.tol if self.tol is not None else DEFAULT_REL_TOL * (1 + abs(mean))


@dataclass
class InitialState:
    """``x_i(0) = d_i + noise_i + delta_int_i / denominator`` kept in exact pieces.

    ``noise`` holds the directly added perturbation (``gamma`` or ``xi``);
    ``delta_int``/``denominator`` carry the shuffle term, if any.
    """

    data: np.ndarray
    noise: np.ndarray
    delta_int: list[int] | None = None
    denominator: int = 1
    algorithm: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.data)

    def floats(self) -> np.ndarray:
        x = self.data + self.noise
        if self.delta_int is not None:
            x = x + np.array([d / self.denominator for d in self.delta_int])
        return x

    def integers(self) -> tuple[list[int], int]:
        """Numerators ``X_i`` over one common denominator ``Q`` with ``x_i(0) = X_i / Q``."""
        ratios = [v.as_integer_ratio() for v in map(float, self.data)]
        ratios += [v.as_integer_ratio() for v in map(float, self.noise)]
        shift = max(den.bit_length() - 1 for _, den in ratios)  # float denominators are powers of 2
        q = self.denominator << shift
        n = self.n
        nums = []
        for i in range(n):
            (a, da), (b, db) = ratios[i], ratios[n + i]
            v = (a << (shift - da.bit_length() + 1)) + (b << (shift - db.bit_length() + 1))
            v *= self.denominator
            if self.delta_int is not None:
                v += self.delta_int[i] << shift
            nums.append(v)
        return nums, q

    def exact(self) -> list[Fraction]:
        nums, q = self.integers()
        return [Fraction(v, q) for v in nums]

    def exact_mean(self) -> Fraction:
        nums, q = self.integers()
        return Fraction(sum(nums), q * self.n)

    def split(self) -> tuple[float, np.ndarray, int]:
        """``(m, y, e)`` with ``x(0) = m + y * 2**e``, ``m`` correctly rounded and ``sum(y) ~ 0``."""
        nums, q = self.integers()
        return _split(nums, q)


def _split(nums: Sequence[int], q: int) -> tuple[float, np.ndarray, int]:
    n = len(nums)
    s = sum(nums)
    den = n * q
    devs = [n * v - s for v in nums]
    big = max(abs(d) for d in devs)
    e = 0
    if big and big.bit_length() - den.bit_length() > MAX_FLOAT_BITS:
        e = big.bit_length() - den.bit_length() - MAX_FLOAT_BITS
        den <<= e
    return s / (n * q), np.array([d / den for d in devs]), e


def as_initial_state(x0) -> InitialState:
    if isinstance(x0, InitialState):
        return x0
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    return InitialState(x0, np.zeros_like(x0))


@dataclass
class ConsensusRun:
    """Outcome of running the consensus iteration from ``x0``.

    ``mean`` is the exact average of ``x(0)`` rounded once to a float (float
    mode uses the float average).  ``final`` are the states after
    ``iterations`` steps; ``deviation`` is ``final - mean`` computed without
    cancellation where the mode allows.
    """

    x0: np.ndarray
    final: np.ndarray
    deviation: np.ndarray
    mean: float
    iterations: int
    converged: bool
    precision: str
    algorithm: str = ""
    trajectory: list[tuple[int, np.ndarray]] = field(default_factory=list)
    noise: dict = field(default_factory=dict)
    exact_final: list[Fraction] | None = None


def iterate(graph: WeightedGraph, x0, stop: StopRule = StopRule(), precision: str = SPLIT,
            network: Network | None = None, thin: int = 0) -> ConsensusRun:
    """Run ``x_i(t+1) = x_i(t) + sum_j w_ij (x_j(t) - x_i(t))`` until ``stop`` fires.

    Args:
      graph: communication graph.
      x0: initial states, an array or an ``InitialState``.
      stop: iteration cap and tolerance.
      precision: ``"float"``, ``"exact"`` or ``"split"`` (see module docs).
      network: when given, each round's states are broadcast through it in the
        consensus phase and recorded in its transcript.  In float and exact
        modes agents update from the delivered payloads.
      thin: keep every ``thin``-th state vector in ``trajectory`` (0 keeps none).
    """
    if precision not in PRECISIONS:
        raise ValueError(f"unknown precision {precision!r}")
    init = as_initial_state(x0)
    if init.n != graph.n:
        raise ValueError("x0 must have one entry per agent")
    if precision == FLOAT:
        run = _iterate_float(graph, init, stop, network, thin)
    elif precision == EXACT:
        run = _iterate_exact(graph, init, stop, network, thin)
    else:
        run = _iterate_split(graph, init, stop, network, thin)
    run.algorithm = init.algorithm
    run.noise = dict(init.extras)
    return run


def _update_from_inbox(graph: WeightedGraph, x: list, inbox, weights) -> list:
    new = []
    for i in range(graph.n):
        acc = x[i]
        for m in inbox[i]:
            acc += weights[i][m.sender] * (m.payload - x[i])
        new.append(acc)
    return new


def _iterate_float(graph, init, stop, network, thin) -> ConsensusRun:
    W = iteration_matrix(graph)
    x = init.floats()
    x0 = x.copy()
    mean = math.fsum(x) / graph.n
    tol = stop.tolerance(mean)
    traj = [(0, x.copy())] if thin else []
    weights = [{j: graph.weights[i, j] for j in graph.neighbors[i]} for i in range(graph.n)]
    t = 0
    # float rounding moves the consensus value away from mean(x0), so test the spread
    while np.ptp(x) >= tol and t < stop.max_iters:
        if network is not None:
            inbox = network.broadcast_states([float(v) for v in x])
            x = np.array(_update_from_inbox(graph, list(x), inbox, weights))
        else:
            x = W @ x
        t += 1
        if thin and t % thin == 0:
            traj.append((t, x.copy()))
    converged = bool(np.ptp(x) < tol)
    return ConsensusRun(x0, x, x - mean, mean, t, converged, FLOAT, trajectory=traj)


def _dyadic_weights(graph: WeightedGraph) -> tuple[list[dict[int, int]], int]:
    ratios = {(i, j): graph.weights[i, j].as_integer_ratio()
              for i in range(graph.n) for j in graph.neighbors[i]}
    shift = max(d.bit_length() - 1 for _, d in ratios.values())
    k = [dict() for _ in range(graph.n)]
    for (i, j), (a, d) in ratios.items():
        k[i][j] = a << (shift - d.bit_length() + 1)
    return k, shift


def _iterate_exact(graph, init, stop, network, thin) -> ConsensusRun:
    nums, q = init.integers()
    n = graph.n
    k, shift = _dyadic_weights(graph)
    total = sum(nums)
    mean_exact = Fraction(total, n * q)
    mean = float(mean_exact)
    tol = Fraction(stop.tolerance(mean))
    x0 = init.floats()

    def max_dev(xs, qq):
        # max_i |x_i - mean| = max_i |n X_i - S| / (n Q); S is conserved up to scaling
        s = sum(xs)
        return Fraction(max(abs(n * v - s) for v in xs), n * qq)

    traj = [(0, np.array([v / q for v in nums]))] if thin else []
    t = 0
    while max_dev(nums, q) >= tol and t < stop.max_iters:
        if network is not None:
            inbox = network.broadcast_states([Fraction(v, q) for v in nums])
            # scale received payloads back onto the common denominator
            received = [{m.sender: int(m.payload * q) for m in inbox[i]} for i in range(n)]
        else:
            received = [{j: nums[j] for j in graph.neighbors[i]} for i in range(n)]
        nums = [(nums[i] << shift) + sum(k[i][j] * (xj - nums[i]) for j, xj in received[i].items())
                for i in range(n)]
        q <<= shift
        t += 1
        if thin and t % thin == 0:
            traj.append((t, np.array([v / q for v in nums])))
    exact_final = [Fraction(v, q) for v in nums]
    if sum(exact_final) != mean_exact * n:
        raise ArithmeticError("exact iteration failed to conserve the network sum")
    deviation = np.array([float(v - mean_exact) for v in exact_final])
    final = np.array([float(v) for v in exact_final])
    converged = max_dev(nums, q) < tol
    return ConsensusRun(x0, final, deviation, mean, t, converged, EXACT, trajectory=traj,
                        exact_final=exact_final)


def _iterate_split(graph, init, stop, network, thin) -> ConsensusRun:
    m, y, e = init.split()
    tol = stop.tolerance(m)
    x0 = init.floats()
    traj = [(0, x0)] if thin else []
    # step t consumes the states of step t-1; those are what agents exchange
    sent = [x0]

    def on_step(t, X, E):
        x = m + np.ldexp(X[:, 0], int(E[0]))
        if network is not None:
            network.broadcast_states([float(v) for v in sent[0]])
            sent[0] = x
        if thin and t % thin == 0:
            traj.append((t, x.copy()))

    callback = on_step if (thin or network is not None) else None
    res = converge_split_batch(graph, y[None, :], np.array([e]), np.array([tol]),
                               stop.max_iters, callback=callback)
    dev = res.deviation[0]
    return ConsensusRun(x0, m + dev, dev, m, int(res.iterations[0]), bool(res.converged[0]), SPLIT,
                        trajectory=traj)


@dataclass
class BatchResult:
    deviation: np.ndarray  # (trials, n) final x - mean, as plain floats
    iterations: np.ndarray
    converged: np.ndarray


class NeighborStepper:
    """``x_i <- x_i + sum_j w_ij (x_j - x_i)`` on arrays shaped ``(n, trials)``.

    Each trial column is updated with the same elementwise operations in a
    fixed order, so a trial's trajectory is bit-identical whether it runs alone
    or inside a batch.
    """

    def __init__(self, graph: WeightedGraph):
        self.n = graph.n
        self.terms = [[(j, float(graph.weights[i, j])) for j in graph.neighbors[i]]
                      for i in range(graph.n)]

    def step(self, X: np.ndarray) -> np.ndarray:
        out = np.empty_like(X)
        for i, terms in enumerate(self.terms):
            acc = X[i].copy()
            for j, w in terms:
                acc += w * (X[j] - X[i])
            out[i] = acc
        return out

    def mean(self, X: np.ndarray) -> np.ndarray:
        s = X[0].copy()
        for i in range(1, self.n):
            s += X[i]
        return s / self.n


def converge_split_batch(graph: WeightedGraph, Y: np.ndarray, E: np.ndarray, tol: np.ndarray,
                         max_iters: int, callback=None) -> BatchResult:
    """Iterate zero-sum deviations ``Y * 2**E`` (one row per trial) until each row is below ``tol``.

    Rows are re-centred after every step and rescaled by ``2**RESCALE_BITS``
    whenever their magnitude falls below ``2**-RESCALE_BITS``.
    ``callback(t, X, E)`` receives the active deviations, shaped ``(n, active)``
    with their exponents, after every step.
    """
    stepper = NeighborStepper(graph)
    X = np.array(Y, dtype=float).T.copy()
    E = np.array(E, dtype=np.int64)
    tol = np.asarray(tol, dtype=float)
    n, trials = X.shape
    out = np.zeros((trials, n))
    iters = np.zeros(trials, dtype=np.int64)
    done = np.zeros(trials, dtype=bool)
    active = np.arange(trials)
    X -= stepper.mean(X)
    scale = 2.0 ** RESCALE_BITS
    t = 0
    while True:
        mag = np.abs(X).max(axis=0)
        below = np.ldexp(mag, E[active]) < tol[active]
        finish = below | (t >= max_iters)
        if finish.any():
            idx = active[finish]
            out[idx] = np.ldexp(X[:, finish], E[idx]).T
            iters[idx] = t
            done[idx] = below[finish]
            X = X[:, ~finish]
            active = active[~finish]
            if not active.size:
                break
        X = stepper.step(X)
        X -= stepper.mean(X)
        low = np.abs(X).max(axis=0) < 1.0 / scale
        if low.any():
            X[:, low] *= scale
            E[active[low]] -= RESCALE_BITS
        t += 1
        if callback is not None:
            callback(t, X, E[active])
    return BatchResult(out, iters, done)


def _require(plan: NoisePlan, *algorithms: str) -> None:
    if plan.algorithm not in algorithms:
        raise ValueError(f"plan for {plan.algorithm} cannot drive {'/'.join(algorithms)}")


def init_dishuf_gaussian(data, outcome: ShuffleOutcome, plan: NoisePlan,
                         rng: np.random.Generator) -> InitialState:
    """``x_i(0) = d_i + zeta Delta_i + gamma_i`` with i.i.d. Gaussian ``gamma``."""
    _require(plan, DISHUF_GAUSSIAN)
    data = np.asarray(data, dtype=float)
    gamma = sample_noise(GAUSSIAN, plan.sigma_gamma, len(data), rng)
    return InitialState(data, gamma, list(outcome.delta_int), outcome.denominator, DISHUF_GAUSSIAN,
                        {"gamma": gamma, "eta": outcome.eta})


def init_dishuf_laplace(data, outcome: ShuffleOutcome, plan: NoisePlan, k_star: int,
                        rng: np.random.Generator) -> InitialState:
    """Shuffle output plus a single Laplace draw added by the designated agent ``k_star`` (0-based)."""
    _require(plan, DISHUF_LAPLACE)
    data = np.asarray(data, dtype=float)
    if not 0 <= k_star < len(data):
        raise ValueError(f"k_star={k_star} is not an agent index")
    gamma = np.zeros(len(data))
    gamma[k_star] = sample_noise(LAPLACE, plan.sigma_gamma, 1, rng)[0]
    return InitialState(data, gamma, list(outcome.delta_int), outcome.denominator, DISHUF_LAPLACE,
                        {"gamma": gamma, "eta": outcome.eta, "k_star": k_star})


def init_osp(data, plan: NoisePlan, rng: np.random.Generator) -> InitialState:
    """One-shot perturbation ``x_i(0) = d_i + xi_i``."""
    _require(plan, OSP_GAUSSIAN, OSP_LAPLACE)
    data = np.asarray(data, dtype=float)
    xi = sample_noise(plan.family, plan.sigma_xi, len(data), rng)
    return InitialState(data, xi, algorithm=plan.algorithm, extras={"xi": xi})


def run_dpca(data, plan: NoisePlan, rng: np.random.Generator) -> float:
    """Centralized perturbed average ``sum(d)/n + xi``."""
    _require(plan, DPCA_GAUSSIAN, DPCA_LAPLACE)
    data = np.asarray(data, dtype=float)
    xi = sample_noise(plan.family, plan.sigma_xi, 1, rng)[0]
    return math.fsum(data) / len(data) + xi


@dataclass(frozen=True)
class ErrorMetrics:
    squared_errors: np.ndarray
    network_error: float
    mse: float
    converged: bool = True


def error_metrics(result, d_star: float) -> ErrorMetrics:
    """Per-node squared errors, their sum (network error) and mean (per-node MSE)."""
    if isinstance(result, ConsensusRun):
        # (mean - d*) + deviation avoids cancelling two large numbers
        err = (result.mean - d_star) + result.deviation
        sq = err * err
        return ErrorMetrics(sq, float(sq.sum()), float(sq.mean()), result.converged)
    err = float(result) - d_star
    sq = np.array([err * err])
    return ErrorMetrics(sq, float(sq[0]), float(sq[0]))


def write_trajectory(run: ConsensusRun, fh) -> None:
    """CSV with header ``t,x_1,...,x_n`` and one row per kept state."""
    n = len(run.x0)
    fh.write(",".join(["t"] + [f"x_{i + 1}" for i in range(n)]) + "\n")
    for t, x in run.trajectory:
        fh.write(",".join([str(t)] + [repr(float(v)) for v in x]) + "\n")
