"""Monte Carlo harness: configs, per-trial runs, batched summaries, sweeps and file output.

Random streams.  Trial ``k`` of a run with master seed ``s`` draws from
``SeedSequence(s, spawn_key=(k, stream))`` where stream 0 feeds the numpy
noise generator (``eta`` first, then ``gamma``/``xi``), stream 1 the
encryption blinding and key generation, and stream 2 the shuffle gains.  Keys
shared across trials (``reuse_keys``) come from ``SeedSequence(s,
spawn_key=(0,))``.  Results therefore depend only on ``(config, trial index)``,
never on batching or the number of worker processes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import consensus as cs
from . import dishuf as ds
from . import netgraph as ng
from . import privacy as pv
from .simnet import Network

REFERENCE_DATA_MEAN = 13.1336
DEFAULT_CHUNK = 2000
THREADS_ENV = "DP_CONSENSUS_THREADS"

NOISE_STREAM, CRYPTO_STREAM, GAIN_STREAM = 0, 1, 2

SWEEP_PARAMS = ("g", "h", "epsilon", "n")
CSV_COLUMNS = ("algorithm", "param_name", "param_value", "trials", "mse_mean", "mse_se",
               "mse_theory", "iters_mean", "network_error_mean", "network_error_se",
               "network_error_theory", "converged", "error")


class ConfigError(ValueError):
    """An experiment configuration is malformed or inconsistent."""


# --------------------------------------------------------------------------- config

_BLOCKS = {
    "graph": {"kind", "n", "weight", "p", "seed", "rho"},
    "data": {"values", "mean", "spread", "seed"},
    "privacy": {"epsilon", "delta", "mu"},
    "algorithm": {"name", "g", "h", "abar", "k_star"},
    "paillier": {"backend", "key_bits", "scale", "reuse_keys"},
    "run": {"trials", "seed", "max_iters", "tol", "precision", "iterate"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a Monte Carlo run.

    ``k_star`` is 1-based as in the config file.  ``iterate=False`` skips the
    consensus iteration and evaluates the limit directly as the exact average
    of ``x(0)``, which the iteration conserves.
    """

    algorithm: str = pv.DISHUF_GAUSSIAN
    graph: dict = field(default_factory=lambda: {"kind": "cycle", "n": 10, "weight": 0.3})
    data: dict = field(default_factory=lambda: {"mean": REFERENCE_DATA_MEAN, "spread": 10.0, "seed": 0})
    epsilon: float = 10.0
    delta: float = 0.1
    mu: float = 5.0
    g: float | None = 0.01
    h: float | None = 2.0
    abar: int = 10_000
    k_star: int = 1
    backend: str = ds.PAILLIER
    key_bits: int = 1024
    scale: int = 2**40
    reuse_keys: bool = False
    trials: int = 200
    seed: int = 0
    max_iters: int = cs.DEFAULT_MAX_ITERS
    tol: float | None = None
    precision: str = cs.SPLIT
    iterate: bool = True

    def __post_init__(self):
        if self.algorithm not in pv.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(pv.ALGORITHMS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.backend not in (ds.PAILLIER, ds.PLAINTEXT):
            raise ConfigError(f"unknown paillier backend {self.backend!r}")
        if self.precision not in cs.PRECISIONS:
            raise ConfigError(f"unknown precision {self.precision!r}")
        if not 1 <= self.k_star <= self.n:
            raise ConfigError(f"k_star must be in 1..{self.n}")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.algorithm == pv.DISHUF_GAUSSIAN and (self.g is None or self.g <= 0):
            raise ConfigError("dishuf-gaussian needs g > 0")
        if self.algorithm == pv.DISHUF_LAPLACE and (self.h is None or self.h <= 1):
            raise ConfigError("h must exceed 1")
        if "values" in self.data and len(self.data["values"]) != self.n:
            raise ConfigError("data.values must have one entry per agent")

    @property
    def n(self) -> int:
        return int(self.graph["n"])

    @property
    def budget(self) -> pv.PrivacyBudget:
        return pv.PrivacyBudget(self.epsilon, self.delta, self.mu)

    @property
    def stop(self) -> cs.StopRule:
        return cs.StopRule(self.max_iters, self.tol)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_param(self, name: str, value) -> "ExperimentConfig":
        if name == "n":
            return self.replace(graph={**self.graph, "n": int(value)}, data=_resize_data(self.data, int(value)))
        if name in ("eps", "epsilon"):
            return self.replace(epsilon=float(value))
        if name in ("g", "h"):
            return self.replace(**{name: float(value)})
        raise ConfigError(f"unknown sweep parameter {name!r}; choose from {', '.join(SWEEP_PARAMS)}")

    def to_dict(self) -> dict:
        return {
            "graph": dict(self.graph),
            "data": dict(self.data),
            "privacy": {"epsilon": self.epsilon, "delta": self.delta, "mu": self.mu},
            "algorithm": {"name": self.algorithm, "g": self.g, "h": self.h, "abar": self.abar,
                          "k_star": self.k_star},
            "paillier": {"backend": self.backend, "key_bits": self.key_bits, "scale": self.scale,
                         "reuse_keys": self.reuse_keys},
            "run": {"trials": self.trials, "seed": self.seed, "max_iters": self.max_iters,
                    "tol": self.tol, "precision": self.precision, "iterate": self.iterate},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        """Build from the block layout of ``to_dict``; unknown blocks or keys are rejected."""
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        for block, body in doc.items():
            if block not in _BLOCKS:
                raise ConfigError(f"unknown config block {block!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"block {block!r} must be an object")
            extra = set(body) - _BLOCKS[block]
            if extra:
                raise ConfigError(f"unknown key(s) in {block}: {', '.join(sorted(extra))}")
        kw: dict = {}
        if "graph" in doc:
            if "n" not in doc["graph"]:
                raise ConfigError("graph.n is required")
            kw["graph"] = dict(doc["graph"])
        if "data" in doc:
            kw["data"] = dict(doc["data"])
        kw.update(doc.get("privacy", {}))
        alg = dict(doc.get("algorithm", {}))
        if "name" in alg:
            kw["algorithm"] = alg.pop("name")
        kw.update(alg)
        kw.update(doc.get("paillier", {}))
        kw.update(doc.get("run", {}))
        if "abar" in kw:
            if float(kw["abar"]) != int(float(kw["abar"])):
                raise ConfigError("abar must be an integer")
            kw["abar"] = int(float(kw["abar"]))
        try:
            return cls(**kw)
        except TypeError as exc:  # pragma: no cover - guarded by the key check
            raise ConfigError(str(exc)) from exc


def _resize_data(data: dict, n: int) -> dict:
    if "values" in data:
        raise ConfigError("an n-sweep needs generated data, not explicit values")
    return dict(data)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)


# --------------------------------------------------------------------------- context

def make_data(block: dict, n: int) -> np.ndarray:
    """Explicit ``values`` or uniform draws shifted to average ``mean``."""
    if "values" in block:
        return np.asarray(block["values"], dtype=float)
    rng = np.random.default_rng(block.get("seed", 0))
    spread = float(block.get("spread", 10.0))
    u = rng.uniform(-spread, spread, n)
    return u - u.mean() + float(block.get("mean", REFERENCE_DATA_MEAN))


def exact_average(values: Sequence[float]) -> float:
    return float(sum(map(Fraction, map(float, values))) / len(values))


def stream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=key)


def py_random(seq: np.random.SeedSequence) -> random.Random:
    return random.Random(int.from_bytes(seq.generate_state(8, np.uint32).tobytes(), "little"))


@dataclass
class Context:
    config: ExperimentConfig
    graph: ng.WeightedGraph
    data: np.ndarray
    d_star: float
    plan: pv.NoisePlan
    keys: list | None


def build_context(config: ExperimentConfig) -> Context:
    # dict fields make the config unhashable; cache on its canonical JSON instead
    return _context_from_json(json.dumps(config.to_dict(), sort_keys=True))


@lru_cache(maxsize=8)
def _context_from_json(doc: str) -> Context:
    config = ExperimentConfig.from_dict(json.loads(doc))
    graph = ng.build_graph(config.graph)
    data = make_data(config.data, config.n)
    plan = pv.design(config.algorithm, config.budget, config.n, config.abar, g=config.g, h=config.h)
    keys = None
    if config.reuse_keys and config.backend == ds.PAILLIER and config.algorithm.startswith("dishuf"):
        keys = ds.generate_keys(config.n, config.key_bits, py_random(stream(config.seed, 0)))
    return Context(config, graph, data, exact_average(data), plan, keys)


# --------------------------------------------------------------------------- trials

@dataclass
class TrialResult:
    """One trial: squared errors at the (numerical) limit plus the retained noise draws."""

    index: int
    squared_errors: np.ndarray
    network_error: float
    mse: float
    iterations: int
    converged: bool
    noise: dict = field(default_factory=dict)
    delta_int: list[int] | None = None


def initial_state(ctx: Context, index: int, network: Network | None = None):
    """``InitialState`` for trial ``index`` (a float for the centralized baseline)."""
    cfg, plan, n = ctx.config, ctx.plan, ctx.config.n
    rng = np.random.default_rng(stream(cfg.seed, index, NOISE_STREAM))
    alg = cfg.algorithm
    if alg in (pv.DPCA_GAUSSIAN, pv.DPCA_LAPLACE):
        return cs.run_dpca(ctx.data, plan, rng)
    if alg in (pv.OSP_GAUSSIAN, pv.OSP_LAPLACE):
        return cs.init_osp(ctx.data, plan, rng)
    eta = cs.sample_noise(plan.family, plan.sigma_eta, n, rng)
    shuffle_cfg = ds.ShuffleConfig(cfg.key_bits, cfg.scale, cfg.backend, cfg.reuse_keys)
    net = network if network is not None else Network(ctx.graph, record=False)
    outcome = ds.run_dishuf(net, ctx.data, eta, cfg.abar, shuffle_cfg,
                            rng=py_random(stream(cfg.seed, index, CRYPTO_STREAM)),
                            gain_rng=py_random(stream(cfg.seed, index, GAIN_STREAM)), keys=ctx.keys)
    if alg == pv.DISHUF_GAUSSIAN:
        return cs.init_dishuf_gaussian(ctx.data, outcome, plan, rng)
    return cs.init_dishuf_laplace(ctx.data, outcome, plan, cfg.k_star - 1, rng)


def run_trial(config: ExperimentConfig, index: int, network: Network | None = None,
              thin: int = 0) -> tuple[TrialResult, cs.ConsensusRun | None]:
    """Run trial ``index``; deterministic in ``(config, index)``.

    Returns the result and, for iterated algorithms, the consensus run (with a
    trajectory when ``thin > 0``).
    """
    ctx = build_context(config)
    init = initial_state(ctx, index, network)
    if not isinstance(init, cs.InitialState):
        m = cs.error_metrics(init, ctx.d_star)
        return TrialResult(index, m.squared_errors, m.network_error, m.mse, 0, True,
                           {"xi": init - exact_average(ctx.data)}), None
    if not config.iterate:
        m0, _, _ = init.split()
        run = cs.ConsensusRun(init.floats(), np.full(config.n, m0), np.zeros(config.n), m0, 0, True,
                              "limit", init.algorithm, noise=dict(init.extras))
    else:
        run = cs.iterate(ctx.graph, init, config.stop, config.precision, network=network, thin=thin)
    m = cs.error_metrics(run, ctx.d_star)
    return TrialResult(index, m.squared_errors, m.network_error, m.mse, run.iterations, run.converged,
                       dict(init.extras), init.delta_int), run


@dataclass
class ChunkResult:
    mse: np.ndarray
    network_error: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def _run_chunk(args) -> ChunkResult:
    doc, start, stop = args
    config = ExperimentConfig.from_dict(json.loads(doc))
    ctx = build_context(config)
    count = stop - start
    if config.precision != cs.SPLIT:
        rows = [run_trial(config, k)[0] for k in range(start, stop)]
        return ChunkResult(np.array([r.mse for r in rows]), np.array([r.network_error for r in rows]),
                           np.array([r.iterations for r in rows]), np.array([r.converged for r in rows]))
    n = config.n
    means = np.empty(count)
    Y = np.zeros((count, n))
    E = np.zeros(count, dtype=np.int64)
    centralized = None
    for k in range(count):
        init = initial_state(ctx, start + k)
        if not isinstance(init, cs.InitialState):
            centralized = centralized if centralized is not None else np.empty(count)
            centralized[k] = init
            continue
        means[k], Y[k], E[k] = init.split()
    if centralized is not None:
        err = centralized - ctx.d_star
        sq = err * err
        return ChunkResult(sq, sq, np.zeros(count, dtype=np.int64), np.ones(count, dtype=bool))
    if config.iterate:
        tol = np.array([config.stop.tolerance(m) for m in means])
        res = cs.converge_split_batch(ctx.graph, Y, E, tol, config.max_iters)
        dev, iters, conv = res.deviation, res.iterations, res.converged
    else:
        dev, iters, conv = np.zeros((count, n)), np.zeros(count, dtype=np.int64), np.ones(count, dtype=bool)
    err = (means - ctx.d_star)[:, None] + dev
    sq = err * err
    return ChunkResult(sq.mean(axis=1), sq.sum(axis=1), iters, conv)


# --------------------------------------------------------------------------- summaries

@dataclass
class Summary:
    """Aggregate of a Monte Carlo run.  ``mse_se`` is the sample std over ``sqrt(trials)``."""

    algorithm: str
    param_name: str
    param_value: float | None
    trials: int
    mse_mean: float
    mse_se: float
    mse_theory: float
    iters_mean: float
    network_error_mean: float
    network_error_se: float
    network_error_theory: float
    converged: int
    errors: list[float] = field(default_factory=list)
    network_errors: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "Summary":
        return cls(**doc)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


def _stats(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    mean = math.fsum(values.tolist()) / values.size
    se = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return mean, se


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else 1
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    return threads


def monte_carlo(config: ExperimentConfig, threads: int | None = None, chunk: int = DEFAULT_CHUNK,
                param_name: str = "", param_value: float | None = None) -> Summary:
    """Aggregate ``config.trials`` trials, batched in chunks of ``chunk`` trials."""
    threads = resolve_threads(threads)
    doc = json.dumps(config.to_dict(), sort_keys=True)
    jobs = [(doc, a, min(a + chunk, config.trials)) for a in range(0, config.trials, chunk)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    mse = np.concatenate([p.mse for p in parts])
    net = np.concatenate([p.network_error for p in parts])
    iters = np.concatenate([p.iterations for p in parts])
    conv = np.concatenate([p.converged for p in parts])
    plan = build_context(config).plan
    mse_mean, mse_se = _stats(mse)
    net_mean, net_se = _stats(net)
    return Summary(config.algorithm, param_name, param_value, config.trials, mse_mean, mse_se,
                   pv.predict_mse(plan, config.n), float(iters.mean()), net_mean, net_se,
                   pv.predict_network_error(plan, config.n), int(conv.sum()),
                   mse.tolist(), net.tolist(), config.to_dict())


def _failed(config: ExperimentConfig, algorithm: str, param: str, value, exc: Exception) -> Summary:
    nan = math.nan
    return Summary(algorithm, param, value, config.trials, nan, nan, nan, nan, nan, nan, nan, 0,
                   config=config.to_dict(), error=f"{type(exc).__name__}: {exc}")


def sweep(base: ExperimentConfig, param: str, values: Iterable[float],
          baselines: Sequence[str] = (), threads: int | None = None,
          chunk: int = DEFAULT_CHUNK) -> list[Summary]:
    """One Summary per value of ``param``, plus rows for each baseline algorithm.

    Baselines do not depend on ``g`` or ``h``, so those sweeps add a single
    baseline row (with an empty ``param_value``); ``epsilon`` and ``n`` sweeps
    add one baseline row per value.  A value that fails (for example an
    unrepresentable noise scale) yields a row with ``error`` set.
    """
    if param == "eps":
        param = "epsilon"
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEP_PARAMS)}")
    values = list(values)
    out = []
    for alg in (base.algorithm, *baselines):
        per_value = alg == base.algorithm or param in ("epsilon", "n")
        for v in (values if per_value else [None]):
            try:
                cfg = base.replace(algorithm=alg) if v is None else base.replace(algorithm=alg).with_param(param, v)
                out.append(monte_carlo(cfg, threads, chunk, param if v is not None else "",
                                       None if v is None else float(v)))
            except (ValueError, OverflowError, ArithmeticError) as exc:
                out.append(_failed(base, alg, param, None if v is None else float(v), exc))
    return out


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def emit(summaries: Sequence[Summary], fmt: str, path: str) -> str:
    """Write summaries as CSV (one row each) or JSON (full records with config echo)."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for s in summaries:
            row = s.row()
            w.writerow([_csv_value(row[c]) for c in CSV_COLUMNS])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([s.to_dict() for s in summaries], indent=1) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)
    return path


def load_summaries(path: str) -> list[Summary]:
    with open(path) as fh:
        return [Summary.from_dict(d) for d in json.load(fh)]


# --------------------------------------------------------------------------- trajectories

def error_trajectories(config: ExperimentConfig, trials: int, steps: int,
                       chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    """Mean over trials of the per-node squared error at every step ``0..steps``.

    The centralized baseline has no iteration; its curve is constant.
    """
    ctx = build_context(config)
    total = np.zeros(steps + 1)
    for a in range(0, trials, chunk):
        b = min(a + chunk, trials)
        inits = [initial_state(ctx, k) for k in range(a, b)]
        if not isinstance(inits[0], cs.InitialState):
            err = np.array(inits) - ctx.d_star
            total += float((err * err).sum())
            continue
        parts = [i.split() for i in inits]
        means = np.array([p[0] for p in parts])
        Y = np.array([p[1] for p in parts])
        E = np.array([p[2] for p in parts], dtype=np.int64)
        offset = means - ctx.d_star

        def record(t, X, Ex):
            err = offset[None, :] + np.ldexp(X, Ex)
            total[t] += float((err * err).mean(axis=0).sum())

        record(0, Y.T - Y.T.mean(axis=0), E)
        cs.converge_split_batch(ctx.graph, Y, E, np.zeros(b - a), steps,
                                callback=lambda t, X, Ex: record(t, X, Ex))
    return total / trials
