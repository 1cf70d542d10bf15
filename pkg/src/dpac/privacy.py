"""Privacy calculus for differentially private average consensus.

Covers the analytic Gaussian trade-off function ``kappa`` and its inverse, the
shuffle spectral bound ``alpha``, noise designers for the shuffled and
baseline algorithms, privacy-condition checks and limiting mean-square errors.

Laplace scales follow the ``variance = 2 b^2`` convention throughout.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

from scipy.special import log_ndtr, ndtr

GAUSSIAN = "gaussian"
LAPLACE = "laplace"

DISHUF_GAUSSIAN = "dishuf-gaussian"
DISHUF_LAPLACE = "dishuf-laplace"
OSP_GAUSSIAN = "osp-gaussian"
OSP_LAPLACE = "osp-laplace"
DPCA_GAUSSIAN = "dpca-gaussian"
DPCA_LAPLACE = "dpca-laplace"

ALGORITHMS = (DISHUF_GAUSSIAN, DISHUF_LAPLACE, OSP_GAUSSIAN, OSP_LAPLACE,
              DPCA_GAUSSIAN, DPCA_LAPLACE)
BASELINES = (OSP_GAUSSIAN, OSP_LAPLACE, DPCA_GAUSSIAN, DPCA_LAPLACE)

KAPPA_INV_TOL = 1e-12


def family_of(algorithm: str) -> str:
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {', '.join(ALGORITHMS)}")
    return GAUSSIAN if algorithm.endswith(GAUSSIAN) else LAPLACE


@dataclass(frozen=True)
class PrivacyBudget:
    """``(epsilon, delta)`` privacy under ``mu``-adjacency."""

    epsilon: float
    delta: float = 0.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")
        if not self.mu > 0:
            raise ValueError("mu must be > 0")

    def require(self, family: str) -> None:
        if family == GAUSSIAN and self.delta <= 0:
            raise ValueError("the Gaussian mechanism needs delta > 0")
        if family == LAPLACE and self.epsilon <= 0:
            raise ValueError("the Laplace mechanism needs epsilon > 0")


@dataclass(frozen=True)
class NoisePlan:
    """Noise scales for one algorithm.

    Gaussian scales are standard deviations; Laplace scales are the ``b``
    parameter.  ``g`` (Gaussian) or ``h`` (Laplace) records the design freedom
    used by the shuffled algorithms.
    """

    algorithm: str
    sigma_gamma: float = 0.0
    sigma_eta: float = 0.0
    sigma_xi: float = 0.0
    g: float | None = None
    h: float | None = None

    def __post_init__(self):
        family_of(self.algorithm)
        for name in ("sigma_gamma", "sigma_eta", "sigma_xi"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def family(self) -> str:
        return family_of(self.algorithm)

    @property
    def design_parameter(self) -> float | None:
        return self.g if self.family == GAUSSIAN else self.h

    def replace(self, **changes) -> "NoisePlan":
        return NoisePlan(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "family": self.family,
            "sigma_gamma": self.sigma_gamma,
            "sigma_eta": self.sigma_eta,
            "sigma_xi": self.sigma_xi,
            "g_or_h": self.design_parameter,
        }


def kappa(epsilon: float, s: float) -> float:
    """``Phi(s/2 - eps/s) - e^eps Phi(-s/2 - eps/s)``, with the second term in log space."""
    if not s > 0:
        raise ValueError("kappa is defined for s > 0")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    a = s / 2 - epsilon / s
    b = -s / 2 - epsilon / s
    return float(ndtr(a) - math.exp(epsilon + float(log_ndtr(b))))


def kappa_inv(epsilon: float, delta: float) -> float:
    """Solve ``kappa(epsilon, s) = delta`` for ``s > 0`` by bracketing and bisection."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = 1e-9, 1.0
    if kappa(epsilon, lo) >= delta:
        return lo
    while kappa(epsilon, hi) < delta:
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            raise ArithmeticError("kappa_inv bracket diverged")
    while hi - lo > KAPPA_INV_TOL:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if kappa(epsilon, mid) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _log_q(n: int, abar: float) -> float:
    # log of (2 (n + abar^-2))^-(n-1)
    return -(n - 1) * math.log(2 * (n + abar**-2))


def one_minus_alpha(n: int, abar: float) -> float:
    """``1 - alpha`` computed without cancellation."""
    if n < 2:
        raise ValueError("need n >= 2")
    if abar < 1:
        raise ValueError("abar must be >= 1")
    q = math.exp(_log_q(n, abar))
    return -math.expm1(math.log1p(-q) / (n - 1))


def alpha(n: int, abar: float) -> float:
    """Spectral bound ``(1 - (2(n + abar^-2))^-(n-1))^(1/(n-1))``; ``1 - alpha`` bounds the shuffle gap."""
    if n < 2:
        raise ValueError("need n >= 2")
    q = math.exp(_log_q(n, abar))
    return math.exp(math.log1p(-q) / (n - 1))


def _gap(n: int, abar: float) -> float:
    oma = one_minus_alpha(n, abar)
    if oma == 0:
        raise OverflowError(f"1 - alpha underflows double precision at n={n}; "
                            "the shuffle noise scale is not representable")
    return oma


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise OverflowError(f"{what} overflows double precision")
    return value


def gaussian_eta_bound(budget: PrivacyBudget, n: int, abar: float, g: float) -> float:
    """Smallest shuffle-noise deviation meeting the Gaussian condition for design freedom ``g``.

    Returns 0 (with a warning) when the bracket is nonpositive, in which case
    the condition holds without shuffle noise.
    """
    s = kappa_inv(budget.epsilon, budget.delta)
    a = alpha(n, abar)
    oma = _gap(n, abar)
    mu2 = budget.mu**2
    gp = (1 + g) ** 2
    bracket = gp * mu2 / (gp - 1) - gp * mu2 / (n * (n - 1) * a * a)
    if bracket <= 0:
        warnings.warn("shuffle-noise bracket is nonpositive; sigma_eta clamped to 0", stacklevel=2)
        return 0.0
    return _finite(a * math.sqrt((n - 1) * bracket) / (oma * s), "sigma_eta")


def design_gaussian(budget: PrivacyBudget, n: int, abar: float, g: float) -> NoisePlan:
    """Noise plan for the shuffled Gaussian algorithm at the equality frontier.

    ``sigma_gamma = (1+g) mu / (sqrt(n) kappa_inv(eps, delta))`` and
    ``sigma_eta`` is the smallest value for which the privacy condition holds.
    """
    budget.require(GAUSSIAN)
    if not g > 0:
        raise ValueError("g must be > 0")
    s = kappa_inv(budget.epsilon, budget.delta)
    sigma_gamma = (1 + g) * budget.mu / (math.sqrt(n) * s)
    sigma_eta = gaussian_eta_bound(budget, n, abar, g)
    return NoisePlan(DISHUF_GAUSSIAN, sigma_gamma=sigma_gamma, sigma_eta=sigma_eta, g=g)


def laplace_eta_bound(budget: PrivacyBudget, n: int, abar: float, h: float) -> float:
    if not h > 1:
        raise ValueError("h must exceed 1")
    oma = _gap(n, abar)
    return _finite(2 * budget.mu * h * n * math.sqrt(n - 1) / (oma * (h - 1) * budget.epsilon),
                   "sigma_eta")


def design_laplace(budget: PrivacyBudget, n: int, abar: float, h: float) -> NoisePlan:
    budget.require(LAPLACE)
    if not h > 1:
        raise ValueError("h must exceed 1")
    sigma_gamma = h * budget.mu / budget.epsilon
    sigma_eta = laplace_eta_bound(budget, n, abar, h)
    return NoisePlan(DISHUF_LAPLACE, sigma_gamma=sigma_gamma, sigma_eta=sigma_eta, h=h)


def design_baseline(budget: PrivacyBudget, n: int, algorithm: str) -> NoisePlan:
    """Minimal perturbation scale for the one-shot and centralized baselines.

    The centralized average has sensitivity ``mu / n``; one-shot perturbation
    protects each coordinate at sensitivity ``mu``.
    """
    if algorithm not in BASELINES:
        raise ValueError(f"{algorithm!r} is not a baseline algorithm")
    family = family_of(algorithm)
    budget.require(family)
    sens = budget.mu / n if algorithm.startswith("dpca") else budget.mu
    if family == LAPLACE:
        sigma_xi = sens / budget.epsilon
    else:
        sigma_xi = sens / kappa_inv(budget.epsilon, budget.delta)
    return NoisePlan(algorithm, sigma_xi=sigma_xi)


def design(algorithm: str, budget: PrivacyBudget, n: int, abar: float = 1e4,
           g: float | None = None, h: float | None = None) -> NoisePlan:
    if algorithm == DISHUF_GAUSSIAN:
        if g is None:
            raise ValueError("dishuf-gaussian needs the design parameter g")
        return design_gaussian(budget, n, abar, g)
    if algorithm == DISHUF_LAPLACE:
        if h is None:
            raise ValueError("dishuf-laplace needs the design parameter h")
        return design_laplace(budget, n, abar, h)
    return design_baseline(budget, n, algorithm)


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    margin: float
    lhs: float
    rhs: float
    detail: dict

    def to_dict(self) -> dict:
        return {"holds": self.holds, "margin": self.margin, "lhs": self.lhs,
                "rhs": self.rhs, **self.detail}


def check_gaussian_condition(plan: NoisePlan, budget: PrivacyBudget, n: int,
                             abar: float) -> ConditionReport:
    """Evaluate the sufficient condition for the shuffled Gaussian algorithm.

    ``margin = rhs - lhs``; equality-designed plans sit at margin ~ 0, so the
    pass decision allows a relative slack of ``1e-12``.
    """
    if plan.algorithm != DISHUF_GAUSSIAN:
        raise ValueError("condition applies to dishuf-gaussian plans only")
    budget.require(GAUSSIAN)
    s = kappa_inv(budget.epsilon, budget.delta)
    a = alpha(n, abar)
    oma = one_minus_alpha(n, abar)
    sg2 = plan.sigma_gamma**2
    if sg2 == 0:
        lhs = math.inf
    else:
        lhs = 1 / (n * sg2) + (n - 1) * a * a / (sg2 + (oma * plan.sigma_eta) ** 2)
    rhs = s * s / budget.mu**2
    margin = rhs - lhs
    return ConditionReport(margin >= -1e-12 * rhs, margin, lhs, rhs,
                           {"kappa_inv": s, "alpha": a, "one_minus_alpha": oma})


def check_laplace_condition(plan: NoisePlan, budget: PrivacyBudget, n: int,
                            abar: float) -> ConditionReport:
    """Check the Laplace sufficient condition for the best admissible ``h``.

    The largest ``h`` allowed by ``sigma_gamma >= h mu / eps`` also minimizes
    the shuffle-noise bound, so it is the only candidate worth testing.
    ``margin`` is ``sigma_eta`` minus its bound, relative to the bound.
    """
    if plan.algorithm != DISHUF_LAPLACE:
        raise ValueError("condition applies to dishuf-laplace plans only")
    budget.require(LAPLACE)
    h_eff = plan.sigma_gamma * budget.epsilon / budget.mu
    # equality-designed plans can land a rounding error below their own h
    if plan.h is not None and math.isclose(h_eff, plan.h, rel_tol=1e-12):
        h_eff = plan.h
    if h_eff <= 1:
        return ConditionReport(False, -math.inf, plan.sigma_eta, math.inf,
                               {"h_effective": h_eff, "reason": "sigma_gamma <= mu/epsilon"})
    bound = laplace_eta_bound(budget, n, abar, h_eff)
    margin = (plan.sigma_eta - bound) / bound
    return ConditionReport(margin >= -1e-12, margin, plan.sigma_eta, bound,
                           {"h_effective": h_eff, "sigma_gamma_min": budget.mu / budget.epsilon})


def check_baseline_condition(plan: NoisePlan, budget: PrivacyBudget, n: int) -> ConditionReport:
    need = design_baseline(budget, n, plan.algorithm).sigma_xi
    margin = (plan.sigma_xi - need) / need
    return ConditionReport(margin >= -1e-12, margin, plan.sigma_xi, need, {})


def check_condition(plan: NoisePlan, budget: PrivacyBudget, n: int,
                    abar: float = 1e4) -> ConditionReport:
    if plan.algorithm == DISHUF_GAUSSIAN:
        return check_gaussian_condition(plan, budget, n, abar)
    if plan.algorithm == DISHUF_LAPLACE:
        return check_laplace_condition(plan, budget, n, abar)
    return check_baseline_condition(plan, budget, n)


def predict_mse(plan: NoisePlan, n: int, algorithm: str | None = None) -> float:
    """Limiting per-node mean-square error ``E|x_i(inf) - d*|^2`` for ``plan``."""
    algorithm = algorithm or plan.algorithm
    if algorithm != plan.algorithm:
        raise ValueError(f"plan was designed for {plan.algorithm}, not {algorithm}")
    if algorithm == DISHUF_GAUSSIAN:
        return plan.sigma_gamma**2 / n
    if algorithm == DISHUF_LAPLACE:
        return 2 * plan.sigma_gamma**2 / n**2
    if algorithm == OSP_GAUSSIAN:
        return plan.sigma_xi**2 / n
    if algorithm == OSP_LAPLACE:
        return 2 * plan.sigma_xi**2 / n
    if algorithm == DPCA_GAUSSIAN:
        return plan.sigma_xi**2
    return 2 * plan.sigma_xi**2


def predict_network_error(plan: NoisePlan, n: int) -> float:
    """Expected ``sum_i |x_i(inf) - d*|^2``; the centralized output counts once."""
    mse = predict_mse(plan, n)
    return mse if plan.algorithm.startswith("dpca") else n * mse


def squared_error_rse(family: str) -> float:
    """Relative standard deviation of a squared zero-mean Gaussian or Laplace draw."""
    return math.sqrt(2) if family == GAUSSIAN else math.sqrt(5)

