"""Large-limit ARL approximations for CUSUM and CUSUM-OAL tests.

Everything here is deterministic numerics built on the closed-form moment
generating functions of :mod:`cusum_oal.models`: bisection root-finders with
domain-aware brackets and central finite differences for derivatives.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from scipy import special

from . import models
from .detectors import GFunction, g_eval, g_root
from .models import ModelPair, V_MINUS, V_PLUS, V_ZERO

FD_STEP = 1e-6
BRACKET_MARGIN = 1e-9


class TheoryError(ValueError):
    """A precondition of an approximation does not hold."""


class NoPositiveRoot(TheoryError):
    pass


class ConstraintViolation(TheoryError):
    pass


class NotConverged(TheoryError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class NotMatched(TheoryError):
    pass


# -- numerical helpers --------------------------------------------------------

def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12,
           max_iter: int = 400) -> float:
    """Root of ``f`` on [lo, hi] assuming f(lo) < 0 <= f(hi)."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= tol or mid in (lo, hi):
            return mid
        if f(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def central_diff(f: Callable[[float], float], x: float, upper: float = math.inf) -> float:
    h = FD_STEP * max(1.0, abs(x))
    if x + h >= upper:
        h = 0.5 * (upper - x)
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _upper_bracket(f: Callable[[float], float], boundary: float, start: float = 1.0) -> float:
    """A point below ``boundary`` where f > 0, or raise NoPositiveRoot."""
    if math.isfinite(boundary):
        hi = boundary * (1.0 - BRACKET_MARGIN)
        if f(hi) > 0.0:
            return hi
        raise NoPositiveRoot(f"no sign change below the MGF boundary {boundary}: f({hi}) = {f(hi)}")
    hi = start
    for _ in range(200):
        if f(hi) > 0.0:
            return hi
        hi *= 2.0
    raise NoPositiveRoot(f"no sign change found up to theta={hi}")


# -- exponent of classical CUSUM ---------------------------------------------

def solve_s_star(pair: ModelPair, true_param: float) -> float:
    """Positive root of h_v(s) = 1 (equivalently ln h_v(s) = 0)."""
    mu = models.mean_llr(pair, true_param)
    if not mu < 0.0:
        raise NoPositiveRoot(f"E_v Z = {mu} is not negative; h_v(s) = 1 has no positive root")
    log_h = lambda s: models.log_mgf_llr(pair, true_param, s)
    hi = _upper_bracket(log_h, models.mgf_boundary(pair, true_param))
    return bisect(log_h, 0.0, hi, tol=1e-14)


# -- the composite exponent H ------------------------------------------------

@dataclass(frozen=True)
class HFunction:
    """H_v as a function of theta for fixed (pair, v, g, a, u)."""

    pair: ModelPair
    true_param: float
    g: GFunction
    a: float
    u: float
    mu: float

    def __post_init__(self):
        if not self.a > 0.0:
            raise TheoryError("window coefficient a must be positive")
        if not g_eval(self.g, self.mu) > 0.0:
            raise TheoryError(f"g(mu) must be positive, got g({self.mu}) = {g_eval(self.g, self.mu)}")

    @property
    def q(self) -> float:
        return abs(self.g.derivative(self.mu)) / self.a

    @property
    def weight(self) -> float:
        return self.a * self.u / g_eval(self.g, self.mu)

    @property
    def boundary(self) -> float:
        return models.mgf_boundary(self.pair, self.true_param) / (1.0 + self.q)

    def __call__(self, theta: float) -> float:
        log_h = models.log_mgf_llr(self.pair, self.true_param, theta)
        q = self.q
        if q == 0.0:
            return log_h
        log_ht = models.log_mgf_llr_tilted(self.pair, self.true_param, theta, q, self.mu)
        w = self.weight
        return w * log_ht + (1.0 - w) * log_h

    def derivative(self, theta: float) -> float:
        return central_diff(self, theta, self.boundary)

    def root(self) -> float:
        hi = _upper_bracket(self, self.boundary)
        return bisect(self, 0.0, hi, tol=1e-14)

    def inverse_derivative(self, slope: float) -> float:
        """theta with H'(theta) = slope (H' is increasing by convexity)."""
        f = lambda t: self.derivative(t) - slope
        lo = 0.0
        if f(lo) >= 0.0:
            raise TheoryError(f"H'(0) = {self.derivative(0.0)} already exceeds {slope}")
        hi = _upper_bracket(f, self.boundary)
        return bisect(f, lo, hi, tol=1e-14)


def H(theta: float, pair: ModelPair, true_param: float, g: GFunction, a: float, u: float,
      mu: Optional[float] = None) -> float:
    if mu is None:
        mu = models.mean_llr(pair, true_param)
    return HFunction(pair, true_param, g, a, u, mu)(theta)


@dataclass(frozen=True)
class ThetaStarSolution:
    theta_star: float
    u: float
    a: float
    iterations: int
    residual: float
    trace: tuple = field(default=(), repr=False)


def solve_theta_star(pair: ModelPair, true_param: float, g: GFunction, a: float,
                     tol: float = 1e-10, max_iter: int = 200) -> ThetaStarSolution:
    """Jointly solve H_v(theta*) = 0 and u = H_v'(theta*).

    H_v depends on u through its mixing weight, so u is found by the damped
    fixed-point iteration ``u <- (u + H'(theta*(u))) / 2`` started at |mu|.
    """
    mu = models.mean_llr(pair, true_param)
    if not mu < 0.0:
        raise NoPositiveRoot(f"E_v Z = {mu} is not negative; theta* requires the V- regime")
    u = abs(mu)
    trace = []
    for k in range(1, max_iter + 1):
        hf = HFunction(pair, true_param, g, a, u, mu)
        theta = hf.root()
        u_next = 0.5 * u + 0.5 * hf.derivative(theta)
        trace.append((u, theta))
        if abs(u_next - u) < tol:
            u = u_next
            break
        u = u_next
    else:
        raise NotConverged(f"fixed point for u did not converge in {max_iter} iterations", trace)
    hf = HFunction(pair, true_param, g, a, u, mu)
    theta = hf.root()
    gm = g_eval(g, mu)
    # u comes from a finite difference, so allow rounding at the boundary
    if a > gm / u * (1.0 + 1e-9):
        raise ConstraintViolation(f"a = {a} exceeds g(mu)/u = {gm / u}")
    return ThetaStarSolution(theta, u, a, k, abs(hf(theta)), tuple(trace))


def example1_theta_star(a: float, mu: float, g: GFunction) -> float:
    """Closed-form theta* for the unit-variance normal shift model."""
    if not mu < 0.0:
        raise models.DomainError("closed form requires mu < 0")
    gm = g_eval(g, mu)
    if gm <= 0.0:
        raise models.DomainError(f"g(mu) must be positive, got {gm}")
    gp = abs(g.derivative(mu))
    return 2.0 * a * abs(mu) * gm / (a * gm + abs(mu * gp) * (2.0 * a + gp))


# -- the constant b -----------------------------------------------------------

def theta_excess(hf: HFunction, theta_star: float, x: float) -> float:
    """theta(1/x) - x H(theta(1/x)) - 2 theta*."""
    t = hf.inverse_derivative(1.0 / x)
    return t - x * hf(t) - 2.0 * theta_star


def compute_b(pair: ModelPair, true_param: float, g: GFunction, a: float,
              solution: ThetaStarSolution, ceiling: Optional[float] = None,
              ratio: float = 1.05) -> float:
    """Smallest x > g(mu)/u at which theta_excess turns non-negative."""
    mu = models.mean_llr(pair, true_param)
    hf = HFunction(pair, true_param, g, a, solution.u, mu)
    x0 = g_eval(g, mu) / solution.u
    if ceiling is None:
        ceiling = 1e6 * x0
    f = lambda x: theta_excess(hf, solution.theta_star, x)
    prev_x, prev_f = x0, f(x0)
    x = x0
    while x < ceiling:
        x = min(x * ratio, ceiling)
        fx = f(x)
        if prev_f < 0.0 <= fx:
            return bisect(f, prev_x, x, tol=1e-8 * x)
        prev_x, prev_f = x, fx
    raise TheoryError(f"b not found below ceiling {ceiling}")


# -- ARL approximations -------------------------------------------------------

@dataclass(frozen=True)
class ArlApproximation:
    """ARL ~ prefactor * scale * exp(leading_log), prefactor in [low, high]."""

    regime: str
    leading_log: float
    prefactor_low: float
    prefactor_high: float
    scale: float = 1.0
    leading_order_only: bool = False
    details: dict = field(default_factory=dict)

    @property
    def log_low(self) -> float:
        return math.log(self.prefactor_low * self.scale) + self.leading_log

    @property
    def log_high(self) -> float:
        return math.log(self.prefactor_high * self.scale) + self.leading_log

    @property
    def low(self) -> float:
        return _safe_exp(self.log_low)

    @property
    def high(self) -> float:
        return _safe_exp(self.log_high)

    @property
    def point(self) -> float:
        """Geometric midpoint of the interval."""
        return _safe_exp(0.5 * (self.log_low + self.log_high))

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(low=self.low, high=self.high, point=self.point)
        return out


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _sigma2(pair: ModelPair, true_param: float) -> float:
    return models.second_moment_llr(pair, true_param)


def arl_approx_oal(pair: ModelPair, true_param: float, c: float, g: GFunction,
                   a: float) -> ArlApproximation:
    if not c > 0.0:
        raise TheoryError("c must be positive")
    regime = models.classify_regime(pair, true_param)
    mu = models.mean_llr(pair, true_param)
    if regime == V_MINUS:
        sol = solve_theta_star(pair, true_param, g, a)
        b = compute_b(pair, true_param, g, a, sol)
        gm = g_eval(g, mu)
        return ArlApproximation(
            regime, c * sol.theta_star * gm, 1.0 / (b * c), c * gm / sol.u, 1.0 / abs(mu),
            details=dict(mu=mu, theta_star=sol.theta_star, u=sol.u, b=b, g_mu=gm),
        )
    if regime == V_ZERO:
        g0 = g_eval(g, 0.0)
        if g0 <= 0.0:
            raise TheoryError("V0 approximation needs g(0) > 0")
        if c <= 1.0:
            raise TheoryError("V0 prefactor bound 1/(8 ln c) needs c > 1")
        s2 = _sigma2(pair, true_param)
        return ArlApproximation(
            regime, 2.0 * math.log(c * g0) - math.log(s2),
            1.0 / (8.0 * math.log(c)), 1.0 / (1.0 - special.ndtr(1.0)),
            details=dict(mu=mu, sigma2=s2, g_0=g0),
        )
    gm = g_eval(g, mu)
    if gm <= 0.0:
        raise TheoryError(f"g(mu) = {gm} <= 0: ARL is bounded in c, see bounded_arl_constants")
    return ArlApproximation(regime, math.log(c * gm / mu), 1.0, 1.0, details=dict(mu=mu, g_mu=gm))


def arl_approx_cusum(pair: ModelPair, true_param: float, c: float) -> ArlApproximation:
    if not c > 0.0:
        raise TheoryError("c must be positive")
    regime = models.classify_regime(pair, true_param)
    mu = models.mean_llr(pair, true_param)
    if regime == V_MINUS:
        s = solve_s_star(pair, true_param)
        return ArlApproximation(regime, c * s, 1.0, 1.0, 1.0 / abs(mu), True,
                                details=dict(mu=mu, s_star=s))
    if regime == V_ZERO:
        s2 = _sigma2(pair, true_param)
        return ArlApproximation(regime, 2.0 * math.log(c) - math.log(s2), 1.0, 1.0,
                                leading_order_only=True, details=dict(mu=mu, sigma2=s2))
    return ArlApproximation(regime, math.log(c / mu), 1.0, 1.0, leading_order_only=True,
                            details=dict(mu=mu))


# -- comparison of two OAL designs -------------------------------------------

FIRST_SMALLER = "first_smaller"
SECOND_SMALLER = "second_smaller"
INDISTINGUISHABLE = "indistinguishable"


def corollary_compare(g1: GFunction, c1: float, g2: GFunction, c2: float, pair: ModelPair,
                      true_param: float, a: float, match_tol: float = 1e-6,
                      tie_tol: float = 1e-9) -> str:
    """Which of two ARL0-matched designs has the smaller out-of-control ARL."""
    v0 = pair.pre_param
    mu0 = models.mean_llr(pair, v0)
    t1 = solve_theta_star(pair, v0, g1, a).theta_star
    t2 = solve_theta_star(pair, v0, g2, a).theta_star
    lhs = c1 * t1 * g_eval(g1, mu0)
    rhs = c2 * t2 * g_eval(g2, mu0)
    if abs(lhs - rhs) > match_tol * max(1.0, abs(lhs), abs(rhs)):
        raise NotMatched(f"designs are not ARL0-matched: {lhs} != {rhs}")
    mu = models.mean_llr(pair, true_param)
    if mu < mu0:
        raise TheoryError(f"mu = {mu} lies below the in-control mean {mu0}")
    base1 = t1 * g_eval(g1, mu0)
    base2 = t2 * g_eval(g2, mu0)
    if mu < 0.0:
        r1 = solve_theta_star(pair, true_param, g1, a).theta_star * g_eval(g1, mu) / base1
        r2 = solve_theta_star(pair, true_param, g2, a).theta_star * g_eval(g2, mu) / base2
    else:
        r1 = g_eval(g1, mu) / base1
        r2 = g_eval(g2, mu) / base2
    if abs(r1 - r2) <= tie_tol:
        return INDISTINGUISHABLE
    return FIRST_SMALLER if r1 < r2 else SECOND_SMALLER


# -- large-shift boundedness --------------------------------------------------

@dataclass(frozen=True)
class BoundedArlConstants:
    a_star: float
    mu_star: float
    theta_star: float
    b: float
    d: float
    a0: float
    B: float

    def bound_k(self, k: int, p0_survival: float) -> float:
        """Bound on E(T - k + 1)^+ for a change at k > 1.

        ``p0_survival`` is the in-control probability that the test has not
        stopped before k.
        """
        if k <= 1:
            return self.B
        m = (self.a0 + 1.0) * (k - 1)
        return m * p0_survival + 2.0 * math.exp(-m * self.b) / (1.0 - math.exp(-self.b))


def bounded_arl_constants(pair: ModelPair, true_param: float, g: GFunction) -> BoundedArlConstants:
    mu = models.mean_llr(pair, true_param)
    if not mu > 0.0:
        raise TheoryError(f"boundedness needs E_v Z > 0, got {mu}")
    if not g_eval(g, mu) < 0.0:
        raise TheoryError(f"boundedness needs g(mu) < 0, got {g_eval(g, mu)}")
    a_star = g_root(g)
    if a_star is None:
        raise TheoryError("g has no root")
    mu_star = max(a_star, 0.0)
    if not mu_star < mu:
        raise TheoryError(f"mu* = {mu_star} must be below mu = {mu}")
    v0 = pair.pre_param
    mu0 = models.mean_llr(pair, v0)

    # ln M(theta) = theta*mu + ln h(-theta)
    def log_m(param, theta):
        return theta * mu + models.log_mgf_llr(pair, param, -theta)

    lower = models.mgf_lower_boundary(pair, true_param)
    upper = -lower if math.isfinite(lower) else math.inf
    f = lambda t: central_diff(lambda s: log_m(true_param, s), t, upper) - (mu - mu_star)
    hi = _upper_bracket(f, upper)
    theta = bisect(f, 0.0, hi, tol=1e-14)
    b = 0.5 * (theta * (mu - mu_star) - log_m(true_param, theta))
    d = abs(mu0 - mu_star - log_m(v0, theta))
    a0 = min(b / d, d)
    B = (math.exp(2.0 * b) + 1.0) / (math.exp(2.0 * b) - 1.0)
    return BoundedArlConstants(a_star, mu_star, theta, b, d, a0, B)
