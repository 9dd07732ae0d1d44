"""Observation models and their log-likelihood-ratio statistics.

Two families are supported:

* ``pareto``: F(x) = 1 - x**(-alpha) on x >= 1 with 0 < alpha < 1.
* ``normal``: unit-variance normal, pre-change mean 0, reference post-change
  mean 1, so the LLR is simply ``x - 1/2``.

All functions are pure and accept numpy arrays wherever an observation is
expected.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import special

PARETO = "pareto"
NORMAL = "normal"

V_MINUS = "V-"
V_ZERO = "V0"
V_PLUS = "V+"

ZERO_BAND = 1e-12


class DomainError(ValueError):
    """An argument lies outside the support or parameter range of a model."""


class MGFUndefined(DomainError):
    """The moment-generating function diverges at the requested argument.

    ``boundary`` is the supremum of admissible theta (``inf`` if unbounded).
    """

    def __init__(self, message: str, boundary: float):
        super().__init__(message)
        self.boundary = boundary


@dataclass(frozen=True)
class ParetoModel:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"pareto tail index must lie in (0, 1), got {self.alpha}")

    family = PARETO

    @property
    def param(self) -> float:
        return self.alpha

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 1.0, self.alpha * x ** (-(1.0 + self.alpha)), 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 1.0, 1.0 - x ** (-self.alpha), 0.0)


@dataclass(frozen=True)
class NormalShiftModel:
    mean: float

    def __post_init__(self):
        if not math.isfinite(self.mean):
            raise DomainError(f"normal mean must be finite, got {self.mean}")

    family = NORMAL

    @property
    def param(self) -> float:
        return self.mean

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x - self.mean) ** 2) / math.sqrt(2.0 * math.pi)

    def cdf(self, x):
        return special.ndtr(np.asarray(x, dtype=float) - self.mean)


Model = Union[ParetoModel, NormalShiftModel]


def make_model(family: str, param: float) -> Model:
    if family == PARETO:
        return ParetoModel(float(param))
    if family == NORMAL:
        return NormalShiftModel(float(param))
    raise DomainError(f"unknown family {family!r}")


@dataclass(frozen=True)
class ModelPair:
    """Pre-change model and the reference post-change model defining Z."""

    pre: Model
    post_ref: Model

    def __post_init__(self):
        if self.pre.family != self.post_ref.family:
            raise DomainError("pre-change and reference models must share a family")
        if self.pre == self.post_ref:
            raise DomainError("reference post-change model must differ from the pre-change model")
        if self.family == NORMAL and (self.pre.mean != 0.0 or self.post_ref.mean != 1.0):
            raise DomainError("normal pair is fixed to the shift N(0,1) -> N(1,1)")

    @property
    def family(self) -> str:
        return self.pre.family

    @classmethod
    def pareto(cls, alpha0: float, alpha1: float) -> "ModelPair":
        return cls(ParetoModel(alpha0), ParetoModel(alpha1))

    @classmethod
    def normal(cls) -> "ModelPair":
        return cls(NormalShiftModel(0.0), NormalShiftModel(1.0))

    def model(self, param: float) -> Model:
        """Observation model of the same family with parameter ``param``."""
        return make_model(self.family, param)

    @property
    def pre_param(self) -> float:
        return self.pre.param

    # Pareto coefficients: Z = log_ratio + slope * ln X
    @property
    def log_ratio(self) -> float:
        return math.log(self.post_ref.alpha / self.pre.alpha)

    @property
    def slope(self) -> float:
        return self.pre.alpha - self.post_ref.alpha


@dataclass(frozen=True)
class MixturePost:
    """Discrete mixture used as the reference post-change density."""

    components: tuple

    def __post_init__(self):
        comps = tuple((float(w), m) for w, m in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise DomainError("mixture needs at least one component")
        if any(w <= 0.0 for w, _ in comps):
            raise DomainError("mixture weights must be positive")
        if abs(math.fsum(w for w, _ in comps) - 1.0) > 1e-12:
            raise DomainError("mixture weights must sum to 1")
        if len({m.family for _, m in comps}) != 1:
            raise DomainError("mixture components must share a family")

    @property
    def family(self) -> str:
        return self.components[0][1].family

    def pdf(self, x):
        return sum(w * m.pdf(x) for w, m in self.components)


# -- sampling -----------------------------------------------------------------

def pareto_quantile(alpha: float, p):
    """Inverse CDF of the Pareto law: ``(1 - p) ** (-1/alpha)``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"pareto tail index must lie in (0, 1), got {alpha}")
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr < 0.0) or np.any(p_arr >= 1.0):
        raise DomainError("probability must lie in [0, 1)")
    out = (1.0 - p_arr) ** (-1.0 / alpha)
    return float(out) if out.ndim == 0 else out


def transform_uniforms(model: Model, u: np.ndarray) -> np.ndarray:
    """Map uniforms in (0, 1) to observations of ``model``."""
    if model.family == PARETO:
        return pareto_quantile(model.alpha, u)
    return special.ndtri(u) + model.mean


def sample_stream(model: Model, seed: int, n: int) -> np.ndarray:
    """Deterministic sample of length ``n`` for ``(model, seed)``.

    Draws come from the counter-based stream of :mod:`cusum_oal.streams` with
    replication index 0, so they coincide with the first replication of a
    Monte Carlo run using the same seed.
    """
    from .streams import uniforms

    if n < 0:
        raise DomainError("sample size must be non-negative")
    u = uniforms(seed, np.array([0], dtype=np.uint64), 0, n)[0]
    return transform_uniforms(model, u)


# -- LLR statistics -----------------------------------------------------------

def _check_support(pair_or_family: str, x: np.ndarray) -> None:
    if pair_or_family == PARETO and np.any(x < 1.0):
        raise DomainError("pareto observations must be >= 1")


def llr(pair: ModelPair, x):
    """Log-likelihood ratio ln(p_ref(x) / p_pre(x)) of one or many observations."""
    xa = np.asarray(x, dtype=float)
    _check_support(pair.family, xa)
    if pair.family == PARETO:
        z = pair.log_ratio + pair.slope * np.log(xa)
    else:
        z = xa - 0.5
    return float(z) if z.ndim == 0 else z


def mean_llr(pair: ModelPair, true_param: float) -> float:
    """E_v[Z]. For the Pareto family E[ln X] = 1/alpha."""
    truth = pair.model(true_param)
    if pair.family == PARETO:
        return pair.log_ratio + pair.slope / truth.alpha
    return truth.mean - 0.5


def second_moment_llr(pair: ModelPair, true_param: float) -> float:
    """E_v[Z**2], used as sigma^2 when the regime is V0."""
    truth = pair.model(true_param)
    if pair.family == PARETO:
        r, d, a = pair.log_ratio, pair.slope, truth.alpha
        # ln X ~ Exp(alpha): E ln X = 1/a, E ln^2 X = 2/a^2
        return r * r + 2.0 * r * d / a + 2.0 * d * d / (a * a)
    mu = truth.mean - 0.5
    return 1.0 + mu * mu


def mgf_boundary(pair: ModelPair, true_param: float) -> float:
    """Supremum of theta for which h_v(theta) is finite (``inf`` if none)."""
    if pair.family == PARETO:
        truth = pair.model(true_param)
        if pair.slope > 0:
            return truth.alpha / pair.slope
        return math.inf
    return math.inf


def mgf_lower_boundary(pair: ModelPair, true_param: float) -> float:
    if pair.family == PARETO and pair.slope < 0:
        return pair.model(true_param).alpha / pair.slope
    return -math.inf


def mgf_llr(pair: ModelPair, true_param: float, theta: float) -> float:
    """h_v(theta) = E_v exp(theta Z) in closed form."""
    return math.exp(log_mgf_llr(pair, true_param, theta))


def log_mgf_llr(pair: ModelPair, true_param: float, theta: float) -> float:
    truth = pair.model(true_param)
    if pair.family == PARETO:
        denom = truth.alpha - theta * pair.slope
        if denom <= 0.0:
            hi = mgf_boundary(pair, true_param)
            lo = mgf_lower_boundary(pair, true_param)
            raise MGFUndefined(
                f"MGF undefined at theta={theta}: admissible range ({lo}, {hi})",
                hi if theta > 0 else lo,
            )
        return theta * pair.log_ratio + math.log(truth.alpha) - math.log(denom)
    mu = truth.mean - 0.5
    return theta * mu + 0.5 * theta * theta


def log_mgf_llr_tilted(pair: ModelPair, true_param: float, theta: float, q: float, mu: float) -> float:
    if q < 0:
        raise DomainError("tilt coefficient must be non-negative")
    try:
        return -theta * q * mu + log_mgf_llr(pair, true_param, theta * (1.0 + q))
    except MGFUndefined as exc:
        raise MGFUndefined(str(exc), exc.boundary / (1.0 + q)) from None


def mgf_llr_tilted(pair: ModelPair, true_param: float, theta: float, q: float, mu: float) -> float:
    """E_v exp(theta * Z~) with Z~ = (1 + q) Z - q mu."""
    return math.exp(log_mgf_llr_tilted(pair, true_param, theta, q, mu))


def kl_divergence(p: Model, q: Model) -> float:
    """I(p|q) = E_p ln(p(X)/q(X)) for two models of one family."""
    if p.family != q.family:
        raise DomainError("KL divergence needs models of one family")
    if p.family == PARETO:
        return math.log(p.alpha / q.alpha) + (q.alpha - p.alpha) / p.alpha
    return 0.5 * (p.mean - q.mean) ** 2


def classify_regime(pair: ModelPair, true_param: float) -> str:
    m = mean_llr(pair, true_param)
    if abs(m) <= ZERO_BAND:
        return V_ZERO
    return V_MINUS if m < 0 else V_PLUS


def mixture_llr(pre: Model, mix: MixturePost, x):
    """ln(sum_i w_i p_i(x) / p_pre(x))."""
    if mix.family != pre.family:
        raise DomainError("mixture and pre-change model must share a family")
    xa = np.asarray(x, dtype=float)
    _check_support(pre.family, xa)
    if pre.family == PARETO:
        # log-densities relative to pre keep large x finite
        lx = np.log(xa)
        terms = [math.log(w * m.alpha / pre.alpha) + (pre.alpha - m.alpha) * lx for w, m in mix.components]
    else:
        terms = [math.log(w) + (m.mean - pre.mean) * xa - 0.5 * (m.mean ** 2 - pre.mean ** 2)
                 for w, m in mix.components]
    z = special.logsumexp(np.stack(np.broadcast_arrays(*terms)), axis=0)
    return float(z) if np.ndim(z) == 0 else z

