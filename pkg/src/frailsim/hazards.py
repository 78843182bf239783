"""Baseline hazard families and frailty distributions for clustered survival data.

All hazard families implement the same triple of vectorized operations:
``hazard``, ``cumulative_hazard``, and ``inverse_cumulative_hazard``. Scalar
input gives scalar output; arrays give arrays of the same shape. Negative
times are rejected; t = 0 is valid exactly when the hazard has a finite limit
there.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .exceptions import DomainError, NumericError

__all__ = [
    "BaselineHazard",
    "Exponential",
    "Weibull",
    "Gompertz",
    "WeibullMixture",
    "FrailtyFamily",
    "FrailtySpec",
    "sample_frailty",
    "gamma_marginal_survival",
]


def _prep_times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.isnan(arr).any() or (arr < 0).any():
        raise DomainError("times must be nonnegative")
    return arr, scalar


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr[0]) if scalar else arr


class BaselineHazard(abc.ABC):
    """Interface shared by every baseline hazard family."""

    kind: str = ""

    @abc.abstractmethod
    def hazard(self, t):
        """h0(t). Raises DomainError for t < 0 or where the limit at 0 is infinite."""

    @abc.abstractmethod
    def cumulative_hazard(self, t):
        """H0(t) = integral of h0 from 0 to t."""

    @abc.abstractmethod
    def inverse_cumulative_hazard(self, u):
        """Smallest t with H0(t) = u. Returns inf where u exceeds sup H0."""

    @abc.abstractmethod
    def params_dict(self) -> dict[str, float]:
        """Parameter values keyed by name, for manifests and reports."""

    def _check_targets(self, u) -> tuple[np.ndarray, bool]:
        arr = np.asarray(u, dtype=float)
        scalar = arr.ndim == 0
        arr = np.atleast_1d(arr)
        if np.isnan(arr).any() or (arr < 0).any():
            raise DomainError("cumulative-hazard targets must be nonnegative")
        return arr, scalar


@dataclass(frozen=True)
class Exponential(BaselineHazard):
    rate: float

    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def hazard(self, t):
        arr, scalar = _prep_times(t)
        return _ret(np.full_like(arr, self.rate), scalar)

    def cumulative_hazard(self, t):
        arr, scalar = _prep_times(t)
        return _ret(self.rate * arr, scalar)

    def inverse_cumulative_hazard(self, u):
        arr, scalar = self._check_targets(u)
        return _ret(arr / self.rate, scalar)

    def params_dict(self) -> dict[str, float]:
        return {"rate": self.rate}


@dataclass(frozen=True)
class Weibull(BaselineHazard):
    """H0(t) = rate * t**shape."""

    rate: float
    shape: float

    kind = "weibull"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not self.shape > 0:
            raise ValueError(f"shape must be positive, got {self.shape}")

    def hazard(self, t):
        arr, scalar = _prep_times(t)
        if self.shape < 1 and (arr == 0).any():
            raise DomainError("hazard is unbounded at t = 0 when shape < 1")
        with np.errstate(divide="ignore"):
            vals = self.rate * self.shape * arr ** (self.shape - 1.0)
        return _ret(vals, scalar)

    def cumulative_hazard(self, t):
        arr, scalar = _prep_times(t)
        return _ret(self.rate * arr**self.shape, scalar)

    def inverse_cumulative_hazard(self, u):
        arr, scalar = self._check_targets(u)
        return _ret((arr / self.rate) ** (1.0 / self.shape), scalar)

    def params_dict(self) -> dict[str, float]:
        return {"rate": self.rate, "shape": self.shape}


@dataclass(frozen=True)
class Gompertz(BaselineHazard):
    """h0(t) = rate * exp(gamma * t); gamma may take either sign."""

    rate: float
    gamma: float

    kind = "gompertz"

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be finite, got {self.gamma}")

    def hazard(self, t):
        arr, scalar = _prep_times(t)
        return _ret(self.rate * np.exp(self.gamma * arr), scalar)

    def cumulative_hazard(self, t):
        arr, scalar = _prep_times(t)
        if self.gamma == 0.0:
            return _ret(self.rate * arr, scalar)
        return _ret(self.rate * np.expm1(self.gamma * arr) / self.gamma, scalar)

    def inverse_cumulative_hazard(self, u):
        arr, scalar = self._check_targets(u)
        if self.gamma == 0.0:
            return _ret(arr / self.rate, scalar)
        inner = self.gamma * arr / self.rate
        if self.gamma > 0:
            return _ret(np.log1p(inner) / self.gamma, scalar)
        # decreasing hazard: H0 saturates at rate/|gamma|
        out = np.full_like(arr, np.inf)
        feasible = inner > -1.0
        out[feasible] = np.log1p(inner[feasible]) / self.gamma
        return _ret(out, scalar)

    def params_dict(self) -> dict[str, float]:
        return {"rate": self.rate, "gamma": self.gamma}


@dataclass(frozen=True)
class WeibullMixture(BaselineHazard):
    """Two-component Weibull mixture on the survival scale.

    S0(t) = mix * exp(-rate1 * t**shape1) + (1 - mix) * exp(-rate2 * t**shape2),
    worked in log space so that very large cumulative hazards stay finite.
    """

    rate1: float
    shape1: float
    rate2: float
    shape2: float
    mix: float

    kind = "weibull_mixture"

    def __post_init__(self):
        for label, val in (("rate1", self.rate1), ("shape1", self.shape1),
                           ("rate2", self.rate2), ("shape2", self.shape2)):
            if not val > 0:
                raise ValueError(f"{label} must be positive, got {val}")
        if not 0.0 < self.mix < 1.0:
            raise ValueError(f"mix must lie strictly in (0, 1), got {self.mix}")

    def _log_survival_terms(self, arr: np.ndarray) -> np.ndarray:
        # stacked log of the two weighted component survival functions
        return np.stack([
            np.log(self.mix) - self.rate1 * arr**self.shape1,
            np.log1p(-self.mix) - self.rate2 * arr**self.shape2,
        ])

    def cumulative_hazard(self, t):
        arr, scalar = _prep_times(t)
        vals = -logsumexp(self._log_survival_terms(arr), axis=0)
        return _ret(vals, scalar)

    def hazard(self, t):
        arr, scalar = _prep_times(t)
        out = np.empty_like(arr)
        zero = arr == 0
        if zero.any():
            out[zero] = self._hazard_at_zero()
        pos = ~zero
        if pos.any():
            tp = arr[pos]
            log_dens = np.stack([
                np.log(self.mix) + np.log(self.rate1 * self.shape1)
                + (self.shape1 - 1.0) * np.log(tp) - self.rate1 * tp**self.shape1,
                np.log1p(-self.mix) + np.log(self.rate2 * self.shape2)
                + (self.shape2 - 1.0) * np.log(tp) - self.rate2 * tp**self.shape2,
            ])
            log_s = logsumexp(self._log_survival_terms(tp), axis=0)
            out[pos] = np.exp(logsumexp(log_dens, axis=0) - log_s)
        return _ret(out, scalar)

    def _hazard_at_zero(self) -> float:
        total = 0.0
        for w, rate, shape in ((self.mix, self.rate1, self.shape1),
                               (1.0 - self.mix, self.rate2, self.shape2)):
            if shape < 1.0:
                raise DomainError("hazard is unbounded at t = 0 when a component shape < 1")
            total += w * rate * shape if shape == 1.0 else 0.0
        return total

    def inverse_cumulative_hazard(self, u):
        arr, scalar = self._check_targets(u)
        out = np.zeros_like(arr)
        out[np.isinf(arr)] = np.inf
        solve = np.isfinite(arr) & (arr > 0)
        if solve.any():
            out[solve] = self._invert_batch(arr[solve])
        return _ret(out, scalar)

    def _invert_batch(self, targets: np.ndarray) -> np.ndarray:
        """Vectorized bracketed bisection plus Newton polish on H0(t) = target."""
        hi = np.ones_like(targets)
        lo = np.zeros_like(targets)
        active = self.cumulative_hazard(hi) < targets
        for _ in range(200):
            if not active.any():
                break
            lo[active] = hi[active]
            hi[active] *= 2.0
            active &= self.cumulative_hazard(hi) < targets
        else:
            raise NumericError(
                f"could not bracket cumulative-hazard target {targets[active][0]}"
            )
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            below = self.cumulative_hazard(mid) < targets
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        t = 0.5 * (lo + hi)
        for _ in range(3):
            resid = self.cumulative_hazard(t) - targets
            slope = self.hazard(t)
            step = np.where(slope > 0, resid / np.where(slope > 0, slope, 1.0), 0.0)
            t = np.clip(t - step, lo, hi)
        if (np.abs(self.cumulative_hazard(t) - targets)
                > 1e-10 * np.maximum(1.0, targets)).any():
            raise NumericError("inversion residual above tolerance")
        return t

    def params_dict(self) -> dict[str, float]:
        return {"rate1": self.rate1, "shape1": self.shape1,
                "rate2": self.rate2, "shape2": self.shape2, "mix": self.mix}


class FrailtyFamily(str, Enum):
    GAMMA = "gamma"
    LOG_NORMAL = "lognormal"
    MIXTURE_NORMAL = "mixturenormal"


@dataclass(frozen=True)
class FrailtySpec:
    """A cluster-level multiplicative frailty distribution.

    ``variance`` is the Gamma variance for the Gamma family and the variance
    of the log frailty for the Normal-based families. The two-point Normal
    mixture puts weight 1/2 on means -3*sqrt(variance) and +3*sqrt(variance),
    each component having variance equal to ``variance`` as well.
    """

    family: FrailtyFamily
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "family", FrailtyFamily(self.family))
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def mixture_means(self) -> tuple[float, float]:
        if self.family is not FrailtyFamily.MIXTURE_NORMAL:
            raise ValueError("mixture parameters are defined only for the mixture family")
        offset = 3.0 * np.sqrt(self.variance)
        return (-offset, offset)

    @property
    def mixture_probs(self) -> tuple[float, float]:
        if self.family is not FrailtyFamily.MIXTURE_NORMAL:
            raise ValueError("mixture parameters are defined only for the mixture family")
        return (0.5, 0.5)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw multiplicative frailties alpha (one per cluster)."""
        if self.family is FrailtyFamily.GAMMA:
            return rng.gamma(shape=1.0 / self.variance, scale=self.variance, size=size)
        if self.family is FrailtyFamily.LOG_NORMAL:
            return np.exp(rng.normal(0.0, np.sqrt(self.variance), size=size))
        lo_mean, hi_mean = self.mixture_means
        means = np.where(rng.random(size) < 0.5, lo_mean, hi_mean)
        return np.exp(rng.normal(means, np.sqrt(self.variance)))


def sample_frailty(spec: FrailtySpec, rng: np.random.Generator, size: int) -> np.ndarray:
    return spec.sample(rng, size)


def gamma_marginal_survival(cumulative_hazard, variance: float):
    """Population-averaged survival (1 + variance * H)**(-1/variance).

    This is the Laplace transform of a mean-one Gamma frailty evaluated at H,
    computed on the log scale so large H stays accurate.
    """
    if not variance > 0:
        raise DomainError(f"variance must be positive, got {variance}")
    arr = np.asarray(cumulative_hazard, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if np.isnan(arr).any() or (arr < 0).any():
        raise DomainError("cumulative hazard must be nonnegative")
    vals = np.exp(-np.log1p(variance * arr) / variance)
    return _ret(vals, scalar)
