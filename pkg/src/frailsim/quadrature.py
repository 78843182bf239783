"""Numerical integration kernels.

Three tools live here:

* plain Gauss-Hermite rules (physicists' convention, weight exp(-x^2)),
* adaptive Gauss-Hermite in log space, for marginalizing cluster-level
  random effects whose integrands are sharply peaked, and
* tanh-sinh (double-exponential) quadrature on finite intervals, used both
  as a high-accuracy oracle and for integrating survival curves.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from .exceptions import DomainError, QuadratureError

__all__ = [
    "GHRule",
    "gh_rule",
    "adaptive_gh",
    "adaptive_gh_batch",
    "tanh_sinh",
]

MAX_GH_NODES = 128


@dataclass(frozen=True)
class GHRule:
    """A Gauss-Hermite rule: integrates f(x) exp(-x^2) dx over the real line."""

    n: int
    nodes: np.ndarray
    weights: np.ndarray


@functools.lru_cache(maxsize=None)
def gh_rule(n: int) -> GHRule:
    """Return the n-point Gauss-Hermite rule (physicists' convention)."""
    if not isinstance(n, (int, np.integer)):
        raise TypeError(f"node count must be an integer, got {type(n).__name__}")
    if not 1 <= n <= MAX_GH_NODES:
        raise ValueError(f"node count must be in [1, {MAX_GH_NODES}], got {n}")
    nodes, weights = hermgauss(int(n))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GHRule(n=int(n), nodes=nodes, weights=weights)


def _log_f_checked(log_f: Callable[[np.ndarray], np.ndarray], eta: np.ndarray) -> np.ndarray:
    vals = np.asarray(log_f(eta), dtype=float)
    if vals.shape != eta.shape:
        vals = np.broadcast_to(vals, eta.shape).astype(float)
    if np.isnan(vals).any() or np.isposinf(vals).any():
        bad = eta[~(np.isfinite(vals) | np.isneginf(vals))]
        raise QuadratureError(
            f"log-integrand returned NaN or +inf at eta={bad[:3]!r}"
        )
    return vals


def _find_modes(
    log_f: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Locate the per-component maximum of a batch of concave-ish log-integrands.

    Safeguarded Newton iteration with central finite differences. Returns the
    modes and the (positive) curvatures -d2/deta2 log_f at the modes.
    """
    m = np.array(x0, dtype=float, copy=True)
    f0 = _log_f_checked(log_f, m)
    if np.isneginf(f0).any():
        raise QuadratureError("log-integrand is -inf at the starting point")
    done = np.zeros(m.shape, dtype=bool)
    g2 = np.full(m.shape, np.nan)
    for _ in range(max_iter):
        h = 1e-5 * (1.0 + np.abs(m))
        fp = _log_f_checked(log_f, m + h)
        fm = _log_f_checked(log_f, m - h)
        with np.errstate(invalid="ignore", over="ignore"):
            g1 = (fp - fm) / (2.0 * h)
            g2 = (fp - 2.0 * f0 + fm) / (h * h)
        if not (np.isfinite(g1) | done).all() or not (np.isfinite(g2) | done).all():
            raise QuadratureError(
                "finite-difference derivatives of the log-integrand are not finite"
            )
        newton = np.where(g2 < -1e-12, -g1 / np.where(g2 < -1e-12, g2, -1.0), np.sign(g1) * (1.0 + np.abs(m)))
        done |= (np.abs(newton) <= 1e-9 * (1.0 + np.abs(m))) & (g2 < 0)
        if done.all():
            break
        cap = 10.0 * (1.0 + np.abs(m))
        step = np.where(done, 0.0, np.clip(newton, -cap, cap))
        # backtrack any step that fails to improve the objective
        for _ in range(60):
            fprop = _log_f_checked(log_f, m + step)
            bad = ~done & ~(fprop >= f0 - 1e-12 * (1.0 + np.abs(f0)))
            if not bad.any():
                break
            step = np.where(bad, 0.5 * step, step)
        else:
            raise QuadratureError("mode search could not find an uphill step")
        m = m + step
        f0 = _log_f_checked(log_f, m)
    else:
        raise QuadratureError("mode search did not converge within 100 iterations")
    curv = -g2
    if not (curv > 0).all():
        raise QuadratureError("log-integrand is not locally concave at its mode")
    return m, curv


def adaptive_gh_batch(
    log_f: Callable[[np.ndarray], np.ndarray],
    rule: GHRule,
    x0: np.ndarray,
) -> np.ndarray:
    """Log of integral exp(log_f(eta)) d(eta), for a batch of independent integrands.

    log_f maps an array with one eta per integrand to the array of
    log-integrand values. Each integrand is recentred at its mode and rescaled
    by its local curvature before the Gauss-Hermite rule is applied, so a
    moderate node count handles very concentrated integrands.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    mode, curv = _find_modes(log_f, x0)
    scale = np.sqrt(2.0 / curv)
    terms = np.empty((rule.n, x0.shape[0]))
    log_w = np.log(rule.weights)
    for k in range(rule.n):
        vals = _log_f_checked(log_f, mode + scale * rule.nodes[k])
        terms[k] = vals + rule.nodes[k] ** 2 + log_w[k]
    return logsumexp(terms, axis=0) + np.log(scale)


def adaptive_gh(
    log_f: Callable[[np.ndarray], np.ndarray],
    rule: GHRule,
    x0: float = 0.0,
) -> float:
    """Log of integral exp(log_f(eta)) d(eta) for a single integrand.

    log_f must accept an ndarray of candidate eta values and return the
    matching array of log-integrand values.
    """
    return float(adaptive_gh_batch(log_f, rule, np.array([x0], dtype=float))[0])


_T_MAX = 4.0
_MAX_LEVEL = 12


def tanh_sinh(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = 1e-10,
) -> float:
    """Integrate f over the finite interval [a, b] by tanh-sinh quadrature.

    The trapezoid step is halved (one level per halving, cap 12) until two
    successive estimates agree to tol * (1 + |estimate|). Abscissae are formed
    as offsets from the endpoints, so integrable endpoint singularities are
    handled without evaluating f at a or b themselves.
    """
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise DomainError(f"integration limits must be finite, got [{a}, {b}]")
    if not a < b:
        raise DomainError(f"integration limits must satisfy a < b, got [{a}, {b}]")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)

    def eval_nodes(x: np.ndarray) -> np.ndarray:
        vals = np.asarray(f(x), dtype=float)
        if vals.shape != x.shape:
            vals = np.broadcast_to(vals, x.shape).astype(float)
        if not np.isfinite(vals).all():
            bad = x[~np.isfinite(vals)]
            raise QuadratureError(
                f"integrand returned a non-finite value at x={bad[0]!r}"
            )
        return vals

    # running sum of w(t) * f(x(t)) over all abscissae seen so far
    weighted_sum = 0.5 * np.pi * eval_nodes(np.array([mid]))[0]
    estimate = None
    for level in range(_MAX_LEVEL + 1):
        h = 2.0 ** (-level)
        if level == 0:
            j = np.arange(1, int(_T_MAX / h) + 1)
        else:
            j = np.arange(1, int(_T_MAX / h) + 1, 2)
        t = j * h
        w = 0.5 * np.pi * np.sinh(t)
        # 1 - tanh(w) without cancellation
        delta = 2.0 / (np.expm1(2.0 * w) + 2.0)
        dxdt = 0.5 * np.pi * np.cosh(t) / np.cosh(w) ** 2
        x_lo = a + half * delta
        x_hi = b - half * delta
        keep_lo = x_lo > a
        keep_hi = x_hi < b
        if keep_lo.any():
            weighted_sum += np.sum(dxdt[keep_lo] * eval_nodes(x_lo[keep_lo]))
        if keep_hi.any():
            weighted_sum += np.sum(dxdt[keep_hi] * eval_nodes(x_hi[keep_hi]))
        new_estimate = half * h * weighted_sum
        if estimate is not None and abs(new_estimate - estimate) <= tol * (1.0 + abs(new_estimate)):
            return float(new_estimate)
        estimate = new_estimate
    raise QuadratureError(
        f"tanh-sinh did not converge to tol={tol} within {_MAX_LEVEL} levels on [{a}, {b}]"
    )
