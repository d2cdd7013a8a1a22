"""Tail probabilities of weighted sums of independent chi-square(1) variables.

All p-values are upper tails ``P(sum_i lam_i V_i^2 >= t)`` with ``V_i`` i.i.d.
standard normal and ``lam_i >= 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from .exceptions import ConfigError, NumericalError

IMHOF_TOL = 1e-8
SMALL_T = 1e-2
MC_CHUNK = 100_000


class ImhofFallbackWarning(RuntimeWarning):
    """Imhof quadrature did not converge and Monte Carlo was used instead."""


@dataclass(frozen=True)
class GchisqDist:
    """Generalised chi-square with nonnegative weights, stored sorted descending."""

    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.sort(np.asarray(self.lambdas, dtype=np.float64).ravel())[::-1]
        if lam.size == 0 or not np.all(np.isfinite(lam)):
            raise ConfigError("weights must be a nonempty finite vector")
        if lam[-1] < 0:
            raise ConfigError(f"weights must be nonnegative, smallest is {lam[-1]}")
        if not lam[0] > 0:
            raise ConfigError("at least one weight must be positive")
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def mean(self) -> float:
        return float(self.lambdas.sum())

    @property
    def var(self) -> float:
        return float(2.0 * np.sum(self.lambdas ** 2))


def _as_dist(dist) -> GchisqDist:
    return dist if isinstance(dist, GchisqDist) else GchisqDist(dist)


def _log_chernoff(lam: np.ndarray, t: float) -> float:
    """log of min_s exp(-s t) E[exp(s Q)], an upper bound on P(Q >= t)."""
    if t <= lam.sum():
        return 0.0
    f = lambda s: -s * t - 0.5 * np.sum(np.log1p(-2.0 * s * lam))
    hi = 0.5 / lam[0]
    res = optimize.minimize_scalar(f, bounds=(0.0, hi * (1 - 1e-12)), method="bounded",
                                   options={"xatol": 1e-12 * hi})
    return float(min(0.0, res.fun))


def _imhof(lam: np.ndarray, t: float):
    """Imhof inversion integral. Returns (p, abserr, converged).

    The weights are rescaled so the largest is 1, or, when ``t`` is small
    against them, so that ``t`` equals ``SMALL_T``; this keeps the tail
    frequency away from zero. The integral is split at ``a``: on [0, a] the
    full integrand is integrated adaptively; on [a, inf) the oscillating
    factor exp(-i t u / 2) is pulled out so that QUADPACK's Fourier-integral
    routine sees smooth, monotonically decaying amplitudes.
    """
    lam = lam[lam > 0]
    # P(Q <= t) <= prod_i P(lam_i V_i^2 <= t) <= prod_i sqrt(2 t / (pi lam_i))
    log_lower = float(np.sum(np.minimum(0.0, 0.5 * (np.log(2.0 / np.pi) + np.log(t) - np.log(lam)))))
    if log_lower < np.log(IMHOF_TOL / 10):
        return 1.0, float(np.exp(log_lower)), True
    log_upper = _log_chernoff(lam, t)
    if log_upper < np.log(IMHOF_TOL / 10):
        return 0.0, float(np.exp(log_upper)), True
    scale = lam[0] if t >= SMALL_T * lam[0] else t / SMALL_T
    lam = lam / scale
    t = t / scale
    omega = 0.5 * t

    def beta(u):
        return 0.5 * np.sum(np.arctan(lam * u))

    def envelope(u):
        return 1.0 / (u * np.exp(0.25 * np.sum(np.log1p((lam * u) ** 2))))

    def full(u):
        if u == 0.0:
            return 0.5 * (lam.sum() - t)
        return np.sin(beta(u) - omega * u) * envelope(u)

    # head: enough oscillations to leave a smooth tail but bounded work
    a = max(4.0, min(50.0, 20.0 * np.pi / omega))
    # decade segments from 1/lam_max: the envelope changes regime near each 1/lam_i
    edges = [0.0]
    u = 1.0 / lam[0]
    while u < a:
        edges.append(u)
        u *= 10.0
    edges.append(a)
    p_head = e_head = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(full, lo, hi, limit=500, epsabs=IMHOF_TOL / 100, epsrel=0.0)
        p_head += v
        e_head += e

    amp_sin = lambda u: np.sin(beta(u)) * envelope(u)
    amp_cos = lambda u: np.cos(beta(u)) * envelope(u)
    # sin(b - w u) = sin b cos(w u) - cos b sin(w u)
    shift = omega * a
    c, s = np.cos(shift), np.sin(shift)
    # write cos(w u) = cos(w (u - a) + w a), integrate in v = u - a from 0 to inf
    A = lambda v: amp_sin(v + a)
    B = lambda v: amp_cos(v + a)
    kw = dict(limlst=200, epsabs=IMHOF_TOL / 10)
    ic_A, e1 = integrate.quad(A, 0.0, np.inf, weight="cos", wvar=omega, **kw)
    is_A, e2 = integrate.quad(A, 0.0, np.inf, weight="sin", wvar=omega, **kw)
    ic_B, e3 = integrate.quad(B, 0.0, np.inf, weight="cos", wvar=omega, **kw)
    is_B, e4 = integrate.quad(B, 0.0, np.inf, weight="sin", wvar=omega, **kw)
    # cos(w u) = c cos(w v) - s sin(w v);  sin(w u) = s cos(w v) + c sin(w v)
    tail = (c * ic_A - s * is_A) - (s * ic_B + c * is_B)
    tail_err = e1 + e2 + e3 + e4

    p = 0.5 + (p_head + tail) / np.pi
    err = (e_head + tail_err) / np.pi
    return p, err, bool(np.isfinite(p) and err < IMHOF_TOL * 10)


def pvalue_imhof(dist, t: float, *, fallback_samples: int = 1_000_000, seed: int = 0) -> float:
    """Exact upper tail by numerical inversion of the characteristic function.

    On quadrature failure an :class:`ImhofFallbackWarning` is emitted and the
    Monte Carlo estimate is returned.
    """
    dist = _as_dist(dist)
    t = float(t)
    if t <= 0:
        return 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            p, err, ok = _imhof(dist.lambdas, t)
        except integrate.IntegrationWarning:
            ok = False
    if not ok:
        warnings.warn(
            f"Imhof quadrature did not converge at t={t}; using Monte Carlo", ImhofFallbackWarning, stacklevel=2
        )
        return pvalue_mc(dist, t, fallback_samples, seed)
    return float(min(1.0, max(0.0, p)))


def sample(dist, num_samples: int, seed) -> np.ndarray:
    """Draw ``num_samples`` realisations of sum_i lam_i V_i^2."""
    dist = _as_dist(dist)
    lam = dist.lambdas[dist.lambdas > 0]
    chunks = [(k, min(MC_CHUNK, num_samples - k)) for k in range(0, num_samples, MC_CHUNK)]
    seqs = np.random.SeedSequence(seed).spawn(len(chunks))
    out = np.empty(num_samples)
    for (start, size), ss in zip(chunks, seqs):
        rng = np.random.default_rng(ss)
        out[start:start + size] = rng.chisquare(1.0, size=(size, lam.size)) @ lam
    return out


def pvalue_mc(dist, t: float, num_samples: int = 100_000, seed=0) -> float:
    """Monte Carlo upper tail with the (k + 1) / (N + 1) correction."""
    if num_samples < 1000:
        raise ConfigError(f"num_samples must be at least 1000, got {num_samples}")
    if t <= 0:
        return 1.0
    draws = sample(dist, num_samples, seed)
    k = int(np.count_nonzero(draws >= t))
    return (k + 1) / (num_samples + 1)


def pvalue_moment(dist, t: float) -> float:
    """Satterthwaite-Welch approximation by a scaled chi-square g * chi2(nu)."""
    dist = _as_dist(dist)
    if t <= 0:
        return 1.0
    lam = dist.lambdas
    s1, s2 = lam.sum(), np.sum(lam ** 2)
    g = s2 / s1
    nu = s1 * s1 / s2
    return float(stats.chi2.sf(t / g, nu))


def quantile(dist, alpha: float) -> float:
    """The (1 - alpha) quantile, found by root-finding on :func:`pvalue_imhof`."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    dist = _as_dist(dist)
    f = lambda t: pvalue_imhof(dist, t) - alpha
    hi = dist.mean + 10.0 * np.sqrt(dist.var)
    for _ in range(60):
        if f(hi) < 0:
            break
        hi *= 2.0
    else:
        raise NumericalError("could not bracket the quantile")
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-14 * dist.mean, rtol=1e-10, maxiter=500))


METHODS = ("imhof", "moment", "mc")


def pvalue(dist, t: float, method: str = "imhof", *, mc_samples: int = 100_000, seed=0) -> float:
    if method == "imhof":
        return pvalue_imhof(dist, t, seed=seed)
    if method == "moment":
        return pvalue_moment(dist, t)
    if method == "mc":
        return pvalue_mc(dist, t, mc_samples, seed)
    raise ConfigError(f"unknown p-value method {method!r}; expected one of {METHODS}")
