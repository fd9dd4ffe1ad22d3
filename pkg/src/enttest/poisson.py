"""Poissonized count statistics and their exact expectation oracles.

The two-sample statistics T and Z both consume a :class:`CountPair`:
Poissonized empirical counts of the two sample streams.  Alongside the
statistics themselves, this module carries deterministic oracles for their
expectations (a closed form for ``E[T]``, a truncated-series evaluation for
``E[Z]``) and a Monte Carlo checker for the Poisson factorial-moment
identity ``E[(X)_m f(X)] = lambda^m E[f(X+m)]``, all of which back the
verification suites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DomainMismatch

MAX_SERIES_TERMS = 1_000_000


class NonConvergent(RuntimeError):
    """Series truncation could not meet the tolerance within the term cap."""


@dataclass(frozen=True)
class PoissonizedDraw:
    """One literal Poissonized batch: the realized ``Poi(m)`` size and the
    sample multiset itself.  Replay-deterministic under a fixed seed."""

    realized_count: int
    samples: np.ndarray

    def counts(self, n: int) -> np.ndarray:
        return np.bincount(self.samples, minlength=n)


def poissonized_draw(sampler, m: float) -> PoissonizedDraw:
    """Draw N ~ Poi(m), then N i.i.d. samples from the stream.

    All randomness comes from the sampler's own state, so a fixed sampler
    seed replays the identical draw.
    """
    realized, samples = sampler.stream_poisson_realize(m)
    return PoissonizedDraw(realized_count=int(realized), samples=samples)


@dataclass(frozen=True)
class CountPair:
    """Per-element Poissonized counts for the p-stream and the q-stream."""

    x_counts: np.ndarray
    y_counts: np.ndarray
    m_nominal: int
    x_total: int = field(default=0)
    y_total: int = field(default=0)

    def __post_init__(self):
        if self.x_counts.shape != self.y_counts.shape:
            raise DomainMismatch("count vectors have different lengths")
        object.__setattr__(self, "x_total", int(self.x_counts.sum()))
        object.__setattr__(self, "y_total", int(self.y_counts.sum()))

    @property
    def n(self) -> int:
        return self.x_counts.size

    @property
    def samples_used(self) -> int:
        return self.x_total + self.y_total


def poissonized_counts(sp, sq, m: int, n: int | None = None, method: str = "direct") -> CountPair:
    """Poissonized counts of nominal size m from each stream.

    ``method="direct"`` draws the per-element counts as independent
    ``Poi(m * p_i)`` variables straight from the known distribution;
    ``method="stream"`` realizes the textbook procedure (draw ``N ~ Poi(m)``,
    then N i.i.d. samples, then tabulate).  The two are identical in law;
    the direct route is orders of magnitude faster and is the default.
    Samplers without an exact distribution (sample pools) always stream.
    """
    if m < 1:
        raise ValueError(f"nominal budget must be >= 1, got {m}")
    if method not in ("direct", "stream"):
        raise ValueError(f"unknown method {method!r}")
    if n is not None and n != sp.n:
        raise DomainMismatch(f"declared domain size {n} != sampler domain {sp.n}")
    if sp.n != sq.n:
        raise DomainMismatch(f"domain sizes differ: {sp.n} vs {sq.n}")

    if method == "direct":
        x = sp.poisson_counts(m)
        y = sq.poisson_counts(m)
    else:
        x = _stream_counts(sp, m)
        y = _stream_counts(sq, m)
    return CountPair(x_counts=x, y_counts=y, m_nominal=int(m))


def _stream_counts(s, m: int) -> np.ndarray:
    if hasattr(s, "stream_poisson_counts"):
        return s.stream_poisson_counts(m)
    return s.poisson_counts(m)  # pools already consume sample-by-sample


def _select(counts: CountPair, s_set):
    if s_set is None:
        return counts.x_counts, counts.y_counts
    idx = np.asarray(s_set)
    if idx.dtype == bool:
        return counts.x_counts[idx], counts.y_counts[idx]
    idx = idx.astype(np.int64)
    return counts.x_counts[idx], counts.y_counts[idx]


def statistic_t(counts: CountPair, s_set=None) -> float:
    """T = sum_i ((X_i - Y_i)^2 - (X_i + Y_i)) / (X_i + Y_i), 0-terms skipped."""
    x, y = _select(counts, s_set)
    j = x + y
    nz = j > 0
    d = (x[nz] - y[nz]).astype(np.float64)
    jn = j[nz].astype(np.float64)
    return float(((d * d - jn) / jn).sum())


def statistic_z(counts: CountPair, s_set=None) -> float:
    """Z = sum_i ((X_i - Y_i)/m) log(1/(X_i + Y_i)), 0-terms skipped."""
    x, y = _select(counts, s_set)
    j = x + y
    nz = j > 0
    d = (x[nz] - y[nz]).astype(np.float64)
    return float(-(d * np.log(j[nz])).sum() / counts.m_nominal)


def statistic_l2(counts: CountPair, s_set=None) -> float:
    """Collision statistic sum_i ((X_i - Y_i)^2 - X_i - Y_i); E = m^2 ||p-q||_2^2."""
    x, y = _select(counts, s_set)
    d = (x - y).astype(np.float64)
    return float((d * d - x - y).sum())


def expected_t_closed_form(p, q, s: float, s_set=None) -> float:
    """Exact E[T] under Poissonization at per-stream budget s.

    E[T] = sum_i delta_i^2 (lambda_i - 1 + exp(-lambda_i)) with
    lambda_i = s (p_i + q_i) and delta_i = (p_i - q_i)/(p_i + q_i).
    """
    pv, qv = p.probs, q.probs
    if pv.size != qv.size:
        raise DomainMismatch(f"domain sizes differ: {pv.size} vs {qv.size}")
    if s_set is not None:
        idx = np.asarray(s_set)
        pv = pv[idx] if idx.dtype == bool else pv[idx.astype(np.int64)]
        qv = qv[idx] if idx.dtype == bool else qv[idx.astype(np.int64)]
    tot = pv + qv
    nz = tot > 0
    delta = (pv[nz] - qv[nz]) / tot[nz]
    lam = s * tot[nz]
    return float((delta * delta * (lam - 1.0 + np.exp(-lam))).sum())


def expected_log1p_poisson(lam: float, tail_tol: float = 1e-12) -> float:
    """E[log(J + 1)] for J ~ Poi(lam), by series with a certified remainder.

    Terms are added until the analytic tail bound (geometric pmf decay past
    2*lam with a slowly growing log envelope) drops below ``tail_tol``.
    """
    if tail_tol <= 0:
        raise ValueError("tail_tol must be positive")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return 0.0
    pmf = math.exp(-lam)
    if pmf == 0.0:
        # extremely large lambda: seed the series at the mode instead
        j0 = int(lam)
        log_pmf = j0 * math.log(lam) - lam - math.lgamma(j0 + 1)
        return _series_from_mode(lam, j0, log_pmf, tail_tol)
    total = 0.0
    j = 0
    while j < MAX_SERIES_TERMS:
        total += pmf * math.log(j + 1.0)
        j += 1
        pmf *= lam / j
        if j > 2 * lam + 10 and pmf * (2.0 * math.log(j + 2.0) + 4.0) < tail_tol:
            return total
    raise NonConvergent(f"series for lambda={lam} did not converge in {MAX_SERIES_TERMS} terms")


def _series_from_mode(lam: float, j0: int, log_pmf0: float, tail_tol: float) -> float:
    # walk down and up from the mode; same certified tail bound upward
    total = 0.0
    pmf = math.exp(log_pmf0)
    # downward
    p = pmf
    for j in range(j0, -1, -1):
        total += p * math.log(j + 1.0)
        p *= j / lam
        if p < tail_tol * 1e-3 and j < lam / 2:
            break
    # upward
    p = pmf * lam / (j0 + 1)
    j = j0 + 1
    while j < MAX_SERIES_TERMS:
        total += p * math.log(j + 1.0)
        j += 1
        p *= lam / j
        if j > 2 * lam + 10 and p * (2.0 * math.log(j + 2.0) + 4.0) < tail_tol:
            return total
    raise NonConvergent(f"series for lambda={lam} did not converge in {MAX_SERIES_TERMS} terms")


def exact_expected_z(p, q, m: int, s_set=None, tail_tol: float = 1e-12) -> float:
    """Deterministic E[Z] oracle: sum_i -(p_i - q_i) E[log(J_i + 1)]."""
    pv, qv = p.probs, q.probs
    if pv.size != qv.size:
        raise DomainMismatch(f"domain sizes differ: {pv.size} vs {qv.size}")
    if s_set is not None:
        idx = np.asarray(s_set)
        pv = pv[idx] if idx.dtype == bool else pv[idx.astype(np.int64)]
        qv = qv[idx] if idx.dtype == bool else qv[idx.astype(np.int64)]
    total = 0.0
    for pi, qi in zip(pv, qv):
        lam = m * (pi + qi)
        if lam == 0 or pi == qi:
            continue
        total += -(pi - qi) * expected_log1p_poisson(lam, tail_tol)
    return total


def z_bias_bound(p, q, m: int, s_set=None) -> tuple[float, float]:
    """(target, bound) of the bias inequality for Z.

    target = sum_i (p_i - q_i) log(1/(m (p_i + q_i))),
    bound  = sum_i |p_i - q_i| / (m (p_i + q_i)); skipping zero-mass terms.
    """
    pv, qv = p.probs, q.probs
    if s_set is not None:
        idx = np.asarray(s_set)
        pv = pv[idx] if idx.dtype == bool else pv[idx.astype(np.int64)]
        qv = qv[idx] if idx.dtype == bool else qv[idx.astype(np.int64)]
    tot = pv + qv
    nz = tot > 0
    d = pv[nz] - qv[nz]
    lam = m * tot[nz]
    target = float(-(d * np.log(lam)).sum())
    bound = float((np.abs(d) / lam).sum())
    return target, bound


@dataclass(frozen=True)
class FactorialMomentResult:
    lhs_mc: float
    rhs_mc: float
    stderr: float


def factorial_moment_check(
    lam: float, order: int, f, trials: int, seed=0
) -> FactorialMomentResult:
    """Monte Carlo both sides of E[(X)_order f(X)] = lam^order E[f(X + order)].

    ``stderr`` is the combined standard error of the difference, suitable
    for a |lhs - rhs| <= 3 * stderr acceptance check.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if order < 0:
        raise ValueError("order must be >= 0")
    rng = np.random.default_rng(seed)
    x = rng.poisson(lam, size=trials).astype(np.float64)
    falling = np.ones_like(x)
    for k in range(order):
        falling *= x - k
    lhs_samples = falling * f(x)
    x2 = rng.poisson(lam, size=trials).astype(np.float64)
    rhs_samples = lam**order * f(x2 + order)
    lhs = float(lhs_samples.mean())
    rhs = float(rhs_samples.mean())
    se = math.sqrt(lhs_samples.var(ddof=1) / trials + rhs_samples.var(ddof=1) / trials)
    return FactorialMomentResult(lhs_mc=lhs, rhs_mc=rhs, stderr=se)
