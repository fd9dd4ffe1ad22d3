"""End-to-end entropy equivalence testers.

Three entry points:

* :func:`run_eet` — the staged cascade (mass floor, Hellinger screen,
  heavy-set split, low-mass conditional test, bias check, mass/l2 guards,
  and the plug-in entropy-difference statistic Z).
* :func:`run_eet_tv_baseline` — the reduction to plain TV closeness testing
  through the entropy-vs-TV inequality.
* :func:`run_eet_combined` — runs whichever of the two has the smaller
  nominal budget for the given (n, eps); the choice is recorded in the
  verdict trace.

The cascade internally rescales the accuracy parameter to ``eps / 8``: the
mass floor spends part of the gap and the two decomposition splits spend a
factor four, so every stage tests at the rescaled accuracy.  Budgets use
natural logs clamped below at e.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import LOG_FLOOR, FairMixSampler, MassFloorSampler
from .poisson import CountPair, statistic_l2, statistic_t, statistic_z
from .testers import (
    DEFAULT_CONFIG,
    ParameterOutOfRange,
    TestVerdict,
    ThresholdConfig,
    amplification_reps,
    coin_bias_budget,
    heavy_set_budget,
    hellinger_budget,
    hellinger_closeness_test,
    identify_heavy_set,
    l2_budget,
    lowmass_conditional_test,
    mass_compare,
    tv_budget,
    tv_closeness_test,
)

EPS_SPLIT = 8.0  # internal accuracy rescaling of the cascade


@dataclass(frozen=True)
class EetBudgets:
    """Per-stage nominal sample counts (per stream unless noted)."""

    m_hell: int  # Hellinger screen
    m1_mix_total: int  # heavy-set identification, total mixture draws
    m2_coin: int  # low-mass floor coin test
    m3_mass: int  # low-mass |p-q| mass comparison
    s_bias: int  # bias-check statistic T
    m5_guard: int  # stage-5 mass guard on S
    m5_l2: int  # stage-5 l2 guard
    m4_z: int  # entropy-difference statistic Z


@dataclass(frozen=True)
class EetPlan:
    """Deterministic budget plan for one cascade invocation."""

    n: int
    eps: float
    delta: float
    eps_internal: float
    budgets: EetBudgets
    total_nominal: int
    cfg: ThresholdConfig


def _validate_eps(eps: float):
    if not 0 < eps <= 0.5:
        raise ParameterOutOfRange(f"eps must lie in (0, 1/2], got {eps}")


def make_eet_plan(n: int, eps: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG) -> EetPlan:
    """Compute all stage budgets for domain size n at accuracy eps.

    Budgets are ceilings of the asymptotic formulas scaled by the config's
    sample multipliers; the low-mass conditional stage is excluded from the
    nominal total because its raw-draw cost is data dependent (bounded by
    its Markov cutoff at run time).
    """
    _validate_eps(eps)
    if not 0 < delta <= 1:
        raise ParameterOutOfRange(f"delta must lie in (0, 1], got {delta}")
    if n < 1:
        raise ParameterOutOfRange("domain size must be >= 1")
    e_i = eps / EPS_SPLIT
    log_r = math.log(max(n / e_i, LOG_FLOOR))
    n34 = n**0.75

    m_hell = hellinger_budget(n, e_i, cfg)
    m1 = heavy_set_budget(n, e_i, cfg)
    alpha = min(cfg.c_lowmass_mass * e_i / log_r, 0.5)
    m2 = coin_bias_budget(alpha, 1.0, 1.0 / 40.0, cfg.multiplier("lowmass_mass"))
    m3 = math.ceil(cfg.multiplier("mass_diff") * log_r**2 / e_i**2)
    s_bias = math.ceil(cfg.multiplier("bias_s") * n34 * log_r / e_i)
    m4 = math.ceil(
        cfg.multiplier("z_m4_poly") * n34 * log_r / e_i
        + cfg.multiplier("z_m4_log") * log_r**2 / e_i**2
    )
    log_m = math.log(max(m4, 3))
    m5 = math.ceil(cfg.multiplier("stage5") * log_m**2 / e_i**2)
    m5_l2 = l2_budget(e_i / log_m, cfg)
    budgets = EetBudgets(
        m_hell=m_hell,
        m1_mix_total=m1,
        m2_coin=m2,
        m3_mass=m3,
        s_bias=s_bias,
        m5_guard=m5,
        m5_l2=m5_l2,
        m4_z=m4,
    )
    total = 2 * (m_hell + m2 + m3 + s_bias + m5 + m5_l2 + m4) + m1
    return EetPlan(
        n=n,
        eps=eps,
        delta=delta,
        eps_internal=e_i,
        budgets=budgets,
        total_nominal=int(total),
        cfg=cfg,
    )


def _run_eet_once(sp, sq, plan: EetPlan, rng) -> TestVerdict:
    cfg = plan.cfg
    n = plan.n
    e_i = plan.eps_internal
    b = plan.budgets
    samples = 0
    trace = []

    # stage 0: mass floor both streams (one floored draw costs one raw draw)
    sp_f = MassFloorSampler(sp, e_i, rng.integers(0, 2**63 - 1))
    sq_f = MassFloorSampler(sq, e_i, rng.integers(0, 2**63 - 1))

    # stage 1: Hellinger screen
    v = hellinger_closeness_test(sp_f, sq_f, n, e_i, 0.1, cfg)
    samples += v.samples_used
    trace.extend(v.trace)
    if v.rejected:
        return TestVerdict("reject", "hellinger", samples, trace)

    # stage 2: heavy-set identification off the fair mixture
    mix = FairMixSampler(sp_f, sq_f, rng.integers(0, 2**63 - 1))
    heavy_mask, used = identify_heavy_set(mix, n, e_i, cfg)
    samples += used
    trace.append(("heavy-set", float(heavy_mask.sum()), float(n)))

    # stage 3: low-mass cascade on the complement
    sbar = ~heavy_mask
    if sbar.any():
        v = lowmass_conditional_test(sp_f, sq_f, sbar, n, e_i, cfg, rng)
        samples += v.samples_used
        trace.extend(v.trace)
        if v.rejected:
            return TestVerdict("reject", v.fired_stage, samples, trace)
    else:
        trace.append(("lowmass-mass-floor", 0.0, 0.0))

    # stage 4: bias check, T over the heavy set against c_T sqrt(n)
    pair = CountPair(
        x_counts=sp_f.poisson_counts(b.s_bias),
        y_counts=sq_f.poisson_counts(b.s_bias),
        m_nominal=b.s_bias,
    )
    samples += pair.samples_used
    t_stat = statistic_t(pair, heavy_mask)
    t_thr = cfg.c_T_threshold * math.sqrt(n)
    trace.append(("bias-T", t_stat, t_thr))
    if t_stat > t_thr:
        return TestVerdict("reject", "bias-T", samples, trace)

    # stage 5: |p(S) - q(S)| and l2 guards at the eps/log(m) scale; the
    # trace records the chosen scale next to the log(n/eps) alternative
    log_m = math.log(max(b.m4_z, 3))
    trace.append(("stage5-scale: log-m", e_i / log_m, e_i / math.log(max(n / e_i, math.e))))
    guard_tol = cfg.c_massS_diff * e_i / log_m
    cmp_res = mass_compare(sp_f, sq_f, heavy_mask, guard_tol, b.m5_guard)
    samples += cmp_res.samples_used
    trace.append(("mass-S", abs(cmp_res.p_mass_est - cmp_res.q_mass_est), guard_tol))
    if cmp_res.diff_flag:
        return TestVerdict("reject", "mass-S", samples, trace)

    l2_eps = e_i / log_m
    l2_thr = cfg.c_l2_threshold * l2_eps**2
    pair = CountPair(
        x_counts=sp_f.poisson_counts(b.m5_l2),
        y_counts=sq_f.poisson_counts(b.m5_l2),
        m_nominal=b.m5_l2,
    )
    samples += pair.samples_used
    l2_est = statistic_l2(pair) / b.m5_l2**2
    trace.append(("l2", l2_est, l2_thr))
    if l2_est > l2_thr:
        return TestVerdict("reject", "l2", samples, trace)

    # stage 6: entropy-difference statistic Z over the heavy set
    pair = CountPair(
        x_counts=sp_f.poisson_counts(b.m4_z),
        y_counts=sq_f.poisson_counts(b.m4_z),
        m_nominal=b.m4_z,
    )
    samples += pair.samples_used
    z_stat = statistic_z(pair, heavy_mask)
    z_thr = cfg.c_Z_threshold * e_i
    trace.append(("z", z_stat, z_thr))
    if abs(z_stat) > z_thr:
        return TestVerdict("reject", "z", samples, trace)
    return TestVerdict("accept", None, samples, trace)


def run_eet(sp, sq, plan: EetPlan, rng=None) -> TestVerdict:
    """Run the full cascade; majority-amplified when plan.delta < 1/10."""
    rng = np.random.default_rng(rng)
    reps = amplification_reps(plan.delta)
    if reps == 1:
        return _run_eet_once(sp, sq, plan, rng)
    verdicts = [_run_eet_once(sp, sq, plan, rng) for _ in range(reps)]
    samples = sum(v.samples_used for v in verdicts)
    trace = [entry for v in verdicts for entry in v.trace]
    rejects = [v for v in verdicts if v.rejected]
    if 2 * len(rejects) > reps:
        return TestVerdict("reject", rejects[0].fired_stage, samples, trace)
    return TestVerdict("accept", None, samples, trace)


# ---------------------------------------------------------------------------
# TV-reduction baseline
# ---------------------------------------------------------------------------


def solve_tv_threshold(n: int, eps: float, tol: float = 1e-12) -> float:
    """Root of x log(n/x) = eps on (0, 1/2], by monotone bisection.

    Any pair with |H(p) - H(q)| >= eps has TV distance at least this root,
    so testing TV at the root is sound for the entropy promise.
    """
    _validate_eps(eps)
    f = lambda x: x * math.log(n / x)
    lo, hi = 1e-15, 0.5
    if f(hi) < eps:
        return hi  # tiny domains: test at the largest admissible scale
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < eps:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def tv_baseline_budget(n: int, eps: float, delta: float, cfg: ThresholdConfig) -> int:
    """Nominal total (both streams) of the TV-reduction tester."""
    if n == 1:
        return 0
    eps_tv = solve_tv_threshold(n, eps)
    return 2 * tv_budget(n, eps_tv, cfg) * amplification_reps(delta)


def run_eet_tv_baseline(sp, sq, n: int, eps: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG, rng=None) -> TestVerdict:
    """Entropy equivalence via a plain TV closeness test at the reduced scale."""
    _validate_eps(eps)
    eps_tv = solve_tv_threshold(n, eps)
    verdict = tv_closeness_test(sp, sq, n, eps_tv, delta, cfg)
    trace = [("tv-baseline-scale", eps_tv, eps)] + list(verdict.trace)
    if verdict.rejected:
        return TestVerdict("reject", "tv-baseline", verdict.samples_used, trace)
    return TestVerdict("accept", None, verdict.samples_used, trace)


# ---------------------------------------------------------------------------
# Combined tester
# ---------------------------------------------------------------------------


def combined_budgets(n: int, eps: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG) -> tuple[int, int]:
    """(cascade nominal, baseline nominal) total budgets for the pair."""
    plan = make_eet_plan(n, eps, delta, cfg)
    base = tv_baseline_budget(n, eps, delta, cfg)
    return plan.total_nominal * amplification_reps(delta), base


def run_eet_combined(sp, sq, n: int, eps: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG, rng=None) -> TestVerdict:
    """Run whichever of the cascade and the TV baseline is nominally cheaper.

    The leading trace entry records both nominal budgets; the statistic slot
    holds the chosen branch's budget.
    """
    _validate_eps(eps)
    rng = np.random.default_rng(rng)
    eet_total, base_total = combined_budgets(n, eps, delta, cfg)
    if n > 1 and base_total <= eet_total:
        verdict = run_eet_tv_baseline(sp, sq, n, eps, delta, cfg, rng)
        branch = ("combined-branch: tv-baseline", float(base_total), float(eet_total))
    else:
        plan = make_eet_plan(n, eps, delta, cfg)
        verdict = run_eet(sp, sq, plan, rng)
        branch = ("combined-branch: cascade", float(eet_total), float(base_total))
    verdict.trace.insert(0, branch)
    return verdict


def combined_branch_choice(n: int, eps: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG) -> str:
    eet_total, base_total = combined_budgets(n, eps, delta, cfg)
    return "tv-baseline" if (n > 1 and base_total <= eet_total) else "cascade"
