"""Reusable sub-testers: coin-bias distinguishing, heavy-set identification,
mass comparison, and the T-statistic closeness tests (Hellinger / TV / l2),
plus the low-mass conditional cascade.

Every threshold the theory leaves inside an O(.) or Omega(.) lives in
:class:`ThresholdConfig`.  The shipped defaults were frozen by the
calibration protocol (see ``experiments.calibrate``): thresholds are chosen
so the null (p = q, uniform reference) accepts in >= 90% of 400 trials while
the far calibration family rejects in >= 90%, doubling a tester's sample
multiplier whenever no threshold satisfies both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    LOG_FLOOR,
    BudgetExhausted,
    _as_mask,
)
from .poisson import CountPair, statistic_l2, statistic_t


class ParameterOutOfRange(ValueError):
    """Tester parameter outside its documented range."""


class ConfigError(ValueError):
    """Malformed threshold-config file or unknown key."""


MULTIPLIER_KEYS = (
    "hellinger",
    "tv",
    "l2",
    "heavy",
    "lowmass_mass",
    "mass_diff",
    "bias_s",
    "stage5",
    "z_m4_poly",
    "z_m4_log",
    "coin",
)

# calibrated 2026-08-08 (seed 20260808, protocol in experiments.calibrate)
_DEFAULT_MULTIPLIERS = {
    "hellinger": 2.0,
    "tv": 16.0,
    "l2": 32.0,
    "heavy": 2.0,
    "lowmass_mass": 8.0,
    "mass_diff": 8.0,
    "bias_s": 4.0,
    "stage5": 32.0,
    "z_m4_poly": 2.0,
    "z_m4_log": 32.0,
    "coin": 8.0,
}


@dataclass(frozen=True)
class ThresholdConfig:
    """Every constant hidden by the theory's asymptotic notation.

    ``c_heavy_low``/``c_heavy_high`` play the roles of the two heavy-set
    constants (the high one at least twice the low one); the remaining
    ``c_*`` fields are statistic thresholds; ``sample_multipliers`` scale
    each sub-test's asymptotic budget formula.
    """

    c_hellinger_reject: float = 4.0
    c_heavy_low: float = 1.0
    c_heavy_high: float = 2.0
    c_lowmass_mass: float = 1.0
    c_mass_diff: float = 1.0
    c_T_threshold: float = 4.0
    c_l2_threshold: float = 0.5
    c_massS_diff: float = 1.0
    c_Z_threshold: float = 1.0
    c_dec: float = 4.0
    sample_multipliers: dict = field(default_factory=lambda: dict(_DEFAULT_MULTIPLIERS))

    def __post_init__(self):
        for name in (
            "c_hellinger_reject",
            "c_heavy_low",
            "c_heavy_high",
            "c_lowmass_mass",
            "c_mass_diff",
            "c_T_threshold",
            "c_l2_threshold",
            "c_massS_diff",
            "c_Z_threshold",
            "c_dec",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.c_heavy_high < 2 * self.c_heavy_low:
            raise ConfigError("c_heavy_high must be at least 2 * c_heavy_low")
        unknown = set(self.sample_multipliers) - set(MULTIPLIER_KEYS)
        if unknown:
            raise ConfigError(f"unknown sample multipliers: {sorted(unknown)}")
        for key in MULTIPLIER_KEYS:
            if key not in self.sample_multipliers:
                raise ConfigError(f"missing sample multiplier: {key}")
            if self.sample_multipliers[key] <= 0:
                raise ConfigError(f"sample multiplier {key} must be positive")

    def multiplier(self, name: str) -> float:
        return self.sample_multipliers[name]

    def with_multiplier(self, name: str, value: float) -> "ThresholdConfig":
        mults = dict(self.sample_multipliers)
        mults[name] = value
        return replace(self, sample_multipliers=mults)


DEFAULT_CONFIG = ThresholdConfig()

_SCALAR_KEYS = (
    "c_hellinger_reject",
    "c_heavy_low",
    "c_heavy_high",
    "c_lowmass_mass",
    "c_mass_diff",
    "c_T_threshold",
    "c_l2_threshold",
    "c_massS_diff",
    "c_Z_threshold",
    "c_dec",
)


def save_config(cfg: ThresholdConfig, path, header_lines=()):
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        for key in _SCALAR_KEYS:
            fh.write(f"{key} = {getattr(cfg, key)!r}\n")
        for key in MULTIPLIER_KEYS:
            fh.write(f"mult_{key} = {cfg.sample_multipliers[key]!r}\n")


def load_config(path) -> ThresholdConfig:
    scalars = {}
    mults = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            try:
                num = float(value.strip())
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}") from exc
            if key in _SCALAR_KEYS:
                scalars[key] = num
            elif key.startswith("mult_") and key[5:] in MULTIPLIER_KEYS:
                mults[key[5:]] = num
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    merged = dict(_DEFAULT_MULTIPLIERS)
    merged.update(mults)
    return ThresholdConfig(**scalars, sample_multipliers=merged)


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------


@dataclass
class TestVerdict:
    """Accept/reject outcome with a per-stage statistical trace."""

    decision: str  # "accept" | "reject"
    fired_stage: str | None
    samples_used: int
    trace: list  # of (stage, statistic, threshold)

    def __post_init__(self):
        if self.decision not in ("accept", "reject"):
            raise ValueError(f"bad decision {self.decision!r}")
        if self.decision == "reject" and not self.fired_stage:
            raise ValueError("reject verdicts must name the firing stage")
        if self.decision == "accept" and self.fired_stage:
            raise ValueError("accept verdicts must not name a firing stage")

    @property
    def accepted(self) -> bool:
        return self.decision == "accept"

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"


def _accept(samples, trace):
    return TestVerdict("accept", None, int(samples), trace)


def _reject(stage, samples, trace):
    return TestVerdict("reject", stage, int(samples), trace)


def amplification_reps(delta: float) -> int:
    """Independent repetitions for majority amplification below delta = 1/10."""
    if not 0 < delta <= 1:
        raise ParameterOutOfRange(f"delta must lie in (0, 1], got {delta}")
    if delta >= 0.1:
        return 1
    k = math.ceil(18.0 * math.log(1.0 / delta))
    return k + 1 if k % 2 == 0 else k


def _log_ratio(n: float, eps: float) -> float:
    return math.log(max(n / eps, LOG_FLOOR))


# ---------------------------------------------------------------------------
# Coin-bias distinguishing
# ---------------------------------------------------------------------------


def coin_bias_budget(alpha: float, eps: float, delta: float, mult: float) -> int:
    return math.ceil(mult * math.log(max(1.0 / delta, 2.0)) / (alpha * eps * eps))


def coin_bias_test(bit_sampler, alpha: float, eps: float, delta: float, cfg: ThresholdConfig = DEFAULT_CONFIG) -> str:
    """Distinguish bias <= alpha from bias >= alpha (1 + eps).

    ``bit_sampler(k)`` must return k Bernoulli draws.  Returns ``"below"``
    when the empirical mean is under ``alpha (1 + eps/2)``, else ``"above"``;
    correct with probability >= 1 - delta whenever the true bias is outside
    the gap.
    """
    if not 0 < alpha <= 0.5:
        raise ParameterOutOfRange(f"alpha must lie in (0, 1/2], got {alpha}")
    if not 0 < eps <= 1:
        raise ParameterOutOfRange(f"eps must lie in (0, 1], got {eps}")
    if not 0 < delta <= 1:
        raise ParameterOutOfRange(f"delta must lie in (0, 1], got {delta}")
    budget = coin_bias_budget(alpha, eps, delta, cfg.multiplier("coin"))
    bits = np.asarray(bit_sampler(budget), dtype=np.float64)
    if bits.size != budget:
        raise ValueError("bit sampler returned the wrong number of bits")
    return "below" if bits.mean() < alpha * (1.0 + eps / 2.0) else "above"


# ---------------------------------------------------------------------------
# Heavy-set identification
# ---------------------------------------------------------------------------


def heavy_threshold_unit(n: int, eps: float) -> float:
    """tau = eps / (n^{3/4} log(n/eps)); heavy means p_i + q_i >= C * tau."""
    return eps / (n**0.75 * _log_ratio(n, eps))


def heavy_set_budget(n: int, eps: float, cfg: ThresholdConfig) -> int:
    mult = cfg.multiplier("heavy")
    if mult <= 0:
        raise ParameterOutOfRange("heavy-set sample multiplier must be positive")
    log_n = math.log(max(n, LOG_FLOOR))
    return math.ceil(mult * 2.0 * n**0.75 * _log_ratio(n, eps) * log_n / eps)


def identify_heavy_set(mix_sampler, n: int, eps: float, cfg: ThresholdConfig = DEFAULT_CONFIG):
    """Select elements with p_i + q_i above the heavy threshold.

    ``mix_sampler`` must stream the uniform mixture (p + q)/2.  One shared
    pool of draws backs the per-element decisions, exactly as the
    selection lemma prescribes.  Returns ``(mask, samples_used)`` where the
    mask satisfies the S2-subset-of-S-subset-of-S1 sandwich with high
    probability (boundary constants ``c_heavy_low``/``c_heavy_high``).
    """
    if not 0 < eps <= 1:
        raise ParameterOutOfRange(f"eps must lie in (0, 1], got {eps}")
    if n < 1:
        raise ParameterOutOfRange("domain size must be >= 1")
    budget = heavy_set_budget(n, eps, cfg)
    counts = mix_sampler.multinomial_counts(budget)
    tau = heavy_threshold_unit(n, eps)
    # mixture mean at boundary C*tau is budget*C*tau/2; cut at the midpoint
    theta = budget * tau * (cfg.c_heavy_low + cfg.c_heavy_high) / 4.0
    return counts >= theta, budget


# ---------------------------------------------------------------------------
# Mass comparison
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MassCompareResult:
    p_mass_est: float
    q_mass_est: float
    diff_flag: bool
    samples_used: int


def mass_compare(sp, sq, s_set, tol: float, budget: int) -> MassCompareResult:
    """Empirical |p(S) - q(S)| comparison from ``budget`` draws per stream."""
    if budget < 1:
        raise ParameterOutOfRange("mass_compare budget must be >= 1")
    mask = _as_mask(s_set, sp.n)
    p_est = sp.binomial_hits(budget, mask) / budget
    q_est = sq.binomial_hits(budget, mask) / budget
    return MassCompareResult(
        p_mass_est=p_est,
        q_mass_est=q_est,
        diff_flag=abs(p_est - q_est) > tol,
        samples_used=2 * budget,
    )


# ---------------------------------------------------------------------------
# T-statistic closeness tests
# ---------------------------------------------------------------------------


def hellinger_budget(n: int, eps_h: float, cfg: ThresholdConfig) -> int:
    mult = cfg.multiplier("hellinger")
    return math.ceil(mult * min(n**0.75 / eps_h, n ** (2.0 / 3.0) / eps_h ** (4.0 / 3.0)))


def tv_budget(n: int, eps_tv: float, cfg: ThresholdConfig) -> int:
    mult = cfg.multiplier("tv")
    return math.ceil(mult * max(n ** (2.0 / 3.0) / eps_tv ** (4.0 / 3.0), math.sqrt(n) / eps_tv**2))


def _t_noise_floor(n: int, s: int) -> float:
    # null fluctuation scale of T: Var[T] <= 2 min(n, s)
    return math.sqrt(min(n, s) + 1.0)


def _run_t_test(sp, sq, n, budget, threshold, stage, delta):
    reps = amplification_reps(delta)
    rejects = 0
    samples = 0
    trace = []
    for _ in range(reps):
        x = sp.poisson_counts(budget)
        y = sq.poisson_counts(budget)
        pair = CountPair(x_counts=x, y_counts=y, m_nominal=budget)
        samples += pair.samples_used
        t = statistic_t(pair)
        trace.append((stage, t, threshold))
        if t > threshold:
            rejects += 1
    if rejects * 2 > reps:
        return _reject(stage, samples, trace)
    return _accept(samples, trace)


def hellinger_closeness_test(sp, sq, n: int, eps_h: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG) -> TestVerdict:
    """Distinguish p = q from squared Hellinger distance >= eps_h."""
    if not 0 < eps_h <= 1:
        raise ParameterOutOfRange(f"eps_h must lie in (0, 1], got {eps_h}")
    if n == 1:
        return _accept(0, [("hellinger", 0.0, 0.0)])
    budget = hellinger_budget(n, eps_h, cfg)
    threshold = cfg.c_hellinger_reject * _t_noise_floor(n, budget)
    return _run_t_test(sp, sq, n, budget, threshold, "hellinger", delta)


def tv_closeness_test(sp, sq, n: int, eps_tv: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG) -> TestVerdict:
    """Distinguish p = q from total variation distance >= eps_tv."""
    if not 0 < eps_tv <= 1:
        raise ParameterOutOfRange(f"eps_tv must lie in (0, 1], got {eps_tv}")
    if n == 1:
        return _accept(0, [("tv", 0.0, 0.0)])
    budget = tv_budget(n, eps_tv, cfg)
    threshold = cfg.c_T_threshold * _t_noise_floor(n, budget)
    return _run_t_test(sp, sq, n, budget, threshold, "tv", delta)


def l2_budget(eps_l2: float, cfg: ThresholdConfig) -> int:
    return math.ceil(cfg.multiplier("l2") / eps_l2**2)


def l2_closeness_test(sp, sq, n: int, eps_l2: float, delta: float = 0.1, cfg: ThresholdConfig = DEFAULT_CONFIG) -> TestVerdict:
    """Distinguish p = q from ||p - q||_2^2 >= eps_l2^2 (collision statistic)."""
    if eps_l2 <= 0:
        raise ParameterOutOfRange(f"eps_l2 must be positive, got {eps_l2}")
    if eps_l2**2 >= 2.0:
        # no pair of distributions reaches squared l2 distance 2
        return _accept(0, [("l2", 0.0, eps_l2**2)])
    budget = l2_budget(eps_l2, cfg)
    threshold = cfg.c_l2_threshold * eps_l2**2
    reps = amplification_reps(delta)
    rejects = 0
    samples = 0
    trace = []
    for _ in range(reps):
        x = sp.poisson_counts(budget)
        y = sq.poisson_counts(budget)
        pair = CountPair(x_counts=x, y_counts=y, m_nominal=budget)
        samples += pair.samples_used
        est = statistic_l2(pair) / budget**2
        trace.append(("l2", est, threshold))
        if est > threshold:
            rejects += 1
    if rejects * 2 > reps:
        return _reject("l2", samples, trace)
    return _accept(samples, trace)


# ---------------------------------------------------------------------------
# Low-mass conditional cascade
# ---------------------------------------------------------------------------


class _RejectionBackedSampler:
    """Conditional-stream view of a base sampler over a support set.

    Implements the count-level sampler interface on the conditional domain
    while charging every raw draw against a shared budget; raises
    :class:`BudgetExhausted` when the cap is hit.  Raw-draw consumption
    follows the exact law of sequential rejection sampling.
    """

    def __init__(self, base, support_mask, raw_cap: int, rng_seed):
        self.base = base
        self.mask = support_mask
        self.raw_cap = int(raw_cap)
        self.consumed = 0
        self._rng = np.random.default_rng(rng_seed)
        self._exact = getattr(base, "distribution", None) is not None
        if self._exact:
            self._cond, self._child = base.conditional_sampler_state(support_mask)
        self._n = int(np.count_nonzero(support_mask))

    @property
    def n(self) -> int:
        return self._n

    @property
    def distribution(self):
        return self._child.distribution if self._exact else None

    def _charge(self, raw: int):
        self.consumed += int(raw)
        if self.consumed > self.raw_cap:
            raise BudgetExhausted(self.consumed)

    def poisson_counts(self, m: float) -> np.ndarray:
        wanted = int(self._rng.poisson(m))
        if wanted == 0:
            return np.zeros(self._n, dtype=np.int64)
        if self._exact:
            raw = self.base.negative_binomial_consumed(wanted, self.mask)
            self._charge(raw)
            return self._child.multinomial_counts(wanted)
        counts = np.zeros(self._n, dtype=np.int64)
        positions = np.cumsum(self.mask) - 1  # domain index -> conditional index
        got = 0
        while got < wanted:
            chunk = min(max(2 * (wanted - got), 64), self.raw_cap - self.consumed)
            if chunk <= 0:
                raise BudgetExhausted(self.consumed)
            raw = self.base.draw(chunk)
            self._charge(chunk)
            acc = raw[self.mask[raw]]
            if acc.size > wanted - got:
                acc = acc[: wanted - got]
            np.add.at(counts, positions[acc], 1)
            got += acc.size
        return counts


def lowmass_conditional_test(sp, sq, sbar, n: int, eps: float, cfg: ThresholdConfig = DEFAULT_CONFIG, rng=None) -> TestVerdict:
    """Full low-mass cascade on the complement of the heavy set.

    (i) if both streams put mass below the floor on ``sbar``, accept;
    (ii) if exactly one does, reject; (iii) compare the two masses and
    reject on a gap; (iv) otherwise run the conditional TV test through
    rejection sampling, treating a blown raw-sample budget as a reject.
    """
    if not 0 < eps <= 1:
        raise ParameterOutOfRange(f"eps must lie in (0, 1], got {eps}")
    rng = np.random.default_rng(rng)
    mask = _as_mask(sbar, sp.n)
    log_r = _log_ratio(n, eps)
    samples = 0
    trace = []

    if not mask.any():
        return _accept(0, [("lowmass-mass-floor", 0.0, 0.0)])

    # (i)/(ii): coin-test both masses against the floor alpha
    alpha = min(cfg.c_lowmass_mass * eps / log_r, 0.5)
    coin_n = coin_bias_budget(alpha, 1.0, 1.0 / 40.0, cfg.multiplier("lowmass_mass"))
    cut = alpha * 1.5
    p_mean = sp.binomial_hits(coin_n, mask) / coin_n
    q_mean = sq.binomial_hits(coin_n, mask) / coin_n
    samples += 2 * coin_n
    trace.append(("lowmass-mass-floor", max(p_mean, q_mean), cut))
    p_large = p_mean >= cut
    q_large = q_mean >= cut
    if not p_large and not q_large:
        return _accept(samples, trace)
    if p_large != q_large:
        return _reject("lowmass-one-sided", samples, trace)

    # (iii): the masses must approximately match
    tol = cfg.c_mass_diff * eps / log_r
    m3 = math.ceil(cfg.multiplier("mass_diff") * log_r**2 / eps**2)
    cmp_res = mass_compare(sp, sq, mask, tol, m3)
    samples += cmp_res.samples_used
    trace.append(("lowmass-mass-gap", abs(cmp_res.p_mass_est - cmp_res.q_mass_est), tol))
    if cmp_res.diff_flag:
        return _reject("lowmass-mass-gap", samples, trace)

    # (iv): conditional TV test at threshold eps / (q(sbar) log(n/eps))
    mass_guess = max(min(cmp_res.p_mass_est, cmp_res.q_mass_est), alpha / 2.0)
    eps_cond = min(eps / (mass_guess * log_r), 1.0)
    n_cond = int(mask.sum())
    if n_cond == 1:
        return _accept(samples, trace + [("lowmass-cond-tv", 0.0, 0.0)])
    per_stream = tv_budget(n_cond, eps_cond, cfg) * amplification_reps(0.1)
    raw_cap = math.ceil(8.0 * per_stream / mass_guess)
    wrap_p = _RejectionBackedSampler(sp, mask, raw_cap, rng.integers(0, 2**63 - 1))
    wrap_q = _RejectionBackedSampler(sq, mask, raw_cap, rng.integers(0, 2**63 - 1))
    try:
        verdict = tv_closeness_test(wrap_p, wrap_q, n_cond, eps_cond, 0.1, cfg)
    except BudgetExhausted:
        samples += wrap_p.consumed + wrap_q.consumed
        trace.append(("lowmass-budget", float(wrap_p.consumed + wrap_q.consumed), float(2 * raw_cap)))
        return _reject("lowmass-budget", samples, trace)
    samples += wrap_p.consumed + wrap_q.consumed
    trace.extend(("lowmass-cond-tv", t[1], t[2]) for t in verdict.trace)
    if verdict.rejected:
        return _reject("lowmass-cond-tv", samples, trace)
    return _accept(samples, trace)
