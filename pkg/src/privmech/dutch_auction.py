"""l-round descending (Dutch) auction over price-privacy tuples.

Thresholds come from the batched prophet inequality: round k uses the reward
distribution G_k(x) = F_k(phi~_k^{-1}(x)) and the threshold G_k^{-1}(e^{-k/n}).
Reward thresholds are floored at zero and mapped back to value space, then
turned into posted prices with the searchers' indifference condition.
"""

import math
import warnings
from dataclasses import dataclass
from math import comb
from typing import Callable

import numpy as np

from privmech.dist_models import (
    DistributionSpec,
    PrivacyLadder,
    inv_privacy_virtual_value,
    privacy_virtual_value,
    sample_coupled,
)
from privmech.errors import DegenerateThresholdError, RangeError, ScheduleError
from privmech.optimal_auction import AuctionOutcome, BatchOutcome
from privmech.simharness.estimates import EstimateRecord, run_mc


def pn(x, n: int):
    """Probability that a reward clearing the threshold is the one picked.

    ``(1/n) * (1 - x**n) / (1 - x)`` where ``x`` is the probability that each
    other reward stays below the threshold; ``pn(1, n) == 1``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)):
        raise ValueError("x must lie in [0, 1]")
    one = xa == 1.0
    safe = np.where(one | (xa == 0.0), 0.5, xa)
    # -expm1(n log x) keeps 1 - x**n accurate as x -> 1
    val = -np.expm1(n * np.log(safe)) / (n * (1.0 - safe))
    out = np.where(one, 1.0, np.where(xa == 0.0, 1.0 / n, val))
    return float(out) if np.ndim(x) == 0 else out


def pn_binomial(x: float, n: int) -> float:
    """Sum form: E[1 / (1 + #other clearers)] with each other clearing w.p. 1 - x."""
    return sum(comb(n - 1, i) * x ** (n - 1 - i) * (1 - x) ** i / (i + 1) for i in range(n))


@dataclass(frozen=True)
class ProphetModel:
    """n i.i.d. rewards with CDF ``cdf`` and quantile function ``inv_cdf``."""

    cdf: Callable
    inv_cdf: Callable
    n: int
    label: str = ""

    def sample(self, rng, size):
        return np.asarray(self.inv_cdf(rng.random(size)))

    @classmethod
    def uniform(cls, lo, hi, n):
        return cls(
            lambda x: np.clip((np.asarray(x, float) - lo) / (hi - lo), 0.0, 1.0),
            lambda p: lo + np.asarray(p, float) * (hi - lo),
            n,
            f"uniform[{lo:g},{hi:g}]",
        )

    @classmethod
    def exponential(cls, rate, n):
        spec = DistributionSpec.exponential([rate])
        return cls.from_level(spec, 1, n)

    @classmethod
    def from_level(cls, spec: DistributionSpec, k: int, n: int):
        return cls(
            lambda x: spec.cdf(k, x), lambda p: spec.inv_cdf(k, p), n, f"{spec.family}[{k}]"
        )

    @classmethod
    def from_virtual_values(cls, spec: DistributionSpec, ladder: PrivacyLadder, k: int, n: int):
        """Rewards phi~_k(v) for v ~ F_k."""
        lo, top = spec.support(k)[0], spec.upper(k)
        f_lo = privacy_virtual_value(spec, ladder, k, lo)
        f_hi = privacy_virtual_value(spec, ladder, k, top)

        def cdf(x):
            xa = np.asarray(x, dtype=float)
            inner = np.clip(xa, f_lo, f_hi)
            g = np.asarray(spec.cdf(k, inv_privacy_virtual_value(spec, ladder, k, inner)))
            return np.where(xa < f_lo, 0.0, np.where(xa >= f_hi, 1.0, g))

        def inv_cdf(p):
            pa = np.asarray(p, dtype=float)
            v = np.asarray(spec.inv_cdf(k, np.minimum(pa, np.nextafter(1.0, 0.0))))
            return np.asarray(privacy_virtual_value(spec, ladder, k, v))

        return cls(cdf, inv_cdf, n, f"virtual[{spec.family},{k}]")


@dataclass(frozen=True)
class RewardThresholds:
    taus: tuple

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        object.__setattr__(self, "taus", taus)
        if not all(math.isfinite(t) for t in taus):
            raise RangeError("reward thresholds must be finite")
        for k, (a, b) in enumerate(zip(taus, taus[1:]), start=1):
            if not b < a:
                raise ScheduleError(f"reward thresholds not strictly decreasing at round {k + 1}", k + 1)

    def floored(self) -> np.ndarray:
        """Thresholds clamped at zero: never collect a negative reward."""
        return np.maximum(np.asarray(self.taus), 0.0)


@dataclass(frozen=True)
class EquilibriumThresholds:
    tau_hats: tuple

    def __post_init__(self):
        th = tuple(float(t) for t in self.tau_hats)
        object.__setattr__(self, "tau_hats", th)
        for k, (a, b) in enumerate(zip(th, th[1:]), start=1):
            if not b < a:
                raise ScheduleError(
                    f"equilibrium thresholds not strictly decreasing at round {k + 1} "
                    f"({a:.6g} then {b:.6g})",
                    k + 1,
                )

    @property
    def levels(self):
        return len(self.tau_hats)


@dataclass(frozen=True)
class PricePrivacySchedule:
    """Announced tuples (p_k, eps_k), k = 1..l, with the user's cost per round."""

    prices: tuple
    epsilons: tuple
    costs: tuple

    def __post_init__(self):
        for name in ("prices", "epsilons", "costs"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if not len(self.prices) == len(self.epsilons) == len(self.costs):
            raise ScheduleError("prices, epsilons and costs differ in length")
        for k, (a, b) in enumerate(zip(self.prices, self.prices[1:]), start=1):
            if b > a:
                raise ScheduleError(f"price rises at round {k + 1}", k + 1)

    @property
    def levels(self):
        return len(self.prices)

    @property
    def tuples(self):
        return list(zip(self.prices, range(1, self.levels + 1)))


def prophet_thresholds(model: ProphetModel, levels: int) -> RewardThresholds:
    """tau_k = G^{-1}(e^{-k/n}) for k = 1..levels."""
    if levels < 1 or model.n < 1:
        raise ValueError("need levels >= 1 and n >= 1")
    qs = np.exp(-np.arange(1, levels + 1) / model.n)
    taus = np.asarray(model.inv_cdf(qs), dtype=float)
    if not np.all(np.isfinite(taus)):
        raise RangeError("reward distribution not invertible at a required quantile")
    return RewardThresholds(tuple(taus))


def dutch_reward_thresholds(spec, ladder, n: int) -> RewardThresholds:
    """Per-round thresholds: round k's tau from G_k (the level-k reward law)."""
    taus = []
    for k in range(1, spec.levels + 1):
        model = ProphetModel.from_virtual_values(spec, ladder, k, n)
        taus.append(prophet_thresholds(model, k).taus[k - 1])
    return RewardThresholds(tuple(taus))


def equilibrium_thresholds(spec, ladder, taus: RewardThresholds) -> EquilibriumThresholds:
    """Value-space thresholds: phi~_k^{-1}(max(tau_k, 0))."""
    if len(taus.taus) != spec.levels:
        raise ScheduleError(f"{len(taus.taus)} thresholds for {spec.levels} levels")
    hats = [
        inv_privacy_virtual_value(spec, ladder, k, max(t, 0.0))
        for k, t in enumerate(taus.taus, start=1)
    ]
    return EquilibriumThresholds(tuple(hats))


def quantile_ratios(spec, tau_hats: EquilibriumThresholds) -> np.ndarray:
    """a_k = F_k(tau_hat_k) / F_{k-1}(tau_hat_{k-1}), with F_0(tau_hat_0) = 1."""
    q = np.array([spec.cdf(k, t) for k, t in enumerate(tau_hats.tau_hats, start=1)])
    prev = np.concatenate([[1.0], q[:-1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        a = q / prev
    for k, ak in enumerate(a, start=1):
        if not 0.0 < ak <= 1.0:
            raise DegenerateThresholdError(f"quantile ratio a_{k} = {ak:.6g} outside (0, 1]", k)
    return a


def prices_from_thresholds(spec, ladder, tau_hats: EquilibriumThresholds, n: int):
    """Solve the indifference condition backwards from p_l = tau_hat_l."""
    if n < 1:
        raise ValueError("n must be >= 1")
    th = np.asarray(tau_hats.tau_hats)
    levels = len(th)
    a = quantile_ratios(spec, tau_hats)
    p = np.empty(levels)
    p[-1] = th[-1]
    for k in range(levels - 2, -1, -1):
        weight = a[k] ** (n - 1) * pn(a[k + 1], n) / pn(a[k], n)
        p[k] = th[k] - weight * (th[k] - p[k + 1])
    if n == 1 and levels > 1:
        warnings.warn(
            "single searcher: every price collapses to the last threshold", RuntimeWarning, stacklevel=2
        )
    return PricePrivacySchedule(tuple(p), ladder.epsilons[:levels], ladder.costs[:levels])


def indifference_residuals(spec, schedule: PricePrivacySchedule, tau_hats, n: int) -> np.ndarray:
    """LHS - RHS of the indifference condition at k = 1..l-1 (sum-form P_n)."""
    th = tau_hats.tau_hats
    q = [1.0] + [float(spec.cdf(k, t)) for k, t in enumerate(th, start=1)]
    p = schedule.prices
    res = []
    for k in range(1, len(th)):
        ak, ak1 = q[k] / q[k - 1], q[k + 1] / q[k]
        lhs = pn_binomial(ak, n) * (th[k - 1] - p[k - 1])
        rhs = ak ** (n - 1) * pn_binomial(ak1, n) * (th[k - 1] - p[k])
        res.append(lhs - rhs)
    return np.array(res)


@dataclass(frozen=True)
class VirtualOrderCheck:
    decreasing: bool
    corollary_condition: bool
    values: tuple  # phi~_k(p_k)


def check_decreasing_virtuals(spec, ladder, schedule, grid: int = 1000) -> VirtualOrderCheck:
    """Is phi~_k(p_k) strictly decreasing in k, and does the cost-gap condition hold?

    The sufficient condition is c_{k+1} - c_k > sup_v [phi_{k+1}(v) - phi_k(v)],
    the supremum taken over grid points in the support of F_k where both
    densities are positive.
    """
    vals = tuple(
        float(privacy_virtual_value(spec, ladder, k, p))
        for k, p in enumerate(schedule.prices, start=1)
    )
    decreasing = all(b < a for a, b in zip(vals, vals[1:]))
    cond = True
    for k in range(1, spec.levels):
        v = spec.validation_grid(k, grid)
        v = v[(np.asarray(spec.pdf(k, v)) > 0) & (np.asarray(spec.pdf(k + 1, v)) > 0)]
        if v.size == 0:
            continue
        sup = float(np.max(np.asarray(spec.virtual_value(k + 1, v)) - spec.virtual_value(k, v)))
        if not ladder.cost(k + 1) - ladder.cost(k) > sup:
            cond = False
    return VirtualOrderCheck(decreasing, cond, vals)


def bid_rounds(tau_hats, values) -> np.ndarray:
    """0-based round each searcher bids in (step strategy), or l if never."""
    v = np.asarray(values, dtype=float)
    clears = v >= np.asarray(tau_hats.tau_hats)
    levels = v.shape[-1]
    return np.where(clears.any(axis=-1), clears.argmax(axis=-1), levels)


def dutch_auction_batch(schedule, tau_hats, values, rng=None) -> BatchOutcome:
    """Descent over (T, n, l) value stacks; the earliest round with a bid wins."""
    v = np.asarray(values, dtype=float)
    t, n, levels = v.shape
    rounds = bid_rounds(tau_hats, v)
    first = rounds.min(axis=1)
    sold = first < levels
    at_first = rounds == first[:, None]
    if rng is not None:
        keys = rng.random((t, n))
        winner = np.where(at_first, keys, -1.0).argmax(axis=1)
    else:
        winner = at_first.argmax(axis=1)
    k = np.where(sold, first, 0)
    prices = np.asarray(schedule.prices)
    costs = np.asarray(schedule.costs)
    pay = np.where(sold, prices[k], 0.0)
    return BatchOutcome(
        winner=np.where(sold, winner, -1),
        level=np.where(sold, k + 1, 0),
        payment=pay,
        net_utility=np.where(sold, pay - costs[k], 0.0),
        top_score=np.full(t, np.nan),
    )


def run_dutch_auction(schedule, tau_hats, values, rng=None) -> AuctionOutcome:
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[1] != schedule.levels or tau_hats.levels != schedule.levels:
        raise ScheduleError(f"values of shape {v.shape} do not match {schedule.levels} rounds")
    out = dutch_auction_batch(schedule, tau_hats, v[None], rng)
    if out.winner[0] < 0:
        return AuctionOutcome(None, None, 0.0, 0.0)
    return AuctionOutcome(
        int(out.winner[0]), int(out.level[0]), float(out.payment[0]), float(out.net_utility[0])
    )


@dataclass(frozen=True)
class DutchDesign:
    taus: RewardThresholds
    tau_hats: EquilibriumThresholds
    schedule: PricePrivacySchedule


def design_dutch_auction(spec, ladder, n: int) -> DutchDesign:
    """Thresholds, equilibrium thresholds and prices for an l-DA with n searchers."""
    taus = dutch_reward_thresholds(spec, ladder, n)
    hats = equilibrium_thresholds(spec, ladder, taus)
    return DutchDesign(taus, hats, prices_from_thresholds(spec, ladder, hats, n))


def dutch_net_utility_mc(spec, design: DutchDesign, n, trials, seed, workers=1) -> EstimateRecord:
    def sample(rng, size):
        values = sample_coupled(spec, rng.random((size, n)))
        return {"net_utility": dutch_auction_batch(design.schedule, design.tau_hats, values).net_utility}

    return run_mc(sample, trials, seed, workers)["net_utility"]


def simulate_batched_prophet(model: ProphetModel, taus, trials, seed, workers=1) -> EstimateRecord:
    """Expected reward of the committed-threshold stopping rule.

    ``taus`` may be a :class:`RewardThresholds` (used as is) or any
    non-increasing sequence, e.g. ``RewardThresholds.floored()``.
    """
    th = np.asarray(taus.taus if isinstance(taus, RewardThresholds) else taus, dtype=float)
    if np.any(np.diff(th) > 0):
        raise ScheduleError("thresholds must be non-increasing")
    n = model.n

    def sample(rng, size):
        rewards = model.sample(rng, (size, n))
        pick = rng.random(size)
        got = np.zeros(size)
        open_ = np.ones(size, dtype=bool)
        for tau in th:
            clear = (rewards >= tau) & open_[:, None]
            count = clear.sum(axis=1)
            hit = count > 0
            if np.any(hit):
                r = np.minimum((pick * count).astype(int), np.maximum(count - 1, 0))
                pos = (np.cumsum(clear, axis=1) == (r + 1)[:, None]) & clear
                chosen = rewards[np.arange(size), pos.argmax(axis=1)]
                got = np.where(hit, chosen, got)
            open_ &= ~hit
        return {"reward": got}

    return run_mc(sample, trials, seed, workers)["reward"]


def prophet_opt(model: ProphetModel, trials, seed, workers=1) -> EstimateRecord:
    """Monte Carlo estimate of E[max(0, max_i V_i)]; paired with the simulator per seed."""

    def sample(rng, size):
        rewards = model.sample(rng, (size, model.n))
        return {"opt": np.maximum(rewards.max(axis=1), 0.0)}

    return run_mc(sample, trials, seed, workers)["opt"]
