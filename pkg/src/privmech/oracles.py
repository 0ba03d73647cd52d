"""Brute-force references: exhaustive optimal welfare, numeric optimal revenue,
and deviation audits with replayed randomness."""

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from privmech.dist_models import privacy_virtual_value
from privmech.errors import BudgetError, DomainError
from privmech.marketplace import (
    MarketInstance,
    Realization,
    check_feasible,
    design_marketplace,
    draw_orders,
    market_batch,
    social_welfare,
)
from privmech.optimal_auction import optimal_auction_batch, truthfulness_audit
from privmech.simharness.estimates import run_mc


@dataclass(frozen=True)
class SmallInstanceBound:
    max_n: int = 4
    max_m: int = 4
    max_levels: int = 3
    budget: int = 50_000  # candidate (x, y) pairs per realization

    def check(self, n, m, levels):
        if n > self.max_n or m > self.max_m or levels > self.max_levels:
            raise BudgetError(
                f"instance ({n}, {m}, {levels}) exceeds bound "
                f"({self.max_n}, {self.max_m}, {self.max_levels})"
            )
        size = count_matchings(n, m) * levels**m
        if size > self.budget:
            raise BudgetError(f"{size} candidate outcomes exceed the budget of {self.budget}")


def count_matchings(n, m):
    return sum(math.comb(n, r) * math.perm(m, r) for r in range(min(n, m) + 1))


@lru_cache(maxsize=None)
def all_matchings(n, m):
    """Every partial matching as a tuple of (searcher, transaction) pairs."""
    out = []
    for r in range(min(n, m) + 1):
        for who in itertools.combinations(range(n), r):
            for what in itertools.permutations(range(m), r):
                out.append(tuple(zip(who, what)))
    return tuple(out)


def brute_force_optimal_welfare(
    realization: Realization, convention="gross", bound=SmallInstanceBound()
):
    """Max welfare over every feasible (x, y); returns (value, x, y)."""
    n, m, levels = realization.values.shape
    bound.check(n, m, levels)
    best = (-math.inf, None, None)
    for matching in all_matchings(n, m):
        for lv in itertools.product(range(levels), repeat=m):
            x = np.zeros((n, m, levels), dtype=np.int8)
            y = np.zeros((m, levels), dtype=np.int8)
            sold = set()
            for i, j in matching:
                x[i, j, lv[j]] = 1
                sold.add(j)
            for j in range(m):
                if j not in sold:
                    y[j, lv[j]] = 1
            check_feasible(x, y)
            w = social_welfare(x, realization, y, convention)
            if w > best[0]:
                best = (w, x, y)
    return best


def optimal_welfare_batch(values, costs, convention="gross"):
    """Optimal welfare per trial for stacked realizations (T, n, m, l), (T, m, l).

    Each pair's best level and each transaction's best keep level are chosen
    independently, so the optimum is the best matching on the gains
    trade(i, j) - keep(j) plus the total keep-value.
    """
    t, n, m, _ = values.shape
    trade = values if convention == "gross" else values - costs[:, None]
    best_trade = trade.max(axis=3)  # (T, n, m)
    keep = costs.max(axis=2)  # (T, m)
    gain = best_trade - keep[:, None, :]
    best = np.zeros(t)
    for matching in all_matchings(n, m):
        if matching:
            i, j = map(list, zip(*matching))
            best = np.maximum(best, gain[:, i, j].sum(axis=1))
    return keep.sum(axis=1) + best


def expected_optimal_welfare_mc(
    instance: MarketInstance, trials, seed, convention="gross", workers=1, bound=SmallInstanceBound()
):
    bound.check(instance.n, instance.m, instance.levels)

    def sample(rng, size):
        values, costs = instance.sample(rng, size)
        return {"OPT": optimal_welfare_batch(values, costs, convention)}

    return run_mc(sample, trials, seed, workers)["OPT"]


def _level_integrand(spec, ladder, n):
    def h(u):
        best = max(
            float(privacy_virtual_value(spec, ladder, k, spec.inv_cdf(k, u)))
            for k in range(1, spec.levels + 1)
        )
        return max(best, 0.0) * n * u ** (n - 1)

    return h


def brute_force_optimal_revenue(spec, ladder, n, quadrature_points=200):
    """E[max(0, max_{i,k} phi~_k(v_ik))] under the comonotone level coupling.

    With regular, hazard-ordered levels the per-searcher maximum is increasing
    in the searcher's quantile u, so the expectation is a one-dimensional
    integral against the density n u^(n-1) of the top quantile.
    """
    if n < 1:
        raise DomainError("need at least one searcher")
    h = _level_integrand(spec, ladder, n)
    top = float(np.nextafter(1.0, 0.0))
    value, _ = quad(h, 0.0, top, limit=quadrature_points, epsabs=1e-11, epsrel=1e-10)
    return value


@dataclass(frozen=True)
class DeviationReport:
    gains: dict  # role -> largest utility gain from any tested deviation
    profiles: int

    @property
    def max_gain(self):
        return max(self.gains.values())


def deviation_audit(mechanism, instance, grid, trials, seed, workers=1) -> DeviationReport:
    """Exhaustive unilateral-deviation search on sampled profiles.

    ``mechanism`` is ``"optimal"`` (``instance`` = (spec, ladder, n)), a batch
    auction callable with the same signature as ``optimal_auction_batch``, or
    ``"market"`` (``instance`` a :class:`MarketInstance`).
    """
    if mechanism == "market":
        return _market_audit(instance, grid, trials, seed, workers)
    batch = optimal_auction_batch if mechanism == "optimal" else mechanism
    if not callable(batch):
        raise DomainError(f"unknown mechanism {mechanism!r}")
    spec, ladder, n = instance
    res = truthfulness_audit(spec, ladder, n, grid, trials, seed, workers, mechanism=batch)
    return DeviationReport({"searcher": res.max_gain}, trials)


def _market_audit(instance: MarketInstance, grid, trials, seed, workers):
    """Users mis-answer the query; searchers act on misreported values.

    Realizations, query coins and arrival orders are replayed unchanged.
    """
    book = design_marketplace(instance)
    offered = book.offered
    kidx = book.levels - 1
    m = instance.m

    def user_utility(res, costs):
        c = costs[:, np.arange(m), kidx]
        return np.where(res.sold, res.user_receipts - c, 0.0)

    def searcher_utility(res, values):
        t, n = res.picks.shape
        j = np.maximum(res.picks, 0)
        v = values[np.arange(t)[:, None], np.arange(n)[None, :], j, kidx[j]]
        return np.where(res.picks >= 0, v - res.searcher_payments, 0.0)

    def sample(rng, size):
        values, costs = instance.sample(rng, size)
        coins = rng.random((size, m))
        orders = draw_orders(rng, size, instance.n, "uniform")
        truthful = market_batch(values, costs, book, orders, coins)
        base_u = user_utility(truthful, costs)
        base_s = searcher_utility(truthful, values)
        honest = np.where(book.worth, book.prices, 0.0)[None, :] >= costs[:, np.arange(m), kidx]
        user_gain = np.zeros(size)
        for j in offered:
            for flip in (False, True):
                accept = honest.copy()
                accept[:, j] = flip
                dev = market_batch(values, costs, book, orders, coins, accept=accept)
                user_gain = np.maximum(user_gain, user_utility(dev, costs)[:, j] - base_u[:, j])
        searcher_gain = np.zeros(size)
        for i in range(instance.n):
            for j in offered:
                spec = instance.searcher_specs[i][j]
                k = book.levels[j]
                lo = spec.support(k)[0]
                for point in np.linspace(lo, spec.upper(k), grid):
                    perceived = values.copy()
                    perceived[:, i, j, k - 1] = point
                    dev = market_batch(values, costs, book, orders, coins, perceived=perceived)
                    searcher_gain = np.maximum(
                        searcher_gain, searcher_utility(dev, values)[:, i] - base_s[:, i]
                    )
        return {"user": user_gain, "searcher": searcher_gain}

    s = run_mc(sample, trials, seed, workers)
    return DeviationReport({"user": s.maxima["user"], "searcher": s.maxima["searcher"]}, trials)
