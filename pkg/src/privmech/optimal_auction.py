"""Truthful revenue-optimal sealed-bid auction over privacy levels.

Every searcher reports a value for each privacy level (an ``n x l`` matrix).
The (searcher, level) pair with the highest privacy-enhanced virtual value
wins if that value is positive, and pays the smallest level-k* report that
would still have beaten every *other* searcher and the reserve.
"""

from dataclasses import dataclass

import numpy as np

from privmech.dist_models import (
    DistributionSpec,
    PrivacyLadder,
    inv_privacy_virtual_value,
    privacy_virtual_value,
    sample_coupled,
)
from privmech.errors import ConfigError
from privmech.simharness.estimates import EstimateRecord, run_mc


@dataclass(frozen=True)
class AuctionOutcome:
    winner: int | None  # searcher index (0-based)
    level: int | None  # privacy level k* (1-based)
    payment: float
    user_net_utility: float

    @property
    def sold(self) -> bool:
        return self.winner is not None


def check_profile(values, spec: DistributionSpec, ladder: PrivacyLadder) -> np.ndarray:
    b = np.asarray(values, dtype=float)
    if b.ndim != 2 or b.shape[0] < 1:
        raise ConfigError("profile", f"expected an n x l matrix, got shape {b.shape}")
    if b.shape[1] != spec.levels or ladder.levels != spec.levels:
        raise ConfigError(
            "profile",
            f"profile has {b.shape[1]} levels, spec {spec.levels}, ladder {ladder.levels}",
        )
    if np.any(b < 0):
        raise ConfigError("profile", "reported values must be non-negative")
    return b


def scores(values, spec, ladder, k):
    """Privacy-enhanced virtual values of level-k reports.

    Reports below the support never win (-inf); reports above a bounded
    support continue the virtual value as v - c_k, its limit at v_max.
    """
    v = np.asarray(values, dtype=float)
    lo, hi = spec.support(k)
    out = np.full(v.shape, -np.inf)
    inside = (v >= lo) & (v <= hi)
    if np.any(inside):
        out[inside] = privacy_virtual_value(spec, ladder, k, v[inside])
    above = v > hi
    out[above] = v[above] - ladder.cost(k)
    return out


def critical_value(spec, ladder, k, target):
    """Smallest level-k report whose score reaches ``target`` (vectorized)."""
    t = np.asarray(target, dtype=float)
    hi = spec.support(k)[1]
    top = privacy_virtual_value(spec, ladder, k, spec.upper(k))
    out = np.empty(t.shape)
    beyond = t > top
    if np.any(~beyond):
        out[~beyond] = inv_privacy_virtual_value(spec, ladder, k, t[~beyond], clip=True)
    # only reachable for bounded supports, where scores() extends linearly
    out[beyond] = t[beyond] + ladder.cost(k) if np.isfinite(hi) else spec.upper(k)
    return out


@dataclass(frozen=True)
class BatchOutcome:
    winner: np.ndarray  # -1 when unsold
    level: np.ndarray  # 1-based, 0 when unsold
    payment: np.ndarray
    net_utility: np.ndarray
    top_score: np.ndarray


def optimal_auction_batch(values, spec, ladder, rng=None) -> BatchOutcome:
    """Run the auction on a stack of profiles of shape (T, n, l).

    With ``rng`` ties among top scores are broken uniformly at random (one
    uniform per (trial, searcher, level) is always consumed); without it the
    lowest flat index wins.
    """
    v = np.asarray(values, dtype=float)
    t, n, levels = v.shape
    s = np.stack([scores(v[:, :, k - 1], spec, ladder, k) for k in range(1, levels + 1)], axis=-1)
    flat = s.reshape(t, n * levels)
    top = flat.max(axis=1)
    if rng is not None:
        keys = rng.random(flat.shape)
        w = np.where(flat == top[:, None], keys, -1.0).argmax(axis=1)
    else:
        w = flat.argmax(axis=1)
    wi, wk = np.divmod(w, levels)

    rest = s.copy()
    rest[np.arange(t), wi, :] = -np.inf
    r = rest.reshape(t, -1).max(axis=1) if n > 1 else np.full(t, -np.inf)
    target = np.maximum(r, 0.0)

    sold = top > 0
    pay = np.zeros(t)
    costs = np.asarray(ladder.costs)
    for k in range(1, levels + 1):
        idx = sold & (wk == k - 1)
        if np.any(idx):
            pay[idx] = critical_value(spec, ladder, k, target[idx])
    net = np.where(sold, pay - costs[wk], 0.0)
    return BatchOutcome(
        winner=np.where(sold, wi, -1),
        level=np.where(sold, wk + 1, 0),
        payment=pay,
        net_utility=net,
        top_score=top,
    )


def run_optimal_auction(values, spec, ladder, rng=None) -> AuctionOutcome:
    b = check_profile(values, spec, ladder)
    out = optimal_auction_batch(b[None], spec, ladder, rng)
    if out.winner[0] < 0:
        return AuctionOutcome(None, None, 0.0, 0.0)
    return AuctionOutcome(
        int(out.winner[0]), int(out.level[0]), float(out.payment[0]), float(out.net_utility[0])
    )


def virtual_welfare(values, spec, ladder) -> float:
    """max(0, max over (i, k) of the privacy-enhanced virtual value) for one profile."""
    b = check_profile(values, spec, ladder)
    s = np.stack([scores(b[:, k - 1], spec, ladder, k) for k in range(1, spec.levels + 1)], axis=-1)
    return max(0.0, float(s.max()))


def _profile_sampler(spec, ladder, n, with_auction):
    def sample(rng, size):
        values = sample_coupled(spec, rng.random((size, n)))
        if not with_auction:
            s = np.stack(
                [scores(values[:, :, k - 1], spec, ladder, k) for k in range(1, spec.levels + 1)],
                axis=-1,
            )
            return {"virtual_welfare": np.maximum(s.reshape(size, -1).max(axis=1), 0.0)}
        out = optimal_auction_batch(values, spec, ladder, rng)
        return {
            "net_utility": out.net_utility,
            "virtual_welfare": np.maximum(out.top_score, 0.0),
        }

    return sample


def expected_net_utility_mc(spec, ladder, n, trials, seed, workers=1) -> EstimateRecord:
    """Mean of payment - c_k* over coupled profiles (0 when unsold)."""
    return run_mc(_profile_sampler(spec, ladder, n, True), trials, seed, workers)["net_utility"]


def virtual_welfare_mc(spec, ladder, n, trials, seed, workers=1) -> EstimateRecord:
    """Mean of max(0, max_{i,k} phi~_k(v_ik)); same draws as the net-utility run for a seed."""
    return run_mc(_profile_sampler(spec, ladder, n, False), trials, seed, workers)[
        "virtual_welfare"
    ]


def myerson_identity_mc(spec, ladder, n, trials, seed, workers=1):
    """Both sides of the revenue/virtual-welfare identity from one paired pass."""
    summary = run_mc(_profile_sampler(spec, ladder, n, True), trials, seed, workers)
    return summary["net_utility"], summary["virtual_welfare"]


def misreport_grid(spec, k, size):
    lo = spec.support(k)[0]
    return np.linspace(lo, spec.upper(k), size)


@dataclass(frozen=True)
class AuditResult:
    max_gain: float
    profiles: int
    deviations: int


def _utility(values, out, i):
    t = values.shape[0]
    won = out.winner == i
    lvl = np.where(won, out.level - 1, 0)
    return np.where(won, values[np.arange(t), i, lvl] - out.payment, 0.0)


def truthfulness_audit(
    spec, ladder, n, grid, trials, seed, workers=1, mechanism=optimal_auction_batch
) -> AuditResult:
    """Largest utility gain any searcher obtains by misreporting one level's value.

    For each sampled profile, each searcher i and level k, the report
    ``values[i, k]`` is replaced by every point of a ``grid``-point misreport
    grid spanning the level-k support; everything else is held fixed.
    ``mechanism`` maps (values, spec, ladder) to a :class:`BatchOutcome`.
    """
    if grid < 2:
        raise ValueError("deviation grid needs at least two points")
    grids = [misreport_grid(spec, k, grid) for k in range(1, spec.levels + 1)]

    def sample(rng, size):
        values = sample_coupled(spec, rng.random((size, n)))
        truthful = mechanism(values, spec, ladder)
        best = np.full(size, -np.inf)
        for i in range(n):
            base = _utility(values, truthful, i)
            for k in range(spec.levels):
                for point in grids[k]:
                    dev = values.copy()
                    dev[:, i, k] = point
                    gain = _utility(values, mechanism(dev, spec, ladder), i) - base
                    best = np.maximum(best, gain)
        return {"gain": best}

    summary = run_mc(sample, trials, seed, workers)
    return AuditResult(summary.maxima["gain"], trials, n * spec.levels * grid)
