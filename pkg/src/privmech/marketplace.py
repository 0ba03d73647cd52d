"""Two-sided posted-price privacy marketplace.

Pipeline: a baseline max-weight matching at one fixed privacy level, a
per-transaction privacy level k*_j, the worth-matching set W, posted prices
p_j = E[v]/2 and query probabilities q_j = 1 / (2 G(p_j)). Queried users
accept iff p_j covers their realized cost; searchers then arrive in order and
buy their best available offer. Each trade moves p_j from searcher to user.

Welfare convention: ``"gross"`` scores a trade at the searcher's value and an
unsold transaction at the user's keep-value c_{j,k}; ``"net"`` additionally
subtracts the user's privacy cost from each trade.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from privmech.dist_models import DistributionSpec, PrivacyLadder
from privmech.errors import DegenerateSupportError, DomainError, InvariantViolation
from privmech.simharness.estimates import EstimateRecord, run_mc
from privmech.simharness.rng import derive_substream

CONVENTIONS = ("gross", "net")
KEEP_POLICIES = ("first", "max_cost")


@dataclass(frozen=True, eq=False)
class MarketInstance:
    """(n, m, l, F, G): per-(i, j) value specs and per-j cost specs, l levels each."""

    searcher_specs: tuple  # n rows of m DistributionSpec
    user_specs: tuple  # m DistributionSpec
    epsilons: tuple = ()

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.searcher_specs)
        object.__setattr__(self, "searcher_specs", rows)
        object.__setattr__(self, "user_specs", tuple(self.user_specs))
        if not rows or not self.user_specs:
            raise DomainError("market needs at least one searcher and one user")
        if any(len(r) != self.m for r in rows):
            raise DomainError("every searcher needs one value spec per user")
        levels = self.user_specs[0].levels
        specs = [s for r in rows for s in r] + list(self.user_specs)
        if any(s.levels != levels for s in specs):
            raise DomainError("all distributions must share the number of privacy levels")
        eps = tuple(self.epsilons) or PrivacyLadder.even([0.0] * levels).epsilons
        if len(eps) != levels:
            raise DomainError(f"{len(eps)} epsilons for {levels} levels")
        object.__setattr__(self, "epsilons", eps)

    @property
    def n(self):
        return len(self.searcher_specs)

    @property
    def m(self):
        return len(self.user_specs)

    @property
    def levels(self):
        return self.user_specs[0].levels

    def value_means(self) -> np.ndarray:
        return np.array(
            [[[s.mean(k) for k in range(1, self.levels + 1)] for s in row] for row in self.searcher_specs]
        )

    def cost_means(self) -> np.ndarray:
        return np.array([[s.mean(k) for k in range(1, self.levels + 1)] for s in self.user_specs])

    def ladder(self, j: int) -> PrivacyLadder:
        """User j's ladder with expected costs per level."""
        return PrivacyLadder(self.epsilons, tuple(self.cost_means()[j]))

    def sample(self, rng, size):
        """Independent draws: values (size, n, m, l) and costs (size, m, l)."""
        uv = rng.random((size, self.n, self.m, self.levels))
        uc = rng.random((size, self.m, self.levels))
        values = np.empty_like(uv)
        costs = np.empty_like(uc)
        for i, row in enumerate(self.searcher_specs):
            for j, spec in enumerate(row):
                for k in range(self.levels):
                    values[:, i, j, k] = spec.inv_cdf(k + 1, uv[:, i, j, k])
        for j, spec in enumerate(self.user_specs):
            for k in range(self.levels):
                costs[:, j, k] = spec.inv_cdf(k + 1, uc[:, j, k])
        return values, costs

    def realize(self, rng) -> "Realization":
        v, c = self.sample(rng, 1)
        return Realization(v[0], c[0])


@dataclass(frozen=True, eq=False)
class Realization:
    values: np.ndarray  # (n, m, l)
    costs: np.ndarray  # (m, l)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        c = np.asarray(self.costs, dtype=float)
        if v.ndim != 3 or c.ndim != 2 or v.shape[1:] != c.shape:
            raise DomainError(f"values {v.shape} and costs {c.shape} are inconsistent")
        if np.any(v < 0) or np.any(c < 0):
            raise DomainError("realized values and costs must be non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "costs", c)


@dataclass(frozen=True, eq=False)
class OfferBook:
    matching: dict  # j -> i*_j
    levels: np.ndarray  # k*_j, 1-based; keep level for unmatched j
    worth: np.ndarray  # bool, membership in W
    prices: np.ndarray  # p_j (nan outside W)
    query_probs: np.ndarray  # q_j (0 outside W)
    scores: np.ndarray = field(default=None)  # SW_{j,k}, nan rows for unmatched j

    @property
    def offered(self):
        return np.flatnonzero(self.worth)


@dataclass(frozen=True, eq=False)
class MarketOutcome:
    x: np.ndarray  # (n, m, l) 0/1
    y: np.ndarray  # (m, l) 0/1
    searcher_payments: np.ndarray  # (n,)
    user_receipts: np.ndarray  # (m,)
    welfare: float
    queried: np.ndarray = field(default=None)  # (m,) bool
    shelf: np.ndarray = field(default=None)  # (m,) bool

    def as_record(self):
        return {
            "trades": [[int(i), int(j), int(k) + 1] for i, j, k in zip(*np.nonzero(self.x))],
            "kept": [[int(j), int(k) + 1] for j, k in zip(*np.nonzero(self.y))],
            "searcher_payments": self.searcher_payments.tolist(),
            "user_receipts": self.user_receipts.tolist(),
            "welfare": self.welfare,
        }


def check_feasible(x, y) -> None:
    """Unit demand per searcher; each transaction sold once or kept once."""
    x = np.asarray(x)
    y = np.asarray(y)
    if np.any((x != 0) & (x != 1)) or np.any((y != 0) & (y != 1)):
        raise InvariantViolation("allocation indicators must be 0/1")
    if np.any(x.sum(axis=(1, 2)) > 1):
        raise InvariantViolation("a searcher holds more than one transaction")
    if np.any(x.sum(axis=(0, 2)) + y.sum(axis=1) != 1):
        raise InvariantViolation("a transaction is neither sold nor kept exactly once")


def is_feasible(x, y) -> bool:
    try:
        check_feasible(x, y)
    except InvariantViolation:
        return False
    return True


def social_welfare(outcome_or_x, realization: Realization, y=None, convention="gross") -> float:
    """Searcher-side trade welfare plus the keep-values of unsold transactions."""
    if convention not in CONVENTIONS:
        raise DomainError(f"unknown welfare convention {convention!r}")
    if isinstance(outcome_or_x, MarketOutcome):
        x, y = outcome_or_x.x, outcome_or_x.y
    else:
        x = outcome_or_x
    check_feasible(x, y)
    v, c = realization.values, realization.costs
    trade = v if convention == "gross" else v - c[None]
    return float(np.sum(trade * x) + np.sum(c * y))


def baseline_matching(instance: MarketInstance, k0: int = 1) -> dict:
    """Max-weight matching on (E[v_ij,k0] - E[c_j,k0])^+; zero-weight pairs dropped."""
    if not 1 <= k0 <= instance.levels:
        raise DomainError(f"unknown privacy level {k0}")
    w = np.maximum(instance.value_means()[:, :, k0 - 1] - instance.cost_means()[None, :, k0 - 1], 0.0)
    rows, cols = linear_sum_assignment(w, maximize=True)
    return {int(j): int(i) for i, j in zip(rows, cols) if w[i, j] > 0}


def privacy_level_selection(instance: MarketInstance, matching: dict):
    """k*_j = argmax_k SW_{j,k} (ties to the lowest k); returns (levels, scores)."""
    ev = instance.value_means()
    ec = instance.cost_means()
    levels = np.ones(instance.m, dtype=int)
    scores = np.full((instance.m, instance.levels), np.nan)
    for j, i in matching.items():
        v, c = ev[i, j], ec[j]
        sw = c + np.where(v >= 4 * c, 0.5 * (v - c), 0.0)
        scores[j] = sw
        levels[j] = int(np.argmax(sw)) + 1
    return levels, scores


def build_offer_book(instance: MarketInstance, matching: dict, levels, scores=None) -> OfferBook:
    ev = instance.value_means()
    ec = instance.cost_means()
    m = instance.m
    levels = np.asarray(levels, dtype=int)
    worth = np.zeros(m, dtype=bool)
    prices = np.full(m, np.nan)
    qs = np.zeros(m)
    for j, i in matching.items():
        k = levels[j]
        v, c = ev[i, j, k - 1], ec[j, k - 1]
        if v < 4 * c:
            continue
        p = 0.5 * v
        g = float(instance.user_specs[j].cdf(k, p))
        if g <= 0:
            raise DegenerateSupportError(f"transaction {j}: no cost at level {k} is below price {p:.6g}")
        worth[j] = True
        prices[j] = p
        qs[j] = min(1.0, 1.0 / (2.0 * g))
    return OfferBook(dict(matching), levels, worth, prices, qs, scores)


def design_marketplace(instance: MarketInstance, k0: int = 1) -> OfferBook:
    matching = baseline_matching(instance, k0)
    levels, scores = privacy_level_selection(instance, matching)
    return build_offer_book(instance, matching, levels, scores)


@dataclass(frozen=True)
class MarketBatch:
    """Per-trial results of the posted-price market on stacked realizations."""

    picks: np.ndarray  # (T, n) transaction bought by each searcher, -1 for none
    sold: np.ndarray  # (T, m) bool
    queried: np.ndarray  # (T, m) bool
    shelf: np.ndarray  # (T, m) bool
    keep_levels: np.ndarray  # (T, m) 0-based level of the y indicator
    searcher_payments: np.ndarray  # (T, n)
    user_receipts: np.ndarray  # (T, m)


def keep_levels_for(book: OfferBook, costs, policy="first"):
    """0-based keep level per trial and transaction for the y indicator."""
    if policy not in KEEP_POLICIES:
        raise DomainError(f"unknown keep policy {policy!r}")
    t, m, _ = costs.shape
    out = np.tile(book.levels - 1, (t, 1))
    unmatched = np.array([j not in book.matching for j in range(m)])
    if policy == "max_cost" and np.any(unmatched):
        out[:, unmatched] = costs[:, unmatched, :].argmax(axis=2)
    elif np.any(unmatched):
        out[:, unmatched] = 0
    return out


def market_batch(
    values,
    costs,
    book: OfferBook,
    orders,
    coins,
    accept=None,
    perceived=None,
    keep_policy="first",
) -> MarketBatch:
    """Run both stages on (T, n, m, l) values and (T, m, l) costs.

    ``coins`` are (T, m) uniforms for the query step; ``orders`` (T, n)
    arrival permutations. ``accept`` overrides users' answers and
    ``perceived`` the values searchers use to choose (utility audits replay
    the same coins with these swapped).
    """
    t, n, m, _ = values.shape
    kidx = book.levels - 1
    ar = np.arange(t)
    cost_at = costs[:, np.arange(m), kidx]  # (T, m)
    offered = book.worth[None, :]
    prices = np.where(book.worth, book.prices, 0.0)
    queried = offered & (coins < book.query_probs[None, :])
    if accept is None:
        accept = prices[None, :] >= cost_at
    shelf = queried & accept
    chooser = values if perceived is None else perceived
    v_at = chooser[:, :, np.arange(m), kidx]  # (T, n, m)

    available = shelf.copy()
    picks = np.full((t, n), -1)
    for pos in range(n):
        s = orders[:, pos]
        util = np.where(available, v_at[ar, s, :] - prices[None, :], -np.inf)
        best = util.argmax(axis=1)
        buy = util[ar, best] >= 0
        picks[ar, s] = np.where(buy, best, -1)
        available[ar[buy], best[buy]] = False
    sold = shelf & ~available

    pay_s = np.where(picks >= 0, prices[np.maximum(picks, 0)], 0.0)
    rec_u = np.where(sold, prices[None, :], 0.0)
    return MarketBatch(picks, sold, queried, shelf, keep_levels_for(book, costs, keep_policy), pay_s, rec_u)


def settled_total(amounts) -> np.ndarray:
    """Order-independent per-trial total: ascending values summed left to right.

    Both sides of the ledger hold the same non-zero amounts, so this gives
    bit-identical totals regardless of which agent index holds which amount.
    """
    a = np.sort(np.asarray(amounts, dtype=float), axis=-1)
    total = np.zeros(a.shape[:-1])
    for col in np.moveaxis(a, -1, 0):
        total = total + col
    return total


def batch_welfare(values, costs, book, res: MarketBatch, convention="gross"):
    """(ALG^S, ALG^U) per trial."""
    t, n, m, _ = values.shape
    ar = np.arange(t)[:, None]
    kidx = book.levels - 1
    j = np.maximum(res.picks, 0)
    got = res.picks >= 0
    v = values[ar, np.arange(n)[None, :], j, kidx[j]]
    if convention == "net":
        v = v - costs[ar, j, kidx[j]]
    alg_s = np.where(got, v, 0.0).sum(axis=1)
    keep = costs[ar, np.arange(m)[None, :], res.keep_levels]
    alg_u = np.where(res.sold, 0.0, keep).sum(axis=1)
    return alg_s, alg_u


def ir_violations(values, costs, book, res: MarketBatch, perceived=None):
    """Count trades where the buyer's value is below p or the seller's cost above p."""
    t, n, m, _ = values.shape
    ar = np.arange(t)[:, None]
    kidx = book.levels - 1
    j = np.maximum(res.picks, 0)
    got = res.picks >= 0
    price = np.where(book.worth, book.prices, 0.0)[j]
    v = values[ar, np.arange(n)[None, :], j, kidx[j]]
    c = costs[ar, j, kidx[j]]
    return (got & ((v < price) | (price < c))).sum(axis=1)


def run_marketplace(
    instance: MarketInstance,
    realization: Realization,
    book: OfferBook,
    order,
    seed: int,
    convention="gross",
    keep_policy="first",
) -> MarketOutcome:
    """One market round; query coins come from ``derive_substream(seed, 0)``."""
    order = np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(instance.n)):
        raise DomainError(f"order {order.tolist()} is not a permutation of range({instance.n})")
    coins = derive_substream(seed, 0).random((1, instance.m))
    return settle(instance, realization, book, order, coins[0], convention, keep_policy)


def settle(instance, realization, book, order, coins, convention="gross", keep_policy="first"):
    v = realization.values[None]
    c = realization.costs[None]
    res = market_batch(v, c, book, np.asarray(order)[None], np.asarray(coins)[None], keep_policy=keep_policy)
    n, m, levels = realization.values.shape
    x = np.zeros((n, m, levels), dtype=np.int8)
    y = np.zeros((m, levels), dtype=np.int8)
    for i, j in enumerate(res.picks[0]):
        if j >= 0:
            x[i, j, book.levels[j] - 1] = 1
    for j in range(m):
        if not res.sold[0, j]:
            y[j, res.keep_levels[0, j]] = 1
    pay = res.searcher_payments[0]
    rec = res.user_receipts[0]
    return MarketOutcome(
        x=x,
        y=y,
        searcher_payments=pay,
        user_receipts=rec,
        welfare=social_welfare(x, realization, y, convention),
        queried=res.queried[0],
        shelf=res.shelf[0],
    )


def draw_orders(rng, size, n, policy):
    if policy == "fixed":
        return np.tile(np.arange(n), (size, 1))
    if policy == "uniform":
        return np.argsort(rng.random((size, n)), axis=1)
    raise DomainError(f"unknown order policy {policy!r}")


@dataclass(frozen=True)
class MarketEstimates:
    alg: EstimateRecord
    alg_s: EstimateRecord
    alg_u: EstimateRecord
    shelf: dict  # j -> EstimateRecord of the shelf frequency, j in W
    above_price: dict  # j -> EstimateRecord of Pr[c_{j,k*} > p_j], j in W
    max_bb_gap: float  # max |sum payments - sum receipts| over trials
    ir_violations: int
    extra: dict  # label -> EstimateRecord for any paired oracle series


def welfare_mc(
    instance: MarketInstance,
    trials: int,
    seed: int,
    order_policy="fixed",
    book: OfferBook | None = None,
    convention="gross",
    keep_policy="first",
    extra=None,
    workers=1,
) -> MarketEstimates:
    """Monte Carlo ALG = ALG^S + ALG^U over realizations, coins and orders.

    ``extra(values, costs)`` may return further per-trial series computed on
    the same realizations (e.g. the optimal welfare), estimated alongside.
    """
    book = design_marketplace(instance) if book is None else book
    offered = book.offered.tolist()

    def sample(rng, size):
        values, costs = instance.sample(rng, size)
        coins = rng.random((size, instance.m))
        orders = draw_orders(rng, size, instance.n, order_policy)
        res = market_batch(values, costs, book, orders, coins, keep_policy=keep_policy)
        alg_s, alg_u = batch_welfare(values, costs, book, res, convention)
        out = {
            "ALG": alg_s + alg_u,
            "ALG_S": alg_s,
            "ALG_U": alg_u,
            "bb_gap": np.abs(settled_total(res.searcher_payments) - settled_total(res.user_receipts)),
            "ir_violations": ir_violations(values, costs, book, res).astype(float),
        }
        for j in offered:
            out[f"shelf_{j}"] = res.shelf[:, j].astype(float)
            out[f"above_{j}"] = (costs[:, j, book.levels[j] - 1] > book.prices[j]).astype(float)
        if extra is not None:
            out.update({f"extra:{k}": v for k, v in extra(values, costs).items()})
        return out

    s = run_mc(sample, trials, seed, workers)
    return MarketEstimates(
        alg=s["ALG"],
        alg_s=s["ALG_S"],
        alg_u=s["ALG_U"],
        shelf={j: s[f"shelf_{j}"] for j in offered},
        above_price={j: s[f"above_{j}"] for j in offered},
        max_bb_gap=s.maxima["bb_gap"],
        ir_violations=int(round(s["ir_violations"].estimate * trials)),
        extra={k.split(":", 1)[1]: r for k, r in s.records.items() if k.startswith("extra:")},
    )


def random_instance(rng, max_n=4, max_m=4, max_levels=3) -> MarketInstance:
    """Small random market with hazard-ordered level families.

    Values are shifted uniforms with non-decreasing endpoints or exponentials
    with non-increasing rates; costs are uniform on [0, b_k] with b_k growing
    in k, or exponentials with falling rates.
    """
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    levels = int(rng.integers(1, max_levels + 1))

    def value_spec():
        if rng.random() < 0.7:
            lo = [rng.uniform(0.0, 0.5)]
            hi = [lo[0] + rng.uniform(0.5, 2.0)]
            for _ in range(levels - 1):
                lo.append(lo[-1] + rng.uniform(0.0, 0.2))
                hi.append(max(hi[-1] + rng.uniform(0.0, 0.5), lo[-1] + 0.1))
            return DistributionSpec.uniform(hi, lo)
        rates = [rng.uniform(0.5, 2.0)]
        for _ in range(levels - 1):
            rates.append(rates[-1] * rng.uniform(0.6, 1.0))
        return DistributionSpec.exponential(rates)

    def cost_spec():
        if rng.random() < 0.7:
            b = [rng.uniform(0.02, 0.6)]
            for _ in range(levels - 1):
                b.append(b[-1] * rng.uniform(1.0, 1.8))
            return DistributionSpec.uniform(b)
        rates = [rng.uniform(3.0, 15.0)]
        for _ in range(levels - 1):
            rates.append(rates[-1] * rng.uniform(0.55, 1.0))
        return DistributionSpec.exponential(rates)

    return MarketInstance(
        tuple(tuple(value_spec() for _ in range(m)) for _ in range(n)),
        tuple(cost_spec() for _ in range(m)),
    )
