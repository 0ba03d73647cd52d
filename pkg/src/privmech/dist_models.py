"""Per-privacy-level valuation/cost distributions and virtual-value calculus.

Privacy levels are 1-based throughout the package (level ``k`` pairs with the
ladder entry ``epsilons[k-1]``); array axes that index levels are 0-based.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from privmech.errors import DomainError, RangeError, SingularityError

FAMILIES = ("uniform", "exponential", "tabulated")
TAIL = 1e-12  # unbounded supports are truncated at the 1 - TAIL quantile
VALIDATION_GRID = 1000
MAX_BISECTION = 200


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


@dataclass(frozen=True)
class PrivacyLadder:
    """Privacy parameters eps_1 < ... < eps_l and the user's cost at each."""

    epsilons: tuple
    costs: tuple

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        costs = tuple(float(c) for c in self.costs)
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "costs", costs)
        if not eps:
            raise DomainError("ladder needs at least one level")
        if len(eps) != len(costs):
            raise DomainError(f"{len(eps)} epsilons but {len(costs)} costs")
        if any(not 0.0 <= e <= 1.0 for e in eps):
            raise DomainError("epsilons must lie in [0, 1]")
        if any(b <= a for a, b in zip(eps, eps[1:])):
            raise DomainError("epsilons must be strictly increasing")
        if any(c < 0 for c in costs):
            raise DomainError("costs must be non-negative")
        if any(b < a for a, b in zip(costs, costs[1:])):
            raise DomainError("costs must be non-decreasing in the privacy level")

    @property
    def levels(self) -> int:
        return len(self.epsilons)

    def cost(self, k: int) -> float:
        if not 1 <= k <= self.levels:
            raise DomainError(f"unknown privacy level {k} (ladder has {self.levels})")
        return self.costs[k - 1]

    def truncated(self, levels: int) -> "PrivacyLadder":
        return PrivacyLadder(self.epsilons[:levels], self.costs[:levels])

    @classmethod
    def even(cls, costs):
        """Ladder with epsilons spread evenly over (0, 1]."""
        n = len(costs)
        return cls(tuple((i + 1) / n for i in range(n)), tuple(costs))


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    """A family of distributions F_1, ..., F_l, one per privacy level.

    ``params`` holds one tuple per level:

    * ``uniform``: ``(low, high)``
    * ``exponential``: ``(rate,)``
    * ``tabulated``: ``(xs, cdf_values)``, a strictly increasing piecewise-linear
      CDF with ``cdf_values[0] == 0`` and ``cdf_values[-1] == 1``

    Construction rejects irregular levels (virtual value decreasing somewhere on
    the validation grid) and levels whose density does not integrate to one.
    Hazard-rate order across levels is *not* enforced here; see
    :func:`check_hazard_order`.
    """

    family: str
    params: tuple
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if len(self.params) < 1:
            raise DomainError("need at least one privacy level")
        tables = []
        if self.family == "uniform":
            params = tuple((float(lo), float(hi)) for lo, hi in self.params)
            for lo, hi in params:
                if not hi > lo:
                    raise DomainError(f"uniform level needs high > low, got ({lo}, {hi})")
        elif self.family == "exponential":
            params = tuple((float(p[0]),) if np.ndim(p) else (float(p),) for p in self.params)
            for (rate,) in params:
                if not rate > 0:
                    raise DomainError(f"exponential rate must be positive, got {rate}")
        else:
            params = tuple(
                (tuple(float(x) for x in xs), tuple(float(f) for f in fs)) for xs, fs in self.params
            )
            for xs, fs in params:
                xs_a, fs_a = np.asarray(xs), np.asarray(fs)
                if len(xs) < 2 or len(xs) != len(fs):
                    raise DomainError("tabulated level needs matching xs/cdf arrays of length >= 2")
                if np.any(np.diff(xs_a) <= 0) or np.any(np.diff(fs_a) <= 0):
                    raise DomainError("tabulated xs and cdf values must be strictly increasing")
                if fs[0] != 0.0 or fs[-1] != 1.0:
                    raise DomainError("tabulated cdf must run from 0 to 1")
                tables.append((xs_a, fs_a, np.diff(fs_a) / np.diff(xs_a)))
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_tables", tables)
        if self.validate:
            for k in range(1, self.levels + 1):
                err = self.normalization_error(k)
                if err > 1e-6:
                    raise DomainError(f"level {k}: density integrates to 1 {err:+.2e}")
                ok, where = self.is_regular(k)
                if not ok:
                    raise DomainError(f"level {k}: virtual value decreases near v={where:.6g}")

    # -- constructors -----------------------------------------------------

    @classmethod
    def uniform(cls, highs, lows=None, validate=True):
        lows = [0.0] * len(highs) if lows is None else lows
        return cls("uniform", tuple(zip(lows, highs)), validate)

    @classmethod
    def exponential(cls, rates, validate=True):
        return cls("exponential", tuple((r,) for r in rates), validate)

    @classmethod
    def tabulated(cls, tables, validate=True):
        return cls("tabulated", tuple((xs, fs) for xs, fs in tables), validate)

    def truncated(self, levels: int) -> "DistributionSpec":
        return DistributionSpec(self.family, self.params[:levels], validate=False)

    # -- basic access -----------------------------------------------------

    @property
    def levels(self) -> int:
        return len(self.params)

    def _idx(self, k) -> int:
        if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or not 1 <= k <= self.levels:
            raise DomainError(f"unknown privacy level {k!r} (spec has {self.levels})")
        return int(k) - 1

    def support(self, k: int) -> tuple:
        i = self._idx(k)
        if self.family == "uniform":
            return self.params[i]
        if self.family == "exponential":
            return (0.0, math.inf)
        xs = self.params[i][0]
        return (xs[0], xs[-1])

    def upper(self, k: int) -> float:
        """Largest value used for inversion: v_max, or the 1 - TAIL quantile."""
        hi = self.support(k)[1]
        return hi if math.isfinite(hi) else self.inv_cdf(k, 1.0 - TAIL)

    def cdf(self, k: int, v):
        i = self._idx(k)
        x = np.asarray(v, dtype=float)
        if self.family == "uniform":
            lo, hi = self.params[i]
            out = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        elif self.family == "exponential":
            (rate,) = self.params[i]
            out = np.where(x > 0, -np.expm1(-rate * np.maximum(x, 0.0)), 0.0)
        else:
            xs, fs, _ = self._tables[i]
            out = np.interp(x, xs, fs, left=0.0, right=1.0)
        return _scalar_or_array(out, v)

    def sf(self, k: int, v):
        """Survival function 1 - F, without cancellation for the exponential tail."""
        i = self._idx(k)
        if self.family == "exponential":
            x = np.asarray(v, dtype=float)
            (rate,) = self.params[i]
            return _scalar_or_array(np.where(x > 0, np.exp(-rate * np.maximum(x, 0.0)), 1.0), v)
        return _scalar_or_array(1.0 - np.asarray(self.cdf(k, v)), v)

    def pdf(self, k: int, v):
        i = self._idx(k)
        x = np.asarray(v, dtype=float)
        if self.family == "uniform":
            lo, hi = self.params[i]
            out = np.where((x >= lo) & (x <= hi), 1.0 / (hi - lo), 0.0)
        elif self.family == "exponential":
            (rate,) = self.params[i]
            out = np.where(x >= 0, rate * np.exp(-rate * np.maximum(x, 0.0)), 0.0)
        else:
            xs, _, slopes = self._tables[i]
            seg = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(slopes) - 1)
            out = np.where((x >= xs[0]) & (x <= xs[-1]), slopes[seg], 0.0)
        return _scalar_or_array(out, v)

    def inv_cdf(self, k: int, p):
        i = self._idx(k)
        q = np.asarray(p, dtype=float)
        if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
            raise DomainError("probability outside [0, 1]")
        if self.family == "uniform":
            lo, hi = self.params[i]
            out = lo + q * (hi - lo)
        elif self.family == "exponential":
            (rate,) = self.params[i]
            with np.errstate(divide="ignore"):
                out = -np.log1p(-q) / rate
        else:
            xs, fs, _ = self._tables[i]
            out = np.interp(q, fs, xs)
        return _scalar_or_array(out, p)

    def mean(self, k: int) -> float:
        i = self._idx(k)
        if self.family == "uniform":
            lo, hi = self.params[i]
            return 0.5 * (lo + hi)
        if self.family == "exponential":
            return 1.0 / self.params[i][0]
        xs, fs, _ = self._tables[i]
        return float(np.sum(np.diff(fs) * 0.5 * (xs[1:] + xs[:-1])))

    def sample(self, k: int, rng: np.random.Generator, size=None):
        return self.inv_cdf(k, rng.random(size))

    def hazard(self, k: int, v):
        """f / (1 - F); +inf at and beyond the top of a bounded support."""
        f = np.asarray(self.pdf(k, v), dtype=float)
        s = np.asarray(self.sf(k, v), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(s > 0, f / np.where(s > 0, s, 1.0), np.inf)
        return _scalar_or_array(out, v)

    def virtual_value(self, k: int, v):
        """phi_k(v) = v - (1 - F_k(v)) / f_k(v)."""
        x = np.asarray(v, dtype=float)
        f = np.asarray(self.pdf(k, x))
        if np.any(f <= 0):
            bad = x[f <= 0] if x.ndim else x
            raise SingularityError(f"level {k}: density vanishes at v={np.ravel(bad)[0]:.6g}")
        out = x - np.asarray(self.sf(k, x)) / f
        return _scalar_or_array(out, v)

    # -- validation -------------------------------------------------------

    def validation_grid(self, k: int, size: int = VALIDATION_GRID):
        lo, _ = self.support(k)
        return np.linspace(lo, self.upper(k), size)

    def normalization_error(self, k: int) -> float:
        lo, hi = self.support(k)
        if self.family == "tabulated":
            knots = self._tables[self._idx(k)][0]
        else:
            knots = np.array([lo, hi if math.isfinite(hi) else self.upper(k)])
        total = sum(
            integrate.quad(lambda t: float(self.pdf(k, t)), a, b, limit=200)[0]
            for a, b in zip(knots[:-1], knots[1:])
        )
        if not math.isfinite(hi):
            total += float(self.sf(k, knots[-1]))
        return total - 1.0

    def is_regular(self, k: int, size: int = VALIDATION_GRID):
        """(True, nan) if the virtual value is non-decreasing on the grid."""
        grid = self.validation_grid(k, size)
        phi = np.asarray(self.virtual_value(k, grid))
        drops = np.diff(phi) < -1e-9 * np.maximum(1.0, np.abs(phi[1:]))
        if np.any(drops):
            return False, float(grid[1:][drops][0])
        return True, math.nan


def _check_ladder(spec: DistributionSpec, ladder: PrivacyLadder):
    if spec.levels != ladder.levels:
        raise DomainError(f"spec has {spec.levels} levels, ladder has {ladder.levels}")


def privacy_virtual_value(spec: DistributionSpec, ladder: PrivacyLadder, k: int, v):
    """phi_k(v) - c_k: virtual value net of the user's privacy cost."""
    _check_ladder(spec, ladder)
    out = np.asarray(spec.virtual_value(k, v)) - ladder.cost(k)
    return _scalar_or_array(out, v)


def inv_privacy_virtual_value(
    spec: DistributionSpec, ladder: PrivacyLadder, k: int, x, clip: bool = False
):
    """Solve privacy_virtual_value(v) = x by bisection on the level-k support.

    With ``clip`` the target is first clamped into the attainable range, so a
    target below the range maps to the support minimum.
    """
    _check_ladder(spec, ladder)
    lo, hi = spec.support(k)[0], spec.upper(k)
    f_lo = privacy_virtual_value(spec, ladder, k, lo)
    f_hi = privacy_virtual_value(spec, ladder, k, hi)
    target = np.asarray(x, dtype=float)
    slack = 1e-12 * max(1.0, abs(f_lo), abs(f_hi))
    if clip:
        target = np.clip(target, f_lo, f_hi)
    elif np.any(target < f_lo - slack) or np.any(target > f_hi + slack):
        raise RangeError(
            f"level {k}: target outside [{f_lo:.6g}, {f_hi:.6g}], the range of the virtual value"
        )
    a = np.full(target.shape, lo)
    b = np.full(target.shape, hi)
    tol = 1e-13 * max(1.0, abs(lo), abs(hi))
    steps = min(MAX_BISECTION, max(1, math.ceil(math.log2(max(hi - lo, tol) / tol))))
    for _ in range(steps):
        mid = 0.5 * (a + b)
        below = np.asarray(privacy_virtual_value(spec, ladder, k, mid)) < target
        a = np.where(below, mid, a)
        b = np.where(below, b, mid)
    return _scalar_or_array(0.5 * (a + b), x)


@dataclass(frozen=True)
class HazardCheck:
    ordered: bool
    worst_gap: float  # min over grid/adjacent pairs of hazard(k) - hazard(k+1)
    level: int | None  # lower level of the worst pair


def check_hazard_order(spec: DistributionSpec, grid_size: int = VALIDATION_GRID) -> HazardCheck:
    """Check hazard(k, v) >= hazard(k+1, v) on a shared grid for adjacent levels."""
    if grid_size < 2:
        raise DomainError("grid_size must be >= 2")
    if spec.levels == 1:
        return HazardCheck(True, math.inf, None)
    lo = min(spec.support(k)[0] for k in range(1, spec.levels + 1))
    hi = max(spec.upper(k) for k in range(1, spec.levels + 1))
    grid = np.linspace(lo, hi, grid_size)
    worst, worst_level = math.inf, None
    ok = True
    for k in range(1, spec.levels):
        h1 = np.asarray(spec.hazard(k, grid))
        h2 = np.asarray(spec.hazard(k + 1, grid))
        live = np.isfinite(h2)
        if not np.any(live):
            continue
        gap = np.where(np.isfinite(h1[live]), h1[live] - h2[live], np.inf)
        tol = 1e-9 * np.maximum(1.0, h2[live])
        if np.any(gap < -tol):
            ok = False
        g = float(gap.min())
        if g < worst:
            worst, worst_level = g, k
    return HazardCheck(ok, worst, worst_level)


def sample_coupled(spec: DistributionSpec, u):
    """Comonotone values across levels from one uniform seed: shape (..., l)."""
    q = np.asarray(u, dtype=float)
    return np.stack([np.asarray(spec.inv_cdf(k, q)) for k in range(1, spec.levels + 1)], axis=-1)


def spec_from_dict(d: dict) -> DistributionSpec:
    """Build a spec from the config-file form, e.g.
    ``{"family": "uniform", "low": [0, 0], "high": [1, 2]}``."""
    fam = d.get("family")
    if fam == "uniform":
        high = list(d["high"])
        return DistributionSpec.uniform(high, d.get("low"))
    if fam == "exponential":
        return DistributionSpec.exponential(list(d["rate"]))
    if fam == "tabulated":
        return DistributionSpec.tabulated(list(zip(d["x"], d["cdf"])))
    raise DomainError(f"unknown family {fam!r}")
