"""Monte Carlo estimates with normal-approximation confidence intervals."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from privmech.simharness.rng import CHUNK_SIZE, chunk_sizes, derive_substream

Z95 = 1.96


@dataclass(frozen=True)
class EstimateRecord:
    label: str
    estimate: float
    stderr: float
    ci_halfwidth: float
    trials: int
    seed: int | None = None

    def as_dict(self):
        return asdict(self)


@dataclass
class _Moments:
    count: int
    mean: float
    m2: float
    lo: float
    hi: float

    @classmethod
    def of(cls, x):
        x = np.asarray(x, dtype=float)
        mean = float(x.mean())
        return cls(x.size, mean, float(((x - mean) ** 2).sum()), float(x.min()), float(x.max()))

    def merge(self, other):
        # Chan et al. pairwise update; applied in chunk-index order only.
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return _Moments(n, mean, m2, min(self.lo, other.lo), max(self.hi, other.hi))


@dataclass(frozen=True)
class MCSummary:
    """Per-label estimates plus the observed min/max of each per-trial series."""

    records: dict
    minima: dict
    maxima: dict

    def __getitem__(self, label):
        return self.records[label]


def record_from_moments(label, mom, seed=None):
    var = mom.m2 / (mom.count - 1) if mom.count > 1 else 0.0
    se = float(np.sqrt(max(var, 0.0) / mom.count))
    return EstimateRecord(label, float(mom.mean), se, Z95 * se, mom.count, seed)


def run_mc(
    sampler: Callable[[np.random.Generator, int], dict],
    trials: int,
    seed: int,
    workers: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> MCSummary:
    """Evaluate ``sampler`` over ``trials`` draws split into seeded chunks.

    ``sampler(rng, size)`` returns a mapping of label -> per-trial array of
    length ``size``. Chunk ``i`` always receives ``derive_substream(seed, i)``
    and chunk summaries are merged in index order, so the result is
    bit-identical for any ``workers``.
    """
    sizes = chunk_sizes(trials, chunk_size)

    def one(i):
        out = sampler(derive_substream(seed, i), sizes[i])
        return {k: _Moments.of(v) for k, v in out.items()}

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(one, range(len(sizes))))
    else:
        parts = [one(i) for i in range(len(sizes))]

    total = parts[0]
    for part in parts[1:]:
        total = {k: total[k].merge(part[k]) for k in total}
    return MCSummary(
        records={k: record_from_moments(k, m, seed) for k, m in total.items()},
        minima={k: m.lo for k, m in total.items()},
        maxima={k: m.hi for k, m in total.items()},
    )


def ratio_record(label, num: EstimateRecord, den: EstimateRecord) -> EstimateRecord:
    """Ratio of two estimates with a conservative (non-paired) delta-method CI."""
    if den.estimate == 0:
        raise ZeroDivisionError(f"{label}: denominator estimate is zero")
    r = num.estimate / den.estimate
    half = (num.ci_halfwidth + abs(r) * den.ci_halfwidth) / abs(den.estimate)
    # exact oracle values carry trials == 0 and do not limit the count
    trials = min((t for t in (num.trials, den.trials) if t > 0), default=0)
    return EstimateRecord(label, r, half / Z95, half, trials, num.seed)
