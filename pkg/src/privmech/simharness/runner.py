"""Dispatch an :class:`ExperimentConfig` to its mechanism and persist results.

Artifacts written to ``config.output``:

- ``results.csv``: label, estimate, stderr, ci_halfwidth, trials, seed
- ``results.json``: config, records and property checks
- ``plotdata_<mechanism>.csv``: one x/y table per experiment

Files contain no timestamps and floats are written with ``repr``, so a rerun
with the same seed is byte-identical for any worker count.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from privmech.dutch_auction import (
    ProphetModel,
    design_dutch_auction,
    dutch_net_utility_mc,
    prophet_opt,
    prophet_thresholds,
    simulate_batched_prophet,
)
from privmech.marketplace import design_marketplace, random_instance, welfare_mc
from privmech.optimal_auction import expected_net_utility_mc, myerson_identity_mc
from privmech.oracles import brute_force_optimal_revenue, deviation_audit, optimal_welfare_batch
from privmech.simharness.config import ExperimentConfig, build_auction, build_market
from privmech.simharness.estimates import EstimateRecord, ratio_record
from privmech.simharness.rng import child_seed

RESULT_COLUMNS = ("label", "estimate", "stderr", "ci_halfwidth", "trials", "seed")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    bound: float


@dataclass
class Report:
    mechanism: str
    records: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    plots: dict = field(default_factory=dict)  # name -> (header, rows)

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def check(self, name, value, bound, passed):
        self.checks.append(Check(name, bool(passed), float(value), float(bound)))


def exact_record(label, value):
    return EstimateRecord(label, float(value), 0.0, 0.0, 0, None)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return "" if x is None else str(x)


def _optimal(cfg: ExperimentConfig, rep: Report):
    spec, ladder, n = build_auction(cfg.params)
    net, vw = myerson_identity_mc(spec, ladder, n, cfg.trials, cfg.seed, cfg.workers)
    opt = exact_record("opt_oracle", brute_force_optimal_revenue(spec, ladder, n))
    rep.records += [net, vw, opt]
    gap = abs(net.estimate - vw.estimate)
    bound = cfg.tolerances["identity"] * max(abs(net.estimate), abs(vw.estimate))
    rep.check("identity", gap, bound, gap <= bound)
    z = cfg.tolerances["z"]
    err = abs(net.estimate - opt.estimate)
    rep.check("oracle_agreement", err, z * net.stderr, err <= z * net.stderr)
    rows = []
    for lv in range(1, spec.levels + 1):
        s, lad = spec.truncated(lv), ladder.truncated(lv)
        r = expected_net_utility_mc(s, lad, n, cfg.trials, cfg.seed, cfg.workers)
        rows.append((lv, r.estimate, r.ci_halfwidth, brute_force_optimal_revenue(s, lad, n)))
    rep.plots["optimal"] = (("levels", "net_utility", "ci_halfwidth", "opt_oracle"), rows)


def _dutch(cfg: ExperimentConfig, rep: Report):
    spec, ladder, n = build_auction(cfg.params)
    levels = cfg.params.get("levels", list(range(1, spec.levels + 1)))
    z = cfg.tolerances["z"]
    rows, prev = [], None
    for lv in levels:
        s, lad = spec.truncated(lv), ladder.truncated(lv)
        design = design_dutch_auction(s, lad, n)
        net = dutch_net_utility_mc(s, design, n, cfg.trials, cfg.seed, cfg.workers)
        net = replace(net, label=f"net_utility[l={lv}]")
        opt = exact_record(f"opt_oracle[l={lv}]", brute_force_optimal_revenue(s, lad, n))
        ratio = ratio_record(f"ratio[l={lv}]", net, opt)
        rep.records += [net, opt, ratio]
        bound = 1 - math.exp(-lv)
        rep.check(f"ratio_bound[l={lv}]", ratio.estimate, bound - z * ratio.ci_halfwidth,
                  ratio.estimate >= bound - z * ratio.ci_halfwidth)
        if prev is not None:
            slack = z * (ratio.ci_halfwidth + prev.ci_halfwidth)
            rep.check(f"ratio_monotone[l={lv}]", ratio.estimate, prev.estimate - slack,
                      ratio.estimate >= prev.estimate - slack)
        prev = ratio
        rows.append((lv, net.estimate, net.ci_halfwidth, opt.estimate, ratio.estimate))
    rep.plots["dutch"] = (("levels", "estimate", "ci_halfwidth", "opt_estimate", "ratio"), rows)


def prophet_model(reward, n):
    if reward["family"] == "uniform":
        return ProphetModel.uniform(float(reward["low"]), float(reward["high"]), n)
    return ProphetModel.exponential(float(reward["rate"]), n)


def _prophet(cfg: ExperimentConfig, rep: Report):
    p = cfg.params
    n = p["n"]
    model = prophet_model(p["reward"], n)
    z = cfg.tolerances["z"]
    opt = prophet_opt(model, cfg.trials, cfg.seed, cfg.workers)
    rep.records.append(opt)
    rows = []
    for lv in p["levels"]:
        taus = prophet_thresholds(model, lv)
        th = taus.floored() if p.get("floor", False) else taus
        alg = simulate_batched_prophet(model, th, cfg.trials, cfg.seed, cfg.workers)
        alg = replace(alg, label=f"reward[l={lv}]")
        ratio = ratio_record(f"ratio[l={lv}]", alg, opt)
        rep.records += [alg, ratio]
        bound = 1 - math.exp(-lv)
        rep.check(f"prophet_bound[l={lv}]", ratio.estimate, bound - z * ratio.ci_halfwidth,
                  ratio.estimate >= bound - z * ratio.ci_halfwidth)
        rows.append((lv, alg.estimate, alg.ci_halfwidth, opt.estimate, ratio.estimate))
    rep.plots["prophet"] = (("levels", "estimate", "ci_halfwidth", "opt_estimate", "ratio"), rows)


def market_instances(params):
    if "instance" in params:
        return [build_market(params)]
    rnd = params["random"]
    rng = np.random.default_rng(rnd["seed"])
    bounds = {k: rnd[k] for k in ("max_n", "max_m", "max_levels") if k in rnd}
    return [random_instance(rng, **bounds) for _ in range(rnd["count"])]


def _market(cfg: ExperimentConfig, rep: Report):
    p = cfg.params
    z = cfg.tolerances["z"]
    convention = p.get("convention", "gross")
    rows = []
    for idx, inst in enumerate(market_instances(p)):
        seed = child_seed(cfg.seed, idx) if "random" in p else cfg.seed
        book = design_marketplace(inst)
        est = welfare_mc(
            inst, cfg.trials, seed,
            order_policy=p.get("order", "fixed"),
            book=book,
            convention=convention,
            keep_policy=p.get("keep", "first"),
            extra=lambda v, c: {"OPT": optimal_welfare_batch(v, c, convention)},
            workers=cfg.workers,
        )
        opt = est.extra["OPT"]
        tag = f"[{idx}]"
        ratio = ratio_record("ratio" + tag, est.alg, opt)
        rep.records += [replace(est.alg, label="ALG" + tag), replace(est.alg_s, label="ALG_S" + tag),
                        replace(est.alg_u, label="ALG_U" + tag), replace(opt, label="OPT" + tag), ratio]
        slack = z * (est.alg.ci_halfwidth + opt.ci_halfwidth / 6)
        rep.check("sixth" + tag, est.alg.estimate, opt.estimate / 6 - slack,
                  est.alg.estimate >= opt.estimate / 6 - slack)
        rep.check("budget_balance" + tag, est.max_bb_gap, 0.0, est.max_bb_gap == 0.0)
        rep.check("ex_post_ir" + tag, est.ir_violations, 0, est.ir_violations == 0)
        for j, shelf in est.shelf.items():
            rep.records.append(replace(shelf, label=f"shelf_{j}{tag}"))
            rep.check(f"thinning{tag}[{j}]", shelf.estimate, 0.5,
                      abs(shelf.estimate - 0.5) <= z * math.sqrt(0.25 / shelf.trials))
            above = est.above_price[j]
            rep.check(f"markov{tag}[{j}]", above.estimate, 0.5,
                      above.estimate <= 0.5 + z * above.stderr)
        rows.append((idx, est.alg.estimate, est.alg_s.estimate, est.alg_u.estimate,
                     opt.estimate, ratio.estimate))
    rep.plots["market"] = (("trial", "ALG", "ALG_S", "ALG_U", "OPT", "ratio"), rows)


def _audit(cfg: ExperimentConfig, rep: Report):
    p = cfg.params
    if p["target"] == "optimal":
        report = deviation_audit("optimal", build_auction(p), p["grid"], cfg.trials, cfg.seed, cfg.workers)
    else:
        report = deviation_audit("market", build_market(p), p["grid"], cfg.trials, cfg.seed, cfg.workers)
    tol = cfg.tolerances["gain"]
    rows = []
    for role, gain in sorted(report.gains.items()):
        rep.records.append(EstimateRecord(f"max_gain[{role}]", float(gain), 0.0, 0.0, cfg.trials, cfg.seed))
        rep.check(f"dsic[{role}]", gain, tol, gain <= tol)
        rows.append((role, float(gain), tol))
    rep.plots["audit"] = (("role", "max_gain", "tolerance"), rows)


DISPATCH = {
    "optimal": _optimal,
    "dutch": _dutch,
    "prophet": _prophet,
    "market": _market,
    "audit": _audit,
}


def write_artifacts(cfg: ExperimentConfig, rep: Report, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rep.records:
            w.writerow([_fmt(v) for v in asdict(r).values()])
    for name, (header, rows) in rep.plots.items():
        with open(out / f"plotdata_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[_fmt(v) for v in row] for row in rows])
    payload = {
        "mechanism": cfg.mechanism,
        "trials": cfg.trials,
        "seed": cfg.seed,
        "params": cfg.params,
        "tolerances": cfg.tolerances,
        "records": [r.as_dict() for r in rep.records],
        "checks": [asdict(c) for c in rep.checks],
        "ok": rep.ok,
    }
    (out / "results.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, write=True) -> Report:
    rep = Report(cfg.mechanism)
    DISPATCH[cfg.mechanism](cfg, rep)
    if write:
        write_artifacts(cfg, rep, Path(cfg.output))
    return rep
