"""JSON experiment configuration.

Schema (keys not listed are rejected)::

    {
      "mechanism": "optimal" | "dutch" | "prophet" | "market" | "audit",
      "trials": 100000,            # >= 1
      "seed": 7,                   # 0 <= seed < 2**64
      "output": "runs/optimal",    # optional, default "results"
      "workers": 1,                # optional
      "tolerances": {"z": 3.0, "gain": 1e-9, "identity": 0.01},   # optional
      "params": {...}              # mechanism specific, see below
    }

``params`` by mechanism:

- optimal: ``n``, ``distribution`` (family dict), ``costs``, optional ``epsilons``
- dutch: as optimal, plus optional ``levels`` (list of l values to sweep)
- prophet: ``n``, ``levels`` (list), ``reward`` (uniform ``low``/``high`` or
  exponential ``rate``), optional ``floor`` (bool)
- market: either ``instance`` (``searchers`` n x m and ``users`` m family
  dicts, optional ``epsilons``) or ``random`` (``count``, ``seed``, optional
  ``max_n``/``max_m``/``max_levels``); optional ``order`` ("fixed" or
  "uniform"), ``convention`` ("gross" or "net"), ``keep`` ("first" or
  "max_cost"); OPT is evaluated on the same draws as ALG
- audit: ``target`` ("optimal" or "market"), ``grid`` (>= 2), and the
  target's own params
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from privmech.dist_models import PrivacyLadder, spec_from_dict
from privmech.errors import ConfigError, PrivmechError
from privmech.marketplace import MarketInstance

MECHANISMS = ("optimal", "dutch", "prophet", "market", "audit")
TOP_KEYS = {"mechanism", "trials", "seed", "output", "workers", "tolerances", "params"}
DEFAULT_TOLERANCES = {"z": 3.0, "gain": 1e-9, "identity": 0.01}


@dataclass(frozen=True)
class ExperimentConfig:
    mechanism: str
    trials: int
    seed: int
    params: dict
    output: str = "results"
    workers: int = 1
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))

    def with_overrides(self, seed=None, trials=None, output=None, workers=None):
        cfg = {
            "mechanism": self.mechanism,
            "trials": self.trials if trials is None else trials,
            "seed": self.seed if seed is None else seed,
            "output": self.output if output is None else str(output),
            "workers": self.workers if workers is None else workers,
            "tolerances": self.tolerances,
            "params": self.params,
        }
        return parse_config(cfg)


def _require(d, key, path):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    if key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def _int(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(path, f"must be >= {lo}, got {value}")
    if hi is not None and value >= hi:
        raise ConfigError(path, f"must be < {hi}, got {value}")
    return value


def _choice(value, options, path):
    if value not in options:
        raise ConfigError(path, f"expected one of {', '.join(options)}; got {value!r}")
    return value


def _spec(d, path):
    try:
        return spec_from_dict(d)
    except (PrivmechError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def build_auction(params, path="params"):
    """(spec, ladder, n) for the single-sided auctions."""
    n = _int(_require(params, "n", path), f"{path}.n", lo=1)
    spec = _spec(_require(params, "distribution", path), f"{path}.distribution")
    costs = _require(params, "costs", path)
    try:
        if "epsilons" in params:
            ladder = PrivacyLadder(tuple(params["epsilons"]), tuple(costs))
        else:
            ladder = PrivacyLadder.even(costs)
    except (PrivmechError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}.costs", str(exc)) from exc
    if ladder.levels != spec.levels:
        raise ConfigError(
            f"{path}.costs", f"{ladder.levels} costs for {spec.levels} distribution levels"
        )
    return spec, ladder, n


def build_market(params, path="params"):
    inst = _require(params, "instance", path)
    p = f"{path}.instance"
    rows = _require(inst, "searchers", p)
    users = _require(inst, "users", p)
    if not isinstance(rows, list) or not isinstance(users, list):
        raise ConfigError(p, "searchers and users must be lists")
    searchers = tuple(
        tuple(_spec(d, f"{p}.searchers[{i}][{j}]") for j, d in enumerate(row))
        for i, row in enumerate(rows)
    )
    user_specs = tuple(_spec(d, f"{p}.users[{j}]") for j, d in enumerate(users))
    try:
        return MarketInstance(searchers, user_specs, tuple(inst.get("epsilons", ())))
    except PrivmechError as exc:
        raise ConfigError(p, str(exc)) from exc


def _check_params(mechanism, params, path="params"):
    if mechanism in ("optimal", "dutch"):
        spec, _, _ = build_auction(params, path)
        levels = params.get("levels", list(range(1, spec.levels + 1)))
        if mechanism == "dutch":
            if not isinstance(levels, list) or not levels:
                raise ConfigError(f"{path}.levels", "expected a non-empty list")
            for i, lv in enumerate(levels):
                _int(lv, f"{path}.levels[{i}]", lo=1, hi=spec.levels + 1)
    elif mechanism == "prophet":
        _int(_require(params, "n", path), f"{path}.n", lo=1)
        levels = _require(params, "levels", path)
        if not isinstance(levels, list) or not levels:
            raise ConfigError(f"{path}.levels", "expected a non-empty list")
        for i, lv in enumerate(levels):
            _int(lv, f"{path}.levels[{i}]", lo=1)
        reward = _require(params, "reward", path)
        fam = _choice(_require(reward, "family", f"{path}.reward"), ("uniform", "exponential"), f"{path}.reward.family")
        keys = ("low", "high") if fam == "uniform" else ("rate",)
        for key in keys:
            val = _require(reward, key, f"{path}.reward")
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path}.reward.{key}", f"expected a number, got {val!r}")
        if fam == "uniform" and not reward["low"] < reward["high"]:
            raise ConfigError(f"{path}.reward", "low must be below high")
        if fam == "exponential" and not reward["rate"] > 0:
            raise ConfigError(f"{path}.reward.rate", "must be positive")
    elif mechanism == "market":
        if "instance" in params:
            build_market(params, path)
        else:
            rnd = _require(params, "random", path)
            _int(_require(rnd, "count", f"{path}.random"), f"{path}.random.count", lo=1)
            _int(_require(rnd, "seed", f"{path}.random"), f"{path}.random.seed", lo=0, hi=2**64)
            for key in ("max_n", "max_m", "max_levels"):
                if key in rnd:
                    _int(rnd[key], f"{path}.random.{key}", lo=1, hi=5 if key != "max_levels" else 4)
        _choice(params.get("order", "fixed"), ("fixed", "uniform"), f"{path}.order")
        _choice(params.get("convention", "gross"), ("gross", "net"), f"{path}.convention")
        _choice(params.get("keep", "first"), ("first", "max_cost"), f"{path}.keep")
    elif mechanism == "audit":
        target = _choice(_require(params, "target", path), ("optimal", "market"), f"{path}.target")
        _int(_require(params, "grid", path), f"{path}.grid", lo=2)
        if target == "optimal":
            build_auction(params, path)
        else:
            build_market(params, path)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be a JSON object")
    extra = set(raw) - TOP_KEYS
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown field")
    mechanism = _choice(_require(raw, "mechanism", ""), MECHANISMS, "mechanism")
    trials = _int(_require(raw, "trials", ""), "trials", lo=1)
    seed = _int(_require(raw, "seed", ""), "seed", lo=0, hi=2**64)
    workers = _int(raw.get("workers", 1), "workers", lo=1)
    output = raw.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError("output", "expected a non-empty path string")
    tol = dict(DEFAULT_TOLERANCES)
    given = raw.get("tolerances", {})
    if not isinstance(given, dict):
        raise ConfigError("tolerances", "expected an object")
    for key, val in given.items():
        if key not in DEFAULT_TOLERANCES:
            raise ConfigError(f"tolerances.{key}", "unknown tolerance")
        if isinstance(val, bool) or not isinstance(val, (int, float)) or val < 0:
            raise ConfigError(f"tolerances.{key}", f"expected a non-negative number, got {val!r}")
        tol[key] = float(val)
    params = raw.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params", "expected an object")
    _check_params(mechanism, params)
    return ExperimentConfig(mechanism, trials, seed, params, output, workers, tol)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("", f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(raw)
