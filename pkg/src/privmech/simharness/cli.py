"""``privmech <mechanism> --config PATH`` entry point."""

import argparse
import sys

from privmech.errors import ConfigError, PrivmechError
from privmech.simharness.config import MECHANISMS, load_config

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="privmech", description="Run privacy-level mechanism experiments."
    )
    parser.add_argument("mechanism", choices=MECHANISMS)
    parser.add_argument("--config", required=True, help="JSON experiment file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--trials", type=int, help="override the trial count")
    parser.add_argument("--out", help="output directory (default: config 'output')")
    parser.add_argument("--workers", type=int, help="threads for Monte Carlo chunks")
    parser.add_argument(
        "--check", action="store_true", help="exit with status 3 if any property check fails"
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.trials, args.out, args.workers)
        if cfg.mechanism != args.mechanism:
            raise ConfigError(
                "mechanism", f"config is for {cfg.mechanism!r} but {args.mechanism!r} was requested"
            )
        # imported late: the runner pulls in scipy and every mechanism module
        from privmech.simharness.runner import run_experiment

        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrivmechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for r in report.records:
        print(f"{r.label:<28} {r.estimate:>14.6f}  ±{r.ci_halfwidth:.6f}  (n={r.trials})")
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<28} value={c.value:.6g} bound={c.bound:.6g}")
    print(f"wrote {cfg.output}/results.csv")
    if args.check and not report.ok:
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
