"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error. Progress goes
to standard output as ``key=value`` lines; errors go to standard error.
"""

from __future__ import annotations

import argparse
import sys
from typing import Sequence

from . import config as C
from . import harness, selftest
from .errors import ConfigError, VFLError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vflsim", description="Vertical federated learning simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=False):
        sp.add_argument("--config", "-c", help="YAML experiment config (defaults apply when omitted)")
        sp.add_argument("--override", "-o", action="append", default=[], metavar="PATH=VALUE",
                        help="dotted-path override, e.g. dimip.lambda=0.5 (repeatable)")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", help="results directory (default: the config's output_dir)")
        sp.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
        if jobs:
            sp.add_argument("--jobs", "-j", type=int, default=1, help="concurrent runs (default 1)")

    common(sub.add_parser("gen-data", help="write the configured dataset(s) as CSV"))
    common(sub.add_parser("train", help="train, evaluate and attack"), jobs=True)
    sp = sub.add_parser("attack", help="attack a finished run's party-2 checkpoint")
    common(sp)
    sp.add_argument("--run", required=True, help="run directory produced by 'train'")
    sp = sub.add_parser("sweep", help="one run per value per seed")
    common(sp, jobs=True)
    sp.add_argument("--axis", required=True, help="dotted path of a scalar config field")
    sp.add_argument("--values", default="", help="comma-separated values (YAML scalars)")
    sp = sub.add_parser("report", help="summary tables and curve data from a results directory")
    sp.add_argument("results", help="results directory")
    sub.add_parser("selftest", help="run the built-in numerical and protocol checks")
    return p


def _resolve(args) -> C.ExperimentConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seeds=[{args.seed}]")
    return C.load(args.config, overrides)


def _say(line: str) -> None:
    print(line, flush=True)


def _values(text: str) -> list:
    return [C.parse_value(v.strip()) for v in text.split(",") if v.strip()]


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "selftest":
            checks = selftest.run_all()
            for c in checks:
                _say(f"check={c.name} status={'pass' if c.passed else 'fail'} {c.detail}")
            return EXIT_OK if all(c.passed for c in checks) else EXIT_RUNTIME
        if args.command == "report":
            rep = harness.report(args.results)
            for p in rep.problems:
                print(f"warning: {p}", file=sys.stderr)
            _say(f"event=report results={args.results} groups={len(rep.curves)} problems={len(rep.problems)}")
            return EXIT_OK

        cfg = _resolve(args)
        if args.command == "sweep":
            C.field_type(cfg, args.axis)  # validate the axis before any work
            values = _values(args.values)
        if args.dry_run:
            sys.stdout.write(C.dump(cfg))
            return EXIT_OK
        root = args.out or C.output_root(cfg)
        source = args.config or "<defaults>"
        if args.command == "gen-data":
            harness.gen_data(cfg, root, progress=_say)
        elif args.command == "train":
            res = harness.run(cfg, root=root, jobs=args.jobs, progress=_say, source=source)
            means = " ".join(f"{k}={v:.4f}" for k, v in res.mean.items() if k.startswith(("acc_", "attack:")))
            _say(f"event=train_done config_hash={res.config_hash} seeds={len(res.per_seed)} {means}")
        elif args.command == "attack":
            harness.attack_checkpoint(args.run, cfg.attacks, root, progress=_say)
        elif args.command == "sweep":
            rows = harness.sweep(cfg, args.axis, values, root=root, jobs=args.jobs, progress=_say, source=source)
            _say(f"event=sweep_done axis={args.axis} values={len(values)} rows={len(rows)}")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (VFLError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
