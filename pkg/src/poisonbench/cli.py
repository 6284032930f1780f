"""Command line entry point: ``poisonbench run | sweep | theory | validate-config``.

Exit codes: 0 success, 1 a check or sweep cell failed, 2 bad configuration,
3 training diverged.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import apply_overrides, from_dict, read_mapping
from .core import ConfigError, DivergenceError, PoisonBenchError
from .data import IdxFormatError, PartitionError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _split_overrides(extra: list[str]) -> list[str]:
    overrides = []
    for item in extra:
        if not (item.startswith("--") and "=" in item and "." in item.split("=", 1)[0]):
            raise SystemExit(f"unrecognised argument {item!r}; overrides look like --section.key=value")
        overrides.append(item[2:])
    return overrides


def _load(path, extra):
    raw = read_mapping(path) if path else {}
    return from_dict(apply_overrides(raw, _split_overrides(extra)))


def cmd_run(args, extra) -> int:
    from .experiment import run_experiment

    cfg = _load(args.config, extra)
    out = run_experiment(cfg, args.output_dir)
    print(f"wrote {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_validate(args, extra) -> int:
    cfg = _load(args.config, extra)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args, extra) -> int:
    from .experiment import run_sweep

    spec = read_mapping(args.spec)
    spec["base"] = apply_overrides(spec.get("base", {}) or {}, _split_overrides(extra))
    out = args.output_dir or spec.get("output_dir") or "runs/sweep"
    summary, ok = run_sweep(spec, out, args.jobs)
    print(f"wrote {summary}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_theory(args, extra) -> int:
    from .suite import run_theory_suite

    if extra:
        raise SystemExit(f"unrecognised arguments {extra}")
    substitute = {}
    for item in args.substitute or []:
        kind, _, other = item.partition("=")
        if kind not in ("trimean", "cc", "faba") or other not in ("mean", "cc"):
            raise ConfigError(f"bad substitution {item!r}; use KIND=RULE with RULE in mean, cc", "substitute")
        substitute[kind] = other
    report = run_theory_suite(args.trials, args.seed, substitute)
    text = json.dumps(report, indent=2)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text + "\n")
    for check_id in report["checks_run"]:
        bad = [f for f in report["failed"] if f == check_id or f.startswith(check_id + "/")]
        print(f"{'FAIL' if bad else 'ok  '} {check_id}" + (f"  ({', '.join(bad)})" if bad else ""))
    return EXIT_OK if report["passed"] else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="poisonbench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment (extra --section.key=value flags override the config)")
    r.add_argument("config", nargs="?", help="YAML or JSON config, or a run manifest")
    r.add_argument("--output-dir", help="overrides output_dir from the config")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a grid of experiments")
    s.add_argument("spec", help="file with 'base' (a config) and 'grid' (dotted key -> list of values)")
    s.add_argument("--output-dir")
    s.add_argument("--jobs", type=int, default=1, help="cells run in parallel")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("theory", help="run the analytic self-checks and write a JSON report")
    t.add_argument("--output", help="report path")
    t.add_argument("--trials", type=int, default=1000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--substitute", action="append", metavar="KIND=RULE",
                   help="audit hook: replace an aggregator by another rule (mean or cc)")
    t.set_defaults(func=cmd_theory)

    v = sub.add_parser("validate-config", help="check a config and print it fully resolved")
    v.add_argument("config", nargs="?")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return args.func(args, extra)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PoisonBenchError, IdxFormatError, PartitionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
