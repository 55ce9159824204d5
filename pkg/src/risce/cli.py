"""Command-line interface.

``risce run`` executes a Monte Carlo sweep and writes metrics.csv,
config.json and SVG figures; ``risce validate`` checks a config file and
prints the resolved configuration. Exit codes: 0 success, 2 configuration
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .errors import ConfigError
from .harness import ExperimentConfig, config_from_json, config_to_json, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _parse_sweep(text: str) -> tuple[float, ...]:
    """Parse a start:step:stop sweep (inclusive stop)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"sweep must be start:step:stop, got {text!r}")
    try:
        start, step, stop = (float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"non-numeric sweep {text!r}") from exc
    if step <= 0 or stop < start:
        raise ConfigError("sweep needs step > 0 and stop >= start")
    values = []
    v = start
    while v <= stop + 1e-9:
        values.append(round(v, 9))
        v += step
    return tuple(values)


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    return config_from_json(text)


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    updates = {}
    if getattr(args, "setup", None) is not None:
        updates["setups"] = (args.setup,)
    if getattr(args, "pt_sweep", None) is not None:
        updates["p_t_sweep_dbm"] = _parse_sweep(args.pt_sweep)
    if getattr(args, "trials", None) is not None:
        updates["n_trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        updates["output_dir"] = args.out
    return replace(cfg, **updates) if updates else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risce", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a Monte Carlo sweep and emit outputs")
    run_p.add_argument("--config", help="JSON experiment config")
    run_p.add_argument("--setup", type=int, choices=(1, 2, 3), help="restrict to one setup")
    run_p.add_argument("--pt-sweep", dest="pt_sweep", help="transmit power sweep start:step:stop (dBm)")
    run_p.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    run_p.add_argument("--seed", type=int, help="experiment seed")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--baseline", help="reference metrics.csv overlaid on figures")

    val_p = sub.add_parser("validate", help="check a config file and print the resolved config")
    val_p.add_argument("--config", help="JSON experiment config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(_load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(config_to_json(cfg))
        return EXIT_OK

    from .report import emit_outputs, preflight_output_dir

    try:
        preflight_output_dir(cfg.output_dir)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO

    try:
        report = run_experiment(cfg, emit=False, keep_trials=False)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        written = emit_outputs(report, baseline_csv=getattr(args, "baseline", None))
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        print(path)
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
