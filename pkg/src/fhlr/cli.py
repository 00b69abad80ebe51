"""Command line entry points.

  fhlr synth  --spec spec.json --out DIR        generate a canonical dataset
  fhlr run    --config cfg.json                 run one experiment config
  fhlr preset NAME --config base.json --out DIR run a named experiment grid
  fhlr report --dir DIR                         render tables from report JSON
  fhlr serve  --store DIR [--data-root DIR]     start the annotation service

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fhlr",
                                     description="noisy-label learning lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--spec", required=True, help="SyntheticSpec JSON file")
    p_synth.add_argument("--out", required=True, help="output directory")

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True, help="ExperimentConfig JSON")

    p_preset = sub.add_parser("preset", help="run a named experiment preset")
    p_preset.add_argument("name", help="preset name")
    p_preset.add_argument("--config", required=True, help="base config JSON")
    p_preset.add_argument("--out", required=True, help="output directory")
    p_preset.add_argument("--methods", default=None,
                          help="comma list overriding the method roster")

    p_report = sub.add_parser("report", help="render report tables")
    p_report.add_argument("--dir", required=True, help="output dir of a run")

    p_serve = sub.add_parser("serve", help="start the annotation service")
    p_serve.add_argument("--store", required=True, help="session store dir")
    p_serve.add_argument("--data-root", default=None,
                         help="restrict dataset dirs to this root")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8871)
    return parser


def _cmd_synth(args) -> int:
    from .data import DatasetError, SyntheticSpec, make_synthetic, save_canonical
    try:
        with open(args.spec) as fh:
            spec = SyntheticSpec.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, DatasetError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    train, test = make_synthetic(spec)
    manifest = save_canonical(args.out, {"train": train, "test": test},
                              name="synthetic", sample_rate_hz=spec.window_length)
    print(json.dumps({"out": args.out,
                      "train": manifest["splits"]["train"]["count"],
                      "test": manifest["splits"]["test"]["count"]}))
    return EXIT_OK


def _cmd_run(args) -> int:
    from .runner import ConfigError, ExperimentConfig, run_pipeline
    try:
        cfg = ExperimentConfig.from_json(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = run_pipeline(cfg)
    print(json.dumps(report.to_dict(), indent=2))
    if report.failures and not report.accuracies:
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_preset(args) -> int:
    from .runner import (ConfigError, ExperimentConfig, PRESET_NAMES,
                         render_table, run_preset)
    try:
        if args.name not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {args.name!r}; "
                              f"choose from {', '.join(PRESET_NAMES)}")
        cfg = ExperimentConfig.from_json(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    methods = args.methods.split(",") if args.methods else None
    bundle = run_preset(args.name, cfg, args.out, methods=methods)
    print(render_table(bundle))
    failed = any(cell.get("failures")
                 for row in bundle["rows"]
                 for cell in row.values() if isinstance(cell, dict))
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_report(args) -> int:
    from .runner import ConfigError, report_dir
    try:
        print(report_dir(args.dir))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .service import serve
    serve(args.store, args.data_root, args.host, args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "synth": _cmd_synth,
        "run": _cmd_run,
        "preset": _cmd_preset,
        "report": _cmd_report,
        "serve": _cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        from .runner import ConfigError
        if isinstance(exc, ConfigError):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
