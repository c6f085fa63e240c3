"""Command line entry point.

    fedprune run      [--config FILE] [--key=value ...]
    fedprune baseline [--config FILE] [--key=value ...]
    fedprune sweep    [--config FILE] [--sparsities 0.1,0.3] [--methods weight]
                      [--patterns whole_column] [--key=value ...]
    fedprune report   RUN_OR_CSV [...] [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, RunConfig, config_from_mapping, load_config, parse_overrides, render_config
from .engine import resolve_threads, run_experiment
from .masks import encode_packed
from .metrics import write_metrics, write_report

log = logging.getLogger("fedprune")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def execute(config: RunConfig) -> Path:
    """Run one configuration and write its artefacts to ``config.output_dir``."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(render_config(config), encoding="utf-8")
    result = run_experiment(config)
    path = write_metrics(result.records, out / "metrics.csv")
    (out / "final_model.fppk").write_bytes(encode_packed(result.final))
    last = result.records[-1]
    log.info("%s: round %d accuracy %.4f zero-ratio %.4f", out, last.round, last.eval_accuracy, last.zero_param_ratio)
    return path


def _base_config(config_path, overrides) -> RunConfig:
    base = load_config(config_path) if config_path else RunConfig()
    return config_from_mapping(parse_overrides(overrides), base)


def _split_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def sweep_configs(base: RunConfig, sparsities, methods, patterns) -> list[RunConfig]:
    root = Path(base.output_dir)
    out = []
    for s, m, p in itertools.product(sparsities, methods, patterns):
        name = f"s{float(s):.2f}_{m}_{p}"
        changes = {"target_sparsity": str(s), "method": m, "pattern": p, "output_dir": str(root / name)}
        out.append(config_from_mapping(changes, base))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedprune", description="Federated structured pruning simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "execute a run configuration"), ("baseline", "dense federated averaging (sparsity 0)")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="configuration file")
    p = sub.add_parser("sweep", help="cartesian product over sparsities, methods and patterns")
    p.add_argument("--config", help="configuration file")
    p.add_argument("--sparsities", default="0.1,0.2,0.3,0.4,0.5")
    p.add_argument("--methods", default=None, help="defaults to the config's method")
    p.add_argument("--patterns", default=None, help="defaults to the config's pattern")
    p = sub.add_parser("report", help="summarise finished runs")
    p.add_argument("inputs", nargs="+", help="metrics CSV files or run directories")
    p.add_argument("--out", default=None, help="directory for report.txt / report.json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            if extra:
                raise ConfigError(f"unexpected arguments: {' '.join(extra)}")
            paths = [Path(p) / "metrics.csv" if Path(p).is_dir() else Path(p) for p in args.inputs]
            out_dir = args.out or paths[0].parent
            text, _ = write_report(paths, out_dir)
            print(text)
            return EXIT_OK
        config = _base_config(args.config, extra)
        if args.command == "baseline":
            config = config.replace(target_sparsity=0.0)
        if args.command in ("run", "baseline"):
            print(execute(config))
            return EXIT_OK
        configs = sweep_configs(
            config,
            [float(s) for s in _split_list(args.sparsities)],
            _split_list(args.methods) if args.methods else [config.method.value],
            _split_list(args.patterns) if args.patterns else [config.pattern.value],
        )
        workers = resolve_threads(config.threads or None)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                paths = list(pool.map(execute, configs))
        else:
            paths = [execute(c) for c in configs]
        text, _ = write_report(paths, config.output_dir)
        print(text)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
