"""Command line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .benchmark import benchmark, knowledge_grid, noise_sweep, write_rows
from .dataset import EXPERIMENTS, NoiseSpec, generate_benchmark, write_benchmark
from .pipeline import KnowledgeConfig, PipelineConfig, load_config_file, run_pipeline

log = logging.getLogger("eqdetect")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of numbers, got {text!r}") from None


def _cmd_fit(args) -> int:
    cfg = PipelineConfig.from_dict(load_config_file(args.config)) if args.config else PipelineConfig()
    kn = KnowledgeConfig.from_dict(load_config_file(args.knowledge)) if args.knowledge else None
    report = run_pipeline(args.data, cfg, kn)
    report.write(args.out, include_timing=args.timing)
    print(report.equation or "no equation")
    if not report.complete:
        log.error("run failed: %s", report.error)
        return 1
    return 0


def _cmd_generate(args) -> int:
    key = args.experiment.upper()
    exp = EXPERIMENTS[key]
    noise = NoiseSpec("target", exp.noise_level, rng_seed=args.seed)
    if args.noise_level is not None:
        noise = NoiseSpec(args.noise_mode, args.noise_level, rng_seed=args.seed)
    data = generate_benchmark(key, args.samples or exp.default_samples, args.seed, noise=noise)
    write_benchmark(data, args.out, experiment=key, seed=args.seed, noise=noise,
                    group_ranges=exp.group_ranges)
    return 0


def _cmd_benchmark(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    key = args.experiment.upper()
    if key == "F":
        configs = None if args.all_configs else [(0,) * 5, (1,) * 5]
        rows = knowledge_grid(repeats=args.repeats, seed=args.seed, configs=configs)
        write_rows(rows, out / "knowledge_grid.csv")
        for r in rows:
            print(f"{r['config']}  success={r['success_rate']:.2f}  time={r['normalized_time']:.2f}")
        return 0
    res = benchmark(key, seed=args.seed, repeats=args.repeats, n_samples=args.samples)
    write_rows([res.row], out / f"benchmark_{key}.csv")
    for i, rep in enumerate(res.reports):
        rep.write(out / f"report_{key}_{i}.json")
    print(json.dumps(res.row, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    rows = noise_sweep(args.experiment, args.levels, tuple(args.modes), repeats=args.repeats,
                       seed=args.seed)
    write_rows(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eqdetect", description="Equation discovery from tabular data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="run the pipeline on a CSV file")
    f.add_argument("--data", required=True)
    f.add_argument("--config", help="TOML or JSON pipeline settings")
    f.add_argument("--knowledge", help="TOML or JSON domain knowledge")
    f.add_argument("--out", required=True, help="report JSON path")
    f.add_argument("--timing", action="store_true", help="include wall-clock timings in the report")
    f.set_defaults(func=_cmd_fit)

    g = sub.add_parser("generate", help="write a benchmark dataset")
    g.add_argument("--experiment", required=True, choices=list("ABCDE") + list("abcde"))
    g.add_argument("--samples", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-mode", choices=("target", "input", "both"), default="target")
    g.add_argument("--noise-level", type=float, help="override the experiment's noise level")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    b = sub.add_parser("benchmark", help="desk-scale benchmark of one experiment")
    b.add_argument("--experiment", required=True, choices=list("ABCDEF") + list("abcdef"))
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--samples", type=int)
    b.add_argument("--all-configs", action="store_true",
                   help="experiment F: run all 32 junction patterns")
    b.add_argument("--out", required=True, help="output directory")
    b.set_defaults(func=_cmd_benchmark)

    s = sub.add_parser("noise-sweep", help="success rate against noise level")
    s.add_argument("--experiment", required=True, choices=("A", "C", "a", "c"))
    s.add_argument("--levels", type=_floats, required=True, help="e.g. '0,0.05,0.1'")
    s.add_argument("--modes", nargs="+", default=["input", "target", "both"],
                   choices=("input", "target", "both"))
    s.add_argument("--repeats", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV path")
    s.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
