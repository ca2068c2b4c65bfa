"""Command-line entry point: ``qcmqam <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig
from .constellation import BUILTIN_FORMATS, energy_stats, get_format

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


def _load_config(arg: str | None) -> ExperimentConfig:
    if arg is None:
        raise ConfigError("--config is required")
    p = Path(arg)
    if not p.is_file() and (CONFIG_DIR / f"{arg}.yaml").is_file():
        p = CONFIG_DIR / f"{arg}.yaml"
    if not p.is_file():
        raise ConfigError(f"config {arg!r} not found")
    return ExperimentConfig.load(p)


def _override_seed(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    if seed is not None:
        cfg.seeds = [seed]
        cfg.seeds_by_format = {}
        cfg.validate()
    return cfg


def cmd_formats(args) -> int:
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["name", "points", "se_bits", "mean_energy", "energy_variance", "peak_to_mean_db"])
    for name in BUILTIN_FORMATS:
        c = get_format(name).normalize()
        st = energy_stats(c)
        w.writerow([name, len(c), c.bits_per_symbol, f"{st['mean']:.6g}",
                    f"{st['variance']:.6g}", f"{10 * math.log10(st['max'] / st['mean']):.4f}"])
    return 0


def cmd_psd(args) -> int:
    from .runner import run_psd

    cfg = _load_config(args.config)
    m = run_psd(cfg, args.out, seed=args.seed if args.seed is not None else 0)
    print("\n".join(m.outputs))
    return 0


def cmd_sweep(args) -> int:
    from .runner import run_sweep

    cfg = _override_seed(_load_config(args.config), args.seed)
    m = run_sweep(cfg, args.out, args.workers, args.resume)
    print(f"{len(m.runs)} runs, {m.computed} computed, {len(m.failed)} failed")
    print("\n".join(m.outputs))
    return 1 if m.failed else 0


def cmd_reach(args) -> int:
    from .runner import run_reach

    cfg = _override_seed(_load_config(args.config), args.seed)
    m = run_reach(cfg, args.out, args.workers, args.resume)
    print(f"{len(m.runs)} runs, {m.computed} computed, {len(m.failed)} failed")
    print("\n".join(m.outputs))
    return 1 if m.failed else 0


def cmd_dump(args) -> int:
    from .runner import dump_constellation

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.format}.txt"
    dump_constellation(args.format, path)
    print(path)
    return 0


def cmd_scatter(args) -> int:
    from .runner import run_scatter

    cfg = _load_config(args.config)
    if args.n_symbols:
        cfg.n_symbols = args.n_symbols
        cfg.validate()
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = Path(args.out or cfg.out_path())
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"scatter_{args.format}_{args.distance:g}km_{args.power:g}dBm.csv"
    summary = run_scatter(cfg, args.format, args.distance, args.power, seed, path)
    summary["path"] = str(path)
    print(json.dumps(summary, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qcmqam", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, workers=False):
        p.add_argument("--config", help="YAML config path or shipped config name")
        p.add_argument("--out", help="output directory (default: from config)")
        p.add_argument("--seed", type=int, help="single seed overriding the config")
        if workers:
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--resume", action="store_true",
                           help="skip runs already finished in the output directory")

    sub.add_parser("formats", help="list built-in formats").set_defaults(fn=cmd_formats)
    p = sub.add_parser("psd", help="power-fluctuation spectra and filter responses")
    common(p)
    p.set_defaults(fn=cmd_psd)
    p = sub.add_parser("sweep", help="launch-power sweep")
    common(p, workers=True)
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("reach", help="reach at the FEC threshold")
    common(p, workers=True)
    p.set_defaults(fn=cmd_reach)
    p = sub.add_parser("dump", help="write a constellation table")
    p.add_argument("format")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_dump)
    p = sub.add_parser("scatter", help="received-symbol scatter data of one operating point")
    common(p)
    p.add_argument("--format", required=True)
    p.add_argument("--distance", type=float, required=True, help="km (0 = back-to-back)")
    p.add_argument("--power", type=float, required=True, help="dBm per channel")
    p.add_argument("--n-symbols", type=int)
    p.set_defaults(fn=cmd_scatter)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
