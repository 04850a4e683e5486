"""Command-line entry point.

Exit codes: 0 success, 1 runtime error, 2 configuration or usage error,
3 more trials failed than ``sweep.failure_threshold`` allows.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import AGG_HEADER, _agg_sort_key, derive_seed, run_ber_sweep, run_characterization, run_spatial_demo
from .config import ConfigError, ExperimentConfig, load_config, parse_config, schema_help
from .containers import (
    ContainerError,
    read_channel,
    read_eigensystem,
    read_symbols,
    write_eigensystem,
    write_impulse,
    write_symbols,
    export_kernel_csv,
)
from .decompose import EmptySelectionError, hogmt_decompose, select_eigen, verify_duality
from .kernels import impulse_to_kernel, synth_channel
from .modem import Constellation, modulate
from .precoder import precode

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_FAILURES = 0, 1, 2, 3
DECADES = [10.0**-d for d in range(1, 9)]


def _emit(records: list[dict], fmt: str, out=None) -> None:
    out = out or sys.stdout
    if fmt == "json":
        out.write(json.dumps(records if len(records) != 1 else records[0], indent=2, sort_keys=True) + "\n")
        return
    if not records:
        return
    w = csv.DictWriter(out, fieldnames=list(records[0]), lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    overrides = {}
    if args.seed is not None:
        overrides["seed.master"] = str(args.seed)
    if args.out is not None:
        overrides["output.dir"] = str(args.out)
    return cfg.replace(**overrides) if overrides else cfg


def _kernel_from_file(path) -> np.ndarray:
    kind, arr = read_channel(path)
    return impulse_to_kernel(arr) if kind == "impulse" else arr


def cmd_synth(args, cfg: ExperimentConfig) -> int:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    h = synth_channel(cfg.channel)
    write_impulse(out / "channel.hgmt", h.values)
    c = Constellation.of(cfg.modulations[0])
    U, T = cfg.channel.num_users, cfg.channel.num_time
    rng = np.random.default_rng(derive_seed(cfg.master_seed, 2, 0, 0))
    bits = rng.integers(0, 2, U * T * c.bits_per_symbol)
    write_symbols(out / "symbols.hgsy", modulate(bits, c, (U, T)))
    rec = {
        "channel_file": str(out / "channel.hgmt"),
        "symbols_file": str(out / "symbols.hgsy"),
        "num_users": U,
        "num_time": T,
        "tap_count_max": cfg.channel.tap_count_max,
        "seed": cfg.master_seed,
    }
    if args.kernel_csv:
        rec["kernel_csv_rows"] = export_kernel_csv(out / "kernel.csv", impulse_to_kernel(h))
    _emit([rec], args.format)
    return EXIT_OK


def cmd_decompose(args, cfg: ExperimentConfig) -> int:
    k = _kernel_from_file(args.kernel)
    es = hogmt_decompose(k)
    dest = Path(args.eigen_out) if args.eigen_out else cfg.output_dir / "eigen.hges"
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_eigensystem(dest, es)
    rel = es.sigma / es.sigma[0] if len(es) and es.sigma[0] > 0 else es.sigma
    _emit([{"epsilon": e, "count_above": int(np.sum(rel > e))} for e in DECADES], args.format)
    return EXIT_OK


def cmd_precode(args, cfg: ExperimentConfig) -> int:
    es = read_eigensystem(args.eigen)
    s = read_symbols(args.symbols)
    if args.epsilon is not None:
        es = select_eigen(es, args.epsilon, args.epsilon_mode)
    else:
        es = es.take(np.flatnonzero(es.sigma > 0))
    x, rep = precode(es, s)
    dest = Path(args.precoded_out) if args.precoded_out else cfg.output_dir / "precoded.hgsy"
    dest.parent.mkdir(parents=True, exist_ok=True)
    write_symbols(dest, x.values)
    _emit([{"kept_n": rep.kept_n, "residual": rep.residual, "tx_power": rep.tx_power}], args.format)
    return EXIT_OK


def cmd_duality(args, cfg: ExperimentConfig) -> int:
    k = _kernel_from_file(args.kernel)
    es = read_eigensystem(args.eigen) if args.eigen else hogmt_decompose(k)
    res = verify_duality(k, es)
    mask = es.sigma > args.floor * es.sigma[0]
    rec = {
        "triples": len(es),
        "checked": int(mask.sum()),
        "floor": args.floor,
        "max_residual": float(res[mask].max()) if mask.any() else 0.0,
        "sigma_max": float(es.sigma[0]),
        "sigma_min_checked": float(es.sigma[mask].min()) if mask.any() else 0.0,
    }
    _emit([rec], args.format)
    return EXIT_OK


def _sweep_cmd(runner, args, cfg: ExperimentConfig) -> int:
    res = runner(cfg, cfg.output_dir, args.workers)
    records = []
    for key in sorted(res.aggregate, key=_agg_sort_key):
        vals = res.aggregate[key]
        row = dict(zip(AGG_HEADER, (*key, *vals)))
        row["epsilon"] = "" if row["epsilon"] is None else row["epsilon"]
        records.append(row)
    _emit(records, args.format)
    frac = res.failure_fraction
    if frac > cfg.failure_threshold:
        print(
            f"error: {len(res.failures)} of {res.total_items} items failed "
            f"({frac:.2%} > {cfg.failure_threshold:.2%}); see failures.csv",
            file=sys.stderr,
        )
        return EXIT_FAILURES
    return EXIT_OK


def cmd_ber_sweep(args, cfg):
    return _sweep_cmd(run_ber_sweep, args, cfg)


def cmd_spatial_demo(args, cfg):
    return _sweep_cmd(run_spatial_demo, args, cfg)


def cmd_characterize(args, cfg: ExperimentConfig) -> int:
    summary = run_characterization(cfg, cfg.output_dir)
    if args.format == "json":
        _emit([summary], "json")
    else:
        flat = []
        for key, val in summary.items():
            if isinstance(val, dict):
                flat.extend({"key": f"{key}.{k}", "value": v} for k, v in val.items())
            elif isinstance(val, list):
                flat.append({"key": key, "value": " ".join(repr(x) for x in val)})
            else:
                flat.append({"key": key, "value": val})
        _emit(flat, "csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    epilog = "configuration keys (--config file, one 'key = value' per line):\n" + schema_help()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration file")
    common.add_argument("--seed", type=int, help="override seed.master")
    common.add_argument("--out", help="override output.dir")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="stdout format")

    p = argparse.ArgumentParser(
        prog="hogmt",
        description="Channel decomposition, eigen-domain precoding and BER benchmarks.",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_):
        sp = sub.add_parser(
            name, parents=[common], help=help_, description=help_, epilog=epilog,
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        sp.set_defaults(func=func)
        return sp

    sp = add("synth", cmd_synth, "draw a channel realization and a random symbol grid")
    sp.add_argument("--kernel-csv", action="store_true", help="also write kernel.csv (lossy)")

    sp = add("decompose", cmd_decompose, "decompose a channel file; print the sigma spectrum by decade")
    sp.add_argument("--kernel", required=True, help="HGMT channel file")
    sp.add_argument("--eigen-out", help="eigen file to write (default <out>/eigen.hges)")

    sp = add("precode", cmd_precode, "precode a symbol grid with an eigen system")
    sp.add_argument("--eigen", required=True, help="HGES eigen file")
    sp.add_argument("--symbols", required=True, help="HGSY symbol file")
    sp.add_argument("--epsilon", type=float, help="selection threshold (default: keep all sigma > 0)")
    sp.add_argument("--epsilon-mode", choices=("relative", "absolute"), default="relative")
    sp.add_argument("--precoded-out", help="output file (default <out>/precoded.hgsy)")

    add("characterize", cmd_characterize, "ensemble statistics, eigen-based and direct")

    for name, func, help_ in (
        ("ber-sweep", cmd_ber_sweep, "space-time BER sweep"),
        ("spatial-demo", cmd_spatial_demo, "spatial-only BER sweep (one time instance)"),
    ):
        sp = add(name, func, help_)
        sp.add_argument("--workers", type=int, help="override sweep.workers")

    sp = add("duality-report", cmd_duality, "check the duality residuals of a decomposition")
    sp.add_argument("--kernel", required=True, help="HGMT channel file")
    sp.add_argument("--eigen", help="HGES eigen file (default: decompose the kernel)")
    sp.add_argument("--floor", type=float, default=1e-8, help="check triples with sigma > floor * sigma_1")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        if getattr(args, "workers", None) is not None and args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContainerError, EmptySelectionError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
