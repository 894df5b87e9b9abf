"""Command-line experiment runner.

Subcommands:
  run       one simulation -> fidelity curve, optional Wigner grids, manifest
  sweep     all points of the [sweep] block -> long CSV + per-point summary
  coeffs    coefficient tables and long-time maps, no state propagation
  validate  static checks (cutoff rule, dt resolution, memory estimate)

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 partial sweep failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .coeffs import MemoryCapError, SolverBlowupError
from .config import ConfigError, ExperimentConfig, parse_config_file
from .dynamics import PropagationError
from .io import RunManifest, SchemaError
from .kernels import KernelError, NonEmbeddableKernelError, QuadratureError
from .presets import load_preset
from .runner import cmd_coeffs, cmd_run, cmd_sweep, cmd_validate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4

_NUMERICAL_ERRORS = (SolverBlowupError, PropagationError, QuadratureError,
                     NonEmbeddableKernelError, MemoryCapError,
                     FloatingPointError)


def _add_common(p, with_workers=True):
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--preset", help="named preset (fig2a, fig3a, fig4, "
                                    "fig5, fig6a, fig7)")
    p.add_argument("--from-manifest", dest="from_manifest",
                   help="replay the resolved config embedded in a manifest")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int, help="override the run seed")
    if with_workers:
        p.add_argument("--workers", type=int, default=1,
                       help="concurrent sweep points")


def _resolve(args):
    """(config, preset_name, preset_meta, reconstruction) from the flags."""
    sources = [s for s in (args.config, args.preset, args.from_manifest)
               if s is not None]
    if len(sources) != 1:
        raise ConfigError(
            "give exactly one of --config, --preset, --from-manifest"
        )
    meta = {}
    preset_name = None
    reconstruction = False
    if args.preset:
        cfg, meta = load_preset(args.preset)
        preset_name = args.preset
        reconstruction = True
    elif args.from_manifest:
        doc = RunManifest.load(args.from_manifest)
        cfg = ExperimentConfig.from_dict(doc["resolved_config"])
        preset_name = doc.get("preset")
        reconstruction = bool(doc.get("reconstruction", False))
    else:
        cfg = parse_config_file(args.config)
    if args.seed is not None:
        cfg.numerics.seed = args.seed
    if args.out_dir is not None:
        cfg.output.directory = args.out_dir
    return cfg, preset_name, meta, reconstruction


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cradle",
        description="cat-state transfer experiments in a lossy cavity array",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one simulation"),
                with_workers=False)
    _add_common(sub.add_parser("sweep", help="run a parameter sweep"))
    _add_common(sub.add_parser("coeffs", help="coefficient tables only"),
                with_workers=False)
    _add_common(sub.add_parser("validate", help="static config checks"),
                with_workers=False)
    args = parser.parse_args(argv)

    try:
        cfg, preset_name, meta, reconstruction = _resolve(args)
    except (ConfigError, SchemaError, KernelError, KeyError,
            FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = Path(cfg.output.directory)
    try:
        if args.command == "validate":
            report = cmd_validate(cfg)
            for check in report["checks"]:
                flag = "ok  " if check["ok"] else "WARN"
                print(f"[{flag}] {check['name']}: {check['detail']}")
            print("report:", "clean" if report["ok"] else "has warnings")
            return EXIT_OK
        if args.command == "run":
            manifest = cmd_run(cfg, out_dir, preset=preset_name,
                               reconstruction=reconstruction)
            print(f"wrote {len(manifest.outputs)} files to {out_dir}")
            return EXIT_OK
        if args.command == "coeffs":
            manifest = cmd_coeffs(cfg, out_dir, preset=preset_name,
                                  reconstruction=reconstruction,
                                  map_deltas=meta.get("map_deltas"),
                                  map_taus=meta.get("map_taus"))
            print(f"wrote {len(manifest.outputs)} files to {out_dir}")
            return EXIT_OK
        if args.command == "sweep":
            manifest = cmd_sweep(cfg, out_dir, workers=args.workers,
                                 preset=preset_name,
                                 reconstruction=reconstruction)
            print(f"wrote {len(manifest.outputs)} files to {out_dir}")
            if manifest.failures:
                for failure in manifest.failures:
                    print(f"point {failure['value']}: {failure['error']}",
                          file=sys.stderr)
                return EXIT_PARTIAL
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
