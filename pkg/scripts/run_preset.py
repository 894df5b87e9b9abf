#!/usr/bin/env python3
"""Run one of the named experiment presets end to end.

Usage:
    python scripts/run_preset.py fig2a [--out-dir results/fig2a] [--workers 2]

Sweep presets land in <out-dir>/sweep.csv + sweep_summary.csv, the
coefficient-map preset in coeff_map.csv; every run writes a manifest.
"""

import sys

from cradle.cli import main
from cradle.presets import PRESETS, load_preset


def run(argv):
    if not argv or argv[0] not in PRESETS:
        print(__doc__)
        print("presets:", ", ".join(sorted(PRESETS)))
        return 2
    name, rest = argv[0], argv[1:]
    _, meta = load_preset(name)
    command = "coeffs" if meta["kind"] == "coeffs" else "sweep"
    if "--out-dir" not in rest:
        rest = rest + ["--out-dir", f"results/{name}"]
    return main([command, "--preset", name] + rest)


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
