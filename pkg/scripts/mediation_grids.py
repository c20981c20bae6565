"""Single-cell mediation grids for characters, objects and states.

Prints the cells that carry the information at any layer and writes the full
grids as CSV.

    python3 scripts/mediation_grids.py [--pairs 20] [--out mediation-out]
"""

import argparse
from pathlib import Path

from lookback.dataset import MEDIATION_KINDS, make_pairs
from lookback.intervene import mediation_grid
from lookback.io_utils import atomic_write_text
from lookback.toy_model import build_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--out", default="mediation-out")
    args = ap.parse_args()
    model = build_model()
    for kind in MEDIATION_KINDS:
        grid = mediation_grid(model, make_pairs(kind, args.pairs))
        atomic_write_text(Path(args.out) / f"{kind}.grid.csv", grid.to_csv())
        print(kind)
        for j, col in enumerate(grid.columns):
            layers = [l for i, l in enumerate(grid.layers) if grid.iia[i, j] > 0]
            if layers:
                print(f"  {col:18s} layers {layers[0]}-{layers[-1]}")


if __name__ == "__main__":
    main()
