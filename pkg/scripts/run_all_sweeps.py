"""Layer sweeps for every sweep kind at two and three triples.

Writes one CSV per kind plus a combined SVG per figure group, and prints the
layers with IIA 1.0 next to the scheduled window.

    python3 scripts/run_all_sweeps.py [--pairs 80] [--out sweeps-out]
"""

import argparse
from pathlib import Path

from lookback.dataset import CATALOG, SWEEP_KINDS, make_pairs
from lookback.intervene import IIAReport, layer_sweep
from lookback.plots import iia_svg, write_svg
from lookback.toy_model import build_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=80)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="sweeps-out")
    args = ap.parse_args()
    out = Path(args.out)
    model = build_model()
    by_figure: dict[str, dict] = {}
    report = IIAReport()
    for kind in SWEEP_KINDS:
        for n in (2, 3):
            rep = layer_sweep(model, make_pairs(kind, args.pairs, args.seed, n))
            rep.write_csv(out / f"{kind}@{n}.csv")
            report.extend(rep)
            curve = rep.curve(kind)
            on = [l for l, v in sorted(curve.items()) if v == 1.0]
            window = list(model.schedule.window(CATALOG[kind].window))
            print(f"{kind + '@' + str(n):28s} IIA=1 at {on}  scheduled {window}")
            by_figure.setdefault(CATALOG[kind].figure, {})[f"{kind}@{n}"] = curve
    report.write_csv(out / "all.csv")
    for fig, curves in by_figure.items():
        write_svg(out / f"{fig.replace('. ', '').lower()}.svg", iia_svg(curves, f"{fig}: IIA by layer"))


if __name__ == "__main__":
    main()
