"""Train DCM masks at both designed locations over a sweep of sparsity weights.

    python3 scripts/train_dcm.py [--epochs 8] [--out dcm-out]
"""

import argparse
from pathlib import Path

from lookback.dataset import make_pairs
from lookback.subspace import LOCATIONS, DCMConfig, collect_activations, fit_svd, masked_iia, save_mask, train_mask
from lookback.toy_model import build_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.01, 0.05, 0.1, 1000.0])
    ap.add_argument("--out", default="dcm-out")
    args = ap.parse_args()
    model = build_model()
    print(f"{'location':16s} {'lambda':>8s} {'rank':>9s} {'IIA':>6s} {'energy':>7s}")
    for name, loc in LOCATIONS.items():
        layer = loc.layer(model)
        basis = fit_svd(collect_activations(model, make_pairs(loc.kind, 250, 3), layer, loc.targets), center=True)
        train, val = make_pairs(loc.kind, 80, 1), make_pairs(loc.kind, 80, 2)
        truth = model.layout.basis(*loc.truth_fields)
        for lam in args.lambdas:
            res = train_mask(model, train, layer, loc.targets, basis, DCMConfig(lam=lam, epochs=args.epochs), name)
            res.heldout_iia = masked_iia(model, val, layer, loc.targets, res.projection())
            save_mask(res, Path(args.out) / f"{name}.lambda{lam:g}.mask.json")
            print(f"{name:16s} {lam:8g} {res.rank:4d}/{basis.V.shape[1]:<4d} {res.heldout_iia:6.3f} "
                  f"{res.energy_in(truth):7.3f}")


if __name__ == "__main__":
    main()
