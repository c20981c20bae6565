"""Attention knockout profile and head-norm tables for the designed lookback heads.

    python3 scripts/knockout_and_heads.py [--pairs 80] [--seed 0]
"""

import argparse

from lookback.analysis import head_subspace_norms, knockout_profile, random_subspace
from lookback.dataset import make_pairs
from lookback.toy_model import build_model


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=80)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    model = build_model()
    lay, s = model.layout, model.schedule

    print("knockout: question/answer tokens cut off from the visibility sentences")
    for n in (2, 3):
        prof = knockout_profile(model, [p.original for p in make_pairs("knockout", args.pairs, seed=args.seed, n=n)])
        print(f"  N={n}: " + " ".join(f"{k}={v:.2f}" for k, v in prof.items()))

    print("\nhead norms (designed subspace vs a random 3-d subspace)")
    rand = random_subspace(lay.d, 3, seed=args.seed)
    for layer, fields, which in [(s.L_VIS_DEREF, ("CHAR_OI",), "Q"), (s.L_BIND, ("CHAR_OI", "OBJ_OI"), "Q"),
                                 (s.L_BIND, ("STATE_OI",), "V"), (s.L_ANS, ("STATE_OI",), "Q"),
                                 (s.L_ANS, ("ANSWER",), "V")]:
        designed = head_subspace_norms(model, layer, lay.basis(*fields), which)
        random = head_subspace_norms(model, layer, rand, which)
        print(f"  layer {layer:2d} W_{which} vs {'+'.join(fields)}")
        for h in designed:
            print(f"    {h:22s} {designed[h]:7.3f}   random {random[h]:6.3f}")


if __name__ == "__main__":
    main()
