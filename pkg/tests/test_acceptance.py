"""Acceptance criteria 1-11, one test each; every test records a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import pytest
import torch

from conftest import CRITERIA
from lookback import dataset as ds
from lookback.analysis import argmax_head, head_subspace_norms, knockout_profile
from lookback.causal_model import UNKNOWN, enumerate_truth_table, run_causal_model, skeleton_story
from lookback.intervene import PatchSpec, apply_patch, layer_sweep, mediation_grid
from lookback.subspace import (LOCATIONS, DCMConfig, MaskObjective, collect_activations, fit_svd, gradient_check,
                               masked_iia, projection_from_mask, train_mask)
from lookback.toy_model import forward, predict, saturation
from lookback.vocab import DEFAULT_VOCAB as V

N_PAIRS = 80
SIZES = (2, 3)


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    CRITERIA.append(line)
    print(line)
    assert ok, line


_sweeps: dict = {}


def sweep(model, kind, n):
    if (kind, n) not in _sweeps:
        pairs = ds.make_pairs(kind, N_PAIRS, n=n)
        _sweeps[kind, n] = (pairs, layer_sweep(model, pairs))
    return _sweeps[kind, n]


def curve(model, kind, n):
    return sweep(model, kind, n)[1].curve(kind)


def window_errors(model, kind, inside, outside=None):
    """Layers whose IIA is not 1.0 inside the window or not 0.0 at ``outside`` layers."""
    bad = []
    L = model.n_layers
    outside = [l for l in range(L + 1) if l not in inside] if outside is None else outside
    for n in SIZES:
        c = curve(model, kind, n)
        bad += [f"{kind}@{n} layer {l}={c[l]:.2f}" for l in inside if c[l] != 1.0]
        bad += [f"{kind}@{n} layer {l}={c[l]:.2f}" for l in outside if c[l] != 0.0]
    return bad


def sched(model, a, b):
    return list(model.schedule.window((a, b)))


# ---------------------------------------------------------------- 1, 2


def test_criterion_1_oracle_equivalence():
    total = wrong = 0
    for n in SIZES:
        chars, objs, states = V.characters[:n], V.objects[:n], V.states[:n]
        for mode in ("none", "full", "all"):
            for sk, slot in enumerate_truth_table(n, mode):
                want = UNKNOWN if slot is None else states[slot]
                total += 1
                wrong += run_causal_model(skeleton_story(sk, chars, objs, states))[0] != want
    record(1, "causal model matches the truth table", wrong == 0, f"{total - wrong}/{total} configurations")


def test_criterion_2_behavioral_equivalence(model):
    stats = []
    ok = True
    for n in SIZES:
        for vis in ("none", "explicit"):
            samples = [ds.sample_story(seed, n, vis) for seed in range(500)]
            hits = sum(a == s.gold for a, s in zip(predict(model, [s.tokens for s in samples]), samples))
            ok &= hits == len(samples)
            stats.append(f"N={n} {vis}: {hits}/500")
    record(2, "toy model matches the causal model", ok, "; ".join(stats))


# ---------------------------------------------------------------- 3-6: layer windows


def test_criterion_3_answer_lookback(model):
    s = model.schedule
    L = model.n_layers
    bad = window_errors(model, "answer-payload", range(s.L_ANS, L + 1), range(0, s.L_BIND))
    bad += window_errors(model, "answer-pointer", sched(model, "L_BIND", "L_ANS"))
    neither = total = 0
    for n in SIZES:
        pairs, rep = sweep(model, "answer-pointer", n)
        for (_, l, _), outs in rep.outputs.items():
            for out, p in zip(outs, pairs):
                if out == p.expected:
                    total += 1
                    neither += out not in (p.original.gold, p.counterfactual.gold)
    ok = not bad and neither == total > 0
    record(3, "answer lookback windows", ok,
           f"pointer [{s.L_BIND},{s.L_ANS}), payload [{s.L_ANS},{L}]; novel token in {neither}/{total} matches"
           + (f"; {bad}" if bad else ""))


def test_criterion_4_binding_lookback(model):
    # the address+payload swap stays aligned until the answer lookback has read
    # the state tokens, so layers in [L_BIND, L_ANS) are left unconstrained
    s = model.schedule
    bad = window_errors(model, "binding-addr-payload", sched(model, "L_ADDR", "L_BIND"),
                        list(range(0, s.L_ADDR)) + list(range(s.L_ANS, model.n_layers + 1)))
    bad += window_errors(model, "binding-source-frozen", sched(model, "L_OI", "L_ADDR"))
    bad += window_errors(model, "binding-source-unfrozen", [])
    extra = [l for l in range(s.L_BIND, s.L_ANS) if curve(model, "binding-addr-payload", 2)[l] == 1.0]
    record(4, "binding lookback windows", not bad,
           f"addr+payload [{s.L_ADDR},{s.L_BIND}) (also 1.0 at {extra}), frozen source [{s.L_OI},{s.L_ADDR}), "
           f"unfrozen 0 everywhere" + (f"; {bad}" if bad else ""))


def test_criterion_5_oi_localization(model):
    bad = []
    for kind, win in (("char-oi", ("L_OI", "L_ADDR")), ("obj-oi", ("L_OI", "L_ADDR")),
                      ("query-char-oi", ("L_ADDR", "L_QPTR")), ("query-obj-oi", ("L_ADDR", "L_QPTR"))):
        assert ds.CATALOG[kind].window == win
        bad += window_errors(model, kind, sched(model, *win))
    s = model.schedule
    record(5, "ordering-ID localization", not bad,
           f"story OIs [{s.L_OI},{s.L_ADDR}), query OIs [{s.L_ADDR},{s.L_QPTR})" + (f"; {bad}" if bad else ""))


def test_criterion_6_visibility(model):
    s = model.schedule
    L = model.n_layers
    bad = window_errors(model, "vis-source", sched(model, "L_VIS_SRC", "L_VIS_DEREF"))
    bad += window_errors(model, "vis-payload", range(s.L_VIS_DEREF, L + 1))
    bad += window_errors(model, "vis-addr-pointer", range(s.L_VIS_SRC, L + 1))
    record(6, "visibility lookback three-pattern", not bad,
           f"source [{s.L_VIS_SRC},{s.L_VIS_DEREF}), payload [{s.L_VIS_DEREF},{L}], both [{s.L_VIS_SRC},{L}]"
           + (f"; {bad}" if bad else ""))


# ---------------------------------------------------------------- 7: DCM


def test_criterion_7_dcm_recovery(model):
    cfg = DCMConfig(lam=0.05, epochs=8, seed=0)
    details, ok = [], True
    for name in ("answer-pointer", "binding-payload"):
        loc = LOCATIONS[name]
        layer = loc.layer(model)
        pool = ds.make_pairs(loc.kind, 250, seed=3)          # 500 stories for the basis
        train = ds.make_pairs(loc.kind, 80, seed=1)
        val = ds.make_pairs(loc.kind, 80, seed=2)
        basis = fit_svd(collect_activations(model, pool, layer, loc.targets), center=True)
        res = train_mask(model, train, layer, loc.targets, basis, cfg, name)
        iia = masked_iia(model, val, layer, loc.targets, res.projection())
        truth = model.layout.basis(*loc.truth_fields)
        energy = res.energy_in(truth)
        obj = MaskObjective(model, train[:4], layer, loc.targets, basis.V, cfg.lam)
        g, fd = gradient_check(obj, torch.full((basis.V.shape[1],), 0.72, dtype=torch.float64))
        rel = float((g - fd).norm() / g.norm())
        ok &= iia >= 0.95 and 1 <= res.rank <= truth.shape[1] + 2 and energy >= 0.9 and rel <= 1e-4
        details.append(f"{name}: rank {res.rank}/{basis.V.shape[1]}, held-out IIA {iia:.3f}, "
                       f"energy {energy:.3f}, grad rel err {rel:.1e}")
    record(7, "DCM recovers the designed subspaces", ok, "; ".join(details))


# ---------------------------------------------------------------- 8, 9


def test_criterion_8_knockout(model):
    samples = [p.original for p in ds.make_pairs("knockout", N_PAIRS)]
    samples += [p.original for p in ds.make_pairs("knockout", N_PAIRS // 2, n=3)]
    prof = knockout_profile(model, samples)
    deref = model.schedule.L_VIS_DEREF
    restoring = [k for k, v in prof.items() if k.startswith("only-") and v == 1.0]
    ok = prof["intact"] == 1.0 and prof["all-blocked"] == 0.0 and restoring == [f"only-{deref}"]
    record(8, "attention knockout", ok,
           f"intact {prof['intact']:.2f}, all blocked {prof['all-blocked']:.2f}, restoring {restoring}")


def test_criterion_9_head_norms(model):
    lay, s = model.layout, model.schedule
    probes = [("binding", s.L_BIND, ("CHAR_OI", "OBJ_OI"), "Q"), ("answer", s.L_ANS, ("STATE_OI",), "Q"),
              ("answer", s.L_ANS, ("ANSWER",), "V")]
    found = []
    for want, layer, fields, which in probes:
        top = argmax_head(head_subspace_norms(model, layer, lay.basis(*fields), which))
        found.append((want, top, f"L{layer} W_{which}·{'+'.join(fields)} -> {top}"))
    record(9, "head-norm argmax", all(w == t for w, t, _ in found), "; ".join(d for _, _, d in found))


# ---------------------------------------------------------------- 10: mediation


def test_criterion_10_mediation(model):
    s = model.schedule
    L = model.n_layers
    expect = {
        "mediation-char": {"Char(1)": range(0, s.L_ADDR), "QuestionChar": range(s.L_ADDR, s.L_QPTR),
                           "FinalColon": range(s.L_QPTR, L + 1)},
        "mediation-obj": {"Obj(1)": range(0, s.L_ADDR), "QuestionObj": range(s.L_ADDR, s.L_QPTR),
                          "FinalColon": range(s.L_QPTR, L + 1)},
        "mediation-state": {"State(1)": range(0, s.L_ANS), "FinalColon": range(s.L_ANS, L + 1)},
    }
    bad, details = [], []
    for kind, cells in expect.items():
        g = mediation_grid(model, ds.make_pairs(kind, 20))
        for j, col in enumerate(g.columns):
            role = g.column_role(j)
            want = cells.get(role, range(0))
            for i, l in enumerate(g.layers):
                v = float(g.iia[i, j])
                if v != (1.0 if l in want else 0.0):
                    bad.append(f"{kind} {col} layer {l}={v:.2f}")
        details.append(kind.split("-")[1] + ": " + ", ".join(f"{r} {w.start}-{w.stop - 1}" for r, w in cells.items()))
    record(10, "mediation grid pattern", not bad, "; ".join(details) + (f"; {bad[:5]}" if bad else ""))


# ---------------------------------------------------------------- 11: numerics


def test_criterion_11_numerical_invariants(model):
    samples = [ds.sample_story(i, n, v) for i in range(6) for n in SIZES for v in ("none", "explicit")]
    toks = [s.tokens for s in samples]
    r = forward(model, toks, record=True, record_attn=True)
    real = torch.arange(int(r.lengths.max()))[None, :] < r.lengths[:, None]
    sat = min(float(saturation(r, h.name)[real].min()) for b in model.blocks for h in b.heads if h.kind != "decoy")
    add = max(float((r.tape[l] - r.tape[l - 1] - r.attn_out[l - 1] - r.mlp_out[l - 1]).abs().max())
              for l in range(1, model.n_layers + 1))

    loc = LOCATIONS["binding-payload"]
    basis = fit_svd(collect_activations(model, ds.make_pairs(loc.kind, 20), loc.layer(model), loc.targets))
    g = torch.Generator().manual_seed(0)
    idem = 0.0
    for _ in range(10):
        W = projection_from_mask(basis.V, (torch.rand(basis.V.shape[1], generator=g) < 0.5).double())
        idem = max(idem, float((W @ W - W).abs().max()))

    every = tuple(f"seg:{x}" for x in ("bos", "intro", "question", "answer")) + tuple(
        f"seg:action{i}" for i in range(1, 4)) + tuple(f"seg:vis{k}" for k in range(1, 7))
    same = total = 0
    for kind in ("answer-payload", "vis-source", "query-char-oi@3"):
        pairs = [p for p in ds.make_pairs(kind, 20) if len(p.original.tokens) == len(p.counterfactual.tokens)]
        pairs = [ds.CounterfactualPair(p.kind, p.n, p.seed, p.original, p.counterfactual,
                                       tuple((i, i) for i in range(len(p.original.tokens))), p.expected)
                 for p in pairs]
        cf_run = predict(model, [p.counterfactual.tokens for p in pairs])
        patched = apply_patch(model, pairs, PatchSpec(0, every))
        same += sum(a == b for a, b in zip(patched, cf_run))
        total += len(pairs)
    ok = sat >= 1 - 1e-6 and add <= 1e-12 and idem <= 1e-8 and same == total
    record(11, "numerical invariants", ok,
           f"min saturation {sat:.10f}, additivity {add:.1e}, idempotence {idem:.1e}, "
           f"layer-0 full patch {same}/{total}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-rA"]))
