import pytest
import torch

from lookback import dataset as ds
from lookback.causal_model import Story, VisStatement
from lookback.errors import AlignmentGap
from lookback.intervene import (IIAReport, PatchSpec, _prepare, apply_patch, layer_sweep, mediation_grid,
                                projection, run_patched)

ALL = ("seg:bos", "seg:intro", "seg:action1", "seg:action2", "seg:action3", "seg:vis1", "seg:vis2",
       "seg:vis3", "seg:vis4", "seg:vis5", "seg:vis6", "seg:question", "seg:answer")
FIG5 = (Story((("Bob", "bottle", "beer"), ("Carla", "cup", "coffee")), ("Carla", "cup")),
        Story((("Carla", "cup", "tea"), ("Bob", "bottle", "water")), ("Carla", "cup")))


def test_fig5_in_toy_model(model):
    s = model.schedule
    ptr = ds.pair_from_stories("answer-pointer", *FIG5)
    pay = ds.pair_from_stories("answer-payload", *FIG5)
    assert apply_patch(model, [ptr], PatchSpec(s.L_BIND, ("FinalColon",), "STATE_OI")) == ["beer"]
    assert apply_patch(model, [pay], PatchSpec(s.L_ANS, ("FinalColon",))) == ["tea"]
    # before the binding lookback the final token carries no pointer yet
    assert apply_patch(model, [ptr], PatchSpec(s.L_BIND - 1, ("FinalColon",), "STATE_OI")) == ["coffee"]


def test_fig8_in_toy_model(model):
    o = Story((("Karen", "flute", "soda"), ("Max", "jar", "coffee")), ("Karen", "jar"),
              (VisStatement(1, 0, False), VisStatement(0, 1, False)), 2)
    c = Story((("Carla", "cup", "tea"), ("Bob", "bottle", "water")), ("Carla", "bottle"),
              (VisStatement(1, 0, False), VisStatement(0, 1, True)), 2)
    s = model.schedule
    for kind, layer in (("vis-source", s.L_VIS_SRC), ("vis-payload", s.L_VIS_DEREF),
                        ("vis-addr-pointer", s.L_VIS_SRC)):
        p = ds.pair_from_stories(kind, o, c)
        assert apply_patch(model, [p], PatchSpec.from_template(p.spec.template, layer)) == ["coffee"], kind
    # these stories use different state tokens, so once the answer exists the
    # lookback tokens carry the counterfactual's own answer; generated pairs share states
    late = ds.pair_from_stories("vis-payload", o, c)
    assert apply_patch(model, [late], PatchSpec.from_template(late.spec.template, s.L_ANS)) == ["water"]


@pytest.mark.parametrize("kind", ["answer-payload", "vis-payload@3", "query-obj-oi"])
def test_full_layer0_patch_is_counterfactual_run(model, kind):
    pairs = ds.make_pairs(kind, 20)
    pairs = [p for p in pairs if len(p.original.tokens) == len(p.counterfactual.tokens)]
    assert pairs
    pairs = [ds.CounterfactualPair(p.kind, p.n, p.seed, p.original, p.counterfactual,
                                   tuple((i, i) for i in range(len(p.original.tokens))), p.expected) for p in pairs]
    assert apply_patch(model, pairs, PatchSpec(0, ALL)) == [p.counterfactual.gold for p in pairs]


def test_field_patch_equals_matrix_patch(model):
    pairs = ds.make_pairs("answer-pointer", 30)
    prep = _prepare(model, pairs)
    W = projection(model, "STATE_OI")
    with torch.no_grad():
        a = run_patched(model, prep, PatchSpec(8, ("FinalColon",), "STATE_OI"))
        b = run_patched(model, prep, PatchSpec(8, ("FinalColon",)), W)
    assert torch.equal(a.logits, b.logits)


def test_zero_and_identity_projections(model):
    pairs = ds.make_pairs("answer-payload", 20)
    prep = _prepare(model, pairs)
    d = model.layout.d
    spec = PatchSpec(10, ("FinalColon",))
    with torch.no_grad():
        zero = run_patched(model, prep, spec, torch.zeros(d, d, dtype=torch.float64))
        ident = run_patched(model, prep, spec, torch.eye(d, dtype=torch.float64))
        full = run_patched(model, prep, spec)
    assert torch.equal(zero.logits, prep.base.logits)
    assert torch.equal(ident.logits, full.logits)


def test_freezing_everything_restores_original(model):
    pairs = ds.make_pairs("binding-source-frozen", 20)
    spec = PatchSpec(2, ("Char(*)", "Obj(*)"), freeze=ALL)
    assert apply_patch(model, pairs, spec) == [p.original.gold for p in pairs]


def test_alignment_gap(model):
    p = ds.make_pair("answer-pointer", 0)
    bad = ds.CounterfactualPair(p.kind, p.n, p.seed, p.original, p.counterfactual, (), p.expected)
    with pytest.raises(AlignmentGap):
        apply_patch(model, [bad], PatchSpec(3, ("FinalColon",)))


def test_report_csv(model):
    rep = layer_sweep(model, ds.make_pairs("answer-pointer", 8), layers=[7, 8])
    lines = rep.to_csv().splitlines()
    assert lines[0] == "kind,layer,token_group,matches,total,iia"
    assert lines[1:] == ["answer-pointer,7,FinalColon[STATE_OI],0,8,0.0000",
                         "answer-pointer,8,FinalColon[STATE_OI],8,8,1.0000"]
    assert rep.curve("answer-pointer") == {7: 0.0, 8: 1.0}
    other = IIAReport()
    other.extend(rep)
    assert other.rows == rep.rows


def test_mediation_grid_state(model):
    pairs = ds.make_pairs("mediation-state", 6)
    g = mediation_grid(model, pairs, layers=[0, 9, 10, 12])
    state = next(c for c in g.columns if c.endswith(":State(1)"))
    final = g.columns[-1]
    assert final.endswith(":FinalColon")
    assert [g.cell(l, state) for l in (0, 9, 10)] == [1.0, 1.0, 0.0]
    assert [g.cell(l, final) for l in (0, 9, 10, 12)] == [0.0, 0.0, 1.0, 1.0]
    assert g.to_csv().splitlines()[0].startswith("layer,p00:Other")


def test_mediation_needs_equal_lengths(model):
    pairs = [ds.make_pair("mediation-char", 0), ds.make_pair("mediation-char", 0, n=3)]
    with pytest.raises(AlignmentGap):
        mediation_grid(model, pairs)
