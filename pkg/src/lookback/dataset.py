"""Story rendering, sampling, counterfactual pair construction and dataset files."""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from . import causal_model as cm
from .causal_model import UNKNOWN, Story, Var, VisStatement
from .errors import SchemaError, UnsupportedTemplate
from .vocab import BOS, DEFAULT_VOCAB, Vocab

SCHEMA = "lookback-dataset"
SCHEMA_VERSION = 1
N_PAIRS = 80

# template ids: 0 = no visibility sentences; 1 = one statement per ordered
# pair in forward order; 2 = same statements in reverse order; 3 = only the
# positive statements, forward order.
TEMPLATES = (0, 1, 2, 3)
VISIBILITY_TEMPLATES = (1, 2, 3)


# ---------------------------------------------------------------- rendering


@dataclass(frozen=True)
class AnnotatedSample:
    story: Story
    tokens: tuple[str, ...]
    roles: tuple[str, ...]
    segments: tuple[str, ...]
    gold: str

    def positions(self, *patterns: str) -> list[int]:
        return select_positions(self, patterns)


def _intro(chars: Sequence[str]) -> list[str]:
    if len(chars) == 2:
        names = [chars[0], "and", chars[1]]
    else:
        names = []
        for c in chars[:-1]:
            names += [c, ","]
        names += ["and", chars[-1]]
    return names + ["are", "working", "in", "a", "busy", "restaurant", "."]


def _action(i: int, n: int, char: str, obj: str, state: str) -> list[str]:
    if i == 0:
        head = ["To", "complete", "an", "order", ",", char, "grabs", "an", "opaque"]
    elif i == n - 1 and n > 2:
        head = ["Finally", ",", char, "grabs", "another", "opaque"]
    else:
        head = ["Then", char, "grabs", "another", "opaque"]
    return head + [obj, "and", "fills", "it", "with", state, "."]


def render(story: Story) -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    """Token stream with a role tag and a segment name per position."""
    story.validate()
    n = story.n
    toks: list[str] = [BOS]
    roles: list[str] = ["Other"]
    segs: list[str] = ["bos"]

    def emit(words, seg, tagger):
        for w in words:
            toks.append(w)
            roles.append(tagger(w))
            segs.append(seg)

    char_tag = {c: f"Char({i + 1})" for i, c in enumerate(story.chars)}
    obj_tag = {o: f"Obj({i + 1})" for i, o in enumerate(story.objs)}
    state_tag = {s: f"State({i + 1})" for i, s in enumerate(story.states)}
    story_tags = {**char_tag, **obj_tag, **state_tag}

    emit(_intro(story.chars), "intro", lambda w: story_tags.get(w, "Other"))
    for i, (c, o, s) in enumerate(story.triples):
        emit(_action(i, n, c, o, s), f"action{i + 1}", lambda w: story_tags.get(w, "Other"))
    for k, v in enumerate(story.visibility):
        words = [story.chars[v.observer], "can" if v.can else "cannot", "observe",
                 story.chars[v.observed], "'s", "actions", "."]
        emit(words, f"vis{k + 1}", lambda w, k=k: f"VisSentence({k + 1})")
    qc, qo = story.question
    q_words = ["Question", ":", "What", "does", qc, "believe", "the", qo, "contains", "?"]
    q_roles = ["Other"] * 4 + ["QuestionChar", "Other", "Other", "QuestionObj", "Other", "Other"]
    toks += q_words
    roles += q_roles
    segs += ["question"] * len(q_words)
    toks += ["Answer", ":"]
    roles += ["Other", "FinalColon"]
    segs += ["answer", "answer"]
    return tuple(toks), tuple(roles), tuple(segs)


def annotate(story: Story) -> AnnotatedSample:
    toks, roles, segs = render(story)
    gold, _ = cm.run_causal_model(story)
    return AnnotatedSample(story, toks, roles, segs, gold)


_TAG = re.compile(r"^([A-Za-z]+)(?:\((\d+)\))?$")


def select_positions(sample: AnnotatedSample, patterns: Iterable[str]) -> list[int]:
    """Positions matching any pattern.

    A pattern is a role tag (``Char(1)``), a role family (``Char(*)``) or a
    segment (``seg:question``).
    """
    pats = list(patterns)
    out = []
    for p, (role, seg) in enumerate(zip(sample.roles, sample.segments)):
        for pat in pats:
            if pat.startswith("seg:"):
                if seg == pat[4:]:
                    out.append(p)
                    break
            elif pat.endswith("(*)"):
                if role.startswith(pat[:-3] + "("):
                    out.append(p)
                    break
            elif role == pat:
                out.append(p)
                break
    return out


def check_sample(sample: AnnotatedSample) -> None:
    """Raise ``AssertionError`` when a sample breaks its invariants."""
    s = sample.story
    assert len(sample.tokens) == len(sample.roles) == len(sample.segments)
    assert sample.roles.count("FinalColon") == 1 and sample.roles[-1] == "FinalColon"
    ents = set(s.chars) | set(s.objs) | set(s.states)
    for p, (tok, role, seg) in enumerate(zip(sample.tokens, sample.roles, sample.segments)):
        if tok in ents and not seg.startswith("vis"):
            assert role != "Other", f"entity token {tok!r} at {p} lacks a role"
    qc, qo = s.question
    qpos = sample.positions("QuestionChar", "QuestionObj")
    assert [sample.tokens[p] for p in qpos] == [qc, qo]
    assert sample.gold == cm.run_causal_model(s)[0]


# ---------------------------------------------------------------- sampling


def _draw(rng: random.Random, n: int, vocab: Vocab, exclude: Iterable[str] = ()):
    ex = set(exclude)
    chars = rng.sample([c for c in vocab.characters if c not in ex], n)
    objs = rng.sample([o for o in vocab.objects if o not in ex], n)
    states = rng.sample([s for s in vocab.states if s not in ex], n)
    return chars, objs, states


def _statements(n: int, template: int, can: Mapping[tuple[int, int], bool]) -> tuple[VisStatement, ...]:
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    if template == 0:
        return ()
    if template == 1:
        order = pairs
    elif template == 2:
        order = pairs[::-1]
    elif template == 3:
        order = [p for p in pairs if can[p]]
    else:
        raise UnsupportedTemplate(f"template {template} does not exist")
    return tuple(VisStatement(i, j, can[(i, j)]) for i, j in order)


def sample_story(seed: int, n: int = 2, visibility: str = "none", template: int | None = None,
                 vocab: Vocab = DEFAULT_VOCAB) -> AnnotatedSample:
    """Deterministic random story.  ``visibility`` is ``"none"`` or ``"explicit"``."""
    if n not in (2, 3):
        raise UnsupportedTemplate(f"templates support two or three triples, not {n}")
    if visibility not in ("none", "explicit"):
        raise UnsupportedTemplate(f"unknown visibility mode {visibility!r}")
    rng = random.Random(f"story|{n}|{visibility}|{template}|{seed}")
    if template is None:
        template = 0 if visibility == "none" else rng.choice(VISIBILITY_TEMPLATES)
    if (visibility == "none") != (template == 0):
        raise UnsupportedTemplate(f"template {template} does not match visibility mode {visibility!r}")
    chars, objs, states = _draw(rng, n, vocab)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    can = {p: rng.random() < 0.5 for p in pairs}
    qc, qo = rng.randrange(n), rng.randrange(n)
    story = Story(tuple(zip(chars, objs, states)), (chars[qc], objs[qo]), _statements(n, template, can), template)
    return annotate(story)


# ---------------------------------------------------------------- pairs


@dataclass(frozen=True)
class PatchTemplate:
    """Token selectors and subspace for a layer sweep; the layer is left open."""

    targets: tuple[str, ...]
    subspace: str = "full"                 # "full" or a field name of the toy layout
    freeze: tuple[str, ...] = ()


@dataclass(frozen=True)
class KindSpec:
    name: str
    figure: str
    template: PatchTemplate
    window: tuple[str, str]                # schedule attribute names, half-open; "END" = L + 1
    stories: Callable | None = field(repr=False, default=None)
    variables: Callable | None = field(repr=False, default=None)
    description: str = ""
    pair_based: bool = True


@dataclass(frozen=True)
class CounterfactualPair:
    kind: str
    n: int
    seed: int
    original: AnnotatedSample
    counterfactual: AnnotatedSample
    alignment: tuple[tuple[int, int], ...]  # (counterfactual position, original position)
    expected: str

    @property
    def donor_of(self) -> dict[int, int]:
        return {o: c for c, o in self.alignment}

    @property
    def spec(self) -> KindSpec:
        return CATALOG[self.kind]


def _rotate(story_triples, r: int = 1):
    return tuple(story_triples[r:] + story_triples[:r])


def _positional(orig: AnnotatedSample, cf: AnnotatedSample) -> dict[int, int]:
    if len(orig.tokens) != len(cf.tokens):
        raise ValueError("positional alignment needs prompts of equal length")
    return {p: p for p in range(len(orig.tokens))}


def _identity_alignment(orig: AnnotatedSample, cf: AnnotatedSample, families: Sequence[str]) -> dict[int, int]:
    """Positional map, overridden inside ``families`` by matching token occurrences."""
    amap = _positional(orig, cf)

    def occurrences(s: AnnotatedSample):
        seen: dict[str, int] = {}
        out = {}
        for p in select_positions(s, [f"{f}(*)" for f in families]):
            k = seen.get(s.tokens[p], 0)
            seen[s.tokens[p]] = k + 1
            out[(s.tokens[p], k)] = p
        return out

    o_occ, c_occ = occurrences(orig), occurrences(cf)
    if set(o_occ) != set(c_occ):
        raise ValueError("token-identity alignment needs the same entity tokens in both stories")
    for key, po in o_occ.items():
        amap[po] = c_occ[key]
    return amap


def _cross_vars(orig: Story, cf: Story, names: Sequence[str], role: int) -> dict[Var, Var]:
    """Map ``name(i)`` of the original onto the counterfactual slot holding the same token."""
    idx = {t[role]: j for j, t in enumerate(cf.triples)}
    out = {}
    for i, t in enumerate(orig.triples):
        j = idx[t[role]]
        for name in names:
            out[Var(name, i + 1)] = Var(name, j + 1)
    return out


def _all(name: str, n: int) -> list[Var]:
    return [Var(name, i + 1) for i in range(n)]


def _base(rng, n, vocab):
    chars, objs, states = _draw(rng, n, vocab)
    return chars, objs, states, rng.randrange(n)


def _fresh_states(rng, vocab, used, n):
    return rng.sample([s for s in vocab.states if s not in used], n)


# Story recipes: ``rng, n, vocab -> (original, counterfactual)``.


def _stories_rotated_fresh(q_orig, q_cf):
    """Counterfactual = original sentences rotated by one, with fresh state tokens.

    ``q_orig`` / ``q_cf`` give the (character, object) question slots as offsets from ``a``.
    """
    def build(rng, n, vocab):
        chars, objs, states, a = _base(rng, n, vocab)
        oc, oo = q_orig
        orig = Story(tuple(zip(chars, objs, states)), (chars[(a + oc) % n], objs[(a + oo) % n]))
        fresh = _fresh_states(rng, vocab, states, n)
        cc, co = q_cf
        cf = Story(_rotate(list(zip(chars, objs, fresh))), (chars[(a + cc) % n], objs[(a + co) % n]))
        return orig, cf
    return build


def _stories_rotated_same(rng, n, vocab):
    chars, objs, states, a = _base(rng, n, vocab)
    orig = Story(tuple(zip(chars, objs, states)), (chars[a], objs[a]))
    return orig, Story(_rotate(list(orig.triples)), orig.question)


def _stories_vis(rng, n, vocab):
    chars, objs, states, a = _base(rng, n, vocab)
    b = rng.choice([j for j in range(n) if j != a])
    template = rng.choice((1, 2))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    never = {p: False for p in pairs}
    orig = Story(tuple(zip(chars, objs, states)), (chars[a], objs[b]), _statements(n, template, never), template)
    c2 = rng.sample([c for c in vocab.characters if c not in chars], n)
    o2 = rng.sample([o for o in vocab.objects if o not in objs], n)
    flipped = {**never, (a, b): True}
    cf = Story(tuple(zip(c2, o2, states)), (c2[a], o2[b]), _statements(n, template, flipped), template)
    return orig, cf


def _stories_mediation(role):
    def build(rng, n, vocab):
        chars, objs, states = _draw(rng, n, vocab)
        cf = Story(tuple(zip(chars, objs, states)), (chars[0], objs[0]))
        trip = [list(t) for t in cf.triples]
        pool = {0: vocab.characters, 1: vocab.objects, 2: vocab.states}[role]
        trip[0][role] = rng.choice([t for t in pool if t not in (chars + objs + states)])
        return Story(tuple(tuple(t) for t in trip), cf.question), cf
    return build


def _stories_knockout(rng, n, vocab):
    chars, objs, states, a = _base(rng, n, vocab)
    b = rng.choice([j for j in range(n) if j != a])
    template = rng.choice((1, 2))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    can = {p: rng.random() < 0.5 for p in pairs}
    can[(a, b)] = True
    orig = Story(tuple(zip(chars, objs, states)), (chars[a], objs[b]), _statements(n, template, can), template)
    return orig, orig


# Variable rules: ``(original, counterfactual) -> (mapping, freeze, alignment)``.
# Alignment is "position" or a tuple of role families aligned by token identity.


def _scalar(var):
    return lambda o, c: ({var: var}, (), "position")


def _vars_binding_addr_payload(o, c):
    return _cross_vars(o, c, ("BindingAddress", "StateOI"), 2), (), ("State",)


def _vars_binding_source(o, c):
    mapping = {**_cross_vars(o, c, ("CharOI",), 0), **_cross_vars(o, c, ("ObjOI",), 1)}
    return mapping, _all("BindingAddress", o.n) + _all("StateOI", o.n), ("Char", "Obj")


def _vars_char_oi(o, c):
    freeze = _all("ObjOI", o.n) + _all("BindingAddress", o.n) + _all("StateOI", o.n)
    return _cross_vars(o, c, ("CharOI",), 0), freeze, ("Char", "Obj")


def _vars_obj_oi(o, c):
    mapping = {**_cross_vars(o, c, ("CharOI",), 0), **_cross_vars(o, c, ("ObjOI",), 1)}
    freeze = _all("BindingAddress", o.n) + _all("StateOI", o.n) + [cm.QueryCharOI]
    return mapping, freeze, ("Char", "Obj")


def _vars_vis(kind):
    def rule(o, c):
        ids = _all("VisibilityID", len(o.visibility))
        vs = {"source": ids, "payload": [cm.VisibilityPayload], "both": ids + [cm.VisibilityPayload]}[kind]
        return {v: v for v in vs}, (), "position"
    return rule


def _kind(name, figure, template, window, stories, variables, description, pair_based=True):
    return KindSpec(name, figure, template, window, stories, variables, description, pair_based)


_STORY_ENT = ("Char(*)", "Obj(*)")
_QA = ("seg:question", "seg:answer")
CATALOG: dict[str, KindSpec] = {k.name: k for k in [
    _kind("mediation-char", "Fig. 9", PatchTemplate(()), ("", ""), _stories_mediation(0), _scalar(cm.QueryCharOI),
          "absent queried character restored by patching single cells"),
    _kind("mediation-obj", "Fig. 10", PatchTemplate(()), ("", ""), _stories_mediation(1), _scalar(cm.QueryObjOI),
          "absent queried object restored by patching single cells"),
    _kind("mediation-state", "Fig. 11", PatchTemplate(()), ("", ""), _stories_mediation(2), _scalar(cm.AnswerPayload),
          "replaced state token restored by patching single cells"),
    _kind("answer-pointer", "Fig. 5", PatchTemplate(("FinalColon",), "STATE_OI"), ("L_BIND", "L_ANS"),
          _stories_rotated_fresh((0, 0), (0, 0)), _scalar(cm.AnswerPointer), "state-OI pointer at the final token"),
    _kind("answer-payload", "Fig. 5", PatchTemplate(("FinalColon",)), ("L_ANS", "END"),
          _stories_rotated_fresh((0, 0), (0, 0)), _scalar(cm.AnswerPayload), "answer token payload at the final token"),
    _kind("binding-addr-payload", "Fig. 6", PatchTemplate(("State(*)",)), ("L_ADDR", "L_BIND"),
          _stories_rotated_same, _vars_binding_addr_payload, "address and payload at the state tokens, sentences swapped"),
    _kind("binding-source-frozen", "Fig. 7", PatchTemplate(_STORY_ENT, "full", ("State(*)",)), ("L_OI", "L_ADDR"),
          _stories_rotated_fresh((0, 0), (0, 0)), _vars_binding_source,
          "character and object OIs with state tokens frozen"),
    _kind("binding-source-unfrozen", "Fig. 12", PatchTemplate(_STORY_ENT), ("L_OI", "L_OI"),
          _stories_rotated_fresh((0, 0), (0, 0)), _vars_binding_source,
          "same swap without freezing; address and pointer move together"),
    _kind("char-oi", "Fig. 13", PatchTemplate(("Char(*)",), "full", ("Obj(*)", "State(*)")), ("L_OI", "L_ADDR"),
          _stories_rotated_fresh((0, -1), (0, 0)), _vars_char_oi, "character OIs in the story tokens"),
    _kind("obj-oi", "Fig. 14", PatchTemplate(_STORY_ENT, "full", ("State(*)", "QuestionChar")), ("L_OI", "L_ADDR"),
          _stories_rotated_fresh((0, 1), (0, 0)), _vars_obj_oi, "object OIs in the story tokens"),
    _kind("query-char-oi", "Fig. 15", PatchTemplate(("QuestionChar",)), ("L_ADDR", "L_QPTR"),
          _stories_rotated_fresh((0, -1), (0, 0)), _scalar(cm.QueryCharOI), "queried character OI at the question token"),
    _kind("query-obj-oi", "Fig. 16", PatchTemplate(("QuestionObj",)), ("L_ADDR", "L_QPTR"),
          _stories_rotated_fresh((0, 1), (1, 1)), _scalar(cm.QueryObjOI), "queried object OI at the question token"),
    _kind("vis-source", "Fig. 8", PatchTemplate(("VisSentence(*)",)), ("L_VIS_SRC", "L_VIS_DEREF"),
          _stories_vis, _vars_vis("source"), "visibility ID in the visibility sentences"),
    _kind("vis-payload", "Fig. 8", PatchTemplate(_QA), ("L_VIS_DEREF", "END"),
          _stories_vis, _vars_vis("payload"), "visibility payload at the lookback tokens"),
    _kind("vis-addr-pointer", "Fig. 8", PatchTemplate(("VisSentence(*)",) + _QA), ("L_VIS_SRC", "END"),
          _stories_vis, _vars_vis("both"), "visibility sentences and lookback tokens together"),
    _kind("knockout", "Fig. 17", PatchTemplate(()), ("", ""), _stories_knockout, _scalar(cm.AnswerPayload),
          "observed-belief samples for attention knockout", pair_based=False),
]}

MEDIATION_KINDS = ("mediation-char", "mediation-obj", "mediation-state")
SWEEP_KINDS = tuple(k for k in CATALOG if k not in MEDIATION_KINDS and CATALOG[k].pair_based)
DEFAULT_GEN_KINDS = tuple(k for k in CATALOG if CATALOG[k].pair_based)


def list_experiments() -> list[tuple[str, str, str]]:
    """Every catalog entry, for two and three triples."""
    out = []
    for n in (2, 3):
        for k in CATALOG.values():
            suffix = "" if n == 2 else " (three triples)"
            out.append((k.name if n == 2 else f"{k.name}@3", k.figure + suffix, k.description))
    return out


def parse_kind(name: str) -> tuple[str, int]:
    """``answer-pointer`` -> (answer-pointer, 2); ``answer-pointer@3`` -> (answer-pointer, 3)."""
    base, _, n = name.partition("@")
    if base not in CATALOG:
        raise KeyError(f"unknown experiment kind {base!r}")
    return base, int(n) if n else 2


def make_pair(kind: str, seed: int, n: int | None = None, vocab: Vocab = DEFAULT_VOCAB) -> CounterfactualPair:
    """Build one pair; ``kind`` may carry an ``@3`` suffix for the three-triple variant."""
    kind, n_named = parse_kind(kind)
    n = n_named if n is None else n
    if n not in (2, 3):
        raise UnsupportedTemplate(f"templates support two or three triples, not {n}")
    rng = random.Random(f"{kind}|{n}|{seed}")
    orig_story, cf_story = CATALOG[kind].stories(rng, n, vocab)
    return pair_from_stories(kind, orig_story, cf_story, seed)


def pair_from_stories(kind: str, original: Story, counterfactual: Story, seed: int = -1) -> CounterfactualPair:
    """Pair two given stories under ``kind``'s variable rule; the label comes from the causal model."""
    kind, _ = parse_kind(kind)
    mapping, freeze, align = CATALOG[kind].variables(original, counterfactual)
    orig, cf = annotate(original), annotate(counterfactual)
    amap = _positional(orig, cf) if align == "position" else _identity_alignment(orig, cf, align)
    expected, _ = cm.intervene_high_level(original, counterfactual, mapping, freeze=freeze)
    alignment = tuple(sorted((c, o) for o, c in amap.items()))
    return CounterfactualPair(kind, original.n, seed, orig, cf, alignment, expected)


def make_pairs(kind: str, n_pairs: int = N_PAIRS, seed: int = 0, n: int | None = None,
               vocab: Vocab = DEFAULT_VOCAB) -> list[CounterfactualPair]:
    return [make_pair(kind, seed * 100_003 + i, n, vocab) for i in range(n_pairs)]


def identity_pair(sample: AnnotatedSample, kind: str = "answer-payload") -> CounterfactualPair:
    amap = _positional(sample, sample)
    return CounterfactualPair(kind, sample.story.n, -1, sample, sample,
                              tuple((p, p) for p in amap), sample.gold)


# ---------------------------------------------------------------- files


def _story_record(s: AnnotatedSample) -> dict:
    st = s.story
    return {
        "tokens": list(s.tokens),
        "roles": list(s.roles),
        "visibility": {"template": st.template,
                       "statements": [[v.observer, v.observed, v.can] for v in st.visibility]},
        "question": list(st.question),
        "gold": s.gold,
    }


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def dataset_lines(pairs: Sequence[CounterfactualPair]) -> list[str]:
    kinds = sorted({p.kind for p in pairs})
    header = {"schema": SCHEMA, "version": SCHEMA_VERSION, "kinds": kinds, "pairs": len(pairs)}
    lines = [_dumps(header)]
    for i, p in enumerate(pairs):
        for side, s in (("original", p.original), ("counterfactual", p.counterfactual)):
            rec = _story_record(s)
            link: dict = {"pair": i, "side": side, "n": p.n}
            if side == "counterfactual":
                link["alignment"] = [list(a) for a in p.alignment]
                link["expected"] = p.expected
            rec["pair-link"] = link
            rec["kind"] = p.kind
            rec["seed"] = p.seed
            lines.append(_dumps(rec))
    return lines


def write_dataset(pairs: Sequence[CounterfactualPair], path: str | Path) -> None:
    from .io_utils import atomic_write_text

    atomic_write_text(Path(path), "\n".join(dataset_lines(pairs)) + "\n")


_FIELDS = ["tokens", "roles", "visibility", "question", "gold", "pair-link", "kind", "seed"]


def _sample_from_record(rec: dict, line: int) -> AnnotatedSample:
    toks, roles = rec["tokens"], rec["roles"]
    if len(toks) != len(roles):
        raise SchemaError("tokens and roles differ in length", line)
    first: dict[str, str] = {}
    for t, r in zip(toks, roles):
        first.setdefault(r, t)
    n = rec["pair-link"]["n"]
    try:
        triples = tuple((first[f"Char({i})"], first[f"Obj({i})"], first[f"State({i})"]) for i in range(1, n + 1))
    except KeyError as exc:
        raise SchemaError(f"missing role {exc.args[0]}", line) from None
    vis = rec["visibility"]
    statements = tuple(VisStatement(int(a), int(b), bool(c)) for a, b, c in vis["statements"])
    story = Story(triples, tuple(rec["question"]), statements, int(vis["template"]))
    sample = annotate(story)
    if list(sample.tokens) != toks or list(sample.roles) != roles:
        raise SchemaError("record does not re-render to the stored tokens", line)
    if sample.gold != rec["gold"]:
        raise SchemaError("stored gold answer disagrees with the causal model", line)
    return sample


def read_dataset(path: str | Path) -> list[CounterfactualPair]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise SchemaError("empty dataset file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"bad header: {exc.msg}", 1) from None
    if header.get("schema") != SCHEMA or header.get("version") != SCHEMA_VERSION:
        raise SchemaError("unsupported schema header", 1)
    pairs: list[CounterfactualPair] = []
    pending = None
    for ln, raw in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed record: {exc.msg}", ln) from None
        if not isinstance(rec, dict) or list(rec) != _FIELDS:
            raise SchemaError(f"record fields must be {_FIELDS}", ln)
        try:
            sample = _sample_from_record(rec, ln)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid record: {exc}", ln) from None
        link = rec["pair-link"]
        if link["side"] == "original":
            if pending is not None:
                raise SchemaError("original record without its counterfactual", ln)
            pending = (sample, link, rec)
            continue
        if pending is None or pending[1]["pair"] != link["pair"]:
            raise SchemaError("counterfactual record without its original", ln)
        orig, _, orec = pending
        pending = None
        alignment = tuple(tuple(int(x) for x in a) for a in link["alignment"])
        pairs.append(CounterfactualPair(rec["kind"], int(link["n"]), int(rec["seed"]), orig, sample,
                                        alignment, link["expected"]))
    if pending is not None:
        raise SchemaError("file ends after an original record", len(lines))
    if header.get("pairs") != len(pairs):
        raise SchemaError(f"header announces {header.get('pairs')} pairs, found {len(pairs)}", len(lines))
    return pairs
