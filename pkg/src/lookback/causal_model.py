"""High-level belief-tracking causal model.

The model assigns ordering IDs (OIs) to characters, objects and states, binds
each triple through an address ``(char OI, obj OI)`` stored beside its state
OI, and answers a question with two lookbacks: a binding lookback that turns
the question's pointer into a state OI, and an answer lookback that turns the
state OI into a state token.  Visibility sentences add an extra lookback whose
payload (the observed character's OI) is unioned into the pointer.

Every intermediate quantity is a named :class:`Var`, so interchange
interventions can hard-set any of them and let the downstream mechanisms
recompute.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import AmbiguousBinding, MalformedStory

UNKNOWN = "unknown"


@dataclass(frozen=True)
class VisStatement:
    """``observer`` can (or cannot) observe ``observed``; indices are 0-based triple slots."""

    observer: int
    observed: int
    can: bool


@dataclass(frozen=True)
class Story:
    triples: tuple[tuple[str, str, str], ...]
    question: tuple[str, str]
    visibility: tuple[VisStatement, ...] = ()
    template: int = 0

    @property
    def n(self) -> int:
        return len(self.triples)

    @property
    def chars(self) -> tuple[str, ...]:
        return tuple(t[0] for t in self.triples)

    @property
    def objs(self) -> tuple[str, ...]:
        return tuple(t[1] for t in self.triples)

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(t[2] for t in self.triples)

    @property
    def char_absent(self) -> bool:
        return self.question[0] not in self.chars

    @property
    def obj_absent(self) -> bool:
        return self.question[1] not in self.objs

    def validate(self) -> None:
        if self.n < 1:
            raise MalformedStory("story needs at least one triple")
        for name, group in (("character", self.chars), ("object", self.objs), ("state", self.states)):
            if len(set(group)) != len(group):
                raise MalformedStory(f"duplicate {name} tokens: {group}")
        pooled = self.chars + self.objs + self.states
        if len(set(pooled)) != len(pooled):
            raise MalformedStory("a token is used in more than one role")
        seen = set()
        for v in self.visibility:
            if not (0 <= v.observer < self.n and 0 <= v.observed < self.n):
                raise MalformedStory(f"visibility index out of range: {v}")
            if v.observer == v.observed:
                raise MalformedStory("a character cannot be stated to observe itself")
            if (v.observer, v.observed) in seen:
                raise MalformedStory(f"duplicate visibility statement for {v}")
            seen.add((v.observer, v.observed))


# ---------------------------------------------------------------- variables


@dataclass(frozen=True, order=True)
class Var:
    """A high-level variable tag.  ``index`` is 1-based where it applies."""

    name: str
    index: int | None = None

    def __repr__(self) -> str:
        return self.name if self.index is None else f"{self.name}({self.index})"


def CharOI(i: int) -> Var:
    return Var("CharOI", i)


def ObjOI(i: int) -> Var:
    return Var("ObjOI", i)


def StateOI(i: int) -> Var:
    return Var("StateOI", i)


def BindingAddress(i: int) -> Var:
    return Var("BindingAddress", i)


def VisibilityID(k: int) -> Var:
    return Var("VisibilityID", k)


QueryCharOI = Var("QueryCharOI")
QueryObjOI = Var("QueryObjOI")
VisibilityPayload = Var("VisibilityPayload")
BindingPointer = Var("BindingPointer")
BindingPayload = Var("BindingPayload")
AnswerPointer = Var("AnswerPointer")
AnswerPayload = Var("AnswerPayload")

INDEXED = ("CharOI", "ObjOI", "StateOI", "BindingAddress", "VisibilityID")
SCALAR = ("QueryCharOI", "QueryObjOI", "VisibilityPayload", "BindingPointer",
          "BindingPayload", "AnswerPointer", "AnswerPayload")


@dataclass(frozen=True)
class Pointer:
    char: int | None
    obj: int | None
    extra_chars: frozenset[int] = frozenset()

    @property
    def chars(self) -> frozenset[int]:
        base = frozenset() if self.char is None else frozenset({self.char})
        return base | self.extra_chars


@dataclass(frozen=True)
class CausalTrace:
    char_oi: tuple[int, ...]
    obj_oi: tuple[int, ...]
    state_oi: tuple[int, ...]
    query_char_oi: int | None
    query_obj_oi: int | None
    visibility_id: tuple[tuple[int | None, int | None, bool], ...]
    visibility_payload: frozenset[int]
    binding_address: tuple[tuple[int, int], ...]
    binding_pointer: Pointer
    binding_payload: int | None
    answer_pointer: int | None
    answer_payload: str
    overrides: Mapping[Var, object] = field(default_factory=dict, compare=False)

    def get(self, var: Var):
        n = var.name
        if n in INDEXED:
            seq = {
                "CharOI": self.char_oi,
                "ObjOI": self.obj_oi,
                "StateOI": self.state_oi,
                "BindingAddress": self.binding_address,
                "VisibilityID": self.visibility_id,
            }[n]
            if var.index is None or not 1 <= var.index <= len(seq):
                raise KeyError(f"{var!r} is not a slot of this trace")
            return seq[var.index - 1]
        attr = {
            "QueryCharOI": "query_char_oi",
            "QueryObjOI": "query_obj_oi",
            "VisibilityPayload": "visibility_payload",
            "BindingPointer": "binding_pointer",
            "BindingPayload": "binding_payload",
            "AnswerPointer": "answer_pointer",
            "AnswerPayload": "answer_payload",
        }.get(n)
        if attr is None:
            raise KeyError(f"unknown variable {var!r}")
        return getattr(self, attr)


def all_variables(story: Story) -> list[Var]:
    n = story.n
    out: list[Var] = []
    for i in range(1, n + 1):
        out += [CharOI(i), ObjOI(i), StateOI(i), BindingAddress(i)]
    out += [VisibilityID(k) for k in range(1, len(story.visibility) + 1)]
    out += [Var(s) for s in SCALAR]
    return out


# ---------------------------------------------------------------- mechanisms


def _evaluate(story: Story, overrides: Mapping[Var, object]) -> CausalTrace:
    story.validate()
    n = story.n

    def pick(var: Var, mechanism):
        return overrides[var] if var in overrides else mechanism()

    char_oi = tuple(pick(CharOI(i + 1), lambda i=i: i + 1) for i in range(n))
    obj_oi = tuple(pick(ObjOI(i + 1), lambda i=i: i + 1) for i in range(n))
    state_oi = tuple(pick(StateOI(i + 1), lambda i=i: i + 1) for i in range(n))

    q_char, q_obj = story.question
    q_char_oi = pick(QueryCharOI, lambda: char_oi[story.chars.index(q_char)] if q_char in story.chars else None)
    q_obj_oi = pick(QueryObjOI, lambda: obj_oi[story.objs.index(q_obj)] if q_obj in story.objs else None)

    vis_ids = tuple(
        pick(VisibilityID(k + 1), lambda v=v: (char_oi[v.observer], char_oi[v.observed], v.can))
        for k, v in enumerate(story.visibility)
    )

    def vis_payload():
        if q_char_oi is None:
            return frozenset()
        return frozenset(obsd for obsr, obsd, can in vis_ids if can and obsr == q_char_oi and obsd is not None)

    payload_vis = frozenset(pick(VisibilityPayload, vis_payload))

    address = tuple(pick(BindingAddress(i + 1), lambda i=i: (char_oi[i], obj_oi[i])) for i in range(n))
    pointer = pick(BindingPointer, lambda: Pointer(q_char_oi, q_obj_oi, payload_vis))

    def bind():
        if pointer.obj is None:
            return None
        hits = [i for i in range(n) if address[i][0] in pointer.chars and address[i][1] == pointer.obj]
        if len(hits) > 1:
            raise AmbiguousBinding(f"pointer {pointer} matches addresses {[address[i] for i in hits]}")
        return state_oi[hits[0]] if hits else None

    b_payload = pick(BindingPayload, bind)
    a_pointer = pick(AnswerPointer, lambda: b_payload)

    def answer():
        if a_pointer is None:
            return UNKNOWN
        hits = [i for i in range(n) if state_oi[i] == a_pointer]
        if len(hits) > 1:
            raise AmbiguousBinding(f"answer pointer {a_pointer} matches several state OIs {state_oi}")
        return story.states[hits[0]] if hits else UNKNOWN

    a_payload = pick(AnswerPayload, answer)
    return CausalTrace(
        char_oi=char_oi,
        obj_oi=obj_oi,
        state_oi=state_oi,
        query_char_oi=q_char_oi,
        query_obj_oi=q_obj_oi,
        visibility_id=vis_ids,
        visibility_payload=payload_vis,
        binding_address=address,
        binding_pointer=pointer,
        binding_payload=b_payload,
        answer_pointer=a_pointer,
        answer_payload=a_payload,
        overrides=dict(overrides),
    )


def run_causal_model(story: Story) -> tuple[str, CausalTrace]:
    trace = _evaluate(story, {})
    return trace.answer_payload, trace


def intervene_high_level(
    original: Story,
    counterfactual: Story,
    vars: Iterable[Var] | Mapping[Var, Var],
    *,
    freeze: Iterable[Var] = (),
) -> tuple[str, CausalTrace]:
    """Run ``original`` with ``vars`` set to their values in the ``counterfactual`` run.

    ``vars`` may be a mapping ``target -> donor`` when the aligned variable in the
    counterfactual has a different index (sentence-swap designs).  Variables in
    ``freeze`` keep the value they take in the unintervened original run.
    """
    mapping = dict(vars) if isinstance(vars, Mapping) else {v: v for v in vars}
    if not mapping:
        raise ValueError("intervene_high_level needs at least one variable")
    donor = _evaluate(counterfactual, {})
    base = _evaluate(original, {})
    overrides: dict[Var, object] = {t: donor.get(d) for t, d in mapping.items()}
    for v in freeze:
        overrides[v] = base.get(v)
    trace = _evaluate(original, overrides)
    return trace.answer_payload, trace


# ---------------------------------------------------------------- oracle


@dataclass(frozen=True)
class Skeleton:
    """Token-free story shape: char ``i`` owns object ``owner.index(i)``."""

    n: int
    owner: tuple[int, ...]          # owner[k] = character slot that fills object k
    question: tuple[int, int]       # (character slot, object slot)
    can_see: frozenset[tuple[int, int]] = frozenset()
    stated: tuple[tuple[int, int], ...] = ()


def _ordered_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(n) if i != j]


def enumerate_truth_table(n: int, visibility: str = "none") -> list[tuple[Skeleton, int | None]]:
    """Every question/ownership/visibility configuration with its rule-based answer.

    The answer is the object slot whose state is returned, or ``None`` for
    UNKNOWN.  ``visibility`` is ``"none"`` (no statements), ``"full"`` (everyone
    observes everyone) or ``"all"`` (every polarity assignment of the
    statements, one statement per ordered pair).
    """
    if n not in (2, 3):
        raise ValueError("the truth table covers two or three triples")
    pairs = _ordered_pairs(n)
    if visibility == "none":
        vis_sets: list[tuple[frozenset, tuple]] = [(frozenset(), ())]
    elif visibility == "full":
        vis_sets = [(frozenset(pairs), tuple(pairs))]
    elif visibility == "all":
        vis_sets = [
            (frozenset(p for p, on in zip(pairs, bits) if on), tuple(pairs))
            for bits in itertools.product((False, True), repeat=len(pairs))
        ]
    else:
        raise ValueError(f"unknown visibility mode {visibility!r}")
    rows = []
    for owner in itertools.permutations(range(n)):
        for qc in range(n):
            for qo in range(n):
                for can_see, stated in vis_sets:
                    holder = owner[qo]
                    known = holder == qc or (qc, holder) in can_see
                    rows.append((Skeleton(n, tuple(owner), (qc, qo), can_see, stated), qo if known else None))
    return rows


def skeleton_story(sk: Skeleton, chars: Iterable[str], objs: Iterable[str], states: Iterable[str]) -> Story:
    """Render a skeleton with concrete tokens; object ``k`` always holds state ``k``."""
    chars, objs, states = list(chars), list(objs), list(states)
    owned = {sk.owner[k]: k for k in range(sk.n)}
    triples = tuple((chars[i], objs[owned[i]], states[owned[i]]) for i in range(sk.n))
    vis = tuple(VisStatement(i, j, (i, j) in sk.can_see) for i, j in sk.stated)
    template = 1 if vis else 0
    return Story(triples, (chars[sk.question[0]], objs[sk.question[1]]), vis, template)
