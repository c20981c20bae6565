"""A hand-constructed transformer that implements the lookback algorithm.

Every attention head has explicit ``W_Q, W_K, W_V, W_O`` matrices whose
bilinear score terms are written down by hand.  MLP sublayers are small
per-position piecewise functions.  The residual stream is a set of named,
disjoint fields (see :class:`FieldLayout`).

Conventions: ``tape[0]`` is the embedding, block ``l`` (1-based) reads
``tape[l-1]`` and writes ``tape[l]``.  A hook registered at layer ``l`` edits
``tape[l]`` before block ``l+1`` reads it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from .causal_model import UNKNOWN
from .errors import HookOutOfRange, LayoutOverflow, UnknownToken
from .vocab import BOS, DEFAULT_VOCAB, PAD, Vocab

DTYPE = torch.float64

ROLES = ("CONST", "BOS", "CHAR", "OBJ", "STATE", "NULL", "COLON", "DOT", "CANNOT", "ACTIONS")
DERIVED = ("INTRO_CHAR", "NONINTRO_CHAR", "FINAL")
_ROLE_OF_WORD = {BOS: "BOS", "?": "NULL", ":": "COLON", ".": "DOT", "cannot": "CANNOT", "actions": "ACTIONS"}


# ---------------------------------------------------------------- layout


@dataclass(frozen=True)
class FieldLayout:
    """Named disjoint slices of the residual stream."""

    vocab: Vocab = DEFAULT_VOCAB
    max_n: int = 3
    n_sent: int = 12

    def __post_init__(self):
        n = self.max_n
        widths = [
            ("TOK", len(self.vocab)),
            ("ROLE", len(ROLES)),
            ("DERIV", len(DERIVED)),
            ("SENT", self.n_sent),
            ("CHAR_OI", n), ("OBJ_OI", n), ("STATE_OI", n),
            ("VIS_OBSR", n), ("VIS_OBSD", n), ("VIS_NEG", 1), ("VIS_KEY", n),
            ("ANSWER", len(self.vocab.answers)),
            ("SCR_DOTS", 1), ("SCR_QCOUNT", 1), ("SCR_COUNT", 4),
            ("SCR_QCHAR", n), ("SCR_QOBJ", n), ("SCR_DEREF", n),
        ]
        offsets, at = {}, 0
        for name, w in widths:
            offsets[name] = (at, w)
            at += w
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "d", at)

    @property
    def fields(self) -> dict[str, tuple[int, int]]:
        return dict(self._offsets)

    def sl(self, name: str) -> slice:
        a, w = self._offsets[name]
        return slice(a, a + w)

    def width(self, name: str) -> int:
        if name in ROLES or name in DERIVED:
            return 1
        return self._offsets[name][1]

    def dim(self, name: str, k: int = 0) -> int:
        if name in ROLES:
            return self._offsets["ROLE"][0] + ROLES.index(name)
        if name in DERIVED:
            return self._offsets["DERIV"][0] + DERIVED.index(name)
        a, w = self._offsets[name]
        if not 0 <= k < w:
            raise LayoutOverflow(f"index {k} outside field {name} of width {w}")
        return a + k

    def unit(self, name: str, k: int = 0) -> torch.Tensor:
        v = torch.zeros(self.d, dtype=DTYPE)
        v[self.dim(name, k)] = 1.0
        return v

    def basis(self, *names: str) -> torch.Tensor:
        """Orthonormal ``d x k`` basis of the listed fields."""
        cols = [self.dim(nm, k) for nm in names for k in range(self.width(nm))]
        b = torch.zeros(self.d, len(cols), dtype=DTYPE)
        for j, c in enumerate(cols):
            b[c, j] = 1.0
        return b

    def field_of(self, dim: int) -> str:
        for name, (a, w) in self._offsets.items():
            if a <= dim < a + w:
                return name
        raise LayoutOverflow(f"dimension {dim} outside the residual stream")


@dataclass(frozen=True)
class LayerSchedule:
    """Block indices at which each lookback step is computed."""

    L_FLAGS: int = 1
    L_OI: int = 2
    L_ADDR: int = 3
    L_VIS_SRC: int = 3
    L_VIS_GATHER: int = 4
    L_VIS_DEREF: int = 5
    L_QPTR: int = 6
    L_BIND: int = 8
    L_ANS: int = 10
    L: int = 12

    def validate(self) -> None:
        if self.L_ADDR != self.L_VIS_SRC:
            raise ValueError("L_ADDR and L_VIS_SRC share one block and must be equal")
        order = [self.L_FLAGS, self.L_OI, self.L_ADDR, self.L_VIS_GATHER, self.L_VIS_DEREF,
                 self.L_QPTR, self.L_BIND, self.L_ANS]
        if order[0] < 1 or any(a >= b for a, b in zip(order, order[1:])) or self.L_ANS > self.L:
            raise ValueError(f"layer schedule is not strictly increasing within [1, L]: {self}")

    def resolve(self, name: str) -> int:
        return self.L + 1 if name == "END" else getattr(self, name)

    def window(self, names: tuple[str, str]) -> range:
        return range(self.resolve(names[0]), self.resolve(names[1]))


@dataclass(frozen=True)
class ModelConfig:
    beta: float = 40.0          # match strength of lookback heads
    gate: float = 1e5           # sends non-query positions to BOS
    big: float = 4000.0         # role preference of pointer-copy heads
    slope: float = 8.0          # recency slope per position
    n_heads: int = 4            # heads per block; unused slots hold inert decoys
    seed: int = 0
    schedule: LayerSchedule = field(default_factory=LayerSchedule)


# ---------------------------------------------------------------- heads


@dataclass
class Head:
    name: str
    W_Q: torch.Tensor           # d x t
    W_K: torch.Tensor           # d x t
    W_V: torch.Tensor           # d x v
    W_O: torch.Tensor           # v x d
    slope: float = 0.0          # positive: prefer recent keys; negative: prefer distant ones
    kind: str = "decoy"


class _HeadBuilder:
    def __init__(self, lay: FieldLayout, name: str, kind: str, slope: float = 0.0):
        self.lay, self.name, self.kind, self.slope = lay, name, kind, slope
        self.q: list[torch.Tensor] = []
        self.k: list[torch.Tensor] = []
        self.v: list[torch.Tensor] = []
        self.o: list[torch.Tensor] = []

    def vec(self, spec: Mapping[str, float] | str) -> torch.Tensor:
        if isinstance(spec, str):
            spec = {spec: 1.0}
        out = torch.zeros(self.lay.d, dtype=DTYPE)
        for name, c in spec.items():
            out = out + c * self.lay.unit(name)
        return out

    def term(self, q, k, coef: float):
        self.q.append(coef * (q if torch.is_tensor(q) else self.vec(q)))
        self.k.append(k if torch.is_tensor(k) else self.vec(k))
        return self

    def match(self, qfield: str, kfield: str, coef: float, dims: Sequence[int] | None = None):
        dims = range(self.lay.width(qfield)) if dims is None else dims
        for i in dims:
            self.term(self.lay.unit(qfield, i), self.lay.unit(kfield, i), coef)
        return self

    def gate(self, flag: str, strength: float):
        return self.term({"CONST": 1.0, flag: -1.0}, "BOS", strength)

    def copy(self, src: str, dst: str, src_dims: Sequence[int] | None = None):
        w = self.lay.width(src) if src_dims is None else len(src_dims)
        src_dims = range(w) if src_dims is None else src_dims
        for j, i in enumerate(src_dims):
            self.v.append(self.lay.unit(src, i))
            self.o.append(self.lay.unit(dst, j))
        return self

    def build(self) -> Head:
        return Head(self.name, torch.stack(self.q, 1), torch.stack(self.k, 1),
                    torch.stack(self.v, 1), torch.stack(self.o, 0), self.slope, self.kind)


def _decoy(lay: FieldLayout, gen: torch.Generator, name: str, t: int = 8) -> Head:
    """Inert head: random maps in, zero output map."""
    def r(*shape):
        return torch.randn(*shape, generator=gen, dtype=DTYPE) * 0.1
    return Head(name, r(lay.d, t), r(lay.d, t), r(lay.d, t), torch.zeros(t, lay.d, dtype=DTYPE), 0.0, "decoy")


# ---------------------------------------------------------------- MLPs


def _inv_count(v: torch.Tensor) -> torch.Tensor:
    """Recover ``k`` from a uniform-attention readout ``1 / (1 + k)``."""
    return torch.round(1.0 / v.clamp_min(1e-6) - 1.0).clamp(0, 1e6)


def _onehot(k: torch.Tensor, width: int) -> torch.Tensor:
    """``k`` is 1-based; zero or out-of-range counts give the zero vector."""
    idx = k.long()
    out = torch.zeros(*k.shape, width + 2, dtype=DTYPE)
    out.scatter_(-1, idx.clamp(0, width + 1).unsqueeze(-1), 1.0)
    return out[..., 1:width + 1]


# Each MLP returns sparse updates: a list of (slice or dim, delta) pairs.


def _mlp_flags(lay: FieldLayout):
    def f(x):
        k = _inv_count(x[..., lay.dim("SCR_DOTS")])
        anchor = x[..., lay.dim("CHAR")] + x[..., lay.dim("ACTIONS")] + x[..., lay.dim("CANNOT")]
        char = x[..., lay.dim("CHAR")]
        qv = x[..., lay.dim("SCR_QCOUNT")]
        return [
            (lay.sl("SENT"), _onehot(k + 1, lay.width("SENT")) * anchor.unsqueeze(-1)),
            (lay.dim("INTRO_CHAR"), char * (k == 0)),
            (lay.dim("NONINTRO_CHAR"), char * (k > 0)),
            (lay.dim("FINAL"), x[..., lay.dim("COLON")] * (qv < 0.75)),
            (lay.sl("SCR_DOTS"), -x[..., lay.sl("SCR_DOTS")]),
            (lay.sl("SCR_QCOUNT"), -x[..., lay.sl("SCR_QCOUNT")]),
        ]
    return f


def _mlp_oi(lay: FieldLayout):
    n = lay.max_n

    def f(x):
        cnt = _inv_count(x[..., lay.sl("SCR_COUNT")])
        c_intro, c_non, c_obj, c_state = cnt.unbind(-1)
        intro = x[..., lay.dim("INTRO_CHAR")]
        non = x[..., lay.dim("NONINTRO_CHAR")]
        ok_non = (c_non <= c_intro).to(DTYPE)
        ok_obj = (c_obj <= c_intro).to(DTYPE)
        ok_state = (c_state <= c_intro).to(DTYPE)
        return [
            (lay.sl("CHAR_OI"), _onehot(c_intro, n) * intro.unsqueeze(-1)
             + _onehot(c_non, n) * (non * ok_non).unsqueeze(-1)),
            (lay.sl("OBJ_OI"), _onehot(c_obj, n) * (x[..., lay.dim("OBJ")] * ok_obj).unsqueeze(-1)),
            (lay.sl("STATE_OI"), _onehot(c_state, n) * (x[..., lay.dim("STATE")] * ok_state).unsqueeze(-1)),
            (lay.sl("SCR_COUNT"), -x[..., lay.sl("SCR_COUNT")]),
        ]
    return f


def _mlp_resolve(lay: FieldLayout):
    def f(x):
        out = []
        for role, fld, scr in (("CHAR", "CHAR_OI", "SCR_QCHAR"), ("OBJ", "OBJ_OI", "SCR_QOBJ")):
            empty = (x[..., lay.sl(fld)].sum(-1) < 0.5).to(DTYPE) * x[..., lay.dim(role)]
            out.append((lay.sl(fld), (x[..., lay.sl(scr)] > 0.5).to(DTYPE) * empty.unsqueeze(-1)))
            out.append((lay.sl(scr), -x[..., lay.sl(scr)]))
        return out
    return f


def _mlp_vis_key(lay: FieldLayout):
    def f(x):
        neg = x[..., lay.sl("VIS_NEG")]
        return [(lay.sl("VIS_KEY"), torch.relu(x[..., lay.sl("VIS_OBSR")] - neg))]
    return f


def _mlp_deref(lay: FieldLayout):
    def f(x):
        char = x[..., lay.dim("CHAR")].unsqueeze(-1)
        cur = x[..., lay.sl("CHAR_OI")]
        seen = (x[..., lay.sl("SCR_DEREF")] > 0.25).to(DTYPE)
        return [(lay.sl("CHAR_OI"), char * (torch.maximum(cur, seen) - cur)),
                (lay.sl("SCR_DEREF"), -x[..., lay.sl("SCR_DEREF")])]
    return f


def _mlp_erase_pointer(lay: FieldLayout):
    def f(x):
        fin = x[..., lay.dim("FINAL")].unsqueeze(-1)
        return [(lay.sl(fld), -fin * x[..., lay.sl(fld)]) for fld in ("CHAR_OI", "OBJ_OI")]
    return f


def mlp_delta(updates, like: torch.Tensor) -> torch.Tensor:
    """Dense form of an MLP's sparse updates."""
    out = torch.zeros_like(like)
    for where, d in updates:
        out[..., where] = out[..., where] + d
    return out


# ---------------------------------------------------------------- model


@dataclass
class Block:
    index: int
    heads: list[Head]
    mlp: Callable[[torch.Tensor], torch.Tensor] | None = None
    label: str = "idle"


@dataclass
class ToyModel:
    config: ModelConfig
    layout: FieldLayout
    embedding: torch.Tensor             # |V| x d
    blocks: list[Block]

    @property
    def schedule(self) -> LayerSchedule:
        return self.config.schedule

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    @property
    def vocab(self) -> Vocab:
        return self.layout.vocab

    def head(self, name: str) -> tuple[int, Head]:
        for b in self.blocks:
            for h in b.heads:
                if h.name == name:
                    return b.index, h
        raise KeyError(name)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        idx = self.vocab.index
        try:
            return [idx[t] for t in tokens]
        except KeyError as exc:
            raise UnknownToken(f"token {exc.args[0]!r} is not in the vocabulary") from None


def _embedding(lay: FieldLayout) -> torch.Tensor:
    voc = lay.vocab
    E = torch.zeros(len(voc), lay.d, dtype=DTYPE)
    chars, objs, states = set(voc.characters), set(voc.objects), set(voc.states)
    for i, t in enumerate(voc.tokens):
        if t == PAD:
            continue
        E[i, lay.dim("TOK", i)] = 1.0
        E[i, lay.dim("CONST")] = 1.0
        role = _ROLE_OF_WORD.get(t)
        if t in chars:
            role = "CHAR"
        elif t in objs:
            role = "OBJ"
        elif t in states:
            role = "STATE"
            E[i, lay.dim("ANSWER", voc.answer_index[t])] = 1.0
        if t == "?":
            E[i, lay.dim("ANSWER", voc.answer_index[UNKNOWN])] = 1.0
        if role:
            E[i, lay.dim(role)] = 1.0
    return E


def build_model(config: ModelConfig | None = None, vocab: Vocab = DEFAULT_VOCAB) -> ToyModel:
    cfg = config or ModelConfig()
    s = cfg.schedule
    s.validate()
    lay = FieldLayout(vocab)
    M, beta, B, g = cfg.gate, cfg.beta, cfg.big, cfg.slope
    G = 10 * beta
    char_dims = [vocab.index[c] for c in vocab.characters]
    obj_dims = [vocab.index[o] for o in vocab.objects]
    HB = lambda name, kind, slope=0.0: _HeadBuilder(lay, name, kind, slope)  # noqa: E731

    designed: dict[int, tuple[list[Head], Callable | None, str]] = {}

    # flags: sentence index and final-token detection
    dots = HB("dot_count", "count").term("CONST", {"BOS": 1, "DOT": 1}, M).copy("BOS", "SCR_DOTS").build()
    qm = HB("qmark_count", "count").term("CONST", {"BOS": 1, "NULL": 1}, M).copy("BOS", "SCR_QCOUNT").build()
    designed[s.L_FLAGS] = ([dots, qm], _mlp_flags(lay), "flags")

    # ordering IDs from running counts
    counts = []
    for j, (nm, key) in enumerate((("intro", "INTRO_CHAR"), ("nonintro", "NONINTRO_CHAR"),
                                   ("obj", "OBJ"), ("state", "STATE"))):
        h = HB(f"count_{nm}", "count").term("CONST", {"BOS": 1, key: 1}, M)
        h.v.append(lay.unit("BOS"))
        h.o.append(lay.unit("SCR_COUNT", j))
        counts.append(h.build())
    designed[s.L_OI] = (counts, _mlp_oi(lay), "ordering IDs")

    # token resolution (query and visibility mentions) and binding addresses
    res_c = (HB("resolve_char", "resolve").gate("CHAR", M)
             .match("TOK", "TOK", beta, char_dims)
             .term("CONST", "BOS", 1.5 * beta))
    for k in range(lay.max_n):
        res_c.term("CONST", lay.unit("CHAR_OI", k), beta)
    res_c = res_c.copy("CHAR_OI", "SCR_QCHAR").build()
    res_o = (HB("resolve_obj", "resolve").gate("OBJ", M)
             .match("TOK", "TOK", beta, obj_dims).term("CONST", "BOS", 1.5 * beta))
    for k in range(lay.max_n):
        res_o.term("CONST", lay.unit("OBJ_OI", k), beta)
    res_o = res_o.copy("OBJ_OI", "SCR_QOBJ").build()
    addr_c = HB("addr_char", "address", g).gate("STATE", M).term("CONST", "CHAR", B).copy("CHAR_OI", "CHAR_OI").build()
    addr_o = HB("addr_obj", "address", g).gate("STATE", M).term("CONST", "OBJ", B).copy("OBJ_OI", "OBJ_OI").build()
    designed[s.L_ADDR] = ([res_c, res_o, addr_c, addr_o], _mlp_resolve(lay), "addresses")

    # visibility ID gathered at the sentence-final 'actions' token
    obsr = (HB("vis_observer", "visibility", -g).gate("ACTIONS", M)
            .match("SENT", "SENT", B).term("CONST", "CHAR", B).copy("CHAR_OI", "VIS_OBSR").build())
    obsd = (HB("vis_observed", "visibility", g).gate("ACTIONS", M)
            .match("SENT", "SENT", B).term("CONST", "CHAR", B).copy("CHAR_OI", "VIS_OBSD").build())
    pol = (HB("vis_polarity", "visibility").gate("ACTIONS", M)
           .match("SENT", "SENT", B).term("CONST", "CANNOT", B).term("CONST", "BOS", 1.5 * B)
           .copy("CANNOT", "VIS_NEG").build())
    designed[s.L_VIS_GATHER] = ([obsr, obsd, pol], _mlp_vis_key(lay), "visibility gather")

    # visibility lookback: characters dereference the statements they observe
    deref = (HB("vis_deref", "visibility").gate("CHAR", M)
             .term("CONST", "ACTIONS", G).term("CONST", "BOS", G + 0.5 * beta))
    for k in range(lay.max_n):
        deref.term(lay.unit("CHAR_OI", k), lay.unit("VIS_KEY", k), beta)
    deref = deref.copy("VIS_OBSD", "SCR_DEREF").build()
    designed[s.L_VIS_DEREF] = ([deref], _mlp_deref(lay), "visibility lookback")

    # question pointer copied to the final token
    qpc = HB("qptr_char", "pointer", g).gate("FINAL", M).term("CONST", "CHAR", B).copy("CHAR_OI", "CHAR_OI").build()
    qpo = HB("qptr_obj", "pointer", g).gate("FINAL", M).term("CONST", "OBJ", B).copy("OBJ_OI", "OBJ_OI").build()
    designed[s.L_QPTR] = ([qpc, qpo], None, "query pointer")

    # binding lookback
    bind = (HB("binding", "binding").gate("FINAL", M)
            .match("CHAR_OI", "CHAR_OI", beta).match("OBJ_OI", "OBJ_OI", beta)
            .term("CONST", "STATE", G).term("CONST", "NULL", G + 1.5 * beta)
            .copy("STATE_OI", "STATE_OI").build())
    designed[s.L_BIND] = ([bind], _mlp_erase_pointer(lay), "binding lookback")

    # answer lookback
    ans = (HB("answer", "answer").gate("FINAL", M)
           .match("STATE_OI", "STATE_OI", beta)
           .term("CONST", "STATE", G).term("CONST", "NULL", G + 0.5 * beta)
           .copy("ANSWER", "ANSWER").build())
    designed[s.L_ANS] = ([ans], None, "answer lookback")

    gen = torch.Generator().manual_seed(cfg.seed)
    blocks = []
    for l in range(1, s.L + 1):
        heads, mlp, label = designed.get(l, ([], None, "idle"))
        if len(heads) > cfg.n_heads:
            raise LayoutOverflow(f"block {l} needs {len(heads)} heads but n_heads={cfg.n_heads}")
        heads = list(heads) + [_decoy(lay, gen, f"decoy{l}_{j}") for j in range(cfg.n_heads - len(heads))]
        blocks.append(Block(l, heads, mlp, label))
    return ToyModel(cfg, lay, _embedding(lay), blocks)


# ---------------------------------------------------------------- forward


@dataclass
class Knockout:
    """Attention edges to cut: ``blocked[b, q, k]`` is True for a removed edge."""

    blocked: torch.Tensor
    allowed_layers: frozenset[int] = frozenset()


@dataclass
class RunResult:
    logits: torch.Tensor                     # B x |answers|
    lengths: torch.Tensor
    tape: list[torch.Tensor] | None = None   # L+1 tensors of B x T x d
    attn: dict[str, torch.Tensor] | None = None
    scores: dict[str, torch.Tensor] | None = None
    attn_out: list[torch.Tensor] | None = None
    mlp_out: list[torch.Tensor] | None = None
    answers: list[str] = field(default_factory=list)


Hook = Callable[[torch.Tensor], torch.Tensor]


def encode_batch(model: ToyModel, batch: Sequence[Sequence[str]]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(t) for t in batch])
    T = int(lengths.max())
    pad = model.vocab.index[PAD]
    ids = torch.full((len(batch), T), pad, dtype=torch.long)
    for b, toks in enumerate(batch):
        if not toks or toks[0] != BOS:
            raise UnknownToken("every prompt must start with the BOS token")
        ids[b, : len(toks)] = torch.tensor(model.encode(toks))
    return ids, lengths


def _attend(head: Head, x: torch.Tensor, allowed: torch.Tensor, dist: torch.Tensor,
            blocked: torch.Tensor | None):
    scores = (x @ head.W_Q) @ (x @ head.W_K).transpose(1, 2)
    if head.slope:
        scores = scores - head.slope * dist
    scores = scores.masked_fill(~allowed, -math.inf)
    if blocked is not None:
        scores = scores.masked_fill(blocked, -math.inf)
    attn = torch.softmax(scores, dim=-1)
    attn = torch.nan_to_num(attn, nan=0.0)
    return attn @ (x @ head.W_V), attn, scores


def forward(model: ToyModel, batch: Sequence[Sequence[str]], hooks: Mapping[int, Sequence[Hook]] | None = None,
            *, record: bool = False, record_attn: bool = False, knockout: Knockout | None = None,
            resume: tuple[int, torch.Tensor] | None = None) -> RunResult:
    """Run a batch of token lists; ``hooks[l]`` edit ``tape[l]`` in order.

    ``resume=(l, x)`` starts from a given ``tape[l]`` (hooks at ``l`` still apply)
    and skips blocks ``1..l``; the recorded tape then begins at layer ``l``.
    """
    ids, lengths = encode_batch(model, batch)
    hooks = dict(hooks or {})
    L = model.n_layers
    for l in hooks:
        if not 0 <= l <= L:
            raise HookOutOfRange(f"hook layer {l} outside [0, {L}]")
    Bsz, T = ids.shape
    pos = torch.arange(T)
    real = pos.unsqueeze(0) < lengths.unsqueeze(1)
    causal = pos.unsqueeze(1) >= pos.unsqueeze(0)
    allowed = causal.unsqueeze(0) & real.unsqueeze(1)
    dist = (pos.unsqueeze(1) - pos.unsqueeze(0)).to(DTYPE) * (pos.unsqueeze(0) > 0)

    start = 0
    if resume is not None:
        start, x = resume
        if not 0 <= start <= L:
            raise HookOutOfRange(f"resume layer {start} outside [0, {L}]")
    else:
        x = model.embedding[ids]
    for h in hooks.get(start, ()):
        x = h(x)
    tape = [x] if record else None
    attn_rec: dict[str, torch.Tensor] = {}
    score_rec: dict[str, torch.Tensor] = {}
    a_outs, m_outs = [], []
    for blk in model.blocks[start:]:
        blocked = None
        if knockout is not None and blk.index not in knockout.allowed_layers:
            blocked = knockout.blocked
        heads = blk.heads if record_attn else [h for h in blk.heads if h.kind != "decoy"]
        zs, wos = [], []
        for head in heads:
            z, attn, sc = _attend(head, x, allowed, dist, blocked)
            zs.append(z)
            wos.append(head.W_O)
            if record_attn:
                attn_rec[head.name] = attn
                score_rec[head.name] = sc
        if zs:
            a_out = torch.cat(zs, -1) @ torch.cat(wos, 0)
            x = x + a_out
        else:
            a_out = None
        updates = blk.mlp(x) if blk.mlp is not None else []
        if updates:
            x = x.clone()
            for where, d in updates:
                x[..., where] = x[..., where] + d
        for h in hooks.get(blk.index, ()):
            x = h(x)
        if record:
            tape.append(x)
            a_outs.append(a_out if a_out is not None else torch.zeros_like(x))
            m_outs.append(mlp_delta(updates, x) if updates else torch.zeros_like(x))
    last = x[torch.arange(Bsz), lengths - 1]
    logits = last[:, model.layout.sl("ANSWER")]
    answers = [model.vocab.answers[i] for i in logits.argmax(-1).tolist()]
    return RunResult(logits, lengths, tape, attn_rec if record_attn else None,
                     score_rec if record_attn else None,
                     a_outs if record else None, m_outs if record else None, answers)


def predict(model: ToyModel, batch: Sequence[Sequence[str]], chunk: int = 256) -> list[str]:
    out = []
    with torch.no_grad():
        for i in range(0, len(batch), chunk):
            out += forward(model, batch[i:i + chunk]).answers
    return out


def saturation(res: RunResult, head: str) -> torch.Tensor:
    """Attention mass on the keys tied for the top score, per (batch, query)."""
    sc = res.scores[head]
    att = res.attn[head]
    top = sc.max(-1, keepdim=True).values
    tied = (sc >= top - 1e-9 * top.abs().clamp_min(1.0)) & torch.isfinite(sc)
    return (att * tied).sum(-1)


def dump_tape(res: RunResult, tokens: Sequence[str], path: str | Path, layout: FieldLayout,
              batch_index: int = 0, fields: Sequence[str] = ("CHAR_OI", "OBJ_OI", "STATE_OI", "ANSWER")) -> None:
    """Write the named fields of every (layer, position) as plain text."""
    from .io_utils import atomic_write_text

    if res.tape is None:
        raise ValueError("run the model with record=True to dump its tape")
    lines = ["# lookback-tape/1", f"# layers={len(res.tape) - 1} positions={len(tokens)} fields={','.join(fields)}"]
    for l, x in enumerate(res.tape):
        for p, tok in enumerate(tokens):
            vals = []
            for f in fields:
                v = x[batch_index, p, layout.sl(f)].detach().numpy()
                vals.append(f"{f}=" + ",".join(f"{a:.3g}" for a in np.round(v, 6)))
            lines.append(f"{l}\t{p}\t{tok}\t" + "\t".join(vals))
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
