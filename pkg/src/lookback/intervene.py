"""Interchange interventions on the toy model: patches, layer sweeps, mediation grids."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .dataset import CounterfactualPair, KindSpec, PatchTemplate, select_positions, CATALOG
from .errors import AlignmentGap
from .toy_model import DTYPE, RunResult, ToyModel, forward


@dataclass(frozen=True)
class PatchSpec:
    """Patch ``targets`` at ``layer`` from the counterfactual run; ``freeze`` cells keep
    their original-run value at every layer.

    ``subspace`` is ``"full"``, a layout field name, or a ``d x d`` projection matrix.
    """

    layer: int
    targets: tuple[str, ...]
    subspace: object = "full"
    freeze: tuple[str, ...] = ()

    @classmethod
    def from_template(cls, tpl: PatchTemplate, layer: int) -> "PatchSpec":
        return cls(layer, tpl.targets, tpl.subspace, tpl.freeze)


def projection(model: ToyModel, subspace) -> torch.Tensor | None:
    """``None`` for the full residual, otherwise a ``d x d`` matrix."""
    if isinstance(subspace, str):
        if subspace == "full":
            return None
        B = model.layout.basis(subspace)
        return B @ B.T
    return subspace


@dataclass
class _Prepared:
    pairs: list[CounterfactualPair]
    cf: RunResult
    base: RunResult
    T: int


def _prepare(model: ToyModel, pairs: Sequence[CounterfactualPair]) -> _Prepared:
    with torch.no_grad():
        cf = forward(model, [p.counterfactual.tokens for p in pairs], record=True)
        base = forward(model, [p.original.tokens for p in pairs], record=True)
    T = max(len(p.original.tokens) for p in pairs)
    return _Prepared(list(pairs), cf, base, T)


def _cell_masks(prep: _Prepared, targets: Sequence[str]):
    """Target mask ``B x T x 1`` and donor index ``B x T`` (positions in the counterfactual)."""
    Bsz, T = len(prep.pairs), prep.T
    mask = torch.zeros(Bsz, T, 1, dtype=DTYPE)
    donor = torch.zeros(Bsz, T, dtype=torch.long)
    for b, pair in enumerate(prep.pairs):
        dmap = pair.donor_of
        for p in select_positions(pair.original, targets):
            if p not in dmap:
                raise AlignmentGap(f"pair {b}: original position {p} has no aligned counterfactual position")
            mask[b, p, 0] = 1.0
            donor[b, p] = dmap[p]
    return mask, donor


def _freeze_mask(prep: _Prepared, freeze: Sequence[str]) -> torch.Tensor | None:
    if not freeze:
        return None
    m = torch.zeros(len(prep.pairs), prep.T, 1, dtype=DTYPE)
    for b, pair in enumerate(prep.pairs):
        for p in select_positions(pair.original, freeze):
            m[b, p, 0] = 1.0
    return m


def _gather(tape_l: torch.Tensor, donor: torch.Tensor, T: int) -> torch.Tensor:
    src = tape_l
    if src.shape[1] < T:
        src = torch.nn.functional.pad(src, (0, 0, 0, T - src.shape[1]))
    idx = donor.unsqueeze(-1).expand(-1, -1, src.shape[-1])
    return torch.gather(src, 1, idx)


def make_hooks(model: ToyModel, prep: _Prepared, spec: PatchSpec, W: torch.Tensor | None = None):
    """Hooks implementing ``h <- W h_c + (I - W) h_o`` on the target cells plus freezing."""
    L = model.n_layers
    mask, donor = _cell_masks(prep, spec.targets)
    W = projection(model, spec.subspace) if W is None else W
    donor_h = _gather(prep.cf.tape[spec.layer], donor, prep.T)
    fmask = _freeze_mask(prep, spec.freeze)

    def target_hook(h):
        diff = donor_h[:, : h.shape[1]] - h
        if W is not None:
            diff = diff @ W.T
        return h + mask[:, : h.shape[1]] * diff

    hooks: dict[int, list] = {spec.layer: [target_hook]}
    if fmask is not None:
        # earlier layers are untouched, so freezing only matters from the patch layer on
        for l in range(spec.layer, L + 1):
            base_l = prep.base.tape[l]

            def freeze_hook(h, base_l=base_l):
                fm = fmask[:, : h.shape[1]]
                return h + fm * (base_l[:, : h.shape[1]] - h)
            hooks.setdefault(l, []).append(freeze_hook)
    return hooks


def run_patched(model: ToyModel, prep: _Prepared, spec: PatchSpec, W: torch.Tensor | None = None,
                **kw) -> RunResult:
    """Original runs under the patch, resumed from the unpatched tape at the patch layer."""
    toks = [p.original.tokens for p in prep.pairs]
    hooks = make_hooks(model, prep, spec, W)
    return forward(model, toks, hooks, resume=(spec.layer, prep.base.tape[spec.layer]), **kw)


def apply_patch(model: ToyModel, pairs: Sequence[CounterfactualPair], spec: PatchSpec) -> list[str]:
    """Answers of the original runs under the patch."""
    prep = _prepare(model, pairs)
    with torch.no_grad():
        return run_patched(model, prep, spec).answers


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class IIARow:
    kind: str
    layer: int
    token_group: str
    matches: int
    total: int

    @property
    def iia(self) -> float:
        return self.matches / self.total if self.total else 0.0


@dataclass
class IIAReport:
    rows: list[IIARow] = field(default_factory=list)
    outputs: dict[tuple[str, int, str], list[str]] = field(default_factory=dict)

    COLUMNS = ("kind", "layer", "token_group", "matches", "total", "iia")

    def extend(self, other: "IIAReport") -> None:
        self.rows += other.rows
        self.outputs.update(other.outputs)

    def curve(self, kind: str, token_group: str | None = None) -> dict[int, float]:
        return {r.layer: r.iia for r in self.rows
                if r.kind == kind and (token_group is None or r.token_group == token_group)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow((r.kind, r.layer, r.token_group, r.matches, r.total, f"{r.iia:.4f}"))
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        from .io_utils import atomic_write_text

        atomic_write_text(Path(path), self.to_csv())


def _group_label(spec: PatchSpec) -> str:
    lab = "+".join(spec.targets)
    if isinstance(spec.subspace, str) and spec.subspace != "full":
        lab += f"[{spec.subspace}]"
    elif not isinstance(spec.subspace, str):
        lab += "[masked]"
    return lab


def layer_sweep(model: ToyModel, pairs: Sequence[CounterfactualPair], template: PatchTemplate | None = None,
                layers: Iterable[int] | None = None, kind: str | None = None) -> IIAReport:
    """IIA of a single-layer patch at every layer (``0..L`` by default)."""
    pairs = list(pairs)
    kind = kind or pairs[0].kind
    template = template or CATALOG[kind].template
    layers = list(range(model.n_layers + 1)) if layers is None else list(layers)
    prep = _prepare(model, pairs)
    report = IIAReport()
    for l in layers:
        spec = PatchSpec.from_template(template, l)
        with torch.no_grad():
            res = run_patched(model, prep, spec)
        hits = sum(a == p.expected for a, p in zip(res.answers, pairs))
        label = _group_label(spec)
        report.rows.append(IIARow(kind, l, label, hits, len(pairs)))
        report.outputs[(kind, l, label)] = res.answers
    return report


def scheduled_window(model: ToyModel, spec: KindSpec) -> range:
    return model.schedule.window(spec.window)


# ---------------------------------------------------------------- mediation


@dataclass
class MediationGrid:
    kind: str
    columns: list[str]                 # "p03:Char(1)"
    layers: list[int]
    iia: torch.Tensor                  # layers x columns

    def cell(self, layer: int, column: str) -> float:
        return float(self.iia[self.layers.index(layer), self.columns.index(column)])

    def column_role(self, j: int) -> str:
        return self.columns[j].split(":", 1)[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer"] + self.columns)
        for i, l in enumerate(self.layers):
            w.writerow([l] + [f"{v:.4f}" for v in self.iia[i].tolist()])
        return buf.getvalue()


def mediation_grid(model: ToyModel, pairs: Sequence[CounterfactualPair], layers: Iterable[int] | None = None) -> MediationGrid:
    """Single-cell full-residual patches at every (layer, position)."""
    pairs = list(pairs)
    T = len(pairs[0].original.tokens)
    if any(len(p.original.tokens) != T or len(p.counterfactual.tokens) != T for p in pairs):
        raise AlignmentGap("mediation grids need prompts of one common length")
    first = pairs[0].original
    columns = [f"p{p:02d}:{first.roles[p]}" for p in range(T)]
    layers = list(range(model.n_layers + 1)) if layers is None else list(layers)
    with torch.no_grad():
        cf = forward(model, [p.counterfactual.tokens for p in pairs], record=True)
        base = forward(model, [p.original.tokens for p in pairs], record=True)
    n = len(pairs)
    expected = [p.expected for p in pairs]
    grid = torch.zeros(len(layers), T, dtype=DTYPE)
    toks = [p.original.tokens for p in pairs] * T
    for i, l in enumerate(layers):
        x = base.tape[l].repeat(T, 1, 1)          # (T*n) x T x d, cell p occupies rows p*n..
        c = cf.tape[l].repeat(T, 1, 1)
        for p in range(T):
            x[p * n:(p + 1) * n, p] = c[p * n:(p + 1) * n, p]
        with torch.no_grad():
            res = forward(model, toks, resume=(l, x))
        for p in range(T):
            ans = res.answers[p * n:(p + 1) * n]
            grid[i, p] = sum(a == e for a, e in zip(ans, expected)) / n
    return MediationGrid(pairs[0].kind, columns, layers, grid)
