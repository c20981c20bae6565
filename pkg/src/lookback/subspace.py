"""SVD featurization and DCM mask training over residual subspaces."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .causal_model import Story
from .dataset import CounterfactualPair, annotate, select_positions
from .errors import DegenerateMatrix, NonfiniteLoss, SchemaError
from .intervene import PatchSpec, _prepare, run_patched
from .toy_model import DTYPE, ToyModel, forward

MASK_SCHEMA = "lookback-mask/1"


@dataclass(frozen=True)
class Location:
    """A (layer, token selector) cell group, plus the field the mechanism is designed to use."""

    name: str
    layer_attr: str                  # schedule attribute, e.g. "L_BIND"
    targets: tuple[str, ...]
    kind: str                        # experiment kind supplying pairs
    truth_fields: tuple[str, ...]    # designed subspace, used for scoring only

    def layer(self, model: ToyModel) -> int:
        return model.schedule.resolve(self.layer_attr)


LOCATIONS = {
    "answer-pointer": Location("answer-pointer", "L_BIND", ("FinalColon",), "answer-pointer", ("STATE_OI",)),
    "binding-payload": Location("binding-payload", "L_ADDR", ("State(*)",), "binding-addr-payload",
                                ("CHAR_OI", "OBJ_OI", "STATE_OI")),
}


# ---------------------------------------------------------------- activations


def rotate_states(story: Story, r: int) -> Story:
    """Cyclically reassign state tokens to triples; OIs stay put, token identity moves."""
    st = story.states
    st = st[r % len(st):] + st[: r % len(st)]
    trip = tuple((c, o, s) for (c, o, _), s in zip(story.triples, st))
    return replace(story, triples=trip)


def collect_activations(model: ToyModel, pairs: Sequence[CounterfactualPair], layer: int,
                        targets: Sequence[str], balanced: bool = True) -> torch.Tensor:
    """Residual vectors at ``targets`` on every story of ``pairs`` (``n x d``).

    With ``balanced`` each story is also run under every cyclic state rotation,
    so token identity is uncorrelated with state ordering IDs.
    """
    samples = []
    for p in pairs:
        for s in (p.original, p.counterfactual):
            if balanced:
                samples += [annotate(rotate_states(s.story, r)) for r in range(s.story.n)]
            else:
                samples.append(s)
    with torch.no_grad():
        res = forward(model, [s.tokens for s in samples], record=True)
    x = res.tape[layer]
    rows = [x[b, p] for b, s in enumerate(samples) for p in select_positions(s, targets)]
    if not rows:
        raise DegenerateMatrix("no positions matched the location selector")
    return torch.stack(rows)


@dataclass
class SVDBasis:
    V: torch.Tensor          # d x r, orthonormal columns
    singular: torch.Tensor   # r
    mean: torch.Tensor       # d


def fit_svd(acts: torch.Tensor, center: bool = False, rel_tol: float = 1e-9) -> SVDBasis:
    """Right singular vectors of the activation matrix, dropping numerically null ones."""
    if acts.ndim != 2 or acts.shape[0] == 0:
        raise DegenerateMatrix("activations must be a non-empty n x d matrix")
    if not torch.isfinite(acts).all():
        raise DegenerateMatrix("activations contain non-finite values")
    mean = acts.mean(0) if center else torch.zeros(acts.shape[1], dtype=acts.dtype)
    X = acts - mean
    _, S, Vh = torch.linalg.svd(X, full_matrices=False)
    if S.numel() == 0 or S[0] <= 0:
        raise DegenerateMatrix("activation matrix has rank zero")
    keep = S > rel_tol * S[0]
    return SVDBasis(Vh[keep].T.contiguous(), S[keep], mean)


def projection_from_mask(V: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """``V diag(m) diag(m) V^T``; idempotent when ``m`` is binary."""
    return (V * (m * m)) @ V.T


# ---------------------------------------------------------------- training


@dataclass
class DCMConfig:
    lam: float = 0.05
    lr: float = 0.01
    batch: int = 4
    epochs: int = 1
    seed: int = 0


@dataclass
class DCMResult:
    location: str
    layer: int
    targets: tuple[str, ...]
    basis: SVDBasis
    mask: torch.Tensor               # continuous, in [0, 1]
    history: list[float] = field(default_factory=list)
    lam: float | None = None
    seed: int | None = None
    heldout_iia: float | None = None

    @property
    def binary(self) -> torch.Tensor:
        return (self.mask >= 0.5).to(DTYPE)

    @property
    def rank(self) -> int:
        return int(self.binary.sum())

    def projection(self, binary: bool = True) -> torch.Tensor:
        return projection_from_mask(self.basis.V, self.binary if binary else self.mask)

    def energy_in(self, field_basis: torch.Tensor) -> float:
        """Mean squared norm of the selected basis vectors inside ``field_basis``."""
        sel = self.basis.V[:, self.binary.bool()]
        if sel.shape[1] == 0:
            return 0.0
        return float(((field_basis.T @ sel) ** 2).sum() / sel.shape[1])


class MaskObjective:
    """``-logit(expected) + lam * sum(m)`` for a fixed set of pairs."""

    def __init__(self, model: ToyModel, pairs: Sequence[CounterfactualPair], layer: int,
                 targets: Sequence[str], V: torch.Tensor, lam: float):
        self.model, self.pairs, self.V, self.lam = model, list(pairs), V, lam
        self.prep = _prepare(model, self.pairs)
        self.spec = PatchSpec(layer, tuple(targets))
        idx = model.vocab.answer_index
        self.gold = torch.tensor([idx[p.expected] for p in self.pairs])

    def __call__(self, m: torch.Tensor) -> torch.Tensor:
        W = projection_from_mask(self.V, m)
        res = run_patched(self.model, self.prep, self.spec, W)
        logit = res.logits[torch.arange(len(self.pairs)), self.gold]
        return -logit.mean() + self.lam * m.sum()


def train_mask(model: ToyModel, pairs: Sequence[CounterfactualPair], layer: int, targets: Sequence[str],
               basis: SVDBasis, cfg: DCMConfig = DCMConfig(), location: str = "custom") -> DCMResult:
    """Adam on a per-feature mask, clamped to [0, 1] after each step."""
    pairs = list(pairs)
    m = torch.ones(basis.V.shape[1], dtype=DTYPE, requires_grad=True)
    opt = torch.optim.Adam([m], lr=cfg.lr)
    rng = random.Random(cfg.seed)
    objectives = {}
    history = []
    for _ in range(cfg.epochs):
        order = list(range(len(pairs)))
        rng.shuffle(order)
        for i in range(0, len(order), cfg.batch):
            key = tuple(order[i:i + cfg.batch])
            if key not in objectives:
                objectives[key] = MaskObjective(model, [pairs[j] for j in key], layer, targets, basis.V, cfg.lam)
            loss = objectives[key](m)
            if not torch.isfinite(loss):
                raise NonfiniteLoss(f"loss became {loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            with torch.no_grad():
                m.clamp_(0.0, 1.0)
            history.append(loss.item())
    return DCMResult(location, layer, tuple(targets), basis, m.detach().clone(), history, cfg.lam, cfg.seed)


def masked_iia(model: ToyModel, pairs: Sequence[CounterfactualPair], layer: int, targets: Sequence[str],
               W: torch.Tensor) -> float:
    prep = _prepare(model, list(pairs))
    with torch.no_grad():
        res = run_patched(model, prep, PatchSpec(layer, tuple(targets)), W)
    return sum(a == p.expected for a, p in zip(res.answers, pairs)) / len(pairs)


def gradient_check(objective: MaskObjective, m: torch.Tensor, h: float = 1e-3) -> tuple[torch.Tensor, torch.Tensor]:
    """Autograd gradient and a Richardson-extrapolated central difference."""
    mm = m.detach().clone().requires_grad_(True)
    loss = objective(mm)
    (g,) = torch.autograd.grad(loss, mm)
    fd = torch.zeros_like(g)
    with torch.no_grad():
        for i in range(len(m)):
            def cd(step):
                e = torch.zeros_like(m)
                e[i] = step
                return (objective(m + e) - objective(m - e)) / (2 * step)
            fd[i] = (4 * cd(h / 2) - cd(h)) / 3
    return g, fd


# ---------------------------------------------------------------- mask files


def save_mask(result: DCMResult, path: str | Path) -> None:
    from .io_utils import atomic_write_text

    doc = {
        "schema": MASK_SCHEMA,
        "location": result.location,
        "layer": result.layer,
        "targets": list(result.targets),
        "lambda": result.lam,
        "seed": result.seed,
        "heldout_iia": result.heldout_iia,
        "mask": result.mask.tolist(),
        "binary": [int(b) for b in result.binary.tolist()],
        "singular": result.basis.singular.tolist(),
        "mean": result.basis.mean.tolist(),
        "basis": result.basis.V.T.tolist(),
    }
    atomic_write_text(Path(path), json.dumps(doc) + "\n")


def load_mask(path: str | Path) -> DCMResult:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"mask file is not JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("schema") != MASK_SCHEMA:
        raise SchemaError(f"expected schema {MASK_SCHEMA}", 1)
    V = torch.tensor(np.array(doc["basis"]), dtype=DTYPE).T.contiguous()
    basis = SVDBasis(V, torch.tensor(doc["singular"], dtype=DTYPE), torch.tensor(doc["mean"], dtype=DTYPE))
    try:
        return DCMResult(doc["location"], int(doc["layer"]), tuple(doc["targets"]), basis,
                         torch.tensor(doc["mask"], dtype=DTYPE), [], doc.get("lambda"), doc.get("seed"),
                         doc.get("heldout_iia"))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed mask file: {exc}", 1) from None
