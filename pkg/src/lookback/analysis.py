"""Attention knockout and per-head subspace norms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import torch

from .dataset import AnnotatedSample, select_positions
from .errors import ZeroColumn
from .toy_model import DTYPE, Knockout, ToyModel, forward


@dataclass(frozen=True)
class KnockoutSpec:
    """Cut attention from ``query`` cells to ``blocked`` cells."""

    query: tuple[str, ...] = ("seg:question", "seg:answer")
    blocked: tuple[str, ...] = ("VisSentence(*)",)


def knockout_mask(samples: Sequence[AnnotatedSample], spec: KnockoutSpec) -> torch.Tensor:
    T = max(len(s.tokens) for s in samples)
    m = torch.zeros(len(samples), T, T, dtype=torch.bool)
    for b, s in enumerate(samples):
        q = select_positions(s, spec.query)
        k = select_positions(s, spec.blocked)
        if q and k:
            m[b, torch.tensor(q).unsqueeze(1), torch.tensor(k).unsqueeze(0)] = True
    return m


def run_knockout(model: ToyModel, samples: Sequence[AnnotatedSample], spec: KnockoutSpec = KnockoutSpec(),
                 allowed_layers: Iterable[int] = ()) -> float:
    """Accuracy against the gold answers with the edges cut in every block except ``allowed_layers``."""
    samples = list(samples)
    allowed = frozenset(allowed_layers)
    bad = [l for l in allowed if not 1 <= l <= model.n_layers]
    if bad:
        raise ValueError(f"knockout layers must be block indices in [1, {model.n_layers}], got {bad}")
    ko = Knockout(knockout_mask(samples, spec), allowed)
    with torch.no_grad():
        res = forward(model, [s.tokens for s in samples], knockout=ko)
    return sum(a == s.gold for a, s in zip(res.answers, samples)) / len(samples)


def knockout_profile(model: ToyModel, samples: Sequence[AnnotatedSample],
                     spec: KnockoutSpec = KnockoutSpec()) -> dict[str, float]:
    """Accuracy with no cut, with every block cut, and with each single block re-enabled."""
    out = {"intact": run_knockout(model, samples, spec, range(1, model.n_layers + 1)),
           "all-blocked": run_knockout(model, samples, spec, ())}
    for l in range(1, model.n_layers + 1):
        out[f"only-{l}"] = run_knockout(model, samples, spec, (l,))
    return out


def _normalize_columns(W: torch.Tensor) -> torch.Tensor:
    norms = W.norm(dim=0)
    keep = norms > 0
    if not keep.any():
        raise ZeroColumn("every column of the stacked projection is zero")
    out = torch.zeros_like(W)
    out[:, keep] = W[:, keep] / norms[keep]
    return out


def head_subspace_norms(model: ToyModel, layer: int, subspace: torch.Tensor, which: str = "Q") -> dict[str, float]:
    """Frobenius norm of each head's column-normalized ``W_Q`` (or ``W_V``) projected on ``subspace``.

    ``subspace`` is a ``d x k`` matrix with orthonormal columns.
    """
    if which not in ("Q", "V"):
        raise ValueError("which must be 'Q' or 'V'")
    block = model.blocks[layer - 1]
    mats = [h.W_Q if which == "Q" else h.W_V for h in block.heads]
    Wn = _normalize_columns(torch.cat(mats, 1))
    proj = subspace.to(DTYPE).T @ Wn
    out, at = {}, 0
    for h, W in zip(block.heads, mats):
        out[h.name] = float(proj[:, at:at + W.shape[1]].norm())
        at += W.shape[1]
    return out


def argmax_head(norms: dict[str, float]) -> str:
    return max(norms, key=norms.get)


def random_subspace(d: int, k: int, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    q, _ = torch.linalg.qr(torch.randn(d, k, generator=g, dtype=DTYPE))
    return q
