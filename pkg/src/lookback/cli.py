"""Command-line entry point: ``lookback gen|run|dcm|knockout|heads``."""

from __future__ import annotations

import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click

from . import __version__
from .errors import LookbackError, MissingDataset, SchemaError

EXIT_CONFIG = 2
EXIT_DATA = 3
OUT_ENV = "LOOKBACK_OUT"


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    n_triples: int = 2
    visibility: str = "none"
    kinds: list[str] = field(default_factory=list)
    layers: list[int] | None = None
    lambdas: list[float] = field(default_factory=lambda: [0.01, 0.05, 0.1])
    out: str = ""
    plots: bool = False
    pairs: int = 80
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _out_root(out: str | None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or "lookback-out")


def _write_manifest(cfg: RunConfig, outdir: Path, files: list[str]) -> None:
    from .io_utils import atomic_write_text, config_hash

    doc = {"version": __version__, "config_hash": config_hash(asdict(cfg)), "config": asdict(cfg),
           "files": sorted(files)}
    atomic_write_text(outdir / "manifest.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _parse_kinds(raw: str | None, default: tuple[str, ...]) -> list[str]:
    from .dataset import parse_kind

    if raw is None:
        return list(default)
    kinds = [k.strip() for k in raw.split(",") if k.strip()]
    for k in kinds:
        try:
            parse_kind(k)
        except KeyError as exc:
            raise click.BadParameter(str(exc.args[0]), param_hint="--kinds") from None
    return kinds


def _parse_layers(raw: str | None) -> list[int] | None:
    if raw is None:
        return None
    out: list[int] = []
    try:
        for part in raw.split(","):
            part = part.strip()
            if "-" in part:
                a, b = part.split("-", 1)
                out += list(range(int(a), int(b) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise click.BadParameter(f"cannot parse layer list {raw!r}", param_hint="--layers") from None
    return out


class _Group(click.Group):
    """Maps data errors to exit code 3 and other workbench errors to 2."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except (SchemaError, MissingDataset) as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except (LookbackError, ValueError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)


def _list_experiments(ctx, _param, value):
    if not value or ctx.resilient_parsing:
        return
    from .dataset import list_experiments

    for name, fig, desc in list_experiments():
        click.echo(f"{name:28s} {fig:24s} {desc}")
    ctx.exit(0)


@click.group(cls=_Group)
@click.version_option(__version__, prog_name="lookback")
@click.option("--list-experiments", is_flag=True, expose_value=False, is_eager=True, callback=_list_experiments,
              help="Print the experiment catalog and exit.")
def main():
    """Lookback-mechanism workbench on a hand-built toy transformer."""


_seed = click.option("--seed", type=int, default=0, show_default=True)
_ntrip = click.option("--n-triples", type=click.IntRange(2, 3), default=2, show_default=True)
_out = click.option("--out", type=click.Path(file_okay=False), default=None,
                    help=f"Output root (default ${OUT_ENV} or ./lookback-out).")


@main.command()
@_seed
@_ntrip
@click.option("--kinds", default=None, help="Comma-separated kinds (default: all pair kinds).")
@click.option("--pairs", type=click.IntRange(1), default=80, show_default=True)
@_out
def gen(seed, n_triples, kinds, pairs, out):
    """Write one pair file per experiment kind."""
    from .dataset import DEFAULT_GEN_KINDS, make_pairs, parse_kind, write_dataset

    kinds = _parse_kinds(kinds, DEFAULT_GEN_KINDS)
    cfg = RunConfig("gen", seed, n_triples, kinds=kinds, out=str(_out_root(out)), pairs=pairs)
    outdir = _out_root(out) / "gen"
    files = []
    for k in kinds:
        base, n = parse_kind(k)
        n = n if "@" in k else n_triples
        ps = make_pairs(base, pairs, seed, n)
        name = f"{base}@{n}.jsonl"
        write_dataset(ps, outdir / name)
        files.append(name)
        click.echo(f"{name}: {len(ps)} pairs")
    if kinds:
        _write_manifest(cfg, outdir, files)


def _load_or_make(data: str | None, kind: str, n: int, pairs: int, seed: int):
    from .dataset import make_pairs, read_dataset

    if data is None:
        return make_pairs(kind, pairs, seed, n)
    path = Path(data) / f"{kind}@{n}.jsonl"
    if not path.exists():
        raise MissingDataset(f"no dataset file {path}")
    return read_dataset(path)


@main.command()
@_seed
@_ntrip
@click.option("--kinds", default=None, help="Comma-separated kinds (default: all pair kinds).")
@click.option("--layers", default=None, help="Layer list such as '0-12' or '3,4,5'.")
@click.option("--pairs", type=click.IntRange(1), default=80, show_default=True)
@click.option("--data", type=click.Path(file_okay=False), default=None,
              help="Read pair files written by 'gen' instead of generating them.")
@click.option("--plots/--no-plots", default=False, show_default=True)
@_out
def run(seed, n_triples, kinds, layers, pairs, data, plots, out):
    """Layer sweeps (and mediation grids) with one report per kind."""
    from .dataset import CATALOG, DEFAULT_GEN_KINDS, MEDIATION_KINDS, parse_kind
    from .intervene import layer_sweep, mediation_grid
    from .io_utils import atomic_write_text
    from .plots import iia_svg, write_svg
    from .toy_model import build_model

    kinds = _parse_kinds(kinds, DEFAULT_GEN_KINDS)
    layer_list = _parse_layers(layers)
    cfg = RunConfig("run", seed, n_triples, kinds=kinds, layers=layer_list, out=str(_out_root(out)),
                    plots=plots, pairs=pairs, extra={"data": data})
    if not kinds:
        return
    model = build_model()
    bad = [l for l in (layer_list or []) if not 0 <= l <= model.n_layers]
    if bad:
        raise click.BadParameter(f"layers {bad} outside [0, {model.n_layers}]", param_hint="--layers")
    outdir = _out_root(out) / "run"
    files = []
    for k in kinds:
        base, n = parse_kind(k)
        n = n if "@" in k else n_triples
        ps = _load_or_make(data, base, n, pairs, seed)
        stem = f"{base}@{n}"
        if base in MEDIATION_KINDS:
            grid = mediation_grid(model, ps, layer_list)
            atomic_write_text(outdir / f"{stem}.grid.csv", grid.to_csv())
            files.append(f"{stem}.grid.csv")
            click.echo(f"{stem}: grid {len(grid.layers)} x {len(grid.columns)}")
            continue
        if not CATALOG[base].pair_based:
            click.echo(f"{stem}: not a sweep kind; use the 'knockout' command")
            continue
        rep = layer_sweep(model, ps, layers=layer_list)
        rep.write_csv(outdir / f"{stem}.csv")
        files.append(f"{stem}.csv")
        window = list(model.schedule.window(CATALOG[base].window))
        curve = rep.curve(base)
        click.echo(f"{stem}: " + " ".join(f"{l}:{v:.2f}" for l, v in sorted(curve.items()))
                   + (f"  (scheduled {window[0]}..{window[-1]})" if window else ""))
        if plots:
            write_svg(outdir / f"{stem}.svg", iia_svg({stem: curve}, f"{stem} IIA by layer"))
            files.append(f"{stem}.svg")
    _write_manifest(cfg, outdir, files)


@main.command()
@_seed
@click.option("--location", type=click.Choice(["answer-pointer", "binding-payload"]), default="answer-pointer",
              show_default=True)
@click.option("--lambda", "lambdas", type=float, multiple=True, default=(0.01, 0.05, 0.1), show_default=True,
              help="Sparsity weight; repeat for a sweep.")
@click.option("--epochs", type=click.IntRange(1), default=8, show_default=True)
@click.option("--pairs", type=click.IntRange(4), default=80, show_default=True)
@_out
def dcm(seed, location, lambdas, epochs, pairs, out):
    """Train a binary feature mask over an SVD basis at a location."""
    from .dataset import make_pairs
    from .subspace import LOCATIONS, DCMConfig, collect_activations, fit_svd, masked_iia, save_mask, train_mask
    from .toy_model import build_model

    cfg = RunConfig("dcm", seed, lambdas=list(lambdas), out=str(_out_root(out)), pairs=pairs,
                    extra={"location": location, "epochs": epochs})
    model = build_model()
    loc = LOCATIONS[location]
    layer = loc.layer(model)
    train = make_pairs(loc.kind, pairs, seed * 2 + 1)
    test = make_pairs(loc.kind, 80, seed * 2 + 2)
    pool = make_pairs(loc.kind, 250, seed * 2 + 3)          # 500 stories for the basis, drawn independently
    basis = fit_svd(collect_activations(model, pool, layer, loc.targets), center=True)
    outdir = _out_root(out) / "dcm"
    files = []
    for lam in lambdas:
        res = train_mask(model, train, layer, loc.targets, basis, DCMConfig(lam=lam, epochs=epochs, seed=seed), location)
        iia = masked_iia(model, test, layer, loc.targets, res.projection())
        res.heldout_iia = iia
        energy = res.energy_in(model.layout.basis(*loc.truth_fields))
        name = f"{location}.lambda{lam:g}.mask.json"
        save_mask(res, outdir / name)
        files.append(name)
        click.echo(f"{location} lambda={lam:g}: rank={res.rank} held-out IIA={iia:.3f} energy={energy:.3f}")
    _write_manifest(cfg, outdir, files)


@main.command()
@_seed
@_ntrip
@click.option("--pairs", type=click.IntRange(1), default=80, show_default=True)
@_out
def knockout(seed, n_triples, pairs, out):
    """Accuracy with question-to-visibility attention cut, re-enabling one block at a time."""
    from .analysis import knockout_profile
    from .dataset import make_pairs
    from .io_utils import atomic_write_text
    from .toy_model import build_model

    cfg = RunConfig("knockout", seed, n_triples, out=str(_out_root(out)), pairs=pairs)
    model = build_model()
    samples = [p.original for p in make_pairs("knockout", pairs, seed, n_triples)]
    prof = knockout_profile(model, samples)
    outdir = _out_root(out) / "knockout"
    lines = ["condition,accuracy"] + [f"{k},{v:.4f}" for k, v in prof.items()]
    atomic_write_text(outdir / "knockout.csv", "\n".join(lines) + "\n")
    for k, v in prof.items():
        click.echo(f"{k:12s} {v:.3f}")
    _write_manifest(cfg, outdir, ["knockout.csv"])


@main.command()
@_out
def heads(out):
    """Per-layer query/value norms of every head against the designed subspaces."""
    from .analysis import argmax_head, head_subspace_norms
    from .io_utils import atomic_write_text
    from .toy_model import build_model

    cfg = RunConfig("heads", out=str(_out_root(out)))
    model = build_model()
    lay, s = model.layout, model.schedule
    probes = [
        ("vis-pointer", s.L_VIS_DEREF, lay.basis("CHAR_OI"), "Q"),
        ("vis-payload", s.L_VIS_DEREF, lay.basis("VIS_OBSD"), "V"),
        ("binding-pointer", s.L_BIND, lay.basis("CHAR_OI", "OBJ_OI"), "Q"),
        ("binding-payload", s.L_BIND, lay.basis("STATE_OI"), "V"),
        ("answer-pointer", s.L_ANS, lay.basis("STATE_OI"), "Q"),
        ("answer-payload", s.L_ANS, lay.basis("ANSWER"), "V"),
    ]
    rows = ["probe,layer,proj,head,norm,argmax"]
    for name, layer, S, which in probes:
        norms = head_subspace_norms(model, layer, S, which)
        top = argmax_head(norms)
        for h, v in norms.items():
            rows.append(f"{name},{layer},{which},{h},{v:.6f},{int(h == top)}")
        click.echo(f"{name:16s} layer {layer:2d} W_{which}: argmax {top}")
    outdir = _out_root(out) / "heads"
    atomic_write_text(outdir / "heads.csv", "\n".join(rows) + "\n")
    _write_manifest(cfg, outdir, ["heads.csv"])


if __name__ == "__main__":
    main()
