import json

import pytest
from click.testing import CliRunner

from lookback import __version__
from lookback.cli import main
from lookback.dataset import CATALOG, DEFAULT_GEN_KINDS


def invoke(*args, env=None):
    return CliRunner().invoke(main, list(args), env=env, catch_exceptions=False)


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_list_experiments():
    r = invoke("--list-experiments")
    assert r.exit_code == 0
    lines = r.output.strip().splitlines()
    assert len(lines) == 2 * len(CATALOG)
    names = {ln.split()[0] for ln in lines}
    assert names == set(CATALOG) | {f"{k}@3" for k in CATALOG}
    assert any(ln.startswith("answer-pointer ") and "Fig. 5" in ln for ln in lines)


def test_version():
    assert __version__ in invoke("--version").output


def test_gen_default_and_rerun(tmp_path):
    r = invoke("gen", "--out", str(tmp_path))
    assert r.exit_code == 0
    out = tmp_path / "gen"
    data = [n for n in files(out) if n.endswith(".jsonl")]
    assert len(data) == len(DEFAULT_GEN_KINDS) == 15
    for name in data:
        header = json.loads((out / name).read_text().splitlines()[0])
        assert header["pairs"] == 80
    first = files(out)
    assert invoke("gen", "--out", str(tmp_path)).exit_code == 0
    assert files(out) == first
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__ and len(manifest["config_hash"]) == 64


def test_gen_one_kind_env_root(tmp_path):
    r = invoke("gen", "--kinds", "answer-pointer@3", "--pairs", "4", env={"LOOKBACK_OUT": str(tmp_path)})
    assert r.exit_code == 0
    assert sorted(files(tmp_path / "gen")) == ["answer-pointer@3.jsonl", "manifest.json"]


@pytest.mark.parametrize("args", [("gen", "--kinds", "nope"), ("run", "--layers", "x-y"),
                                  ("run", "--kinds", "answer-pointer", "--layers", "40"),
                                  ("gen", "--n-triples", "4")])
def test_config_errors_exit_2(tmp_path, args):
    assert invoke(*args, "--out", str(tmp_path)).exit_code == 2


def test_run_sweep_and_plot(tmp_path):
    r = invoke("run", "--kinds", "answer-pointer", "--layers", "7-10", "--pairs", "10", "--plots",
               "--out", str(tmp_path))
    assert r.exit_code == 0
    out = tmp_path / "run"
    csv = (out / "answer-pointer@2.csv").read_text().splitlines()
    assert [ln.split(",")[-1] for ln in csv[1:]] == ["0.0000", "1.0000", "1.0000", "0.0000"]
    svg = (out / "answer-pointer@2.svg").read_text()
    assert svg.startswith("<svg") and "<polyline" in svg


def test_run_from_generated_data(tmp_path):
    invoke("gen", "--kinds", "query-obj-oi", "--pairs", "6", "--out", str(tmp_path))
    r = invoke("run", "--kinds", "query-obj-oi", "--layers", "2-6", "--data", str(tmp_path / "gen"),
               "--out", str(tmp_path))
    assert r.exit_code == 0
    rows = (tmp_path / "run" / "query-obj-oi@2.csv").read_text().splitlines()[1:]
    assert [r.split(",")[3] for r in rows] == ["0", "6", "6", "6", "0"]


def test_run_data_errors_exit_3(tmp_path):
    assert invoke("run", "--kinds", "answer-pointer", "--data", str(tmp_path / "none"),
                  "--out", str(tmp_path)).exit_code == 3
    invoke("gen", "--kinds", "answer-pointer", "--pairs", "3", "--out", str(tmp_path))
    f = tmp_path / "gen" / "answer-pointer@2.jsonl"
    f.write_text("\n".join(f.read_text().splitlines()[:-1]) + "\n")
    r = invoke("run", "--kinds", "answer-pointer", "--data", str(tmp_path / "gen"), "--out", str(tmp_path))
    assert r.exit_code == 3


def test_run_empty_kinds_is_noop(tmp_path):
    r = invoke("run", "--kinds", "", "--out", str(tmp_path))
    assert r.exit_code == 0
    assert not (tmp_path / "run").exists()


def test_run_mediation_grid(tmp_path):
    r = invoke("run", "--kinds", "mediation-state", "--pairs", "4", "--layers", "9,10", "--out", str(tmp_path))
    assert r.exit_code == 0
    lines = (tmp_path / "run" / "mediation-state@2.grid.csv").read_text().splitlines()
    assert lines[0].startswith("layer,p00:") and lines[0].endswith(":FinalColon")
    assert [ln.split(",")[0] for ln in lines[1:]] == ["9", "10"]


def test_dcm(tmp_path):
    r = invoke("dcm", "--lambda", "0.05", "--pairs", "40", "--out", str(tmp_path))
    assert r.exit_code == 0
    doc = json.loads((tmp_path / "dcm" / "answer-pointer.lambda0.05.mask.json").read_text())
    assert doc["heldout_iia"] >= 0.95 and sum(doc["binary"]) <= 3 + 2


def test_knockout_and_heads(tmp_path):
    assert invoke("knockout", "--pairs", "20", "--out", str(tmp_path)).exit_code == 0
    rows = dict(ln.split(",") for ln in (tmp_path / "knockout" / "knockout.csv").read_text().splitlines()[1:])
    restoring = [k for k, v in rows.items() if k.startswith("only-") and float(v) == 1.0]
    assert restoring == ["only-5"] and float(rows["all-blocked"]) == 0.0
    assert invoke("heads", "--out", str(tmp_path)).exit_code == 0
    tops = {ln.split(",")[0]: ln.split(",")[3]
            for ln in (tmp_path / "heads" / "heads.csv").read_text().splitlines()[1:] if ln.endswith(",1")}
    assert tops == {"vis-pointer": "vis_deref", "vis-payload": "vis_deref", "binding-pointer": "binding",
                    "binding-payload": "binding", "answer-pointer": "answer", "answer-payload": "answer"}
