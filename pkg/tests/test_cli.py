from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from bnpp.cli import app
from bnpp.graph import Dag
from bnpp.network import random_cpts
from bnpp.serialize import write_graph, write_network

runner = CliRunner()
NAMES = ("X", "Y", "Z")


@pytest.fixture(autouse=True)
def isolated_env(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("BNPP_CONFIG", str(tmp_path / "cfg" / "config.toml"))
    monkeypatch.setenv("BNPP_DB", str(tmp_path / "cfg" / "records.db"))


def _network(tmp_path: Path) -> Path:
    bn = random_cpts(Dag(3, [(0, 1), (1, 2)]), (3, 3, 3), 0.5, 1.0, np.random.default_rng(0), NAMES)
    path = tmp_path / "net.json"
    write_network(path, bn)
    return path


def _beliefs(tmp_path: Path, items: list[dict]) -> Path:
    path = tmp_path / "beliefs.json"
    path.write_text(json.dumps({"beliefs": items}), encoding="utf-8")
    return path


def _simulate(tmp_path: Path, rows: int = 300) -> Path:
    out = tmp_path / "data.csv"
    result = runner.invoke(app, ["simulate", "--network", str(_network(tmp_path)), "--rows", str(rows), "--seed", "1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_init_writes_config_and_db(tmp_path: Path) -> None:
    result = runner.invoke(app, ["init"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "cfg" / "config.toml").exists()
    assert (tmp_path / "cfg" / "records.db").exists()


def test_simulate_writes_rows(tmp_path: Path) -> None:
    out = _simulate(tmp_path, rows=25)
    df = pd.read_csv(out)
    assert list(df.columns) == list(NAMES)
    assert len(df) == 25


def test_simulate_zero_rows_writes_header_only(tmp_path: Path) -> None:
    out = _simulate(tmp_path, rows=0)
    assert out.read_text(encoding="utf-8").strip() == "X,Y,Z"


def test_learn_with_beliefs_writes_outputs(tmp_path: Path) -> None:
    data = _simulate(tmp_path)
    beliefs = _beliefs(tmp_path, [{"from": "X", "to": "Z", "statement": "causes", "p": 0.9}])
    out = tmp_path / "run"
    result = runner.invoke(
        app,
        ["learn", "--data", str(data), "--beliefs", str(beliefs), "--samples", "2000", "--operator", "swap", "--out", str(out)],
    )
    assert result.exit_code == 0, result.output
    for name in ("graph.json", "pdag.json", "trace.jsonl", "prior.json", "provenance.json"):
        assert (out / name).exists(), name
    graph = json.loads((out / "graph.json").read_text(encoding="utf-8"))
    assert graph["nodes"] == list(NAMES)
    first = json.loads((out / "trace.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert first["operator"] == "start"
    provenance = json.loads((out / "provenance.json").read_text(encoding="utf-8"))
    assert provenance["samples"] == 2000 and provenance["operator"] == "swap"


def test_learn_uniform_and_exhaustive(tmp_path: Path) -> None:
    data = _simulate(tmp_path)
    out = tmp_path / "run"
    result = runner.invoke(app, ["learn", "--data", str(data), "--exhaustive", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert not (out / "prior.json").exists()


def test_learn_exit_codes(tmp_path: Path) -> None:
    result = runner.invoke(app, ["learn", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2

    data = _simulate(tmp_path)
    beliefs = _beliefs(tmp_path, [{"from": "X", "to": "W", "statement": "causes", "p": 0.9}])
    result = runner.invoke(app, ["learn", "--data", str(data), "--beliefs", str(beliefs), "--out", str(tmp_path / "o")])
    assert result.exit_code == 3


def test_priors_reports_adjustment(tmp_path: Path) -> None:
    beliefs = _beliefs(
        tmp_path,
        [
            {"from": "X", "to": "Y", "dist": {"forward": 0.8, "backward": 0.132, "confounded": 0.028, "none": 0.04}},
            {"from": "Y", "to": "Z", "dist": {"forward": 0.9, "backward": 0.066, "confounded": 0.014, "none": 0.02}},
            {"from": "X", "to": "Z", "dist": {"forward": 0.6, "backward": 0.264, "confounded": 0.056, "none": 0.08}},
        ],
    )
    out = tmp_path / "prior"
    result = runner.invoke(app, ["priors", "--beliefs", str(beliefs), "--nodes", "5", "--method", "EXACT", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "incoherent" in result.output
    raw = json.loads((out / "prior.json").read_text(encoding="utf-8"))
    assert raw["coherent"] is False
    assert raw["nodes"][:3] == list(NAMES)
    assert len(raw["nodes"]) == 5

    result = runner.invoke(app, ["priors", "--beliefs", str(beliefs), "--nodes", "2", "--out", str(out)])
    assert result.exit_code == 3


def test_priors_unfittable_beliefs_exit_four(tmp_path: Path) -> None:
    beliefs = _beliefs(
        tmp_path,
        [{"from": "X", "to": "Y", "dist": {"forward": 0.25, "backward": 0.25, "confounded": 0.25, "none": 0.25}}],
    )
    result = runner.invoke(app, ["priors", "--beliefs", str(beliefs), "--nodes", "2", "--method", "EXACT", "--out", str(tmp_path / "p")])
    assert result.exit_code == 4


def test_score_and_evaluate(tmp_path: Path) -> None:
    data = _simulate(tmp_path)
    graph = tmp_path / "g.json"
    write_graph(graph, Dag(3, [(2, 1), (1, 0)]), NAMES)
    beliefs = _beliefs(tmp_path, [{"from": "X", "to": "Z", "statement": "causes", "p": 0.9}])

    result = runner.invoke(app, ["score", "--data", str(data), "--graph", str(graph), "--beliefs", str(beliefs), "--method", "EXACT"])
    assert result.exit_code == 0, result.output
    assert "C_2" in result.output

    result = runner.invoke(app, ["evaluate", "--graph", str(graph), "--network", str(tmp_path / "net.json")])
    assert result.exit_code == 0, result.output
    assert "shd" in result.output


def test_sample_dags(tmp_path: Path) -> None:
    out = tmp_path / "dags.jsonl"
    result = runner.invoke(app, ["sample-dags", "--nodes", "4", "--count", "30", "--seed", "3", "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 30
    assert json.loads(lines[0])["nodes"] == ["V0", "V1", "V2", "V3"]


def test_chain_experiment_command(tmp_path: Path) -> None:
    out = tmp_path / "exp"
    result = runner.invoke(app, ["experiment", "chain", "--reps", "2", "--rows", "20", "--step", "10", "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = pd.read_csv(out / "report.csv")
    assert set(report["arm"]) == {"informative", "uniform"}
    assert set(report["metric"]) == {"found", "exact"}
    assert (out / "records.db").exists()
