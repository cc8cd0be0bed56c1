import hashlib
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from prunec.cli import main
from prunec.graph import read_model
from prunec.segmetrics import InstanceMap, write_instance_map


def cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture(scope="module")
def model(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    code, _, _ = cli("zoo", "resnet18", "--classes", 10, "--width-mult", 0.125, "--out", d / "m")
    assert code == 0
    return d / "m.json"


def test_prune_contract(model, tmp_path):
    bin_ = model.with_suffix(".bin")
    code, out, err = cli("prune", model, bin_, "--heuristic", "l2", "--sparsity", 0.75, "--out", tmp_path / "p")
    assert (code, err) == (0, "")
    for suffix in (".json", ".bin", ".plan.json"):
        assert (tmp_path / f"p{suffix}").exists()
    audit = json.loads((tmp_path / "p.plan.json").read_text())
    assert audit["source"]["manifest_sha256"] == sha(model)
    assert audit["plan"]["heuristic"] == "l2"
    assert any(g["removed"] and g["scores"] for g in audit["plan"]["groups"])
    pruned = read_model(tmp_path / "p.json")
    assert pruned.weight("fc", "weight").shape[1] < read_model(model).weight("fc", "weight").shape[1]


def test_iterative_and_config(model, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"overrides": {"conv1": 0.1}}))
    code, _, err = cli(
        "prune", model, "--strategy", "iterative", "--step", 0.2, "--rounds", 3, "--recompute", "false",
        "--config", cfg, "--out", tmp_path / "it",
    )
    assert code == 0, err
    audit = json.loads((tmp_path / "it.plan.json").read_text())
    assert len(audit["round_plans"]) == 3 and audit["recompute"] is False
    assert cli("prune", model, "--strategy", "iterative", "--out", tmp_path / "x")[0] == 2


def test_verify_self_and_pruned(model, tmp_path):
    code, out, _ = cli("verify", model, model, "--trials", 2)
    res = json.loads(out)
    assert code == 0 and res["max_rel_dev"] == 0.0 and res["pass"] is True
    cli("prune", model, "--sparsity", 0.5, "--out", tmp_path / "p")
    code, out, _ = cli("verify", model, tmp_path / "p.json", "--input", "1x3x16x16")
    assert code == 1 and json.loads(out)["pass"] is False


def test_usage_errors(model, tmp_path):
    code, _, err = cli("prune", model, "--sparsity", 1.0, "--out", tmp_path / "p")
    assert code == 2 and err.startswith("BadSparsity: ")
    assert len(err.splitlines()) == 1
    code, _, err = cli("prune", model, "--heuristic", "taylor", "--out", tmp_path / "p")
    assert code == 2
    code, _, err = cli("report", model, "--input", "3x3")
    assert code == 2 and err.startswith("usage_error")
    assert cli("zoo", "vgg", "--out", tmp_path / "v")[0] == 2
    assert cli("report", model, "--input", "1x3x8x8", "--latency", "--reps", 2)[0] == 2
    assert cli()[0] == 2


def test_data_errors(tmp_path):
    (tmp_path / "bad.json").write_text("{}")
    (tmp_path / "bad.bin").write_bytes(b"SPRW\x01\x00\x00\x00")
    code, _, err = cli("inspect", tmp_path / "bad.json")
    assert code == 3 and err.startswith("MalformedManifest: ")
    code, _, err = cli("inspect", tmp_path / "missing.json")
    assert code == 3 and err.startswith("io_error: ")


def test_report_is_read_only(model):
    before = sha(model), sha(model.with_suffix(".bin"))
    code, out, _ = cli("report", model, "--input", "1x3x32x32", "--json")
    assert code == 0
    rep = json.loads(out)
    assert rep["total_params"] == sum(rep["node_params"].values())
    assert rep["total_flops"] > 0
    code, out, _ = cli("report", model, "--input", "1x3x32x32", "--latency", "--reps", 3, "--warmup", 1)
    assert code == 0 and "latency" in out
    assert (sha(model), sha(model.with_suffix(".bin"))) == before


def test_inspect_and_groups(model, tmp_path):
    code, out, _ = cli("inspect", model)
    assert code == 0 and "output fc 1x10x1x1" in out
    code, out, _ = cli("groups", model, "--json", "--dot", tmp_path / "g.dot")
    groups = json.loads(out)
    assert [g["kind"] for g in groups].count("interdependent") == 4
    assert (tmp_path / "g.dot").read_text().count("subgraph cluster_") == len(groups)


def test_pq(tmp_path):
    gt = np.array([[1, 1, 0, 2], [1, 1, 0, 2]])
    pred = np.array([[5, 5, 0, 0], [5, 5, 0, 0]])
    write_instance_map(InstanceMap(pred, {5: 0}), tmp_path / "p.imap")
    write_instance_map(InstanceMap(gt, {1: 0, 2: 1}), tmp_path / "g.imap")
    code, out, _ = cli("pq", tmp_path / "p.imap", tmp_path / "g.imap")
    res = json.loads(out)
    assert code == 0 and (res["tp"], res["fp"], res["fn"]) == (1, 0, 1)
    assert res["dq"] == pytest.approx(2 / 3)
    code, out, _ = cli("pq", tmp_path / "p.imap", tmp_path / "g.imap", "--classes")
    assert code == 0 and json.loads(out)["mpq"] == 0.5


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PRUNEC_SEED", "7")
    cli("zoo", "plain", "--out", tmp_path / "env")
    cli("zoo", "plain", "--seed", 7, "--out", tmp_path / "flag")
    cli("zoo", "plain", "--seed", 42, "--out", tmp_path / "dflt")
    assert sha(tmp_path / "env.bin") == sha(tmp_path / "flag.bin") != sha(tmp_path / "dflt.bin")
    monkeypatch.setenv("PRUNEC_SEED", "x")
    assert cli("zoo", "plain", "--out", tmp_path / "bad")[0] == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "prunec.cli", "zoo", "plain", "--out", str(tmp_path / "m")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and (tmp_path / "m.json").exists()
