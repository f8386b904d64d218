import hashlib
import json
import re
import shutil
import subprocess
import sys

import pytest

from hybridtod.cli import main
from hybridtod.corpus import load_snapshot, minicorpus_dir
from hybridtod.metrics import references

# sha256 over every non-PNG file of `pipeline --variant hybrid --seed 7`,
# frozen once the stages were final. PNG bytes depend on the matplotlib build,
# so figures are only compared run against run.
GOLDEN_TREE = "70b61fa2fa064d657e34c44a66b4d37ce778b25d8c7d43f80f64e8a5f0fc85d9"


def tree(root, skip_png=False):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and not (skip_png and p.suffix == ".png"):
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def tree_digest(root):
    h = hashlib.sha256()
    for rel, digest in tree(root, skip_png=True).items():
        h.update(f"{rel}\t{digest}\n".encode())
    return h.hexdigest()


@pytest.fixture(scope="module")
def hybrid_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "out"
    assert main(["pipeline", "--variant", "hybrid", "--seed", "7", "-o", str(out)]) == 0
    return out


def test_pipeline_layout(hybrid_run):
    for rel in (
        "base/entities.json",
        "graph/edges.tsv",
        "maxcut/cut.json",
        "hybrid/plan.json",
        "hybrid/preservation.json",
        "stats/comparison.tsv",
        "stats/comparison.png",
        "stats/hybrid_slot_types.png",
        "logs/maxcut.log",
        "run_manifest.json",
    ):
        assert (hybrid_run / rel).is_file(), rel
    assert json.loads((hybrid_run / "hybrid/preservation.json").read_text())["ok"] is True
    assert (hybrid_run / "stats/comparison.png").read_bytes()[:4] == b"\x89PNG"


def test_golden_tree(hybrid_run):
    assert tree_digest(hybrid_run) == GOLDEN_TREE


def test_manifest_records_config_and_stages(hybrid_run):
    m = json.loads((hybrid_run / "run_manifest.json").read_text())
    assert m["config"]["seed"] == 7 and m["config"]["variant"] == "hybrid"
    assert "threads" not in m["config"] and "output_dir" not in m["config"]
    assert list(m["stages"]) == ["ingest", "graph", "maxcut", "redistribute", "stats"]
    st = m["stages"]["maxcut"]
    assert st["outputs"] and all(len(d) == 64 for d in st["outputs"].values())
    assert all(ok for s in m["stages"].values() for ok in s["checks"].values())


def test_logs_have_no_paths_or_times(hybrid_run):
    for log in (hybrid_run / "logs").iterdir():
        text = log.read_text()
        assert str(hybrid_run) not in text
        assert not re.search(r"\d{2}:\d{2}:\d{2}|\d{4}-\d{2}-\d{2}", text)


def test_threads_do_not_change_outputs(hybrid_run, tmp_path):
    out = tmp_path / "t3"
    assert main(["pipeline", "--variant", "hybrid", "--seed", "7", "--threads", "3", "-o", str(out)]) == 0
    assert tree(out) == tree(hybrid_run)


def test_rerun_in_place_is_identical(hybrid_run, tmp_path):
    out = tmp_path / "again"
    shutil.copytree(hybrid_run, out)
    assert main(["pipeline", "--variant", "hybrid", "--seed", "7", "-o", str(out)]) == 0
    assert tree(out) == tree(hybrid_run)


def test_env_overrides(monkeypatch, tmp_path):
    out = tmp_path / "env"
    monkeypatch.setenv("HYBRIDTOD_SEED", "7")
    monkeypatch.setenv("HYBRIDTOD_OUTPUT_DIR", str(out))
    monkeypatch.setenv("HYBRIDTOD_THREADS", "2")
    assert main(["ingest"]) == 0
    m = json.loads((out / "run_manifest.json").read_text())
    assert m["config"]["seed"] == 7
    # flags beat the environment
    assert main(["ingest", "--seed", "3"]) == 0
    assert json.loads((out / "run_manifest.json").read_text())["config"]["seed"] == 3


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"sead": 1}')
    assert main(["ingest", "--config", str(cfg), "-o", str(tmp_path / "o")]) == 1
    assert "sead" in capsys.readouterr().err


def test_failed_stage_is_quarantined(tmp_path, capsys):
    src = tmp_path / "corpus"
    shutil.copytree(minicorpus_dir(), src)
    (src / "train.json").write_text("{ not json")
    out = tmp_path / "o"
    assert main(["ingest", "--input", str(src), "-o", str(out)]) != 0
    assert "train.json:1" in capsys.readouterr().err
    assert (out / "failed/ingest/error.txt").is_file()
    assert not (out / "base").exists()
    # a good run afterwards clears the quarantine
    assert main(["ingest", "-o", str(out)]) == 0
    assert not (out / "failed").exists()


def test_downstream_stages_and_echo_evaluation(hybrid_run, tmp_path):
    out = tmp_path / "full"
    shutil.copytree(hybrid_run, out)
    base = ["--variant", "hybrid", "--seed", "7", "-o", str(out)]
    for cmd in ("serialize", "emit-train", "retrieve"):
        assert main([cmd, *base]) == 0, cmd
    corpus = load_snapshot(out / "hybrid")
    preds = out / "preds.jsonl"
    preds.write_text("".join(json.dumps({"context_id": c, "hypothesis": r}) + "\n" for c, r in references(corpus).items()))
    rankings = out / "retrieval/hybrid/rankings.tsv"
    assert main(["evaluate", *base, "--predictions", str(preds), "--rankings", str(rankings)]) == 0
    rep = json.loads((out / "eval/hybrid/report.json").read_text())["metrics"]
    assert rep["Bleu-4"] == pytest.approx(100.0) and rep["F1"] == pytest.approx(100.0)
    assert 0 <= rep["success@1"] <= rep["success@5"] <= 100
    assert (out / "eval/hybrid/metrics.png").is_file()
    assert (out / "train/hybrid/train.jsonl").is_file()


def test_evaluate_needs_earlier_stages(tmp_path, capsys):
    preds = tmp_path / "p.jsonl"
    preds.write_text("")
    assert main(["evaluate", "-o", str(tmp_path / "o"), "--predictions", str(preds)]) != 0


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "hybridtod.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "pipeline" in res.stdout
