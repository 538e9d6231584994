import csv
import json
import subprocess
import sys

import pytest

from roisearch.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_DIVERGENCE,
    EXIT_OK,
    ManifestError,
    RunManifest,
    main,
    pareto_front,
)
from roisearch.store import TrialLog

SMALL = {
    "benchmark": {"seed": 7, "decisions": 10, "name": "toy10"},
    "trial_log": "run/trials.jsonl",
    "out": "run",
    "k": 2,
    "training": {"epochs": 120},
    "rl": {"steps": 40, "batch": 16, "seeds": [0, 1], "top_k": 5},
    "alphas": [0.0, 0.3],
    "n_pilots": 12,
    "train_trials": 40,
    "holdout": 10,
    "validate_top_k": 3,
    "compare": {"budget": 24, "warmstart": 12},
}

STEPS = ("pilot", "fidelity", "train", "search", "validate", "compare", "report")


def write_manifest(d, **over):
    d.mkdir(parents=True, exist_ok=True)
    m = d / "manifest.json"
    m.write_text(json.dumps({**SMALL, **over}))
    return m


def run(m, *cmd):
    return main([cmd[0], "--manifest", str(m), *cmd[1:]])


def read_csv(p):
    with open(p, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    runs = []
    for name in ("a", "b"):
        m = write_manifest(tmp_path_factory.mktemp(name))
        for step in STEPS:
            assert run(m, step, "--seed", "3") == EXIT_OK, step
        runs.append(m.parent / "run")
    return runs


def test_pipeline_writes_stable_outputs(pipeline):
    a, _ = pipeline
    names = {p.name for p in a.iterdir()}
    assert {
        "trials.jsonl", "fidelity_report.csv", "fidelity.json", "predictor_k2_pairwise_rank.json",
        "rank_quality_k2_pairwise_rank.csv", "search_alpha0.jsonl", "search_alpha0p3.jsonl",
        "trace_alpha0.csv", "trace_alpha0p3.csv", "validation.csv", "validation_summary.json",
        "comparison.csv", "incumbents.csv", "comparison.json", "scatter.csv", "pareto_front.csv",
    } <= names


def test_rerun_is_byte_identical(pipeline):
    a, b = pipeline
    for p in a.iterdir():
        if p.name == "trials.jsonl":
            continue
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name


def test_trial_logs_match_except_timestamps(pipeline):
    a, b = pipeline

    def strip(path):
        return [{**r.to_json(), "timestamp": None} for r in TrialLog.load(path)]

    assert strip(a / "trials.jsonl") == strip(b / "trials.jsonl")


def test_fidelity_report_schema(pipeline):
    rows = read_csv(pipeline[0] / "fidelity_report.csv")
    assert rows[0] == ["metric", "fraction", "tau", "chosen"]
    body = rows[1:]
    fracs = {r[1] for r in body}
    assert len(body) == 2 * len(fracs)
    assert {r[0] for r in body} == {"raw", "extrapolated"}


def test_validation_sorted_by_realized_ne(pipeline):
    rows = read_csv(pipeline[0] / "validation.csv")[1:]
    realized = [float(r[3]) for r in rows]
    assert realized == sorted(realized) and rows
    summary = json.loads((pipeline[0] / "validation_summary.json").read_text())
    assert "tau_predicted_vs_realized" in summary


def test_incumbents_are_monotone_and_pool_shared(pipeline):
    rows = read_csv(pipeline[0] / "incumbents.csv")
    assert rows[0] == ["trial", "random", "bo", "rl"]
    for col in (1, 2, 3):
        vals = [float(r[col]) for r in rows[1:]]
        assert all(x >= y for x, y in zip(vals, vals[1:]))
    comp = json.loads((pipeline[0] / "comparison.json").read_text())
    assert len(comp["warm_pool_ids"]) == 12


def test_pilot_rerun_is_idempotent(tmp_path):
    m = write_manifest(tmp_path)
    assert run(m, "pilot") == EXIT_OK
    n = len(TrialLog.load(tmp_path / "run" / "trials.jsonl"))
    assert run(m, "pilot") == EXIT_OK
    assert len(TrialLog.load(tmp_path / "run" / "trials.jsonl")) == n == 12


def test_zero_pilots_warns(tmp_path):
    m = write_manifest(tmp_path)
    with pytest.warns(UserWarning, match="nothing to do"):
        assert run(m, "pilot", "--n", "0") == EXIT_OK
    assert not (tmp_path / "run" / "trials.jsonl").exists()


def test_loss_and_k_variants_from_one_log(tmp_path):
    m = write_manifest(tmp_path, fidelity_fraction=0.4)
    assert run(m, "pilot") == EXIT_OK
    assert run(m, "train", "--k", "1", "--loss", "mse") == EXIT_OK
    assert run(m, "train", "--k", "2") == EXIT_OK
    out = tmp_path / "run"
    for name in ("rank_quality_k1_mse.csv", "rank_quality_k2_pairwise_rank.csv"):
        header, row = read_csv(out / name)
        assert header[4] == "tau_ne" and row[4] != ""


def test_exit_codes(tmp_path):
    assert run(tmp_path / "missing.json", "pilot") == EXIT_CONFIG
    bad = write_manifest(tmp_path / "bad", bogus=1)
    assert run(bad, "pilot") == EXIT_CONFIG
    m = write_manifest(tmp_path / "ok")
    assert run(m, "fidelity") == EXIT_DATA
    assert run(m, "search") == EXIT_DATA
    small = write_manifest(tmp_path / "cmp", compare={"budget": 5, "warmstart": 10}, fidelity_fraction=0.4)
    assert run(small, "compare") == EXIT_CONFIG
    div = write_manifest(tmp_path / "div", fidelity_fraction=0.4, training={"epochs": 20, "lr": 1e308})
    with pytest.warns(RuntimeWarning):
        assert run(div, "train") == EXIT_DIVERGENCE


def test_checkpoint_space_mismatch_is_config_error(tmp_path):
    m = write_manifest(tmp_path, fidelity_fraction=0.4)
    assert run(m, "pilot") == EXIT_OK
    assert run(m, "train") == EXIT_OK
    ck = tmp_path / "run" / "predictor_k2_pairwise_rank.json"
    d = json.loads(ck.read_text())
    d["space"]["version"] = 99
    ck.write_text(json.dumps(d))
    assert run(m, "search") == EXIT_CONFIG


def test_empty_report_has_headers(tmp_path):
    m = write_manifest(tmp_path)
    assert run(m, "report") == EXIT_OK
    assert read_csv(tmp_path / "run" / "scatter.csv") == [["alpha", "config_id", "predicted_ne", "predicted_flops"]]
    assert read_csv(tmp_path / "run" / "pareto_front.csv") == [["config_id", "realized_ne", "flops"]]


def test_manifest_validation(tmp_path):
    with pytest.raises(ManifestError):
        RunManifest.from_dict({"benchmark": {}, "fidelity_fraction": 1.5})
    with pytest.raises(ManifestError):
        RunManifest.from_dict({})
    with pytest.raises(ManifestError):
        RunManifest.from_dict({"space": "nope.json"}, tmp_path)
    m = RunManifest.from_dict({"benchmark": {}, "reward": {"alpha": 0.3}})
    assert m.alphas == (0.3,)


def test_pareto_front():
    pts = [("a", 1.0, 5.0), ("b", 0.5, 6.0), ("c", 1.2, 7.0), ("d", 0.2, 9.0), ("e", 2.0, 1.0)]
    assert [p[0] for p in pareto_front(pts)] == ["e", "a", "b", "d"]
    assert pareto_front([]) == []


def test_module_entry_point(tmp_path):
    m = write_manifest(tmp_path)
    out = subprocess.run([sys.executable, "-m", "roisearch.cli", "pilot", "--manifest", str(m), "--n", "3"],
                         capture_output=True, text=True)
    assert out.returncode == EXIT_OK, out.stderr
