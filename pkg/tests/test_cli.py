"""End-to-end CLI tests (in-process via the entrypoint)."""

import filecmp
import json
from pathlib import Path

import pytest
import yaml

from zonechoice.cli import entrypoint

GEN_ARGS = ["--blocks", "36", "--schools", "3", "--magnets", "1",
            "--students", "250", "--seed", "2"]


def run(*argv):
    return entrypoint(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full pipeline run shared by the assertions below."""
    root = tmp_path_factory.mktemp("pipeline")
    district = root / "district"
    model = root / "model.json"
    table = root / "table.npz"
    solution = root / "solution"
    report = root / "report"
    geo = root / "map.geojson"

    assert run("generate", "--out", str(district), *GEN_ARGS) == 0
    assert run("train", "--district", str(district), "--out", str(model),
               "--max-iter", "200") == 0
    assert run("evaluate", "--district", str(district), "--model", "follow",
               "--folds", "4", "--seed", "0",
               "--out", str(root / "metrics.csv")) == 0
    assert run("scenarios", "--district", str(district), "--model", "logit",
               "--model-file", str(model), "-I", "5", "--seed", "3",
               "--out", str(table)) == 0
    assert run("optimize", "--district", str(district), "--method", "RWC",
               "--table", str(table), "--seed", "5", "--restarts", "1",
               "--max-steps", "1500", "--out", str(solution)) == 0
    assert run("report", "--district", str(district), "--table", str(table),
               "--zoning", str(solution / "zoning.csv"), "--method", "RWC",
               "--out", str(report)) == 0
    assert run("export-map", "--district", str(district),
               "--zoning", str(solution / "zoning.csv"),
               "--overlay", "opt-out-rate", "--table", str(table),
               "--out", str(geo)) == 0
    return root


def test_pipeline_outputs_exist(pipeline):
    assert (pipeline / "district" / "students.csv").exists()
    assert (pipeline / "model.json").exists()
    assert (pipeline / "table.npz").exists()
    assert (pipeline / "solution" / "zoning.csv").exists()
    assert (pipeline / "solution" / "metrics.json").exists()
    assert (pipeline / "report" / "report.csv").exists()
    assert (pipeline / "map.geojson").exists()


def test_manifests_written_next_to_artifacts(pipeline):
    for name in ("district", "model.json", "table.npz", "solution",
                 "report", "map.geojson"):
        manifest = pipeline / f"{name}.manifest.json"
        assert manifest.exists()
        payload = json.loads(manifest.read_text())
        assert {"command", "config", "config_hash", "inputs",
                "version", "wall_time_s"} <= set(payload)


def test_no_partial_artifacts_left_behind(pipeline):
    assert not list(pipeline.rglob("*.partial*"))


def test_solution_metrics_content(pipeline):
    metrics = json.loads((pipeline / "solution" / "metrics.json").read_text())
    assert metrics["method"] == "RWC"
    assert metrics["feasible"] is True
    assert metrics["objective"] <= metrics["stats"]["status_quo_objective"] + 1e-12
    assert len(metrics["per_scenario"]) == 5


def test_rwc_without_model_file_exits_2(pipeline, tmp_path):
    code = run("optimize", "--district", str(pipeline / "district"),
               "--method", "RWC", "--seed", "1", "--out", str(tmp_path / "x"))
    assert code == 2
    assert not (tmp_path / "x").exists()


def test_missing_seed_exits_2(tmp_path):
    assert run("generate", "--out", str(tmp_path / "d"), "--blocks", "16",
               "--schools", "2", "--students", "50") == 2


def test_unknown_district_exits_2(tmp_path):
    assert run("train", "--district", str(tmp_path / "nope"),
               "--out", str(tmp_path / "m.json")) == 2


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "gen": {"n_blocks": 16, "n_schools": 2, "n_magnets": 1,
                "n_students": 60, "n_choice_zones": 2, "seed": 4},
    }))
    assert run("-c", str(cfg), "generate", "--out", str(tmp_path / "d")) == 0
    assert (tmp_path / "d" / "blocks.csv").exists()
    # flags override the file: a different seed changes the district
    assert run("-c", str(cfg), "generate", "--seed", "5",
               "--out", str(tmp_path / "d2")) == 0
    a = (tmp_path / "d" / "students.csv").read_bytes()
    b = (tmp_path / "d2" / "students.csv").read_bytes()
    assert a != b


def test_bad_config_file_exits_2(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("- just\n- a\n- list\n")
    assert run("-c", str(cfg), "generate", "--seed", "0",
               "--out", str(tmp_path / "d")) == 2


def tree_bytes(root: Path, exclude_manifests=True):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_dir():
            continue
        if exclude_manifests and p.name.endswith(".manifest.json"):
            continue
        out[str(p.relative_to(root))] = p.read_bytes()
    return out


def test_repeated_runs_are_byte_identical(tmp_path):
    for tag in ("one", "two"):
        root = tmp_path / tag
        district = root / "district"
        assert run("generate", "--out", str(district), *GEN_ARGS) == 0
        assert run("scenarios", "--district", str(district), "--model",
                   "frequency", "-I", "4", "--seed", "9",
                   "--out", str(root / "t.npz")) == 0
        assert run("optimize", "--district", str(district), "--method", "FR",
                   "--table", str(root / "t.npz"), "--seed", "1",
                   "--restarts", "1", "--max-steps", "1000",
                   "--out", str(root / "sol")) == 0
        assert run("report", "--district", str(district),
                   "--table", str(root / "t.npz"),
                   "--zoning", str(root / "sol" / "zoning.csv"),
                   "--method", "FR", "--out", str(root / "rep")) == 0
    assert tree_bytes(tmp_path / "one") == tree_bytes(tmp_path / "two")
