import json
import os

import pandas as pd
import pytest

from config import CONFIG_DIR
from errors import ConfigError
from main import EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION, load_config, main


def _config(name: str) -> str:
    return os.path.join(CONFIG_DIR, name)


def _write(tmp_path, payload) -> str:
    path = tmp_path / "config.json"
    path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
    return str(path)


MINIMAL = {
    "dimension": 2,
    "domain": {"lower": [-1.0, -1.0], "upper": [1.0, 1.0]},
    "objects": {"X": {"kind": "vector", "components": ["x0", "x1"]}},
}


def test_default_checks_pass(tmp_path):
    out = tmp_path / "check.json"
    code = main(["check", "--config", _config("default.json"), "--tol", "1e-8", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["passed"] is True
    assert {t["kind"] for t in report["tasks"]} >= {"check-lemma1", "check-leibniz", "check-stokes"}


def test_corrupted_candidate_is_a_violation(tmp_path):
    out = tmp_path / "weak.json"
    code = main(["weakdiv", "--config", _config("corrupted_weakdiv.json"), "--out", str(out)])
    assert code == EXIT_VIOLATION
    task = json.loads(out.read_text(encoding="utf-8"))["tasks"][0]
    assert task["passed"] is False
    assert task["witness"] == [0.0, 0.0, 0.0]
    assert task["weak"][0]["residual"] > 1e-3


def test_empty_task_list_is_a_config_error(tmp_path):
    assert main(["run", "--config", _write(tmp_path, MINIMAL), "--out", "-"]) == EXIT_CONFIG


def test_check_without_tasks_runs_builtin_suites(tmp_path):
    out = tmp_path / "builtin.json"
    assert main(["check", "--config", _write(tmp_path, MINIMAL), "--out", str(out)]) == EXIT_OK
    kinds = [t["kind"] for t in json.loads(out.read_text(encoding="utf-8"))["tasks"]]
    assert kinds[0] == "check-algebra"


@pytest.mark.parametrize(
    "payload",
    [
        "{ not json",
        {**MINIMAL, "tasks": [{"kind": "div", "field": "missing"}]},
        {**MINIMAL, "domain": {"lower": [-1.0], "upper": [1.0]}},
        {**MINIMAL, "tasks": [{"kind": "no-such-task"}]},
        {**MINIMAL, "r_sequence": [0.1, 0.2, 0.05]},
    ],
)
def test_invalid_configs_exit_with_config_error(tmp_path, payload):
    assert main(["run", "--config", _write(tmp_path, payload), "--out", "-"]) == EXIT_CONFIG


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/multidiv.json")


def test_schema_is_printed(capsys):
    assert main(["schema"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert "tasks" in schema["properties"]


def test_reports_are_byte_identical(tmp_path):
    config = {**MINIMAL, "tasks": [{"kind": "check-lemma1", "configurations": 10}, {"kind": "div", "field": "X"}]}
    path = _write(tmp_path, config)
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["run", "--config", path, "--seed", "11", "--out", str(first)]) == EXIT_OK
    assert main(["run", "--config", path, "--seed", "11", "--out", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text(encoding="utf-8"))["timings"] is None


def test_seed_changes_the_digest(tmp_path):
    path = _write(tmp_path, {**MINIMAL, "tasks": [{"kind": "check-lemma1", "configurations": 5}]})
    digests = []
    for seed in ("1", "2"):
        out = tmp_path / f"seed{seed}.json"
        main(["run", "--config", path, "--seed", seed, "--out", str(out)])
        digests.append(json.loads(out.read_text(encoding="utf-8"))["config_digest"])
    assert digests[0] != digests[1]


def test_timings_are_opt_in(tmp_path):
    path = _write(tmp_path, {**MINIMAL, "tasks": [{"kind": "div", "name": "div-X", "field": "X"}]})
    out = tmp_path / "timed.json"
    main(["div", "--config", path, "--timings", "--out", str(out)])
    assert "div-X" in json.loads(out.read_text(encoding="utf-8"))["timings"]


def test_csv_report(tmp_path):
    path = _write(tmp_path, {**MINIMAL, "tasks": [{"kind": "div", "name": "div-X", "field": "X", "grid": 2}]})
    out = tmp_path / "div.csv"
    assert main(["div", "--config", path, "--format", "csv", "--out", str(out)]) == EXIT_OK
    frame = pd.read_csv(out)
    assert len(frame) == 4
    assert set(frame["task"]) == {"div-X"}
    # div(x0, x1) = 2 under Lebesgue measure
    assert frame["1"].tolist() == pytest.approx([2.0] * 4)


def test_surface_measure_from_config(tmp_path):
    out = tmp_path / "surface.json"
    assert main(["surface", "--config", _config("flat_segment.json"), "--out", str(out)]) == EXIT_OK
    surface = json.loads(out.read_text(encoding="utf-8"))["tasks"][0]["surface"]
    assert surface["extrapolated"] == pytest.approx(2.0, abs=1e-10)


def test_startup_checks():
    import startup_check

    assert startup_check.check_configs()
    assert startup_check.check_smoke_divergence()


def test_bivector_divergence_table_is_checked_row_by_row(tmp_path):
    objects = {
        **MINIMAL["objects"],
        "Y": {"kind": "vector", "components": ["x1^2", "sin(x0)"]},
        "Z": {"kind": "multivector", "terms": [{"coefficient": "1 + x0^2", "factors": ["X", "Y"]}]},
    }
    config = {**MINIMAL, "density": "gaussian", "objects": objects,
              "tasks": [{"kind": "div", "name": "div-Z", "field": "Z", "grid": 3}]}
    out = tmp_path / "div.json"
    assert main(["div", "--config", _write(tmp_path, config), "--out", str(out)]) == EXIT_OK
    table = json.loads(out.read_text(encoding="utf-8"))["tasks"][0]["table"]
    assert table["grade"] == 1
    assert table["oracle_deviation"] is not None and table["oracle_deviation"] < 1e-10
    assert len(table["residuals"]) == len(table["points"]) == 9
    csv_out = tmp_path / "div.csv"
    main(["div", "--config", _write(tmp_path, config), "--format", "csv", "--out", str(csv_out)])
    assert pd.read_csv(csv_out)["residual"].max() < 1e-10
