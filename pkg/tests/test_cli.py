import csv
import json

import numpy as np
import pytest

from hoif.cli import main
from hoif.dataio import read_dataset, read_nuisance
from hoif.pipeline import ROW_FIELDS, SCHEMA_VERSION, RunConfig, check_report, dumps_report, run_falsify
from hoif.study import StudyConfig, prepare_study, run_replicate


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    assert main(["simulate", "--setup", "II", "--n", "400", "--n-train", "400", "--seed", "3",
                 "--output", str(path)]) == 0
    return path


def _falsify(data_file, out, *extra):
    return main(["falsify", "--data", str(data_file), "--resolutions", "1,2", "--fit-resolution", "1",
                 "--boot-replicates", "50", "--output", str(out), *extra])


def test_simulate_writes_both_roles(data_file):
    data = read_dataset(data_file, d=4)
    assert len(data.est) == 400 and len(data.train) == 400


def test_fit_nuisance(data_file, tmp_path):
    out = tmp_path / "nu.csv"
    assert main(["fit-nuisance", "--data", str(data_file), "--fit-resolution", "1", "--output", str(out)]) == 0
    fit = read_nuisance(out, 400)
    assert np.all(np.isfinite(fit.bhat)) and np.all(fit.phat > 0)


def test_falsify_report(data_file, tmp_path):
    assert _falsify(data_file, tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["schema_version"] == SCHEMA_VERSION
    assert check_report(report)
    assert [r["m"] for r in report["rows"]] == [2, 3, 2, 3]
    with open(tmp_path / "report.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == ROW_FIELDS and len(rows) == 5
    for row, stored in zip(rows[1:], report["rows"]):
        assert float(row[ROW_FIELDS.index("if_value")]) == stored["if_value"]


def test_falsify_with_external_nuisance(data_file, tmp_path):
    nu = tmp_path / "nu.csv"
    assert main(["fit-nuisance", "--data", str(data_file), "--fit-resolution", "1", "--output", str(nu)]) == 0
    assert _falsify(data_file, tmp_path / "a", "--nuisance", str(nu)) == 0
    assert _falsify(data_file, tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert a["nuisance_source"] == "file" and a["cross_fit"] is None
    assert a["rows"] == b["rows"]


def test_determinism_across_runs_and_jobs(data_file, tmp_path):
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        assert _falsify(data_file, tmp_path / name, "--n-jobs", jobs) == 0
    ref = (tmp_path / "a" / "report.json").read_bytes()
    for name in ("b", "c"):
        assert (tmp_path / name / "report.json").read_bytes() == ref
        assert (tmp_path / name / "report.csv").read_bytes() == (tmp_path / "a" / "report.csv").read_bytes()


def test_huge_delta_never_rejects(data_file):
    data = read_dataset(data_file)
    report = run_falsify(RunConfig(resolutions=(1, 2), boot_replicates=50, delta=1e6, fit_resolution=1), data)
    assert not any(r["reject"] for r in report["rows"])
    assert not any(s["reject"] for s in report["early_stop"])


def test_check_report_detects_tampering(data_file):
    report = run_falsify(RunConfig(resolutions=(2,), boot_replicates=50, fit_resolution=1), read_dataset(data_file))
    assert check_report(report)
    report["rows"][0]["reject"] = not report["rows"][0]["reject"]
    assert not check_report(report)


def test_dumps_report_floats_and_nulls():
    text = dumps_report({"a": 0.1, "b": float("nan"), "c": [True, None]})
    assert json.loads(text) == {"a": 0.1, "b": None, "c": [True, None]}
    assert "0.10000000000000001" in text


def test_config_file_and_flag_override(data_file, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"data = {data_file}\nresolutions = 2\nboot-replicates = 50\ndelta = 1e6\nfit-resolution = 1\n")
    assert main(["falsify", "--config", str(cfg), "--output", str(tmp_path / "a")]) == 0
    assert main(["falsify", "--config", str(cfg), "--delta", "0.5", "--output", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert a["config"]["delta"] == 1e6 and b["config"]["delta"] == 0.5
    assert a["config"]["resolutions"] == b["config"]["resolutions"] == [2]


@pytest.mark.parametrize("extra, code", [
    (["--delta", "-1"], 2),
    (["--functional", "ate"], 2),
    (["--resolutions", "8"], 3),
    (["--m-max", "4", "--flop-budget", "10"], 4),
])
def test_exit_codes(data_file, tmp_path, extra, code):
    argv = ["falsify", "--data", str(data_file), "--resolutions", "2", "--boot-replicates", "50",
            "--fit-resolution", "1", "--output", str(tmp_path)]
    assert main(argv + extra) == code


def test_input_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("role,y,a,x1\nEst,1,1,0.5\n")
    assert main(["falsify", "--data", str(bad), "--output", str(tmp_path)]) == 2
    assert main(["falsify", "--data", str(tmp_path / "missing.csv"), "--output", str(tmp_path)]) == 2
    only_est = tmp_path / "est.csv"
    only_est.write_text("role,y,a,x1\n" + "".join(f"est,{i},1,0.{i}\n" for i in range(1, 9)))
    assert main(["falsify", "--data", str(only_est), "--output", str(tmp_path)]) == 2
    assert main(["simulate", "--d", "3", "--output", str(tmp_path / "x.csv")]) == 2
    assert main(["simulate", "--n", "abc", "--output", str(tmp_path / "x.csv")]) == 2


def test_reproduce_tables_single_replicate(tmp_path):
    args = ["--n", "300", "--n-train", "300", "--resolutions", "2", "--boot-replicates", "50",
            "--replicates", "1", "--seed", "5", "--fit-resolution", "1"]
    assert main(["reproduce-tables", *args, "--output", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
    row = run_replicate(prepare_study(StudyConfig(n=300, n_train=300, resolutions=(2,), boot_replicates=50,
                                                  replicates=1, seed=5, fit_resolution=1)), 0)[0]
    assert summary[0]["mean_if22"] == row["if22"]
    assert summary[0]["mean_se_if2233"] == row["se_if2233"]
    assert summary[0]["coverage_psi3"] == float(row["cover_psi3"])
    with open(tmp_path / "replicates.csv", newline="") as fh:
        reps = list(csv.DictReader(fh))
    assert float(reps[0]["if2233"]) == row["if2233"]


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    assert "FAIL" not in capsys.readouterr().out
