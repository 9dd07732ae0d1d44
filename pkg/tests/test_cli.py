import json

import pytest

from cusum_oal import cli
from cusum_oal.config import dumps_json, iter_observations, load_config, parse_config, validate


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


NORMAL_DETECT = {"model": {"family": "normal"}, "detector": {"c": 10}}
PARETO_DETECT = {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 0.7}, "detector": {"c": 10, "u": 0.5}}


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestDetect:
    def test_alarm_at_ten(self, tmp_path, capsys):
        data = tmp_path / "x.txt"
        data.write_text("\n".join(["1.5"] * 12) + "\n")
        code, out, _ = run(["detect", "--config", write_config(tmp_path, NORMAL_DETECT),
                            "--input", str(data)], capsys)
        doc = json.loads(out)
        validate(doc, "detect")
        assert code == cli.EXIT_OK and doc["alarm_index"] == 10 and doc["n_processed"] == 10

    def test_csv_header_input(self, tmp_path, capsys):
        data = tmp_path / "x.csv"
        data.write_text("x\n1.5\n\n1.5\n")
        code, out, _ = run(["detect", "--config", write_config(tmp_path, NORMAL_DETECT),
                            "--input", str(data)], capsys)
        assert code == cli.EXIT_NO_ALARM and json.loads(out)["n_processed"] == 2

    def test_empty_input(self, tmp_path, capsys):
        data = tmp_path / "empty.txt"
        data.write_text("")
        code, out, _ = run(["detect", "--config", write_config(tmp_path, NORMAL_DETECT),
                            "--input", str(data)], capsys)
        doc = json.loads(out)
        validate(doc, "detect")
        assert code == cli.EXIT_NO_ALARM
        assert doc["alarm_index"] is None and doc["n_processed"] == 0

    def test_support_violation(self, tmp_path, capsys):
        data = tmp_path / "x.txt"
        data.write_text("2.0\n0.5\n")
        code, _, err = run(["detect", "--config", write_config(tmp_path, PARETO_DETECT),
                            "--input", str(data)], capsys)
        assert code == cli.EXIT_SUPPORT and "line 2" in err

    def test_parse_error(self, tmp_path, capsys):
        data = tmp_path / "x.txt"
        data.write_text("2.0\n3.0\nabc\n")
        code, _, err = run(["detect", "--config", write_config(tmp_path, PARETO_DETECT),
                            "--input", str(data)], capsys)
        assert code == cli.EXIT_PARSE and "line 3" in err

    def test_stdin(self, tmp_path, capsys, monkeypatch):
        import io

        monkeypatch.setattr("sys.stdin", io.StringIO("1.5\n" * 10))
        code, out, _ = run(["detect", "--config", write_config(tmp_path, NORMAL_DETECT)], capsys)
        assert code == cli.EXIT_OK and json.loads(out)["alarm_index"] == 10


class TestConfigErrors:
    @pytest.mark.parametrize("doc", [
        {"model": {"family": "pareto", "alpha0": 0.9}},
        {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 1.2}},
        {"model": {"family": "normal"}, "detector": {"c": -1}},
        {"model": {"family": "normal"}, "detector": {"c": 1, "colour": "red"}},
        {"model": {"family": "gamma"}},
        {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 0.9}},
        {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 0.7}, "experiment": {"true_param": 2.0}},
    ])
    def test_rejected(self, tmp_path, capsys, doc):
        code, _, err = run(["classify", "--config", write_config(tmp_path, doc)], capsys)
        assert code == cli.EXIT_CONFIG and "config error" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, _ = run(["classify", "--config", str(tmp_path / "nope.json")], capsys)
        assert code == cli.EXIT_CONFIG

    def test_missing_c(self, tmp_path, capsys):
        doc = {"model": {"family": "normal"}}
        code, _, _ = run(["simulate", "--config", write_config(tmp_path, doc)], capsys)
        assert code == cli.EXIT_CONFIG

    def test_load_config_roundtrip(self, tmp_path):
        cfg = load_config(write_config(tmp_path, PARETO_DETECT))
        assert cfg.g().u == 0.5 and cfg.g().mu0 == pytest.approx(-0.029092206, abs=1e-8)

    def test_explicit_mu0(self):
        cfg = parse_config({"model": {"family": "normal"}, "detector": {"c": 3, "u": 1, "mu0": -0.4}})
        assert cfg.g().mu0 == -0.4


class TestSimulate:
    DOC = {"model": {"family": "normal"}, "detector": {"c": 5},
           "experiment": {"true_param": 1.0, "reps": 300, "seed": 3}}

    def test_json_validates(self, tmp_path, capsys):
        code, out, _ = run(["simulate", "--config", write_config(tmp_path, self.DOC)], capsys)
        doc = json.loads(out)
        validate(doc, "simulate")
        assert code == cli.EXIT_OK and doc["plan"]["seed"] == 3

    def test_seed_flag_overrides(self, tmp_path, capsys):
        code, out, _ = run(["simulate", "--config", write_config(tmp_path, self.DOC), "--seed", "8"], capsys)
        assert json.loads(out)["plan"]["seed"] == 8

    def test_byte_identical_files(self, tmp_path, capsys):
        cfg = write_config(tmp_path, self.DOC)
        outs = []
        for i, workers in enumerate(["1", "2", "1"]):
            path = tmp_path / f"o{i}.json"
            assert cli.main(["simulate", "--config", cfg, "--workers", workers, "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_csv_and_figure(self, tmp_path):
        path = tmp_path / "s.csv"
        cli.main(["simulate", "--config", write_config(tmp_path, self.DOC), "--format", "csv",
                  "--out", str(path), "--figure"])
        header, row = path.read_text().splitlines()
        assert header.startswith("mean,sd,se") and len(row.split(",")) == 7
        assert (tmp_path / "s.png").stat().st_size > 0

    def test_single_rep_passthrough(self, tmp_path, capsys):
        doc = dict(self.DOC, experiment={"true_param": 1.0, "reps": 1, "seed": 0})
        code, out, _ = run(["simulate", "--config", write_config(tmp_path, doc)], capsys)
        est = json.loads(out)["estimate"]
        assert est["reps_used"] == 1 and est["sd"] == 0.0

    def test_all_censored_is_compute_error(self, tmp_path, capsys):
        doc = {"model": {"family": "normal"}, "detector": {"c": 50},
               "experiment": {"true_param": 0.0, "reps": 3, "cap": 5}}
        code, _, _ = run(["simulate", "--config", write_config(tmp_path, doc)], capsys)
        assert code == cli.EXIT_COMPUTE


class TestCalibrate:
    def test_normal_target(self, tmp_path, capsys):
        doc = {"model": {"family": "normal"},
               "experiment": {"target": 50, "reps": 1500, "seed": 2}}
        code, out, _ = run(["calibrate", "--config", write_config(tmp_path, doc)], capsys)
        res = json.loads(out)
        validate(res, "calibrate")
        assert code == cli.EXIT_OK and abs(res["result"]["achieved"]["mean"] - 50) <= 1.0

    def test_budget_failure_reports_trace(self, tmp_path, capsys):
        doc = {"model": {"family": "normal"},
               "experiment": {"target": 50, "reps": 300, "tol": 1e-6, "budget": 3}}
        code, _, err = run(["calibrate", "--config", write_config(tmp_path, doc)], capsys)
        assert code == cli.EXIT_COMPUTE
        trace = json.loads(err.split("error:")[0])
        assert len(trace["history"]) == 3


class TestTheory:
    def test_large_shift_point(self, tmp_path, capsys):
        doc = {"model": {"family": "normal"}, "detector": {"c": 20}, "experiment": {"true_param": 1.0}}
        code, out, _ = run(["theory", "--config", write_config(tmp_path, doc)], capsys)
        res = json.loads(out)
        validate(res, "theory")
        assert code == 0 and res["oal"]["point"] == pytest.approx(40.0)

    def test_negative_drift_interval(self, tmp_path, capsys):
        doc = {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 0.7}, "detector": {"c": 10, "u": 0.5},
               "experiment": {"true_param": 0.9}}
        _, out, _ = run(["theory", "--config", write_config(tmp_path, doc)], capsys)
        res = json.loads(out)
        validate(res, "theory")
        assert res["regime"] == "V-" and res["oal"]["low"] < res["oal"]["high"]

    def test_bounded_constants(self, tmp_path, capsys):
        doc = {"model": {"family": "normal"}, "detector": {"c": 20, "u": 5, "mu0": -0.5},
               "experiment": {"true_param": 1.0}}
        _, out, _ = run(["theory", "--config", write_config(tmp_path, doc)], capsys)
        res = json.loads(out)
        validate(res, "theory")
        assert res["bounded"]["B"] == pytest.approx(16.02, abs=0.01)
        assert "error" in res["oal"]


class TestClassify:
    def test_regime(self, tmp_path, capsys):
        doc = {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 0.7}, "experiment": {"true_param": 0.9}}
        code, out, _ = run(["classify", "--config", write_config(tmp_path, doc)], capsys)
        res = json.loads(out)
        validate(res, "classify")
        assert res["regime"] == "V-" and res["kl_to_pre"] == 0.0


class TestTable1:
    DOC = {"model": {"family": "pareto", "alpha0": 0.9, "alpha1": 0.5},
           "experiment": {"targets": [40], "us": [0, 5], "true_grid": [0.9, 0.3], "reps": 400, "seed": 1}}

    def test_csv_layout_and_figure(self, tmp_path):
        path = tmp_path / "t.csv"
        assert cli.main(["table1", "--config", write_config(tmp_path, self.DOC), "--out", str(path)]) == 0
        lines = path.read_text().splitlines()
        assert lines[0] == "true_param,arl0=40|u=0|mean,arl0=40|u=0|sd,arl0=40|u=5|mean,arl0=40|u=5|sd"
        assert lines[1].startswith("c,") and lines[2].startswith("0.9,") and lines[3].startswith("0.3,")
        assert (tmp_path / "t.png").exists()

    def test_json_validates(self, tmp_path, capsys):
        code, out, _ = run(["table1", "--config", write_config(tmp_path, self.DOC), "--format", "json",
                            "--no-figure"], capsys)
        validate(json.loads(out), "table1")
        assert code == 0


class TestSerialisation:
    def test_non_finite_becomes_null(self):
        assert json.loads(dumps_json({"a": float("inf"), "b": [float("nan")]})) == {"a": None, "b": [None]}

    def test_observation_reader(self):
        import io

        assert list(iter_observations(io.StringIO("x\n1\n\n2.5\n"), "pareto")) == [1.0, 2.5]
