import json
import os

import numpy as np
import pytest

from mmq.cli import main, write_fluid_csv, write_moments_csv
from mmq.config import parse_config, parse_config_dict, serialize_config
from mmq.errors import (
    DimensionMismatch,
    MissingRequired,
    ParseError,
    UnknownField,
)
from mmq.replication import resolve_workers

TWO_STATE = [[-1.0, 1.0], [1.0, -1.0]]


def network_doc(**overrides):
    doc = {
        "schema_version": 1,
        "network": {
            "generator": TWO_STATE,
            "lambda": [[2.0, 4.0], [0.0, 0.0]],
            "mu": [
                [[0.0, 0.0], [1.0, 1.0]],
                [[0.0, 0.0], [0.0, 0.0]],
            ],
            "sinks": [1],
        },
        "scaling": {"alpha": 1.0, "n": 50, "rho0": [0.0, 0.0]},
        "run": {"T": 2.0, "grid_step": 0.1, "reps": 3, "seed": 7},
        "output": {"directory": "out", "formats": ["csv", "json"]},
    }
    doc.update(overrides)
    return doc


def write_doc(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestParseConfig:
    def test_round_trip_identity(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        cfg = parse_config(path)
        doc2 = serialize_config(cfg)
        cfg2 = parse_config_dict(doc2)
        assert serialize_config(cfg2) == doc2

    def test_unknown_field(self, tmp_path):
        doc = network_doc()
        doc["network"]["lamda"] = [[1.0, 1.0]]
        with pytest.raises(UnknownField, match="lamda"):
            parse_config(write_doc(tmp_path, doc))

    def test_wrong_row_count(self, tmp_path):
        doc = network_doc()
        doc["network"]["lambda"] = [[2.0, 4.0], [0.0, 0.0], [0.0, 0.0]]
        with pytest.raises(DimensionMismatch):
            parse_config(write_doc(tmp_path, doc))

    def test_network_and_model3_exclusive(self, tmp_path):
        doc = network_doc()
        doc["model3"] = {
            "generator": TWO_STATE,
            "lambda_star": [1.0, 2.0],
            "kappa_star": [1.0, 1.0],
            "mu_star": [1.0, 1.0],
        }
        with pytest.raises(MissingRequired):
            parse_config(write_doc(tmp_path, doc))

    def test_model3_is_reduced_at_parse_time(self, tmp_path):
        doc = {
            "model3": {
                "generator": TWO_STATE,
                "lambda_star": [1.0, 2.0],
                "kappa_star": [3.0, 4.0],
                "mu_star": [5.0, 6.0],
            },
            "run": {"T": 1.0, "grid_step": 0.5, "reps": 1, "seed": 1},
        }
        cfg = parse_config(write_doc(tmp_path, doc))
        assert cfg.model3 is not None
        assert cfg.network.n_queues == 3
        np.testing.assert_array_equal(cfg.network.mu[0, 2], [15.0, 18.0])

    def test_marked_sink_must_be_quiet(self, tmp_path):
        doc = network_doc()
        doc["network"]["sinks"] = [0]
        with pytest.raises(DimensionMismatch):
            parse_config(write_doc(tmp_path, doc))

    def test_bad_json_reports_position(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{\n  \"network\": [,]\n}")
        with pytest.raises(ParseError, match="broken.json:2"):
            parse_config(str(path))

    def test_defaults_filled(self, tmp_path):
        doc = network_doc()
        del doc["output"]
        cfg = parse_config(write_doc(tmp_path, doc))
        assert cfg.output_formats == ["csv", "json"]
        assert cfg.tolerances["fluid_cap"] == 0.05


class TestCsvWriters:
    def test_fluid_columns(self, tmp_path):
        path = str(tmp_path / "fluid.csv")
        grid = np.array([0.0, 0.5, 1.0])
        rho = np.array([[0.0, 0.0], [1.0, 0.25], [1.5, 1.0]])
        write_fluid_csv(path, grid, rho)
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "t,rho_1,rho_2"
        assert len(lines) == 4
        assert float(lines[2].split(",")[1]) == 1.0

    def test_empty_grid_writes_header_only(self, tmp_path):
        path = str(tmp_path / "fluid.csv")
        write_fluid_csv(path, np.empty(0), np.empty((0, 0)))
        assert open(path).read() == "t\n"

    def test_moments_upper_triangle(self, tmp_path):
        path = str(tmp_path / "moments.csv")
        grid = np.array([0.0, 1.0])
        mean = np.array([[0.0, 0.0], [1.0, 2.0]])
        cov = np.array([[np.eye(2) * 0.0], [np.array([[1.0, 0.5], [0.5, 2.0]])]]).reshape(2, 2, 2)
        write_moments_csv(path, grid, mean, cov)
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "t,m_1,m_2,V_11,V_12,V_22"
        assert lines[2].split(",")[3:] == ["1", "0.5", "2"]

    def test_seventeen_digit_round_trip(self, tmp_path):
        path = str(tmp_path / "fluid.csv")
        value = 1.0 / 3.0
        write_fluid_csv(path, np.array([value]), np.array([[value]]))
        read_back = float(open(path).read().strip().split("\n")[1].split(",")[1])
        assert read_back == value


class TestCliCommands:
    def test_validate_prints_shape(self, tmp_path, capsys):
        path = write_doc(tmp_path, network_doc())
        code = main(["validate", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 0
        out = capsys.readouterr().out
        assert "L=2" in out and "d=2" in out and "alpha=1" in out and "beta=0.5" in out

    def test_resolved_config_logged(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        out = tmp_path / "o"
        assert main(["validate", "--config", path, "--out", str(out)]) == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["run"]["seed"] == 7

    def test_chain_summary_two_state(self, tmp_path, capsys):
        path = write_doc(tmp_path, network_doc())
        code = main(["chain-summary", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 0
        payload = json.loads(capsys.readouterr().out.strip().split("\n")[-1])
        np.testing.assert_allclose(payload["pi"], [0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(
            payload["deviation"], [[0.25, -0.25], [-0.25, 0.25]], atol=1e-10
        )
        np.testing.assert_allclose(
            payload["sigma"], [[0.25, -0.25], [-0.25, 0.25]], atol=1e-10
        )

    def test_fluid_writes_csv(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        out = tmp_path / "o"
        assert main(["fluid", "--config", path, "--out", str(out)]) == 0
        lines = (out / "fluid.csv").read_text().strip().split("\n")
        assert lines[0] == "t,rho_1,rho_2"
        assert len(lines) == 22

    def test_ou_moments_writes_csv(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        out = tmp_path / "o"
        assert main(["ou-moments", "--config", path, "--out", str(out)]) == 0
        header = (out / "moments.csv").read_text().split("\n")[0]
        assert header == "t,m_1,m_2,V_11,V_12,V_22"

    def test_simulate_writes_long_format(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        out = tmp_path / "o"
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0
        lines = (out / "trajectories.csv").read_text().strip().split("\n")
        assert lines[0] == "rep,t,j_state,q_1,q_2"
        assert len(lines) == 1 + 3 * 21
        assert lines[1].split(",")[0] == "0"
        assert lines[1].split(",")[2] in ("1", "2")

    def test_reduce_model3_command(self, tmp_path):
        doc = {
            "model3": {
                "generator": TWO_STATE,
                "lambda_star": [1.0, 2.0],
                "kappa_star": [3.0, 4.0],
                "mu_star": [5.0, 6.0],
            },
            "run": {"T": 1.0, "grid_step": 0.5, "reps": 1, "seed": 1},
        }
        path = write_doc(tmp_path, doc)
        out = tmp_path / "o"
        assert main(["reduce-model3", "--config", path, "--out", str(out)]) == 0
        payload = json.loads((out / "reduced_network.json").read_text())
        assert payload["network"]["mu"][1][2] == [20.0, 24.0]

    def test_verify_occupation_pass_and_report(self, tmp_path):
        doc = network_doc()
        doc["run"] = {"T": 1.0, "grid_step": 0.1, "reps": 800, "seed": 7}
        doc["scaling"] = {"alpha": 1.0, "n": 200, "rho0": [0.0, 0.0]}
        path = write_doc(tmp_path, doc)
        out = tmp_path / "o"
        assert main(["verify-occupation", "--config", path, "--out", str(out)]) == 0
        report = json.loads((out / "verify_occupation.json").read_text())
        assert report["passed"] is True
        assert {"check", "params", "stats", "verdicts", "passed"} == set(report)
        samples = (out / "verify_occupation_samples.csv").read_text().strip().split("\n")
        assert samples[0] == "rep,g_1,g_2"
        assert len(samples) == 801

    def test_verify_occupation_doubled_reference_fails(self, tmp_path):
        doc = network_doc()
        doc["run"] = {"T": 1.0, "grid_step": 0.1, "reps": 800, "seed": 7}
        doc["scaling"] = {"alpha": 1.0, "n": 200, "rho0": [0.0, 0.0]}
        doc["tolerances"] = {"reference_scale": 2.0}
        path = write_doc(tmp_path, doc)
        code = main(["verify-occupation", "--config", path, "--out", str(tmp_path / "o")])
        assert code == 1

    def test_flag_overrides(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        out = tmp_path / "o"
        assert main(["validate", "--config", path, "--out", str(out),
                     "--seed", "99", "--reps", "5", "--n", "123"]) == 0
        resolved = json.loads((out / "resolved_config.json").read_text())
        assert resolved["run"]["seed"] == 99
        assert resolved["run"]["reps"] == 5
        assert resolved["scaling"]["n"] == 123

    def test_input_error_exit_code(self, tmp_path, capsys):
        assert main(["validate", "--config", str(tmp_path / "missing.json")]) == 2
        doc = network_doc()
        doc["network"]["lamda"] = []
        path = write_doc(tmp_path, doc)
        assert main(["validate", "--config", path]) == 2

    def test_verify_model3_requires_model3_block(self, tmp_path):
        path = write_doc(tmp_path, network_doc())
        assert main(["verify-model3", "--config", path, "--out", str(tmp_path / "o")]) == 2


class TestWorkers:
    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("MMQ_THREADS", "4")
        assert resolve_workers(None) == 4
        assert resolve_workers(2) == 2
        monkeypatch.delenv("MMQ_THREADS")
        assert resolve_workers(None) == 1
