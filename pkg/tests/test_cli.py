import json
import math

import numpy as np
import pytest

from sck.cli import main, payload_rows, render_csv
from sck.config import ConfigError, parse_pi_expression, parse_run_config

PI2 = math.pi**2


def run_cli(tmp_path, subcommand, config, name="cfg.json", extra=()):
    cfg_path = tmp_path / name
    cfg_path.write_text(json.dumps(config))
    out_path = tmp_path / f"out_{subcommand}_{name}.{config.get('format', 'json')}"
    code = main([subcommand, "--config", str(cfg_path), "--output", str(out_path), *extra])
    text = out_path.read_text() if out_path.exists() else None
    return code, text


EXAMPLE2 = {"system": {"example2": {"N": 4, "b_coeffs": [0.5, 0.5, 0.5, 0.5]}}}


class TestPiExpression:
    def test_forms(self):
        assert parse_pi_expression("pi") == math.pi
        assert parse_pi_expression("-3*pi^2") == pytest.approx(-3 * PI2, rel=1e-15)
        assert parse_pi_expression("2.5") == 2.5
        assert parse_pi_expression("pi^2*0.5") == pytest.approx(0.5 * PI2)
        assert parse_pi_expression("-2") == -2.0

    def test_rejects_garbage(self):
        for bad in ("pi+1", "3**2", "sin(pi)", "", "pi^", "--3"):
            with pytest.raises(ConfigError):
                parse_pi_expression(bad)


class TestParseRunConfig:
    def test_exactly_one_system_source(self):
        with pytest.raises(ConfigError, match="exactly one"):
            parse_run_config({"system": {}})
        with pytest.raises(ConfigError, match="exactly one"):
            parse_run_config({"system": {
                "example2": {"N": 2, "b_coeffs": [1, 1]},
                "matrices": {"A": [[-1]], "B": [[1]]},
            }})

    def test_missing_field_has_path(self):
        with pytest.raises(ConfigError, match="system.matrices.B"):
            parse_run_config({"system": {"matrices": {"A": [[-1.0]]}}})

    def test_lambda_grid_pi_strings(self):
        cfg = parse_run_config(dict(EXAMPLE2, lambda_grid=["-3*pi^2", 0]))
        assert cfg.lambda_grid[0] == pytest.approx(-3 * PI2)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown top-level"):
            parse_run_config(dict(EXAMPLE2, bogus=1))

    def test_resolved_reparses_identically(self):
        raw = dict(
            EXAMPLE2,
            lambda_grid=["-3*pi^2"],
            sim={"T": 1.0, "dt": 0.1, "n_paths": 10, "seed": 3},
        )
        cfg = parse_run_config(raw)
        again = parse_run_config(json.loads(json.dumps(cfg.resolved)))
        assert again.resolved == cfg.resolved


class TestVerdictCommand:
    def test_example2_report(self, tmp_path):
        code, text = run_cli(tmp_path, "verdict", dict(EXAMPLE2, lambda_grid=["-3*pi^2", 0]))
        assert code == 0
        rep = json.loads(text)
        p = rep["payload"]
        assert p["verdict"] == "NotApproxControllable"
        assert p["invariant_subspace_dim"] >= 1
        assert p["n1_passed"] is True
        assert p["n2_passed"] is False
        hits = [q for q in p["n2"]["points"]
                if q["violated"] and abs(q["lambda"] + 3 * PI2) < 1e-9]
        assert hits and abs(hits[0]["alpha"] + 4 * PI2) < 1e-6
        assert rep["tool"]["name"] == "sck"
        assert "version" in rep["tool"]
        assert rep["duration_seconds"] >= 0.0
        assert rep["config"]["system"]["example2"]["N"] == 4

    def test_check_n1_clean(self, tmp_path):
        code, text = run_cli(tmp_path, "check-n1", EXAMPLE2)
        assert code == 0
        p = json.loads(text)["payload"]
        assert p["passed"] is True
        assert all(not q["violated"] for q in p["points"])


class TestErrorStatuses:
    def test_malformed_config(self, tmp_path):
        code, _ = run_cli(tmp_path, "check-n1", {"system": {"matrices": {"A": [[-1.0]]}}})
        assert code == 1

    def test_unknown_subcommand(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(EXAMPLE2))
        assert main(["frobnicate", "--config", str(cfg_path), "--output", "x"]) == 1

    def test_unreadable_config(self):
        assert main(["check-n1", "--config", "/nonexistent.json", "--output", "x"]) == 1

    def test_missing_sim_section(self, tmp_path):
        code, _ = run_cli(tmp_path, "duality", dict(EXAMPLE2, x0=[1, 1, 1, 1]))
        assert code == 1

    def test_write_failure_is_io_error(self, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(EXAMPLE2))
        code = main(["check-n1", "--config", str(cfg_path),
                     "--output", str(tmp_path / "no_dir" / "out.json")])
        assert code == 2

    def test_negative_verdict_still_succeeds(self, tmp_path):
        code, text = run_cli(tmp_path, "verdict", EXAMPLE2)
        assert code == 0
        assert json.loads(text)["payload"]["verdict"] == "NotApproxControllable"


class TestEllipticityCommand:
    DIVFORM = {
        "system": {"divform1d": {
            "N": 4, "a": {"type": "constant", "value": 1.0},
            "c": {"type": "constant", "value": 2.0},
            "b": {"type": "constant", "value": 1.0},
        }},
        "ellipticity": {"alpha": 0.6, "grid_points": 200},
    }

    def test_failing_pair_reports_not_ok(self, tmp_path):
        code, text = run_cli(tmp_path, "ellipticity", self.DIVFORM)
        assert code == 0
        p = json.loads(text)["payload"]
        assert p["ok"] is False
        assert p["min_margin"] == pytest.approx(-1.4)

    def test_assemble_rejects_same_system_when_non_elliptic(self, tmp_path):
        bad = {"system": {"divform1d": {
            "N": 4, "a": {"type": "polynomial", "coeffs": [0.5, -1.0]},
            "c": 0.0, "b": 1.0,
        }}}
        code, _ = run_cli(tmp_path, "assemble", bad)
        assert code == 1

    def test_assemble_payload(self, tmp_path):
        good = {"system": {"divform1d": {"N": 3, "a": 1.0, "c": 0.0, "b": 1.0}}}
        code, text = run_cli(tmp_path, "assemble", good)
        assert code == 0
        p = json.loads(text)["payload"]
        A = np.array(p["A"])
        assert np.max(np.abs(A - np.diag([-PI2, -4 * PI2, -9 * PI2]))) <= 1e-9


class TestCsvAndParity:
    def test_lambda_set_csv(self, tmp_path):
        cfg = dict(EXAMPLE2, lambda_grid=[-5, 0, 5], format="csv")
        code, text = run_cli(tmp_path, "lambda-set", cfg)
        assert code == 0
        lines = text.strip().splitlines()
        assert lines[0] == "lambda,in_set,margin,boundary"
        assert len(lines) == 4
        assert all(line.endswith(",true," + repr(-PI2) + ",false") for line in lines[1:])

    @pytest.mark.parametrize("sub,extra", [
        ("check-n2", {"lambda_grid": ["-3*pi^2"]}),
        ("lambda-set", {"lambda_grid": [0, 1]}),
        ("verdict", {"lambda_grid": [0]}),
        ("invariant-subspace", {}),
        ("assemble", {}),
        ("b-coeffs", {}),
    ])
    def test_csv_matches_json_numbers(self, tmp_path, sub, extra):
        base = dict(EXAMPLE2, **extra)
        code_j, text_j = run_cli(tmp_path, sub, dict(base, format="json"), name="j.json")
        code_c, text_c = run_cli(tmp_path, sub, dict(base, format="csv"), name="c.json")
        assert code_j == 0 and code_c == 0
        payload = json.loads(text_j)["payload"]
        assert render_csv(sub, payload) == text_c

    def test_payload_rows_float_roundtrip(self, tmp_path):
        cfg = dict(EXAMPLE2, lambda_grid=[0])
        _, text = run_cli(tmp_path, "lambda-set", cfg)
        payload = json.loads(text)["payload"]
        _, rows = payload_rows("lambda-set", payload)
        for row in rows:
            for v in row:
                if isinstance(v, float):
                    assert float(repr(v)) == v


class TestSimulationCommands:
    SIM = {"T": 0.5, "dt": 0.01, "n_paths": 200, "seed": 11}

    def test_simulate_forward(self, tmp_path):
        cfg = dict(EXAMPLE2, sim=self.SIM, x0=[1, 0, 0, 0],
                   control={"type": "constant", "u": [1.0]})
        code, text = run_cli(tmp_path, "simulate-forward", cfg)
        assert code == 0
        p = json.loads(text)["payload"]
        assert len(p["times"]) == 51
        assert p["mean"][0] == [1.0, 0.0, 0.0, 0.0]

    def test_duality_command(self, tmp_path):
        cfg = dict(EXAMPLE2, sim=dict(self.SIM, n_paths=2000), x0=[1, 1, 1, 1],
                   terminal={"type": "deterministic", "xi": [0, 1, 0, 0]},
                   control={"type": "constant", "u": [1.0]})
        code, text = run_cli(tmp_path, "duality", cfg)
        assert code == 0
        p = json.loads(text)["payload"]
        assert p["passed"] is True

    def test_girsanov_command(self, tmp_path):
        cfg = dict(EXAMPLE2, sim=self.SIM, x0=[1, 1, 1, 1],
                   girsanov={"lambda": -1.0, "dt_list": [0.01, 0.005]})
        code, text = run_cli(tmp_path, "girsanov", cfg)
        assert code == 0
        p = json.loads(text)["payload"]
        assert len(p["points"]) == 2
        assert p["points"][0]["sup_error"] > p["points"][1]["sup_error"]

    def test_apriori_default_rescalings(self, tmp_path):
        cfg = dict(EXAMPLE2, sim=dict(self.SIM, n_paths=500),
                   terminal={"type": "deterministic", "xi": [0.3, 1.0, -0.5, 0.2]})
        code, text = run_cli(tmp_path, "apriori", cfg)
        assert code == 0
        p = json.loads(text)["payload"]
        assert len(p["samples"]) == 5
        assert p["scale_ok"] is True

    def test_convergence_command(self, tmp_path):
        cfg = dict(EXAMPLE2, sim=dict(self.SIM, n_paths=100),
                   convergence={"n_list": [10, 100], "delta_list": [0.1, 0.001],
                                "lambda": 1.0})
        code, text = run_cli(tmp_path, "convergence", cfg)
        assert code == 0
        p = json.loads(text)["payload"]
        assert p["yosida_decreasing_in_n"] is True
        assert len(p["rows"]) == 4

    def test_seed_override_changes_results(self, tmp_path):
        base = dict(EXAMPLE2, sim=self.SIM, x0=[1, 0, 0, 0])
        _, t1 = run_cli(tmp_path, "simulate-forward", base, name="a.json")
        _, t2 = run_cli(tmp_path, "simulate-forward", base, name="b.json",
                        extra=("--seed", "999"))
        p1, p2 = json.loads(t1), json.loads(t2)
        assert p1["payload"] != p2["payload"]
        assert p2["config"]["sim"]["seed"] == 999

    def test_threads_do_not_change_payload(self, tmp_path):
        base = dict(EXAMPLE2, sim=self.SIM, x0=[1, 0, 0, 0])
        _, t1 = run_cli(tmp_path, "simulate-forward", base, name="a.json",
                        extra=("--threads", "1"))
        _, t2 = run_cli(tmp_path, "simulate-forward", base, name="b.json",
                        extra=("--threads", "4"))
        p1, p2 = json.loads(t1), json.loads(t2)
        assert json.dumps(p1["payload"]) == json.dumps(p2["payload"])

    def test_roundtrip_resolved_config(self, tmp_path):
        cfg = dict(EXAMPLE2, sim=self.SIM, x0=[1, 0, 0, 0],
                   control={"type": "constant", "u": [0.5]})
        _, t1 = run_cli(tmp_path, "simulate-forward", cfg, name="orig.json")
        rep = json.loads(t1)
        _, t2 = run_cli(tmp_path, "simulate-forward", rep["config"], name="resolved.json")
        rep2 = json.loads(t2)
        assert json.dumps(rep["payload"]) == json.dumps(rep2["payload"])

    def test_threads_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SCK_THREADS", "3")
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps(dict(EXAMPLE2, sim=self.SIM, x0=[1, 0, 0, 0])))
        out = tmp_path / "o.json"
        assert main(["simulate-forward", "--config", str(cfg_path), "--output", str(out)]) == 0
        assert json.loads(out.read_text())["threads"] == 3

    def test_explicit_points_forwarded(self, tmp_path):
        cfg = dict(EXAMPLE2, lambda_grid=["-3*pi^2"],
                   explicit_points=[["-3*pi^2", "-4*pi^2"], ["-3*pi^2", -1.0]])
        code, text = run_cli(tmp_path, "check-n2", cfg)
        assert code == 0
        p = json.loads(text)["payload"]
        assert any(abs(q["alpha"] + 1.0) < 1e-12 for q in p["points"])
