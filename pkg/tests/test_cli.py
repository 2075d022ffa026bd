"""Config parsing, report plumbing, and the qfi command surface."""

import json

import numpy as np
import pytest

from qfikit.cli import (
    ConfigError,
    RunReport,
    execute,
    main,
    parse_config,
    parse_grid,
    report_csv,
    report_json,
)

CANONICAL_TRANSDUCER = {
    "kind": "transducer",
    "parameters": {"x": 1e-5, "T": 1.0, "eps": 1.0},
}

CANONICAL_DEPHASING = {
    "kind": "dephasing",
    "parameters": {"x": 0.0, "T": 1.0, "N": 256, "gamma": 1.0},
    "operators": {"h0": "pauli_z", "jump": "pauli_z"},
    "states": {"psi": "plus_x"},
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return str(path)


class TestParseGrid:
    def test_linear(self):
        np.testing.assert_allclose(parse_grid("lin:0:1:5"), [0, 0.25, 0.5, 0.75, 1])

    def test_log(self):
        np.testing.assert_allclose(parse_grid("log:1e-2:1e2:5"),
                                   [1e-2, 1e-1, 1, 1e1, 1e2], rtol=1e-12)

    def test_single_point(self):
        np.testing.assert_allclose(parse_grid("lin:0:0:1"), [0.0])

    @pytest.mark.parametrize("bad", ["lin:0:1", "geom:0:1:5", "log:0:1:5",
                                     "lin:a:1:5", "lin:0:1:0"])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            parse_grid(bad)


class TestParseConfig:
    def test_minimal_transducer(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, CANONICAL_TRANSDUCER))
        assert cfg.kind == "transducer"
        assert cfg.parameters["eps"] == 1.0
        assert cfg.output_path is None
        assert cfg.output_format == "json"
        assert len(cfg.config_hash) == 64

    def test_round_trip_stability(self, tmp_path):
        # parsing the same bytes twice gives the same normalized view
        path = write_config(tmp_path, CANONICAL_DEPHASING)
        first = parse_config(path)
        second = parse_config(path)
        assert first.parameters == second.parameters
        assert first.config_hash == second.config_hash
        np.testing.assert_array_equal(first.operators["h0"], second.operators["h0"])

    def test_unknown_top_key_anchored(self, tmp_path):
        path = write_config(tmp_path, {**CANONICAL_TRANSDUCER, "extra": 1})
        with pytest.raises(ConfigError, match=r"config\.json:\d+: unknown key 'extra'"):
            parse_config(path)

    def test_unknown_parameter_anchored(self, tmp_path):
        payload = {"kind": "dephasing", "parameters": {"gama": 1.0}}
        with pytest.raises(ConfigError, match="unknown key 'gama' in parameters"):
            parse_config(write_config(tmp_path, payload))

    def test_syntax_error_anchored(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "kind": "dephasing",\n  oops\n}\n')
        with pytest.raises(ConfigError, match=r"broken\.json:3"):
            parse_config(str(path))

    def test_bad_kind(self, tmp_path):
        with pytest.raises(ConfigError, match="kind must be one of"):
            parse_config(write_config(tmp_path, {"kind": "qubit"}))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(str(tmp_path / "absent.json"))

    def test_ragged_matrix_names_key(self, tmp_path):
        payload = {
            "kind": "dephasing",
            "operators": {"h0": [[[1, 0], [0, 0], [0, 0]], [[0, 0], [-1, 0]]]},
        }
        with pytest.raises(ConfigError, match="'h0'.*rows must all have"):
            parse_config(write_config(tmp_path, payload))

    def test_bad_cell_names_key(self, tmp_path):
        payload = {"kind": "dephasing", "operators": {"jump": [[[1, 0], [0]], [[0, 0], [1, 0]]]}}
        with pytest.raises(ConfigError, match=r"'jump'.*\[re, im\]"):
            parse_config(write_config(tmp_path, payload))

    def test_matrix_literal_parses(self, tmp_path):
        payload = {
            "kind": "dephasing",
            "operators": {"h0": [[[1, 0], [0, -1]], [[0, 1], [-1, 0]]]},
        }
        cfg = parse_config(write_config(tmp_path, payload))
        expected = np.array([[1, -1j], [1j, -1]], dtype=complex)
        np.testing.assert_array_equal(cfg.operators["h0"], expected)

    def test_unknown_preset(self, tmp_path):
        payload = {"kind": "dephasing", "operators": {"h0": "pauli_w"}}
        with pytest.raises(ConfigError, match="unknown operator preset 'pauli_w'"):
            parse_config(write_config(tmp_path, payload))

    def test_state_preset(self, tmp_path):
        payload = {**CANONICAL_DEPHASING, "states": {"psi": "minus_x"}}
        cfg = parse_config(write_config(tmp_path, payload))
        np.testing.assert_allclose(cfg.states["psi"],
                                   np.array([1, -1]) / np.sqrt(2), atol=1e-15)

    def test_eps_and_grid_conflict(self, tmp_path):
        payload = {"kind": "transducer",
                   "parameters": {"eps": 1.0, "eps_grid": "log:0.1:10:3"}}
        with pytest.raises(ConfigError, match="either eps or eps_grid"):
            parse_config(write_config(tmp_path, payload))

    def test_eps_grid_string_normalized(self, tmp_path):
        payload = {"kind": "transducer", "parameters": {"eps_grid": "log:1e-1:1e1:3"}}
        cfg = parse_config(write_config(tmp_path, payload))
        np.testing.assert_allclose(cfg.parameters["eps_grid"], [0.1, 1.0, 10.0],
                                   rtol=1e-12)

    def test_eps_grid_array(self, tmp_path):
        payload = {"kind": "transducer", "parameters": {"eps_grid": [0.5, 2.0]}}
        cfg = parse_config(write_config(tmp_path, payload))
        assert cfg.parameters["eps_grid"] == [0.5, 2.0]

    def test_n_must_be_integer(self, tmp_path):
        payload = {"kind": "dephasing", "parameters": {"N": 2.5}}
        with pytest.raises(ConfigError, match="'N' must be an integer"):
            parse_config(write_config(tmp_path, payload))

    def test_bad_scheme(self, tmp_path):
        payload = {"kind": "dephasing", "parameters": {"scheme": "midpoint"}}
        with pytest.raises(ConfigError, match="unknown scheme"):
            parse_config(write_config(tmp_path, payload))

    def test_bad_expect_value(self, tmp_path):
        payload = {**CANONICAL_TRANSDUCER, "expect": {"theorem2": "fail"}}
        with pytest.raises(ConfigError, match='must be "pass"'):
            parse_config(write_config(tmp_path, payload))

    def test_bad_output_format(self, tmp_path):
        payload = {**CANONICAL_TRANSDUCER, "output": {"format": "xml"}}
        with pytest.raises(ConfigError, match="csv or json"):
            parse_config(write_config(tmp_path, payload))

    def test_custom_channel_requires_outcomes(self, tmp_path):
        payload = {"kind": "custom_channel", "states": {"psi": "zero"}}
        with pytest.raises(ConfigError, match="nonempty outcomes"):
            parse_config(write_config(tmp_path, payload))

    def test_custom_channel_outcome_keys(self, tmp_path):
        payload = {
            "kind": "custom_channel",
            "states": {"psi": "zero"},
            "outcomes": [{"label": "a", "matrix": "identity"}],
        }
        with pytest.raises(ConfigError, match="missing 'derivative'"):
            parse_config(write_config(tmp_path, payload))

    def test_jump_rate_validated(self, tmp_path):
        payload = {
            "kind": "custom_collision",
            "operators": {"h0": "pauli_z"},
            "jumps": [{"op": "pauli_z", "rate": -1.0}],
        }
        with pytest.raises(ConfigError, match="rate must be a nonnegative"):
            parse_config(write_config(tmp_path, payload))


class TestRunReport:
    def test_json_round_trip(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, CANONICAL_TRANSDUCER))
        report = execute(cfg)
        text = report_json(report)
        parsed = RunReport.from_json_dict(json.loads(text))
        assert parsed == report
        again = RunReport.from_json_dict(json.loads(report_json(parsed)))
        assert again == parsed

    def test_json_keys_sorted(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, CANONICAL_TRANSDUCER))
        text = report_json(execute(cfg))
        data = json.loads(text)
        dumped = json.dumps(data, sort_keys=True, indent=2) + "\n"
        assert text == dumped

    def test_report_carries_hash_and_version(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, CANONICAL_TRANSDUCER))
        report = execute(cfg)
        assert report.config_hash == cfg.config_hash
        assert report.version
        assert report.wall_time_s > 0

    def test_complex_metric_expands_in_csv(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, CANONICAL_TRANSDUCER))
        text = report_csv(execute(cfg))
        header = text.splitlines()[0].split(",")
        assert "f_total_re" in header and "f_total_im" in header
        assert "f_total" not in header
        assert header == sorted(header, key=lambda c: c.replace("_re", "").replace("_im", ""))

    def test_csv_uses_lf_and_17_digits(self, tmp_path):
        cfg = parse_config(write_config(tmp_path, CANONICAL_TRANSDUCER))
        text = report_csv(execute(cfg))
        assert "\r" not in text
        assert text.endswith("\n")
        row = text.splitlines()[1].split(",")
        assert any(len(cell.replace("-", "").replace(".", "").replace("e", "")) >= 16
                   for cell in row)


class TestRunCommand:
    def test_transducer_run_exit_zero(self, tmp_path, capsys):
        path = write_config(tmp_path, CANONICAL_TRANSDUCER)
        assert main(["run", path]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["metrics"]["i_q"] == pytest.approx(4.0, rel=1e-9)
        assert data["verdicts"]["theorem2"]["status"] == "n.a."

    def test_fig1b_table(self, tmp_path):
        payload = {
            "kind": "transducer",
            "parameters": {"x": 1e-5, "T": 1.0,
                           "eps_grid": "log:1e-3:1e3:41", "tol": 2e-5},
            "expect": {"theorem1_perp": "pass"},
            "output": {"path": str(tmp_path / "fig1b.csv"), "format": "csv"},
        }
        assert main(["run", write_config(tmp_path, payload)]) == 0
        lines = (tmp_path / "fig1b.csv").read_text().splitlines()
        assert lines[0] == "eps,I_sigma_1,I_sigma_2,avg_total,sum_total"
        assert len(lines) == 42
        avg = [float(line.split(",")[3]) for line in lines[1:]]
        assert max(abs(v - 4.0) for v in avg) < 1e-3

    def test_dephasing_kappa(self, tmp_path, capsys):
        payload = {**CANONICAL_DEPHASING,
                   "parameters": {**CANONICAL_DEPHASING["parameters"], "N": 1024}}
        assert main(["run", write_config(tmp_path, payload)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["metrics"]["kappa"] == pytest.approx(1 - np.exp(-1.0), abs=1e-4)
        assert data["verdicts"]["theorem2"]["status"] == "fail"

    def test_expect_failure_exits_two(self, tmp_path, capsys):
        payload = {**CANONICAL_DEPHASING, "expect": {"theorem2": "pass"}}
        assert main(["run", write_config(tmp_path, payload)]) == 2
        capsys.readouterr()

    def test_parse_error_exits_one(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"kind": "dephasing", "parameters": {"gama": 1}}')
        assert main(["run", str(path)]) == 1
        err = capsys.readouterr().err
        assert "unknown key 'gama'" in err

    def test_malformed_matrix_exits_one(self, tmp_path, capsys):
        payload = {
            "kind": "dephasing",
            "operators": {"h0": [[[1, 0], [0, 0], [0, 0]], [[0, 0], [-1, 0]]]},
        }
        assert main(["run", write_config(tmp_path, payload)]) == 1
        assert "'h0'" in capsys.readouterr().err

    def test_noncommuting_model_exits_one(self, tmp_path, capsys):
        payload = {**CANONICAL_DEPHASING, "operators": {"h0": "pauli_z", "jump": "pauli_x"}}
        assert main(["run", write_config(tmp_path, payload)]) == 1
        assert "commute" in capsys.readouterr().err

    def test_custom_channel_run(self, tmp_path, capsys):
        half = 1 / np.sqrt(2)
        payload = {
            "kind": "custom_channel",
            "parameters": {"x": 0.0},
            "states": {"psi": "zero"},
            "outcomes": [
                {"label": "a",
                 "matrix": [[[half, 0], [0, 0]], [[0, 0], [half, 0]]],
                 "derivative": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]},
                {"label": "b",
                 "matrix": [[[half, 0], [0, 0]], [[0, 0], [half, 0]]],
                 "derivative": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]]},
            ],
        }
        assert main(["run", write_config(tmp_path, payload)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["metrics"]["i_q"] == pytest.approx(0.0, abs=1e-12)
        assert data["verdicts"]["theorem1_perp"]["status"] == "pass"

    def test_custom_collision_run(self, tmp_path, capsys):
        payload = {
            "kind": "custom_collision",
            "parameters": {"x": 0.0, "T": 1.0, "N": 512},
            "operators": {"h0": "pauli_z"},
            "states": {"psi": "plus_x"},
            "jumps": [{"op": "pauli_z", "rate": 0.5}],
        }
        assert main(["run", write_config(tmp_path, payload)]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["metrics"]["kappa"] == pytest.approx(1 - np.exp(-0.5), abs=1e-4)

    def test_output_override(self, tmp_path):
        path = write_config(tmp_path, CANONICAL_TRANSDUCER)
        out = tmp_path / "here.csv"
        assert main(["run", path, "--format", "csv", "--output", str(out)]) == 0
        assert out.exists()
        assert out.read_text().startswith("I_sigma_1")

    def test_determinism_byte_identical(self, tmp_path):
        path = write_config(tmp_path, CANONICAL_TRANSDUCER)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", path, "--format", "csv", "--output", str(a)]) == 0
        assert main(["run", path, "--format", "csv", "--output", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestSweepCommand:
    def test_gamma_zero_row(self, tmp_path, capsys):
        path = write_config(tmp_path, CANONICAL_DEPHASING)
        assert main(["sweep", path, "--param", "gamma", "--grid", "lin:0:0:1",
                     "--format", "csv"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "gamma,kappa,p_check,i_sigma,i_q_baseline"
        assert len(lines) == 2
        assert float(lines[1].split(",")[1]) == 0.0

    def test_kappa_monotone_in_time(self, tmp_path, capsys):
        path = write_config(tmp_path, CANONICAL_DEPHASING)
        assert main(["sweep", path, "--param", "T", "--grid", "log:0.1:3:6",
                     "--format", "csv"]) == 0
        lines = capsys.readouterr().out.splitlines()[1:]
        kappas = [float(line.split(",")[1]) for line in lines]
        assert all(b > a for a, b in zip(kappas, kappas[1:]))

    def test_eps_sweep_reproduces_fig1b(self, tmp_path, capsys):
        sweep_cfg = write_config(tmp_path, CANONICAL_TRANSDUCER, "sweep.json")
        assert main(["sweep", sweep_cfg, "--param", "eps",
                     "--grid", "log:1e-3:1e3:9", "--format", "csv",
                     "--tol", "2e-5"]) == 0
        sweep_lines = capsys.readouterr().out.splitlines()
        grid_payload = {
            "kind": "transducer",
            "parameters": {"x": 1e-5, "T": 1.0, "eps_grid": "log:1e-3:1e3:9"},
        }
        grid_cfg = write_config(tmp_path, grid_payload, "grid.json")
        assert main(["run", grid_cfg, "--format", "csv"]) == 0
        run_lines = capsys.readouterr().out.splitlines()
        assert sweep_lines[0] == run_lines[0]
        assert sweep_lines[1:] == run_lines[1:]

    def test_rows_in_grid_order_with_jobs(self, tmp_path, capsys):
        path = write_config(tmp_path, CANONICAL_DEPHASING)
        assert main(["sweep", path, "--param", "gamma", "--grid", "lin:0.2:1:5",
                     "--format", "csv", "--jobs", "3"]) == 0
        lines = capsys.readouterr().out.splitlines()[1:]
        gammas = [float(line.split(",")[0]) for line in lines]
        np.testing.assert_allclose(gammas, [0.2, 0.4, 0.6, 0.8, 1.0], atol=1e-12)

    def test_unknown_parameter_rejected(self, tmp_path, capsys):
        path = write_config(tmp_path, CANONICAL_DEPHASING)
        assert main(["sweep", path, "--param", "eps", "--grid", "lin:0:1:3"]) == 1
        assert "not in the config" in capsys.readouterr().err

    def test_gridded_config_rejected(self, tmp_path, capsys):
        payload = {"kind": "transducer", "parameters": {"eps_grid": [0.5, 2.0]}}
        path = write_config(tmp_path, payload)
        assert main(["sweep", path, "--param", "x", "--grid", "lin:0:1:2"]) == 1
        assert "eps_grid" in capsys.readouterr().err

    def test_bad_grid_spec(self, tmp_path, capsys):
        path = write_config(tmp_path, CANONICAL_DEPHASING)
        assert main(["sweep", path, "--param", "gamma", "--grid", "geom:1:2:3"]) == 1
        capsys.readouterr()


class TestVerifyCommand:
    def test_unknown_suite(self, capsys):
        assert main(["verify", "--suite", "nope"]) == 1
        assert "unknown suite" in capsys.readouterr().err

    def test_gauge_suite_passes(self, capsys):
        assert main(["verify", "--suite", "gauge"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "25 instances" in out

    def test_chain_suite_passes(self, capsys):
        assert main(["verify", "--suite", "chain"]) == 0
        out = capsys.readouterr().out
        assert "0 violations" in out

    def test_theorem_soundness_suite_passes(self, capsys):
        assert main(["verify", "--suite", "theorem-soundness"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3


class TestBundledConfigs:
    def test_fig1b_config_parses(self):
        cfg = parse_config("configs/fig1b.json")
        assert cfg.kind == "transducer"
        assert len(cfg.parameters["eps_grid"]) == 41
        assert cfg.expect == {"theorem1_perp": "pass"}

    def test_dephasing_config_parses(self):
        cfg = parse_config("configs/dephasing.json")
        assert cfg.kind == "dephasing"
        assert cfg.parameters["N"] == 16384

    def test_configs_validate_against_schema(self):
        jsonschema = pytest.importorskip("jsonschema")
        with open("docs/schema.json", encoding="utf-8") as fh:
            schema = json.load(fh)
        for name in ("configs/fig1b.json", "configs/dephasing.json"):
            with open(name, encoding="utf-8") as fh:
                jsonschema.validate(json.load(fh), schema)
