"""
End-to-end tests of the stratah command line: output streams and exit codes.
"""

import json
from unittest.mock import patch

import pytest

from stratah.exceptions import ZeroEvents
from stratah.main import main, parse_methods, parse_weights
from stratah.stratified_inference import Method, WeightKind


def _analyze_args(data_dir, *extra):
    return ["analyze", "--data", str(data_dir / "tiny_two_strata.csv"), "--control", "placebo", *extra]


class TestArgumentParsing:

    def test_weight_keywords(self):
        assert parse_weights("equal").kind is WeightKind.EQUAL
        assert parse_weights("size").kind is WeightKind.SAMPLE_SIZE_PROPORTIONAL
        scheme = parse_weights("0.7,0.3")
        assert scheme.kind is WeightKind.USER_SUPPLIED
        assert scheme.user_weights == [0.7, 0.3]

    def test_methods(self):
        assert parse_methods("all") == [Method.PROPOSED, Method.CONVENTIONAL, Method.CMH1, Method.CMH2]
        assert parse_methods("cmh1, proposed") == [Method.CMH1, Method.PROPOSED]

    def test_missing_control_is_a_usage_error(self, data_dir):
        with pytest.raises(SystemExit) as excinfo:
            main(["analyze", "--data", str(data_dir / "tiny_two_strata.csv"), "--tau", "10"])
        assert excinfo.value.code == 2


class TestAnalyzeCommand:

    def test_json_report_on_stdout(self, data_dir, capsys):
        code = main(_analyze_args(data_dir, "--tau", "10", "--format", "json"))
        out = capsys.readouterr().out
        assert code == 0
        payload = json.loads(out)
        assert payload["tau"] == 10.0
        assert [m["method"] for m in payload["methods"]] == ["proposed", "conventional", "cmh1", "cmh2"]

    def test_table_report(self, data_dir, capsys):
        assert main(_analyze_args(data_dir, "--tau", "10", "--method", "proposed", "--weights", "equal")) == 0
        out = capsys.readouterr().out
        assert "Method: proposed  weights A=0.500, B=0.500" in out
        assert "Stratum A" in out

    def test_repeated_runs_are_byte_identical(self, data_dir, capsys):
        main(_analyze_args(data_dir, "--tau", "10", "--format", "json"))
        first = capsys.readouterr().out
        main(_analyze_args(data_dir, "--tau", "10", "--format", "json"))
        assert capsys.readouterr().out == first

    def test_parse_error_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("time,status,arm,stratum\n1,1,a,S\n2,1,b,S\n3,x,a,S\n")
        code = main(["analyze", "--data", str(path), "--tau", "1", "--control", "a"])
        assert code == 3
        assert "line 4" in capsys.readouterr().err

    def test_invalid_input_exit_code(self, data_dir, capsys):
        assert main(_analyze_args(data_dir, "--tau", "-1")) == 4
        assert main(_analyze_args(data_dir, "--tau", "10", "--weights", "heavy,light")) == 4
        assert "error" in capsys.readouterr().err

    def test_tau_beyond_data_exit_code(self, data_dir, capsys):
        code = main(_analyze_args(data_dir, "--tau", "20"))
        err = capsys.readouterr().err
        assert code == 5
        assert "stratum=A" in err

    def test_undefined_contrast_still_succeeds(self, tmp_path, capsys):
        path = tmp_path / "late.csv"
        path.write_text("time,status,arm,stratum\n1,1,c,A\n3,1,c,A\n8,0,c,A\n2,1,t,A\n9,0,t,A\n"
                        "6,1,c,B\n8,1,c,B\n3,1,t,B\n7,1,t,B\n")
        code = main(["analyze", "--data", str(path), "--tau", "5", "--control", "c", "--format", "json"])
        captured = capsys.readouterr()
        assert code == 0
        conventional = json.loads(captured.out)["methods"][1]
        assert conventional["ratio"] is None
        assert "Method contrast undefined" in captured.err

    @pytest.mark.parametrize("form", ["printed", "linearized"])
    def test_variance_form_option(self, data_dir, capsys, form):
        assert main(_analyze_args(data_dir, "--tau", "10", "--format", "json", "--variance-form", form)) == 0
        assert json.loads(capsys.readouterr().out)["variance_form"] == form

    def test_variance_form_defaults_to_printed(self, data_dir, capsys):
        assert main(_analyze_args(data_dir, "--tau", "10", "--format", "json")) == 0
        assert json.loads(capsys.readouterr().out)["variance_form"] == "printed"

    def test_missing_file(self, tmp_path):
        assert main(["analyze", "--data", str(tmp_path / "absent.csv"), "--tau", "1", "--control", "a"]) == 4


class TestSimulateCommand:

    def test_deterministic_json(self, capsys):
        args = ["simulate", "--scenario", "paper_pattern1_n700", "--reps", "3", "--seed", "9",
                "--jobs", "1", "--format", "json"]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        assert capsys.readouterr().out == first
        assert json.loads(first)["name"] == "paper_pattern1_n700"

    def test_unknown_scenario_exit_code(self, capsys):
        assert main(["simulate", "--scenario", "missing_scenario"]) == 3
        assert "bundled scenarios" in capsys.readouterr().err

    def test_failure_rate_abort_exit_code(self, capsys):
        with patch("stratah.sim_harness.standardized_ah", side_effect=ZeroEvents("no events")):
            code = main(["simulate", "--scenario", "paper_pattern1_n700", "--reps", "2", "--jobs", "1"])
        assert code == 6
        assert "ZeroEvents=2" in capsys.readouterr().err
