import csv
import io
import json

import pytest

from agency_bridge.bridge import IdentityReport
from agency_bridge.cli import ConfigError, emit_report, fmt, load_reports, main, parse_seeds
from agency_bridge.envs import build_paraglider, save_model


@pytest.fixture
def paraglider_file(tmp_path):
    path = tmp_path / "paraglider.json"
    save_model(build_paraglider(), path)
    return path


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestHelpers:
    @pytest.mark.parametrize("text, expected", [("1..3", range(1, 4)), ("5", range(5, 6))])
    def test_parse_seeds(self, text, expected):
        assert parse_seeds(text) == expected

    @pytest.mark.parametrize("text", ["a..b", "3..1", ""])
    def test_parse_seeds_bad(self, text):
        with pytest.raises(ConfigError):
            parse_seeds(text)

    def test_fmt(self):
        assert fmt(1 / 3) == "0.333333333333"
        assert fmt(True) == "true"
        assert fmt(None) == ""


class TestEmit:
    def test_single_csv_row(self):
        text = emit_report([IdentityReport("efe_mdp_forms", 0.0, 1e-12, seed=1)], "csv")
        rows = list(csv.reader(io.StringIO(text)))
        assert rows == [["identity_name", "seed", "residual", "tolerance", "pass"], ["efe_mdp_forms", "1", "0", "1e-12", "true"]]

    def test_mixed_pass_column(self):
        reports = [IdentityReport("a", 1e-13, 1e-12, seed=1), IdentityReport("a", 1e-11, 1e-12, seed=2)]
        rows = list(csv.DictReader(io.StringIO(emit_report(reports, "csv"))))
        assert [r["pass"] for r in rows] == ["true", "false"]

    def test_json_round_trip(self, tmp_path):
        reports = [IdentityReport("a", 1 / 3 * 1e-13, 1e-12, seed=1, details={"x": [0.1, 0.2]})]
        path = tmp_path / "r.json"
        emit_report(reports, "json", path)
        assert load_reports(path) == reports

    def test_empty(self):
        with pytest.raises(ValueError):
            emit_report([], "csv")


class TestCommands:
    def test_reproduce_paraglider(self, capsys):
        code, out, _ = run(capsys, "reproduce", "paraglider")
        assert code == 0
        assert "-1.27301166701" in out
        assert "paraglider: PASS" in out

    def test_reproduce_unknown(self, capsys):
        code, _, err = run(capsys, "reproduce", "gridworld")
        assert code == 2 and "unknown reproduction" in err

    def test_evaluate_efe(self, capsys, paraglider_file):
        code, out, _ = run(capsys, "evaluate", "--model", str(paraglider_file), "--objective", "efe-mdp", "--format", "json")
        assert code == 0
        assert json.loads(out)["optimal_set"] == ["a1", "a2"]

    @pytest.mark.parametrize("c, best", [("0.5", ["a1"]), ("1", ["a1", "a2"]), ("2", ["a2"])])
    def test_evaluate_eu(self, capsys, paraglider_file, c, best):
        code, out, _ = run(capsys, "evaluate", "--model", str(paraglider_file), "--objective", f"eu:u=power,c={c}",
                           "--format", "json")
        assert code == 0 and json.loads(out)["optimal_set"] == best

    @pytest.mark.parametrize("objective", ["feef", "nonsense", "eu:u=cubic", "itbr-mdp:beta=0"])
    def test_evaluate_bad_objective(self, capsys, paraglider_file, objective):
        code, _, err = run(capsys, "evaluate", "--model", str(paraglider_file), "--objective", objective)
        assert code == 2 and err

    def test_evaluate_missing_model(self, capsys, tmp_path):
        code, _, _ = run(capsys, "evaluate", "--model", str(tmp_path / "nope.json"), "--objective", "eu")
        assert code == 2

    def test_evaluate_invalid_model(self, capsys, tmp_path):
        path = tmp_path / "m.json"
        path.write_text(json.dumps({"format_version": 1, "kind": "mdp", "states": ["x"], "actions": ["a"],
                                    "transition": [[[1.0]]], "reward": [1.0], "horizon": 1, "gamma": 0.9}))
        code, _, err = run(capsys, "evaluate", "--model", str(path), "--objective", "eu")
        assert code == 2 and "gamma" in err

    def test_verify_small(self, capsys):
        code, out, _ = run(capsys, "verify", "all", "--seeds", "1..3", "--format", "csv", "--candidates", "200")
        assert code == 0
        assert len(out.strip().splitlines()) == 1 + 18

    def test_verify_failure_writes_witness(self, capsys, tmp_path):
        code, out, _ = run(capsys, "verify", "all", "--seeds", "1", "--candidates", "50",
                           "--tol", "efe_mdp_forms=-1", "--witness-dir", str(tmp_path), "--format", "json")
        assert code == 1
        failing = [r for r in json.loads(out) if not r["pass"]]
        assert len(failing) == 1
        assert (tmp_path / "efe_mdp_forms-seed1.json").exists()

    @pytest.mark.parametrize("tol", ["bogus=1", "efe_mdp_forms", "efe_mdp_forms=abc"])
    def test_verify_bad_tolerance(self, capsys, tol):
        code, _, _ = run(capsys, "verify", "all", "--seeds", "1", "--tol", tol)
        assert code == 2

    def test_generate_then_evaluate(self, capsys, tmp_path):
        path = tmp_path / "g.json"
        assert run(capsys, "generate", "--kind", "pomdp", "--seeds", "4", "--out", str(path))[0] == 0
        code, out, _ = run(capsys, "evaluate", "--model", str(path), "--objective", "feef", "--belief", "0.2,0.3,0.5")
        assert code == 0 and "optimal set" in out

    def test_generate_deterministic(self, capsys, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run(capsys, "generate", "--seeds", "9", "--out", str(a))
        run(capsys, "generate", "--seeds", "9", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["launch"])
        assert err.value.code == 2
