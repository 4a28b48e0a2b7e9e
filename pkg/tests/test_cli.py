import csv
import io
import json
import subprocess
import sys

import pytest

from harnackcheck.cli import CSV_HEADER, FAIL, OK, USAGE, RunConfig, main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


class TestVerify:
    def test_default_script_passes(self):
        code, text = run("verify")
        assert code == OK
        assert text.strip().endswith("12/12 steps passed")

    @pytest.mark.parametrize("name", ["negative_ds6", "negative_ds7.drv"])
    def test_negative_controls(self, name):
        code, text = run("verify", name)
        assert code == FAIL
        assert "residual" in text

    def test_json_is_byte_identical(self):
        a = run("verify", "--format", "json")[1]
        b = run("verify", "--format", "json")[1]
        assert a == b
        assert json.loads(a)["passed"] is True

    def test_missing_script(self, capsys):
        code, _ = run("verify", "/nonexistent/x.drv")
        assert code == USAGE
        assert "not found" in capsys.readouterr().err

    def test_parse_error_is_usage(self, tmp_path, capsys):
        p = tmp_path / "bad.drv"
        p.write_text("step X {\n  lhs: Rc[a;\n}\n")
        code, _ = run("verify", str(p))
        assert code == USAGE
        assert "bad.drv" in capsys.readouterr().err


class TestCheckIdentity:
    def test_bianchi_identity(self):
        args = ("2*S[d,e,k,l]*R[d,i,e,j]*P[i,j,a]", "P[k,l,a]", "--trials", "20")
        assert run("check-identity", *args, "--model", "bianchi1")[0] == OK
        assert run("check-identity", *args, "--model", "plain", "--seed", "55")[0] == FAIL

    def test_json(self):
        code, text = run("check-identity", "Rc[a,b]", "R[c,a,c,b]", "--model", "plain", "--format", "json")
        assert code == OK
        d = json.loads(text)
        assert d["passed"] is True

    def test_parse_error(self):
        assert run("check-identity", "Rc[a,", "Rc[a,b]")[0] == USAGE

    def test_bad_tolerance(self):
        assert run("check-identity", "Rc[a,b]", "Rc[a,b]", "--tol", "-1")[0] == USAGE

    def test_unknown_model(self):
        assert run("check-identity", "Rc[a,b]", "Rc[a,b]", "--model", "nope")[0] == USAGE


class TestSphere:
    def test_csv(self):
        code, text = run("sphere", "--K0", "0.05", "--t-grid", "1.25:3:5", "--format", "csv")
        assert code == OK
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == CSV_HEADER
        assert len(rows) == 6
        assert all(float(r[2]) > 0 for r in rows[1:])

    def test_json(self):
        code, text = run("sphere", "--dim", "4", "--K0", "0.05", "--t-grid", "1:2:3", "--format", "json")
        assert code == OK
        d = json.loads(text)
        assert d["passed"] and len(d["rows"]) == 3

    @pytest.mark.xfail(strict=True, reason="centered-difference error at K0=1 exceeds the 1e-6 tolerance")
    def test_default_grid(self):
        code, text = run("sphere")
        assert "mt_residual" in text
        assert code == OK

    def test_default_grid_eigenvalues_positive(self):
        code, text = run("sphere", "--format", "csv")
        rows = list(csv.reader(io.StringIO(text)))[1:]
        assert len(rows) == 10
        assert all(float(r[2]) > 0 for r in rows)

    def test_outside_interval(self):
        assert run("sphere", "--t-grid", "0.1:0.45:3")[0] == USAGE

    def test_bad_grid(self):
        assert run("sphere", "--t-grid", "nonsense")[0] == USAGE


class TestQuadratic:
    def test_bundled_sphere_point(self):
        code, text = run("quadratic", "--format", "json")
        assert code == OK
        d = json.loads(text)
        assert d["value"] == pytest.approx(5.0)
        assert d["WZW"] == pytest.approx(5.0)
        assert d["minimizer_match"] is True
        assert d["S_residual"] <= 1e-10

    def test_custom_W(self):
        code, text = run("quadratic", "--W", "1,2,0", "--format", "json")
        assert code == OK
        assert json.loads(text)["value"] == pytest.approx(25.0)

    def test_bad_W(self):
        assert run("quadratic", "--W", "1,2")[0] == USAGE

    def test_sampled_point(self, tmp_path):
        code, text = run("sample-point", "--dim", "4", "--seed", "3")
        assert code == OK
        p = tmp_path / "pt.json"
        p.write_text(text)
        assert run("quadratic", str(p), "--W", "1,0,-1,0.5")[0] == OK

    def test_flat_point(self, tmp_path, capsys):
        d = json.loads(run("sample-point", "--dim", "3")[1])
        for key in ("Rm", "Rc", "gradRm", "gradRc", "lapRc", "hessR"):
            d[key]["data"] = [0.0] * len(d[key]["data"])
        d["R"] = 0.0
        p = tmp_path / "flat.json"
        p.write_text(json.dumps(d))
        code, _ = run("quadratic", str(p))
        assert code == FAIL
        assert "eigenvalue" in capsys.readouterr().err

    def test_invalid_point(self, tmp_path):
        p = tmp_path / "junk.json"
        p.write_text("{}")
        assert run("quadratic", str(p))[0] == USAGE


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig("x", trials=0).validate()
    RunConfig("x").validate()


def test_console_script_entry():
    r = subprocess.run(
        [sys.executable, "-m", "harnackcheck.cli", "check-identity", "Rc[a,b]", "Rc[b,a]", "--trials", "2"],
        capture_output=True, text=True,
    )
    assert r.returncode == 0
    assert r.stdout.startswith("PASS")
