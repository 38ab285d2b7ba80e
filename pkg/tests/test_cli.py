import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from confidence_engine import bundled_model
from confidence_engine.cli import EXIT_MODEL, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


def test_check_bundled():
    code, out, _ = call("check", "@tpa")
    assert code == EXIT_OK and out == "ok: 11 variables, 10 studies\n"


def test_check_path(tmp_path):
    path = tmp_path / "m.cid"
    path.write_text(bundled_model("tpa").read_text())
    assert call("check", str(path))[0] == EXIT_OK


def test_check_reports_diagnostics(tmp_path):
    path = tmp_path / "bad.cid"
    path.write_text("variable p : probability\nstudy s { on q; successes 1; trials 2; }\n")
    code, out, _ = call("check", str(path))
    assert code == EXIT_MODEL
    assert f"{path}:2:" in out and "unknown variable 'q'" in out


@pytest.mark.parametrize(
    "argv",
    [
        ("solve", "missing.cid"),
        ("frobnicate", "@tpa"),
        ("solve",),
        ("solve", "@tpa", "--max-iters", "0"),
        ("solve", "@tpa", "--tol", "-1"),
        ("solve", "@nonexistent"),
        ("oracle", "@tpa", "--samples", "10"),
        ("solve", "@tpa", "--bogus"),
    ],
)
def test_usage_errors(argv):
    code, out, err = call(*argv)
    assert code == EXIT_USAGE and err and not out


def test_point_prior_with_study_still_solves(tmp_path):
    # the evidence node keeps the study variance, so the pivot is positive
    path = tmp_path / "point.cid"
    path.write_text("variable p : probability { prior normal(0, 0) }\nstudy s { on p; successes 1; trials 2; }\n")
    assert call("solve", str(path))[0] == EXIT_OK


def test_degenerate_weights_is_numeric_failure():
    code, _, err = call("oracle", "@tpa", "--samples", "10000")
    assert code == EXIT_NUMERIC and "effective sample size" in err


def test_solve_trace_csv():
    code, out, _ = call("solve", "@tpa", "--trace")
    assert code == EXIT_OK
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["iter", "diff_tpa_cc", "m_cc", "m_tpa", "m_ivsk"]
    final = [float(x) for x in rows[-1][1:]]
    np.testing.assert_allclose(final, [-0.087147, 0.1913797, 0.1042325, 0.1530680], atol=1e-4)


def test_solve_json_schema_and_stability():
    code, a, _ = call("solve", "@tpa")
    _, b, _ = call("solve", "@tpa")
    assert code == EXIT_OK and a == b
    doc = json.loads(a)
    assert list(doc) == ["model", "options", "converged", "iters_used", "trace", "final"]
    assert doc["options"] == {"max_iters": 50, "tol": 1e-9}
    assert doc["converged"] is True and len(doc["trace"]) == doc["iters_used"]
    assert set(doc["final"]["diff_tpa_cc"]) == {
        "working_mean", "working_var", "natural_mean_delta",
        "natural_sd_delta", "natural_mean_quad", "natural_sd_quad",
    }
    for value in doc["trace"][-1]["values"].values():
        assert len(repr(value).lstrip("-").replace(".", "").lstrip("0")) <= 10


def test_solve_out_with_trace(tmp_path):
    out = tmp_path / "report.json"
    code, stdout, _ = call("solve", "@tpa", "--trace", "--out", str(out))
    assert code == EXIT_OK and stdout == ""
    assert json.loads(out.read_text())["converged"]
    assert (tmp_path / "report.trace.csv").read_text().startswith("iter,")


def test_solve_final_csv():
    code, out, _ = call("solve", "@tpa", "--format", "csv")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == EXIT_OK and len(rows) == 11
    diff = next(r for r in rows if r["variable"] == "diff_tpa_cc")
    assert float(diff["natural_sd_delta"]) == pytest.approx(0.017, abs=0.003)


def test_nonconvergence_exit_ok():
    code, out, _ = call("solve", "@tpa", "--max-iters", "2")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["converged"] is False and doc["iters_used"] == 2


def test_export_csv_full_precision():
    code, out, _ = call("export", "@tpa")
    rows = list(csv.reader(io.StringIO(out)))
    assert code == EXIT_OK and rows[0][:2] == ["variable", "mean"]
    names = rows[0][2:]
    cov = np.array([[float(x) for x in r[2:]] for r in rows[1:]])
    assert [r[0] for r in rows[1:]] == names and cov.shape == (11, 11)
    np.testing.assert_array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > -1e-12


def test_export_json(tmp_path):
    out = tmp_path / "joint.json"
    assert call("export", "@tpa", "--format", "json", "--out", str(out))[0] == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["ids"]) == len(doc["mean"]) == len(doc["cov"]) == 11


def test_oracle_gaussian_method(tmp_path):
    path = tmp_path / "small.cid"
    path.write_text("variable p : probability\nstudy s { on p; successes 12; trials 40; }\n")
    code, out, _ = call("oracle", str(path), "--method", "gaussian", "--samples", "20000", "--seed", "3")
    doc = json.loads(out)
    assert code == EXIT_OK and doc["scale"] == "working" and doc["seed"] == 3
    assert set(doc["estimates"]) == {"p"}


def test_oracle_gaussian_on_vague_priors_is_numeric_failure():
    code, out, err = call("oracle", "@tpa", "--method", "gaussian", "--samples", "20000")
    assert code == EXIT_NUMERIC and not out and "effective sample size" in err


def test_oracle_seed_from_env(monkeypatch):
    monkeypatch.setenv("CONFIDENCE_ENGINE_SEED", "17")
    _, a, _ = call("oracle", "@tpa_revised", "--samples", "20000")
    _, b, _ = call("oracle", "@tpa_revised", "--samples", "20000", "--seed", "17")
    assert json.loads(a)["seed"] == 17 and a == b
    monkeypatch.setenv("CONFIDENCE_ENGINE_SEED", "x")
    assert call("oracle", "@tpa_revised", "--samples", "20000")[0] == EXIT_USAGE


def test_oracle_workers_do_not_change_output():
    base = ("oracle", "@tpa_revised", "--samples", "70000", "--seed", "1")
    assert call(*base)[1] == call(*base, "--workers", "3")[1]


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "confidence_engine", "check", "@tpa"], capture_output=True, text=True
    )
    assert proc.returncode == 0 and proc.stdout.startswith("ok:")
    proc = subprocess.run([sys.executable, "-m", "confidence_engine"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE and "usage" in proc.stderr
