import json
import math

import pandas as pd
import pytest

from refract.errors import ModelConfigError
from refract.fixture_manager import FixtureManager, load_model
from refract.levy_model import RefractedModel
from refract.main import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, run_cli
from refract.simulator import MCEstimate
from refract.validation import (
    ValidationCase,
    ValidationConfig,
    case_seed,
    load_config,
    run_validation,
    verdict,
)

CL1_DOC = {
    "gamma": 1.7357588823428847,
    "jumps": {"rate": 1.0, "magnitude": {"law": "exponential", "mean": 1.0}},
    "delta": 0.5,
}


def write_json(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def small_config(analytic_scale=1.0):
    return ValidationConfig(
        seed=3,
        fixtures={"CL1": CL1_DOC},
        cases=[
            {"id": "both", "fixture": "CL1", "theta": 0.5, "lo": -2.0, "hi": 2.0, "n": 20000,
             "analytic_scale": analytic_scale},
            {"id": "total", "fixture": "CL1", "theta": 2.0, "n": 20000, "analytic_scale": analytic_scale},
        ],
    )


# Fixtures


def test_fixture_manager(tmp_path):
    test_file = tmp_path / "my_fixtures.json"
    manager = FixtureManager(str(test_file))
    assert manager.get_ids() == [], "Should be empty initially"

    model = RefractedModel.from_document(CL1_DOC)
    assert manager.add_fixture("CL1", model) == "CL1"
    assert manager.get_ids() == ["CL1"]

    again = FixtureManager(str(test_file))
    assert again.get_fixture_by_id("CL1") == model
    assert again.get_fixture_by_id("missing") is None


def test_default_fixtures():
    manager = FixtureManager("fixtures.json")
    assert manager.get_ids() == ["BM1-d0.5", "CL1-d0.5"]
    models = manager.get_all_fixtures()
    assert models["CL1-d0.5"].delta == 0.5
    assert models["BM1-d0.5"].x_model.sigma2 == 2.0


def test_load_model_reports_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "gamma": 1.0,\n  oops\n}', encoding="utf-8")
    with pytest.raises(ModelConfigError) as info:
        load_model(str(bad))
    assert info.value.line == 3


# Harness


def test_case_seed():
    assert case_seed(7, "a") == case_seed(7, "a")
    assert case_seed(7, "a") != case_seed(7, "b")
    assert case_seed(7, "a") != case_seed(8, "a")


def test_verdict():
    estimate = MCEstimate(mean=0.50, stderr=0.01, n=1000, seed=0, scheme="exact-bv")
    assert verdict(0.52, estimate, 0.0) == (True, pytest.approx(2.0))
    passed, z_score = verdict(0.55, estimate, 0.0)
    assert not passed and z_score == pytest.approx(5.0)
    assert verdict(0.54, estimate, 0.05)[0], "band widens the acceptance"


def test_case_schema():
    with pytest.raises(ValueError):
        ValidationCase(id="x", fixture="f", theta=1.0, scheme="milstein")
    with pytest.raises(ValueError):
        ValidationCase(id="x", fixture="f", theta=1.0, colour="red")
    case = ValidationCase(id="x", fixture="f", theta=1.0, hi=2.0)
    assert case.query().kind == "up"
    with pytest.raises(ValueError):
        ValidationConfig(cases=[case, case])


def test_empty_config():
    report = run_validation(ValidationConfig())
    assert report.records == []
    assert report.summary == {"total": 0, "passed": 0, "failed": 0}
    assert report.all_passed


def test_report_is_deterministic():
    first = run_validation(small_config())
    second = run_validation(small_config())
    assert first.body_json() == second.body_json()
    assert [r.id for r in first.records] == ["both", "total"]
    assert first.all_passed, first.body_json()


def test_wrong_analytic_value_fails():
    report = run_validation(small_config(analytic_scale=1.5))
    assert not report.all_passed
    assert all(abs(r.z_score) > 3.0 for r in report.records)


def test_unknown_fixture_is_recorded():
    config = ValidationConfig(cases=[{"id": "x", "fixture": "nope", "theta": 1.0}])
    report = run_validation(config)
    assert report.summary["failed"] == 1
    assert "nope" in report.records[0].error


def test_load_config_rejects_unknown_fields(tmp_path):
    path = write_json(tmp_path / "config.json", {"seed": 1, "cases": [], "extra": True})
    with pytest.raises(ModelConfigError):
        load_config(path)


# Command line


def test_cli_scale(tmp_path):
    out = tmp_path / "scale.csv"
    code = run_cli(["scale", "--model", "bm1.json", "--q", "2", "--xmax", "5", "--points", "50", "--output", str(out)])
    assert code == EXIT_OK
    table = pd.read_csv(out)
    assert list(table.columns) == ["x", "w", "w_prime", "z"]
    assert len(table) == 51
    row = table.iloc[10]
    assert row["x"] == pytest.approx(1.0)
    assert row["w"] == pytest.approx((math.e - math.exp(-2.0)) / 3.0, rel=1e-9)
    assert row["w_prime"] == pytest.approx((math.e + 2.0 * math.exp(-2.0)) / 3.0, rel=1e-9)
    assert table["w_prime"].iloc[0] == pytest.approx(1.0, rel=1e-12), "right limit 2 / sigma2 at x = 0"


def test_cli_scale_point_mass_beyond_inversion_range(tmp_path):
    out = tmp_path / "scale.csv"
    code = run_cli(["scale", "--model", "pm1.json", "--xmax", "45", "--points", "9", "--output", str(out)])
    assert code == EXIT_OK
    table = pd.read_csv(out)
    assert table["w"].iloc[0] == pytest.approx(0.5, rel=1e-12)
    assert table["w"].iloc[-1] == pytest.approx(1.0, abs=1e-6), "W tends to 1 / psi'(0+)"


def test_cli_lt_at_theta_zero(tmp_path):
    out = tmp_path / "lt.csv"
    code = run_cli(["lt", "--model", "cl1.json", "--theta", "0", "--lo", "-2", "--hi", "2", "--output", str(out)])
    assert code == EXIT_OK
    table = pd.read_csv(out)
    assert table["value"].iloc[0] == 1.0
    assert table["numerator"].iloc[0] == pytest.approx(table["denominator"].iloc[0], rel=1e-6)


def test_cli_lt_total(tmp_path):
    out = tmp_path / "lt.csv"
    assert run_cli(["lt", "--model", "bm1_d05.json", "--theta", "2", "--which", "total", "--output", str(out)]) == EXIT_OK
    assert pd.read_csv(out)["value"].iloc[0] == pytest.approx(1.0 / 3.0, rel=1e-9)


def test_cli_density_header(tmp_path):
    out = tmp_path / "density.csv"
    code = run_cli(["density", "--model", "cl1.json", "--xmax", "10", "--points", "20", "--output", str(out)])
    assert code == EXIT_OK
    first = out.read_text(encoding="utf-8").splitlines()[0]
    assert first.startswith("# atom0=")
    assert float(first.split("=")[1]) == pytest.approx(1.0 / 3.0, rel=1e-9)
    assert len(pd.read_csv(out, comment="#")) == 20


def test_cli_simulate_paths_csv(tmp_path):
    paths = tmp_path / "paths.csv"
    out = tmp_path / "estimate.json"
    code = run_cli([
        "simulate", "--model", "cl1.json", "--theta", "0.5", "--lo", "-2", "--hi", "2",
        "--n", "2000", "--seed", "4", "--paths-csv", str(paths), "--output", str(out),
    ])
    assert code == EXIT_OK
    assert list(pd.read_csv(paths).columns) == ["occupation", "exit", "exit_time"]
    estimate = json.loads(out.read_text(encoding="utf-8"))
    assert estimate["n"] == 2000 and 0.0 < estimate["mean"] <= 1.0


def test_cli_malformed_model(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "gamma": 1.0,\n  oops\n}', encoding="utf-8")
    assert run_cli(["lt", "--model", str(bad), "--theta", "1", "--lo", "-1", "--hi", "1"]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err


def test_cli_hypothesis_violation(tmp_path, capsys):
    path = write_json(tmp_path / "fast.json", {**CL1_DOC, "delta": 2.5})
    assert run_cli(["lt", "--model", path, "--theta", "1", "--lo", "-1", "--hi", "1"]) == EXIT_CONFIG
    assert "(H)" in capsys.readouterr().err


def test_cli_domain_errors():
    assert run_cli(["lt", "--model", "cl1.json", "--theta", "1", "--lo", "1", "--hi", "2"]) == EXIT_CONFIG
    assert run_cli(["lt", "--model", "cl1.json", "--theta", "1", "--which", "both"]) == EXIT_CONFIG
    assert run_cli(["lt", "--model", "cl1_d15.json", "--theta", "1", "--which", "total"]) == EXIT_CONFIG
    assert run_cli(["lt", "--model", "cl1.json", "--theta", "1", "--lo", "-1", "--which", "up"]) == EXIT_CONFIG
    assert run_cli(["lt", "--model", "cl1.json", "--theta", "1", "--hi", "1", "--which", "down"]) == EXIT_CONFIG


def test_cli_validate(tmp_path):
    empty = write_json(tmp_path / "empty.json", {"seed": 1, "fixtures": {}, "cases": []})
    out = tmp_path / "report.json"
    assert run_cli(["validate", "--config", empty, "--output", str(out)]) == EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["summary"]["total"] == 0
    assert report["tool_version"]

    failing = write_json(tmp_path / "failing.json", json.loads(small_config(1.5).model_dump_json()))
    assert run_cli(["validate", "--config", failing, "--output", str(out)]) == EXIT_FAILED


def test_cli_validate_bad_config(tmp_path):
    path = write_json(tmp_path / "config.json", {"cases": [{"id": "x"}]})
    assert run_cli(["validate", "--config", path]) == EXIT_CONFIG


if __name__ == "__main__":
    test_case_seed()
    test_verdict()
    test_empty_config()
    print("All validation tests passed!")
