import csv
import logging
import math

import pytest
from click.testing import CliRunner

from app.core.config import settings
from app.core.errors import ConfigurationError, OutputError
from app.core.logging import RUN_CONTEXT_FILTER
from app.harness import config_loader, report, runner
from app.middleware.suite_logging import overall_status, run_suite
from app.schemas.config import HarnessConfig
from app.schemas.results import MCEstimate, SuiteResult, SuiteStatus
from app.stats import metrics
from main import cli

UNIT_CONFIG = """\
model:
  name: unit-sigma
  epsilon: 0.1
  n: 4
run:
  replicates: 100
  seed: 11
  steps_per_interval: 8
  suites: [identities]
thresholds:
  ks_alpha: 1.0e-6
"""


@pytest.fixture
def write_config(tmp_path):
    def write(text: str, name: str = "config.yaml"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


def _rows(path):
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------
# config loading
# ---------------------------

def test_flatten_maps_sections_onto_fields():
    flat = config_loader.flatten({
        "model": {"name": "tanh-drift", "n": 4, "params": {"slope": 0.3}},
        "sweep": {"eps": [0.1, 0.2], "pin_n": 64},
        "run": {"seed": 3, "suites": "lemma2,lemma1"},
        "thresholds": {"ks_alpha": 0.05},
    })
    assert flat == {
        "model_name": "tanh-drift", "n": 4, "model_params": {"slope": 0.3},
        "sweep_eps": [0.1, 0.2], "pin_n": 64,
        "seed": 3, "suites": "lemma2,lemma1",
        "thresholds": {"ks_alpha": 0.05},
    }
    assert HarnessConfig(**flat).suites == ["lemma2", "lemma1"]


def test_overrides_win_over_the_file(write_config):
    path = write_config(UNIT_CONFIG)
    config = config_loader.load_config(path, [
        "run.seed=7", "sweep.n=4,8,16,32", "thresholds.se_factor=4", "model.params.scale=0.5", "epsilon=0.2",
    ])
    assert config.seed == 7
    assert config.sweep_n == [4, 8, 16, 32]
    assert config.threshold("se_factor") == 4.0
    assert config.threshold("ks_alpha") == 1e-6
    assert config.model_params == {"scale": 0.5}
    assert config.epsilon == 0.2
    assert config.model_name == "unit-sigma"


def test_second_sweep_point_and_euler_n(write_config):
    config = config_loader.load_config(write_config(UNIT_CONFIG), ["sweep.drift_gap_w=1.0", "sweep.euler_n=4,16,64"])
    assert config.drift_gap_w == 1.0
    assert config.euler_n == [4, 16, 64]
    assert HarnessConfig().drift_gap_w is None
    assert HarnessConfig().euler_n == [8, 32, 128]
    with pytest.raises(ConfigurationError):
        config_loader.load_config(write_config(UNIT_CONFIG), ["sweep.euler_n=32,8,128"])


@pytest.mark.parametrize("override", ["seed", "model.declared=3", "nowhere.seed=3", "model.colour=red"])
def test_bad_overrides(write_config, override):
    with pytest.raises(ConfigurationError) as exc:
        config_loader.load_config(write_config(UNIT_CONFIG), [override])
    assert exc.value.exit_code == 2


def test_unknown_section_key(write_config):
    with pytest.raises(ConfigurationError, match="unknown key 'colour'"):
        config_loader.load_config(write_config("model:\n  colour: red\n"))


def test_validation_errors_carry_the_line(write_config):
    path = write_config("model:\n  name: sin-drift\nrun:\n  replicates: 5\n")
    with pytest.raises(ConfigurationError) as exc:
        config_loader.load_config(path)
    assert f"{path}:4" in str(exc.value)
    assert "replicates" in str(exc.value)


def test_yaml_syntax_errors_carry_the_position(write_config):
    path = write_config("model:\n  name: [unclosed\n")
    with pytest.raises(ConfigurationError, match="YAML syntax error") as exc:
        config_loader.load_config(path)
    assert str(path) + ":" in str(exc.value)


def test_unknown_threshold_and_suite(write_config):
    with pytest.raises(ConfigurationError):
        config_loader.load_config(write_config("thresholds:\n  made_up: 1\n"))
    with pytest.raises(ConfigurationError):
        config_loader.load_config(write_config("run:\n  suites: [everything]\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        config_loader.load_config(tmp_path / "absent.yaml")


# ---------------------------
# result files
# ---------------------------

def _table():
    points = [(n, MCEstimate(mean=(0.1 + 0.2) / n, std_error=1e-3 / n, replicates=100, seed=4)) for n in (8, 16, 32, 64)]
    return metrics.fit_rate(points, axis="n", suite="lemma2", quantity="E|A_T - A_bar_T^n|")


def test_empty_results_give_header_only_files(tmp_path):
    rates, suites = report.emit_csv([], [], tmp_path)
    assert rates.read_bytes() == b"suite,axis,axis_value,n,epsilon,mean,std_error,replicates,seed\n"
    assert suites.read_bytes() == b"suite,cell_n,cell_eps,status,measured,threshold,detail\n"


def test_csv_rows_round_trip_exactly(tmp_path):
    table = _table()
    results = [
        SuiteResult.judge("lemma2", -1.0, -1.3, "ge", "slope, lower end"),
        SuiteResult.judge("tv_bounds", 0.2, 0.1, cell_n=8, cell_eps=0.02),
    ]
    rates, suites = report.emit_csv([table], results, tmp_path)
    assert b"\r" not in rates.read_bytes()
    rows = _rows(rates)
    assert rows[0] == list(report.RATES_COLUMNS)
    assert len(rows) == 1 + len(table.points)
    for row, point in zip(rows[1:], table.points):
        assert float(row[5]) == point.estimate.mean
        assert int(row[3]) == point.n
        assert row[8] == "4"

    rows = _rows(suites)
    assert rows[1][:4] == ["lemma2", "", "", "pass"]
    assert rows[1][6] == "slope, lower end"
    assert rows[2][:4] == ["tv_bounds", "8", "0.02", "fail"]
    assert float(rows[2][4]) == 0.2


def test_unwritable_output(tmp_path):
    with pytest.raises(OutputError) as exc:
        report.emit_csv([], [], tmp_path / "missing")
    assert exc.value.exit_code == 3


def test_report_lists_verdicts_and_slopes():
    config = HarnessConfig(suites=["lemma2"])
    results = [SuiteResult.judge("lemma2", -1.0, -1.3, "ge", "lower end", soft=True)]
    text = report.render_report(config, [_table()], results, {"lemma2": "Clock-gap rate."})
    assert "== lemma2: PASS (1 checks, 0 failed, 0 warned)" in text
    assert "Clock-gap rate." in text
    assert "slope of E|A_T - A_bar_T^n| in n: -1.0000" in text
    assert "ks_alpha: 0.01" in text


def test_suite_results_are_consistent():
    assert SuiteResult.judge("s", 0.5, 1.0).status is SuiteStatus.PASS
    assert SuiteResult.judge("s", 1.5, 1.0, soft=True).status is SuiteStatus.WARN
    assert SuiteResult.judge("s", math.nan, 1.0).status is SuiteStatus.FAIL
    assert SuiteResult.judge("s", 1.0, 2.0, "ge").cell == "global"
    with pytest.raises(ValueError):
        SuiteResult(suite="s", status=SuiteStatus.PASS, measured=2.0, threshold=1.0)


# ---------------------------
# suite logging
# ---------------------------

def test_run_suite_logs_and_restores_context(caplog):
    seen = []

    def suite(ctx):
        seen.append(RUN_CONTEXT_FILTER.suite)
        return [SuiteResult.judge("demo", 0.0, 1.0), SuiteResult.judge("demo", 2.0, 1.0, soft=True)], []

    with caplog.at_level(logging.INFO, logger="app.suite"):
        results, tables = run_suite("demo", suite, None)
    assert seen == ["demo"]
    assert RUN_CONTEXT_FILTER.suite == "-"
    assert overall_status(results) == "warn"
    assert any("SUITE demo status=warn cells=2" in r.getMessage() for r in caplog.records)


def test_run_suite_reraises(caplog):
    def broken(ctx):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        run_suite("broken", broken, None)
    assert RUN_CONTEXT_FILTER.suite == "-"


# ---------------------------
# end to end
# ---------------------------

def test_identities_run_on_unit_sigma(write_config, tmp_path):
    out = tmp_path / "out"
    code = runner.run(write_config(UNIT_CONFIG), output_dir=str(out))
    assert code == 0
    rows = _rows(out / "suites.csv")
    assert {r[0] for r in rows[1:]} == {"identities"}
    assert all(r[3] == "pass" for r in rows[1:])
    assert len(_rows(out / "rates.csv")) == 1
    text = (out / "report.txt").read_text(encoding="utf-8")
    assert "== identities: PASS" in text


def test_results_do_not_depend_on_threads(write_config, tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "REPLICATE_CHUNK", 16)
    path = write_config(UNIT_CONFIG)
    assert runner.run(path, output_dir=str(tmp_path / "one"), threads=1) == 0
    assert runner.run(path, output_dir=str(tmp_path / "three"), threads=3) == 0
    for name in ("suites.csv", "rates.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "three" / name).read_bytes()


def test_constant_sigma_clock_gap_uses_absolute_tolerance(write_config, tmp_path):
    path = write_config(
        "model:\n  name: const-sigma\n  n: 4\n"
        "sweep:\n  n: [2, 4, 8, 16]\n  pin_n: 16\n  pin_steps_per_interval: 4\n"
        "run:\n  replicates: 100\n  steps_per_interval: 4\n  suites: lemma2\n"
    )
    out = tmp_path / "out"
    assert runner.run(path, output_dir=str(out)) == 0
    rows = _rows(out / "suites.csv")
    assert len(rows) == 3
    assert all("absolute-tolerance mode" in r[6] for r in rows[1:])
    assert len(_rows(out / "rates.csv")) == 1


def test_sufficiency_suite(write_config, tmp_path):
    path = write_config(
        "model:\n  name: sin-drift\n  n: 8\n"
        "run:\n  replicates: 100\n  steps_per_interval: 8\n  suites: sufficiency\n"
        "thresholds:\n  sufficiency_vectors: 200\n"
    )
    out = tmp_path / "out"
    assert runner.run(path, output_dir=str(out)) == 0
    rows = _rows(out / "suites.csv")
    assert len(rows) >= 3
    assert all(r[3] == "pass" for r in rows[1:])


def test_wrong_declared_constant_exits_with_2(write_config, tmp_path):
    path = write_config(UNIT_CONFIG.replace("unit-sigma", "sin-drift"))
    code = runner.run(path, ["model.declared.sigma1=1.2"], output_dir=str(tmp_path / "out"))
    assert code == 2
    assert not (tmp_path / "out" / "suites.csv").exists()


def test_bad_config_exits_with_2(write_config, tmp_path):
    assert runner.run(write_config("run:\n  replicates: 5\n"), output_dir=str(tmp_path / "out")) == 2


def test_validate(write_config):
    code, text = runner.validate(write_config(UNIT_CONFIG))
    assert code == 0
    assert "no violations" in text
    code, text = runner.validate(write_config(UNIT_CONFIG.replace("unit-sigma", "sin-drift")), ["model.declared.sigma1=1.2"])
    assert code == 2
    assert "sigma_upper" in text


def test_command_line(write_config, tmp_path):
    cli_runner = CliRunner()
    result = cli_runner.invoke(cli, ["validate", str(write_config(UNIT_CONFIG))])
    assert result.exit_code == 0
    assert "no violations" in result.output

    out = tmp_path / "cli"
    result = cli_runner.invoke(cli, ["run", str(write_config(UNIT_CONFIG)), "--output-dir", str(out), "--threads", "2"])
    assert result.exit_code == 0
    assert (out / "report.txt").exists()

    result = cli_runner.invoke(cli, ["run", str(write_config(UNIT_CONFIG)), "--threads", "0"])
    assert result.exit_code == 2


@pytest.mark.slow
def test_clock_gap_rates(write_config, tmp_path):
    path = write_config(
        "model:\n  name: sin-drift\n  w: 0.0\n"
        "sweep:\n  n: [8, 16, 32, 64]\n  eps: [0.02, 0.04, 0.08, 0.16]\n  pin_eps: 1.0e-6\n"
        "  pin_n: 16\n  pin_steps_per_interval: 8\n"
        "run:\n  replicates: 400\n  steps_per_interval: 8\n  suites: lemma2\n"
    )
    out = tmp_path / "out"
    assert runner.run(path, output_dir=str(out)) == 0
    rows = _rows(out / "rates.csv")
    assert len(rows) == 1 + 8
    assert {r[1] for r in rows[1:]} == {"n", "epsilon"}
