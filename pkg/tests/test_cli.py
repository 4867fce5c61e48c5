import numpy as np
import pytest

from AALab.ConfigModels import load_config
from AALab.Errors import ConfigurationError
from AALab.Monitors import COLUMNS, DiagnosticSample, DiagnosticSeries, SeriesMetadata
from Utils.LabCli import apply_overrides, main, parse_override_value, stanza_for
from Utils.LabConstants import ANALYZE_FILE, DIAGNOSTICS_FILE, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_IO, EXIT_OK, \
    EXIT_VIOLATED, PLOT_DIR, PLOT_DRIVER, VERIFY_FILE

from conftest import MINIMAL_TOML

SMALL_RUN = """\
[domain]
dims = 1
lengths = [1.0]
cells = [16]

[run]
t_end = 0.2
dt_max = 0.01
output_every = 0.05

[initial]
kind = "cosine-bump"

[initial.u]
background = 1.0
amplitude = 0.5
"""


def _data_rows(path):
    return [line for line in path.read_text(encoding="utf-8").splitlines() if line and not line.startswith("#")]


def _write_series(path, energy):
    series = DiagnosticSeries()
    for t, y in enumerate(energy):
        values = {name: 1.0 for name in COLUMNS}
        values.update(t=float(t), energy_y=float(y), rejected_steps=0)
        series.append(DiagnosticSample(**values))
    return series.to_csv(path)


@pytest.mark.parametrize(("raw", "expected"), [
    ("3.0", 3.0), ("3", 3), ("true", True), ("[16, 8]", [16, 8]), ('"upwind"', "upwind"),
    ("cosine-bump", "cosine-bump"),
])
def test_parse_override_value(raw, expected):
    assert parse_override_value(raw) == expected


def test_apply_overrides(minimal_config_path):
    config = load_config(minimal_config_path)
    changed = apply_overrides(config, ["model.mu1=3.0", "run.scheme=upwind", "initial.kind=cosine-bump",
                                       "initial.u.amplitude=0.5"])
    assert changed.model.mu1 == 3.0
    assert changed.run.scheme.value == "upwind"
    assert changed.initial.u.amplitude == 0.5
    assert config.model.mu1 == 2.0
    assert apply_overrides(config, []) is config


def test_apply_overrides_lists_every_problem(minimal_config_path):
    config = load_config(minimal_config_path)
    with pytest.raises(ConfigurationError) as error:
        apply_overrides(config, ["model.foo=1", "model.mu1"])
    assert error.value.violations == ["unknown key 'model.foo'",
                                      "override 'model.mu1' is not of the form section.key=value"]
    with pytest.raises(ConfigurationError, match="mu1 must be > 0"):
        apply_overrides(config, ["model.mu1=-1"])


def test_stanza_for(minimal_config_path):
    stanza = stanza_for(load_config(minimal_config_path))
    assert stanza[0].startswith("aalab_version ")
    assert stanza[1].startswith("config_hash ") and stanza[2] == "seed 0"
    assert any(line.startswith("cells ") for line in stanza)
    assert SeriesMetadata.from_stanza(stanza).params == load_config(minimal_config_path).model


def test_analyze_prints_threshold(minimal_config_path, tmp_path, capsys):
    code = main(["analyze", "--config", str(minimal_config_path), "--out", str(tmp_path), "--csv"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "mu_star " in out and "0.666667" in out
    assert "quadratic-above-threshold" in out
    rows = _data_rows(tmp_path / ANALYZE_FILE)
    assert rows[0].startswith("config_hash,mu_star,margin")
    assert len(rows) == 2


def test_simulate_with_zero_end_time(minimal_config_path, tmp_path, capsys):
    code = main(["simulate", "--config", str(minimal_config_path), "--out", str(tmp_path), "--set", "run.t_end=0"])
    assert code == EXIT_OK
    rows = _data_rows(tmp_path / DIAGNOSTICS_FILE)
    assert rows[0].split(",") == COLUMNS
    assert len(rows) == 2
    assert (tmp_path / PLOT_DIR / PLOT_DRIVER).exists()
    assert "steps=0" in capsys.readouterr().out


def test_simulate_writes_reproducibility_stanza(tmp_path):
    config_path = tmp_path / "small.toml"
    config_path.write_text(MINIMAL_TOML + SMALL_RUN, encoding="utf-8")
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
    text = (out / DIAGNOSTICS_FILE).read_text(encoding="utf-8")
    assert "# config_hash " in text and "# classification Bounded" in text
    series = DiagnosticSeries.from_csv(out / DIAGNOSTICS_FILE)
    assert series.times().tolist() == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2])
    driver = (out / PLOT_DIR / PLOT_DRIVER).read_text(encoding="utf-8").splitlines()
    comments = [line[2:] for line in driver[1:] if line.startswith("# ")]
    config = load_config(config_path)
    assert comments == stanza_for(config)
    assert SeriesMetadata.from_stanza(comments).params == config.model


def test_verify_flags_diverging_series(minimal_config_path, tmp_path):
    series_path = _write_series(tmp_path / "diverging.csv", 2.0 ** np.arange(6))
    code = main(["verify", "--config", str(minimal_config_path), "--out", str(tmp_path),
                 "--series", str(series_path)])
    assert code == EXIT_VIOLATED
    assert "mass_inequality violated" in (tmp_path / VERIFY_FILE).read_text(encoding="utf-8")


def test_verify_short_series_is_inconclusive(minimal_config_path, tmp_path):
    series_path = _write_series(tmp_path / "short.csv", [1.0, 1.0])
    code = main(["verify", "--config", str(minimal_config_path), "--out", str(tmp_path),
                 "--series", str(series_path)])
    assert code == EXIT_INCONCLUSIVE


def test_verify_runs_the_configuration(tmp_path, capsys):
    config_path = tmp_path / "small.toml"
    config_path.write_text(MINIMAL_TOML + SMALL_RUN, encoding="utf-8")
    code = main(["verify", "--config", str(config_path), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "mass_inequality consistent" in out
    assert "mass_balance" in out and "weak_residuals" in out


def test_sweep_command(tmp_path, capsys):
    config_path = tmp_path / "sweep.toml"
    config_path.write_text(MINIMAL_TOML + SMALL_RUN
                           + '\n[sweep]\naxes = [{ name = "mu1", values = [0.5, 4.0] }]\n', encoding="utf-8")
    code = main(["sweep", "--config", str(config_path), "--out", str(tmp_path / "out"), "--threads", "1"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "margin positive: 1 run(s)" in out
    assert "margin negative: 1 run(s)" in out


def test_unknown_override_exits_with_config_error(minimal_config_path, tmp_path, capsys):
    code = main(["simulate", "--config", str(minimal_config_path), "--out", str(tmp_path),
                 "--set", "model.foo=1"])
    assert code == EXIT_CONFIG
    assert "unknown key 'model.foo'" in capsys.readouterr().err


def test_missing_config_is_an_io_error(tmp_path):
    assert main(["analyze", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == EXIT_IO


def test_missing_section_is_a_config_error(minimal_config_path, tmp_path):
    assert main(["sweep", "--config", str(minimal_config_path), "--out", str(tmp_path)]) == EXIT_CONFIG
