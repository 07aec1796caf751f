import pytest

from rds_conley.config import PRESETS, ConfigError, load_config, load_preset, parse_config

BASE = """\
[system]
kind = double_well
sigma_n = 0.1

[grid]
lo = -2
hi = 2
divisions = 64

[noise]
kind = wiener
samples = 3
dt = 0.01
horizon = 15
master_seed = 4

[sweep]
eps = 4h, 2h
t = 0.5, 1
points_per_box = 4

[lyapunov]
t_max = 5
dt_scan = 0.01

[verify]
t_checks = 1
"""


def _with(old, new):
    assert old in BASE
    return BASE.replace(old, new)


def test_base_config_parses():
    cfg = parse_config(BASE)
    assert cfg.eps == pytest.approx([4 * 4 / 64, 2 * 4 / 64])
    assert list(cfg.T) == [0.5, 1.0] and cfg.sweep() == list(zip(cfg.eps, cfg.T))
    assert cfg.grid().n_boxes == 64
    assert cfg.aggregation == "all_samples"
    assert cfg.with_overrides(seed=9, output_dir="x").master_seed == 9


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load(name):
    cfg = load_preset(name)
    assert cfg.samples >= 10
    assert load_config(name).echo() == cfg.echo()


@pytest.mark.parametrize("old,new,where", [
    ("eps = 4h, 2h", "eps =", "eps"),
    ("t = 0.5, 1\n", "t =\n", "[sweep] t"),
    ("t_checks = 1", "t_checks =", "t_checks"),
    ("eps = 4h, 2h", "eps = 2h, 4h", "descending"),
    ("t = 0.5, 1\n", "t = 1, 0.5\n", "ascending"),
    ("t = 0.5, 1\n", "t = 0.505, 1\n", "multiple of dt"),
    ("horizon = 15", "horizon = 5", "horizon"),
    ("kind = double_well", "kind = pendulum", "unknown system kind"),
    ("kind = wiener", "kind = pink", "unknown noise kind"),
    ("samples = 3", "samples = 0", "samples"),
    ("divisions = 64", "divisions = 6.5", "divisions"),
    ("sigma_n = 0.1", "sigma_n = 0.1\nrho = 3", "unknown key"),
    ("[verify]", "[extras]\na = 1\n[verify]", "unknown section"),
    ("points_per_box = 4", "points_per_box = 4\naggregation = median", "aggregation"),
    ("dt_scan = 0.01", "dt_scan = 0.015", "dt_scan"),
])
def test_config_errors_name_the_key(old, new, where):
    with pytest.raises(ConfigError) as exc:
        parse_config(_with(old, new), "run.ini")
    assert where in str(exc.value)
    assert "run.ini" in str(exc.value)


def test_error_reports_line_number():
    with pytest.raises(ConfigError) as exc:
        parse_config(_with("samples = 3", "samples = many"), "run.ini")
    line = BASE.splitlines().index("samples = 3") + 1
    assert exc.value.line == line and f"run.ini:{line}" in str(exc.value)


def test_unknown_preset_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config("no-such-preset")
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.ini"))


def test_custom_system_config():
    text = _with("kind = double_well\nsigma_n = 0.1",
                 "kind = custom\ndrift = a*x - x^3\ndiffusion = 0.2*x\n\n[params]\na = 1")
    cfg = parse_config(text)
    assert cfg.custom["drift"] == ("a*x - x^3",) and cfg.system_params == {"a": 1.0}
    assert cfg.system().dim == 1
