import json

import pytest

from rds_conley.cli import main

SMALL = """\
[system]
kind = double_well
sigma_n = 0.1

[grid]
lo = -2
hi = 2
divisions = 128

[noise]
kind = wiener
samples = 3
dt = 0.01
horizon = 12
master_seed = 3

[sweep]
eps = 4h, 2h
t = 0.5, 1
points_per_box = 6

[attractors]
point_seeds = 4

[lyapunov]
t_max = 5
dt_scan = 0.01

[verify]
n_points = 60
t_checks = 1
shift_points = 60
oracle_graphs = 5
oracle_max_nodes = 30
duality_graphs = 5
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_lyapunov_command_writes_artifacts(small_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["lyapunov", str(small_cfg), "--output-dir", str(out), "-q"]) == 0
    assert "components across the sweep" in capsys.readouterr().out
    for name in ("decomposition.json", "boxes.csv", "morse.dot", "lyapunov.csv", "components.json",
                 "sweep0/boxes.csv", "sweep1/morse.dot"):
        assert (out / name).exists(), name
    rows = (out / "lyapunov.csv").read_text().splitlines()
    header = rows[0].split(",")
    assert header[:3] == ["sample", "box", "x0"] and header[-1] == "L"
    assert len(rows) - 1 == 3 * 128
    dec = json.loads((out / "decomposition.json").read_text())
    assert len(dec["noise_seeds"]) == 3 and dec["duality"]["recurrent_equals_meet"]
    comps = json.loads((out / "components.json").read_text())
    vals = [c["critical_value"] for c in comps["components"]]
    assert vals == sorted(vals, reverse=True)


def test_seed_override_changes_noise(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["decompose", str(small_cfg), "--output-dir", str(a), "-q"]) == 0
    assert main(["decompose", str(small_cfg), "--output-dir", str(b), "--seed", "99", "-q"]) == 0
    sa = json.loads((a / "decomposition.json").read_text())["noise_seeds"]
    sb = json.loads((b / "decomposition.json").read_text())["noise_seeds"]
    assert sa != sb


def test_verify_command(small_cfg, tmp_path):
    out = tmp_path / "v"
    code = main(["verify", str(small_cfg), "--output-dir", str(out), "-q"])
    rep = json.loads((out / "report.json").read_text())
    assert code == (0 if rep["ok"] else 1)
    names = {s["name"] for s in rep["sections"]}
    assert {"decrease", "constancy", "range", "ordering", "duality", "scc_oracle"} <= names
    assert (out / "report.txt").read_text().rstrip().endswith(("PASS", "FAIL"))


@pytest.mark.parametrize("what,files", [("noise", ["noise.rdsn"]), ("boxmap", ["boxmap.dot"]),
                                        ("morse", ["morse.dot", "decomposition.json"])])
def test_export(small_cfg, tmp_path, what, files):
    out = tmp_path / what
    assert main(["export", str(small_cfg), "--what", what, "--output-dir", str(out), "-q"]) == 0
    for f in files:
        assert (out / f).stat().st_size > 0


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(SMALL.replace("eps = 4h, 2h", "eps ="))
    assert main(["decompose", str(p)]) == 2
    assert "eps" in capsys.readouterr().err
    assert main(["decompose", "no-such-preset"]) == 2


def test_bad_thread_env(small_cfg, monkeypatch):
    monkeypatch.setenv("RDS_CONLEY_THREADS", "zero")
    assert main(["decompose", str(small_cfg), "-q"]) == 2


def test_lorenz_window_must_be_cube(tmp_path, capsys):
    p = tmp_path / "lorenz.ini"
    p.write_text(SMALL.replace("kind = double_well\nsigma_n = 0.1", "kind = random_lorenz")
                 .replace("lo = -2", "lo = -2, -2, -3").replace("hi = 2", "hi = 2, 2, 2"))
    assert main(["decompose", str(p), "-q"]) == 2
    assert "cube" in capsys.readouterr().err


def test_pipeline_error_exit_code(tmp_path, capsys):
    p = tmp_path / "lorenz.ini"
    p.write_text(SMALL.replace("kind = double_well\nsigma_n = 0.1", "kind = random_lorenz")
                 .replace("kind = wiener", "kind = ou\nchannels = 1").replace("divisions = 128", "divisions = 8"))
    assert main(["decompose", str(p), "-q"]) == 1
    assert "channels" in capsys.readouterr().err
