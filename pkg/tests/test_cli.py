import json

import pytest

from fracsde import cli
from fracsde.config import config_hash, load_config
from fracsde.errors import ConfigError


def _run(tmp_path, command, ini=None, *extra):
    args = [command, "--output", str(tmp_path / "out")]
    if ini is not None:
        cfg = tmp_path / "run.ini"
        cfg.write_text(ini)
        args += ["--config", str(cfg)]
    return cli.main(args + list(extra))


def _body(path):
    return [l for l in path.read_text().splitlines() if not l.startswith("#")]


def test_simulate_row_count_and_manifest(tmp_path):
    ini = "[run]\nmodel = example1\nn_paths = 4\nseed = 7\n[simulate]\nn_steps = 80\n"
    assert _run(tmp_path, "simulate", ini) == 0
    out = tmp_path / "out"
    rows = _body(out / "ensemble.csv")
    assert rows[0] == "path,t,x_1" and len(rows) - 1 == 4 * 81
    raw = (out / "ensemble.csv").read_text()
    manifest = json.loads((out / "simulate_manifest.json").read_text())
    assert f"# config_hash: {manifest['config_hash']}" in raw
    assert manifest["config"]["seed"] == 7 and manifest["wall_clock_s"] >= 0
    assert manifest["provenance"]["generator"].startswith("philox")


def test_invalid_alpha_exit_code(tmp_path, capsys):
    assert _run(tmp_path, "simulate", "[run]\nalpha = 0.3\n") == 2
    err = capsys.readouterr().err
    assert "(1/2, 1]" in err and "run.ini:2" in err


def test_unknown_model_lists_registry(tmp_path, capsys):
    assert _run(tmp_path, "simulate", "[run]\nmodel = nope\n") == 2
    err = capsys.readouterr().err
    assert "example1" in err and "example42-homogenized" in err


@pytest.mark.parametrize("ini", ["[run]\nbogus = 1\n", "[weird]\nx = 1\n", "[run]\nn_paths = many\n",
                                 "no header\n"])
def test_config_errors(tmp_path, ini):
    assert _run(tmp_path, "simulate", ini) == 2


def test_usage_errors(tmp_path):
    assert cli.main(["nonsense"]) == 2
    assert cli.main([]) == 2
    assert cli.main(["simulate", "--paths", "abc"]) == 2


def test_capacity_exit_code(tmp_path):
    ini = "[run]\nn_paths = 100000\n[simulate]\nn_steps = 4000\n"
    assert _run(tmp_path, "simulate", ini) == 4


def test_rerun_is_byte_identical(tmp_path):
    ini = "[run]\nn_paths = 5\nseed = 3\n[simulate]\nn_steps = 20\n"
    assert _run(tmp_path, "simulate", ini) == 0
    first = (tmp_path / "out" / "ensemble.csv").read_bytes()
    assert _run(tmp_path, "simulate", ini, "--threads", "3") == 0
    assert (tmp_path / "out" / "ensemble.csv").read_bytes() == first


def test_flag_overrides(tmp_path):
    assert _run(tmp_path, "simulate", None, "--seed", "5", "--paths", "2") == 0
    rows = _body(tmp_path / "out" / "ensemble.csv")
    assert len(rows) - 1 == 2 * 81
    manifest = json.loads((tmp_path / "out" / "simulate_manifest.json").read_text())
    assert manifest["config"]["seed"] == 5


def test_table1_defaults_shape(tmp_path):
    assert _run(tmp_path, "table1", "[run]\nn_paths = 200\n[table1]\nalpha_list = 0.9\n") == 0
    rows = _body(tmp_path / "out" / "table1_alpha_0.9.csv")
    assert rows[0] == "param,error,order" and len(rows) == 5
    assert rows[1].endswith(",") and all(r.split(",")[2] for r in rows[2:])


def test_table2_orders(tmp_path):
    assert _run(tmp_path, "table2", "[run]\nn_paths = 200\n") == 0
    for alpha in ("0.9", "0.7"):
        rows = _body(tmp_path / "out" / f"table2_alpha_{alpha}.csv")[2:]
        assert all(abs(float(r.split(",")[2]) + 1) < 0.05 for r in rows)


def test_compare_without_time_average_exit_code(tmp_path, capsys):
    ini = "[run]\nmodel = example1\nn_paths = 4\n[compare]\nhomogenized = numeric\n"
    assert _run(tmp_path, "compare", ini) == 3
    assert "no time average" in capsys.readouterr().err


def test_compare_registered_requires_counterpart(tmp_path):
    ini = "[run]\nmodel = example1\n[compare]\nhomogenized = registered\n"
    assert _run(tmp_path, "compare", ini) == 2


def test_compare_writes_curves(tmp_path):
    ini = "[run]\nn_paths = 20\n[compare]\neps_list = 0.1\ndt_coarse = 1/16\ndt_ref = 1/64\n"
    assert _run(tmp_path, "compare", ini) == 0
    rows = _body(tmp_path / "out" / "compare_eps_0.1.csv")
    assert rows[0] == "t,Ex,Ey" and len(rows) == 18


def test_homogenize_report(tmp_path):
    ini = "[homogenize]\ntol = 1e-3\nt1_grid = 10, 100\nepsilon = 0.01\nalpha = 0.75\n"
    assert _run(tmp_path, "homogenize", ini) == 0
    out = tmp_path / "out"
    report = json.loads((out / "homogenize_report.json").read_text())
    assert report["balanced_step"] == pytest.approx(0.01 ** (4 / 3), rel=1e-14)
    rows = _body(out / "profiles.csv")
    assert rows[0] == "T1,weak_drift,weak_diffusion,strong_drift,strong_diffusion" and len(rows) == 3
    weak = [float(r.split(",")[1]) for r in rows[1:]]
    assert weak[1] < weak[0]
    assert len(_body(out / "averaged_coefficients.csv")) == 22


def test_config_grammar():
    cfg = load_config("table1", text="[run]\nseed = 4  # comment\n[table1]\ndt_list = 1/80, 1/160\n")
    assert cfg["dt_list"] == [1 / 80, 1 / 160] and cfg["seed"] == 4
    cfg = load_config("table1", text="[table1]\nalpha = 0.8\n")
    assert cfg["alpha_list"] == [0.8]
    cfg = load_config("simulate", text="[run]\nalpha = 0.8\n[simulate]\nalpha = 0.7\n")
    assert cfg["alpha"] == 0.7
    with pytest.raises(ConfigError) as info:
        load_config("simulate", text="[run]\n\nseed = 1.5\n")
    assert info.value.line == 3 and info.value.field == "seed"


def test_hash_tracks_results_not_locations():
    a = load_config("simulate").values
    assert config_hash("simulate", a) == config_hash("simulate", {**a, "output_dir": "x", "threads": 8})
    assert config_hash("simulate", a) != config_hash("simulate", {**a, "seed": 99})
    assert config_hash("simulate", a) != config_hash("table1", a)
