import os

import pytest

from gfmsim import cli
from gfmsim import config as cf
from gfmsim.control import ControlGains


def _files(d):
    return sorted(os.listdir(d)) if os.path.isdir(d) else []


def test_defaults_carry_table_values():
    cfg = cf.preset_config("e1")
    g = ControlGains()
    assert cfg["inv1"]["k_pvd"] == g.k_pvd == 0.187
    assert cfg["inv2"]["k_drq"] == 1e-3
    assert cfg["qshare"]["k_iQ"] == 0.003
    assert cfg["sweep"]["axes"]["protocol.before"][0] == -6000.0


def test_override_parsing():
    cfg = cf.resolve("e3", ["qshare.k_iQ=0.009", "protocol.kind=step", "inv2.lv_negate=true"])
    assert cfg["qshare"]["k_iQ"] == 0.009
    assert cfg["protocol"]["kind"] == "step"
    assert cfg["inv2"]["lv_negate"] is True


@pytest.mark.parametrize("bad", ["qshare.k_IQ=1", "nosuch.key=1", "qshare.k_iQ=abc", "run.decimation=2.5",
                                 "qshare.rho=[1.0]"])
def test_invalid_overrides_rejected(bad):
    with pytest.raises(cf.ConfigError, match=bad.split("=")[0]):
        cf.resolve("e3", [bad])


def test_parameter_errors_are_config_errors():
    with pytest.raises(cf.ConfigError):
        cf.resolve("e3", ["plant.L_g=-1.0"])


def test_unknown_key_in_file_names_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('name = "x"\n\n[qshare]\nk_iQ = 0.003\nbogus = 1\n')
    with pytest.raises(cf.ConfigError, match=r"qshare\.bogus \(line 5\)"):
        cf.load_config(str(p))


def test_toml_syntax_error_names_line(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('[run]\nt_end = \n')
    with pytest.raises(cf.ConfigError, match="line 2"):
        cf.load_config(str(p))


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "r"
    code = cli.main(["run", "e3", "--set", "qshare.k_iQ=0.003", "--set", "run.t_end=6.0", "--out", str(out)])
    assert code == cli.EXIT_OK
    assert _files(out) == ["report.md", "resolved.toml", "run.csv"]
    assert "Channel statistics" in (out / "report.md").read_text()


def test_run_twice_identical_and_resolved_round_trip(tmp_path):
    args = ["--set", "run.t_end=4.0", "--set", "protocol.t_event=1.0", "--seed", "5", "--decimation", "10"]
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["run", "e5", *args, "--out", str(a)]) == 0
    assert cli.main(["run", "e5", *args, "--out", str(b)]) == 0
    assert (a / "run.csv").read_bytes() == (b / "run.csv").read_bytes()
    assert cli.main(["run", str(a / "resolved.toml"), "--out", str(c)]) == 0
    assert (a / "run.csv").read_bytes() == (c / "run.csv").read_bytes()
    assert (a / "resolved.toml").read_bytes() == (c / "resolved.toml").read_bytes()


def test_config_error_exit_and_no_files(tmp_path):
    out = tmp_path / "x"
    assert cli.main(["run", "e3", "--set", "qshare.nope=1", "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()
    assert cli.main(["run", "nosuchpreset", "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_diverged_and_sync_failed_exit_codes(tmp_path):
    code = cli.main(["run", "e3", "--set", "run.divergence_bound=50.0", "--set", "run.t_end=1.0",
                     "--out", str(tmp_path / "d")])
    assert code == cli.EXIT_DIVERGED
    code = cli.main(["run", "sync", "--set", "run.sync_timeout=0.5", "--set", "run.t_end=3.0",
                     "--out", str(tmp_path / "s")])
    assert code == cli.EXIT_SYNC_FAILED
    assert len({cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_DIVERGED, cli.EXIT_SYNC_FAILED}) == 4


def test_sweep_empty_axis_is_config_error(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["sweep", "e4", "--axis", "qshare.k_iQ=", "--out", str(out)]) == cli.EXIT_CONFIG
    assert cli.main(["sweep", "e4", "--set", "sweep.axes.qshare.k_iQ=[]", "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_sweep_e4_table_shape(tmp_path):
    out = tmp_path / "s4"
    code = cli.main(["sweep", "e4", "--set", "run.t_end=4.0", "--set", "protocol.t_event=1.0",
                     "--jobs", "2", "--out", str(out)])
    assert code == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 6
    head = summary[0].split(",")
    assert {"qshare.k_iQ", "dQ_max", "dt_r", "behaviour", "stability"} <= set(head)
    report = (out / "report.md").read_text()
    assert "| qshare.k_iQ | dQ_max (VAr) | dt_r (s) | behaviour |" in report
    assert len(os.listdir(out / "runs")) == 12


def test_sweep_e5_grid_file(tmp_path):
    out = tmp_path / "s5"
    code = cli.main(["sweep", "e5", "--set", "run.t_end=1.5", "--set", "protocol.t_event=0.5",
                     "--set", "thresholds.min_post_event=0.5", "--jobs", "3", "--out", str(out)])
    assert code == 0
    report = (out / "report.md").read_text()
    grid = report.split("## Stability grid")[1].split("##")[0].strip().splitlines()
    assert len(grid) == 2 + 3
    assert all(len(row.strip("|").split("|")) == 7 for row in grid)
    assert len((out / "summary.csv").read_text().splitlines()) == 19
