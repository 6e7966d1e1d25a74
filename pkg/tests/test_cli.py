import json

import numpy as np
import pytest

from lowmach import cli
from lowmach.config import DEFAULT_INI, load_config
from lowmach.errors import DomainError
from lowmach.fields import read_snapshot


def _ini(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


def test_default_config_matches_ini(tmp_path):
    a = load_config()
    b = load_config(_ini(tmp_path, DEFAULT_INI))
    assert a.params == b.params
    assert a.solver == b.solver
    assert a.eps_list == b.eps_list == [0.2, 0.1, 0.05]
    assert a.grid() == b.grid()
    assert b.snapshot_times == [0.0, 0.5]


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(DomainError):
        load_config(_ini(tmp_path, "[ic]\nkind = vortex\n"))
    with pytest.raises(DomainError):
        load_config(_ini(tmp_path, "[params]\nmu = -1\n"))


def test_closure_solve(capsys):
    assert cli.main(["closure-solve", "--d", "2", "--gamma", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "root 0.5"
    assert out[1].startswith("residual")
    assert out[2].startswith("iterations")


def test_closure_solve_domain_error(capsys):
    assert cli.main(["closure-solve", "--d", "-1", "--gamma", "2"]) == 2
    assert "error" in capsys.readouterr().err


def test_verify_flags_after_subcommand(capsys):
    assert cli.main(["verify-inequalities", "--trials", "50", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert "PASS ckp_factor2" in out and "XFAIL ckp_factor1_counterexample" in out


def test_dump_and_simulate(tmp_path, capsys):
    ini = _ini(tmp_path, "[grid]\ncells = 8\n[solver]\nt_end = 0.02\ncadence = 0.01\n"
                         "[output]\nsnapshot_times = 0.02\n")
    out = tmp_path / "out"
    assert cli.main(["--config", str(ini), "dump", "--out", str(out)]) == 0
    t, cols = read_snapshot(out / "initial.txt")
    assert t == 0.0 and cols["R_plus"].size == 64
    assert cli.main(["simulate-compressible", "--config", str(ini), "--out", str(out)]) == 0
    assert (out / "entropy_0.1.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] > 0
    t, cols = read_snapshot(out / "compressible_t0.0200.txt")
    assert t == pytest.approx(0.02)
    assert cli.main(["simulate-limit", "--config", str(ini), "--out", str(out)]) == 0
    assert (out / "limit_t0.0200.txt").exists()


def test_dump_checkpoint(tmp_path):
    from lowmach.compressible import ConservedField
    from lowmach.fields import Grid
    g = Grid((8, 8))
    st = ConservedField(np.full((8, 8), 0.5), np.full((8, 8), 0.5), np.zeros((2, 8, 8)))
    path = st.save(tmp_path / "ck.npz", t=0.3)
    ini = _ini(tmp_path, "[grid]\ncells = 8\n")
    assert cli.main(["dump", "--config", str(ini), "--state", str(path), "--out", str(tmp_path)]) == 0
    t, cols = read_snapshot(tmp_path / "ck.txt")
    assert t == pytest.approx(0.3)


@pytest.mark.parametrize("kind", ["rest", "shear"])
def test_other_ic_kinds(tmp_path, kind):
    ini = _ini(tmp_path, f"[grid]\ncells = 8\n[ic]\nkind = {kind}\n[solver]\nt_end = 0.01\ncadence = 0.01\n")
    assert cli.main(["simulate-compressible", "--config", str(ini), "--out", str(tmp_path)]) == 0


def test_pulse_ic(tmp_path):
    ini = _ini(tmp_path, "[grid]\ncells = 64\ndim = 1\n[params]\ngamma_plus = 2\ngamma_minus = 3\neps = 1\nc0 = 1\n"
                         "[ic]\nkind = pulse\n[solver]\nt_end = 0.01\ncadence = 0.01\n")
    assert cli.main(["simulate-compressible", "--config", str(ini), "--out", str(tmp_path)]) == 0


def test_sweep_exit_code(tmp_path, capsys):
    ini = _ini(tmp_path, "[grid]\ncells = 8\n[solver]\nt_end = 0.02\ncadence = 0.01\n[sweep]\neps = 0.4 0.2 0.1\n")
    rc = cli.main(["sweep", "--config", str(ini), "--out", str(tmp_path), "--threads", "1"])
    out = capsys.readouterr().out
    assert ("FAIL" in out) == (rc == 1)
    assert "slopes:" in out
    assert (tmp_path / "sweep.csv").exists()
