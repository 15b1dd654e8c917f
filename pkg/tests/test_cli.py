import filecmp
import warnings

import numpy as np
import pytest

from isslab.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("kernels", "gains", "simulate", "sweep", "verify", "reproduce-figs"):
        assert cmd in out


def test_unknown_preset_is_config_error(tmp_path):
    rc = main(["simulate", "--preset", "paper_fig99", "--out", str(tmp_path)])
    assert rc == 2


def test_family_preset_rejected_for_simulate(tmp_path):
    rc = main(["simulate", "--preset", "paper_fig2d", "--out", str(tmp_path)])
    assert rc == 2


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no equals sign here\n")
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 2


def test_kernels_command(tmp_path):
    rc = main(["kernels", "--n", "41", "--out", str(tmp_path)])
    assert rc == 0
    for stem in ("kernel_k", "kernel_l", "kernel_m", "kernel_n"):
        assert (tmp_path / f"{stem}.csv").exists()
    report = (tmp_path / "residual_report.txt").read_text()
    assert report.count("interior_max") == 4


def test_gains_command(tmp_path):
    rc = main(["gains", "--n", "41", "--out", str(tmp_path)])
    assert rc == 0
    meta = (tmp_path / "gains_meta.txt").read_text()
    assert "residual=" in meta and "b=" in meta
    header = (tmp_path / "gains.csv").read_text().splitlines()[0]
    assert header == "x,p,kp"


def test_gains_command_rejects_bad_p0(tmp_path):
    rc = main(["gains", "--n", "41", "--p0", "-100", "--out", str(tmp_path)])
    assert rc == 2


def test_simulate_command_with_overrides(tmp_path):
    rc = main(["simulate", "--preset", "paper_fig2a", "--n", "51", "--dt", "1e-3",
               "--t-end", "0.2", "--store-every", "20", "--out", str(tmp_path)])
    assert rc == 0
    trace = (tmp_path / "paper_fig2a_trace.csv").read_text().splitlines()
    assert trace[0] == "t,x,u,U,y"
    assert (tmp_path / "paper_fig2a_norms.csv").exists()
    meta = (tmp_path / "paper_fig2a_meta.txt").read_text()
    assert "n=51" in meta and "mode=state_feedback" in meta


def test_simulate_divergence_exit_code(tmp_path):
    cfg = tmp_path / "blowup.cfg"
    cfg.write_text("mode=open_loop\nlambda_kind=constant\nlambda_const=2500\n"
                   "u0_kind=sine\nn=51\ndt=1e-3\nt_end=1.0\nc0=3000\n")
    rc = main(["simulate", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == 4


def test_sweep_command(tmp_path):
    rc = main(["sweep", "--preset", "paper_fig2d", "--n", "51", "--dt", "1e-3",
               "--t-end", "0.5", "--scales", "0,1", "--window", "0.2,0.5",
               "--store-every", "20", "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "scale,sup_norm"
    assert len(lines) == 3


def test_sigma_report(tmp_path, capsys):
    norms = tmp_path / "norms.csv"
    t = np.linspace(0, 3, 100)
    with open(norms, "w") as fh:
        fh.write("t,linf_u\n")
        for ti, vi in zip(t, np.exp(-1.5 * t)):
            fh.write(f"{ti},{vi}\n")
    rc = main(["sigma-report", str(norms), "--window", "0.5,2.5"])
    assert rc == 0
    assert "slope=1.5" in capsys.readouterr().out


def test_verify_small_grid_passes(tmp_path):
    rc = main(["verify", "--n", "51", "--dt", "1e-3", "--t-end", "0.75",
               "--out", str(tmp_path)])
    assert rc == 0
    report = (tmp_path / "verify_report.txt").read_text()
    assert "FAIL" not in report
    assert report.count("PASS") >= 9


def test_verify_determinism_small(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--n", "41", "--dt", "2e-3", "--t-end", "0.4", "--out", str(a)]) == 0
    assert main(["verify", "--n", "41", "--dt", "2e-3", "--t-end", "0.4", "--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors
