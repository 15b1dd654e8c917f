import numpy as np
import pytest

from issplots import FigureSpec, SchemaError, load_norms, load_trace, render, spec_for
from issplots.cli import main


def write_trace(path, nt=6, nx=9):
    t = np.linspace(0, 1, nt)
    x = np.linspace(0, 1, nx)
    with open(path, "w") as fh:
        fh.write("t,x,u,U,y\n")
        for ti in t:
            for xi in x:
                u = np.exp(2 * ti) * np.sin(np.pi * xi)
                fh.write(f"{ti},{xi},{u},0.0,0.0\n")
    return t, x


def write_norms(path, amp, nt=40):
    t = np.linspace(0, 4, nt)
    with open(path, "w") as fh:
        fh.write("t,linf\n")
        for ti in t:
            fh.write(f"{ti},{amp + np.exp(-ti)}\n")


def test_load_trace_pivots_grid(tmp_path):
    p = tmp_path / "trace.csv"
    t, x = write_trace(p)
    tt, xx, grid = load_trace(p)
    assert grid.shape == (t.size, x.size)
    assert np.allclose(tt, t) and np.allclose(xx, x)


def test_load_trace_missing_column_names_offender(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,value\n0,1\n")
    with pytest.raises(SchemaError, match="'x'"):
        load_trace(p)


def test_empty_trace_is_schema_error(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(SchemaError):
        load_trace(p)


def test_header_only_is_schema_error(tmp_path):
    p = tmp_path / "header.csv"
    p.write_text("t,x,u,U,y\n")
    with pytest.raises(SchemaError, match="no data rows"):
        load_trace(p)


def test_load_norms_accepts_both_headers(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("t,linf\n0,1\n1,0.5\n")
    b = tmp_path / "b.csv"
    b.write_text("t,linf_u,linf_utilde\n0,1,2\n1,0.5,1\n")
    for p in (a, b):
        t, n = load_norms(p)
        assert t.shape == (2,) and n[0] == 1.0


def test_render_surface(tmp_path):
    p = tmp_path / "trace.csv"
    write_trace(p)
    spec = FigureSpec(trace_paths=(p,), kind="surface", labels=("u",),
                      output=tmp_path / "fig.png")
    out = render(spec)
    assert out.exists() and out.stat().st_size > 1000


def test_render_overlay_orders_by_amplitude(tmp_path):
    # labels supplied out of order on purpose; render sorts by amplitude
    for amp in (3, 0, 1):
        write_norms(tmp_path / f"figx_s{amp}_norms.csv", amp)
    paths = tuple(tmp_path / f"figx_s{a}_norms.csv" for a in (3, 0, 1))
    spec = FigureSpec(trace_paths=paths, kind="norm_overlay",
                      labels=("amplitude 3", "amplitude 0", "amplitude 1"),
                      output=tmp_path / "overlay.png")
    out = render(spec)
    assert out.exists() and out.stat().st_size > 1000


def test_spec_for_overlay_globs_and_sorts(tmp_path):
    for amp in (3, 0, 1):
        write_norms(tmp_path / f"fig2d_s{amp}_norms.csv", amp)
    spec = spec_for("fig2d", tmp_path, tmp_path)
    amps = [float(lbl.split()[-1]) for lbl in spec.labels]
    assert amps == sorted(amps) == [0.0, 1.0, 3.0]


def test_spec_for_unknown_name(tmp_path):
    with pytest.raises(KeyError):
        spec_for("fig9x", tmp_path, tmp_path)


def test_figure_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        FigureSpec(trace_paths=(), kind="surface", labels=(), output=tmp_path / "x.png")
    with pytest.raises(ValueError):
        FigureSpec(trace_paths=(tmp_path / "a",), kind="pie", labels=("a",),
                   output=tmp_path / "x.png")


def test_cli_reports_schema_error(tmp_path, capsys):
    (tmp_path / "fig1_trace.csv").write_text("t,wrong\n0,1\n")
    rc = main(["fig1", "--data", str(tmp_path), "--out", str(tmp_path)])
    assert rc == 2
    assert "'x'" in capsys.readouterr().err


def test_cli_missing_family(tmp_path):
    rc = main(["fig5d", "--data", str(tmp_path), "--out", str(tmp_path)])
    assert rc == 2


def test_render_idempotent(tmp_path):
    p = tmp_path / "trace.csv"
    write_trace(p)
    spec = FigureSpec(trace_paths=(p,), kind="surface", labels=("u",),
                      output=tmp_path / "fig.png")
    render(spec)
    first = spec.output.read_bytes()
    render(spec)
    assert spec.output.read_bytes() == first
