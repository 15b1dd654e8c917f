"""Render simulation CSV traces into figure analogues.

Two figure kinds: `surface` turns a long-format trace (`t,x,u,...`) into a
3-D surface of the field over (x, t); `norm_overlay` stacks sup-norm curves
from several norm CSVs, one per disturbance amplitude, ordered by amplitude.
Rendering is read-only over the CSVs and idempotent.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class SchemaError(ValueError):
    """A CSV does not carry the expected columns; names the offender."""


@dataclass(frozen=True)
class FigureSpec:
    trace_paths: tuple[Path, ...]
    kind: str  # "surface" | "norm_overlay"
    labels: tuple[str, ...]
    output: Path

    def __post_init__(self):
        if self.kind not in ("surface", "norm_overlay"):
            raise ValueError(f"unknown figure kind {self.kind!r}")
        if not self.trace_paths:
            raise ValueError("figure spec needs at least one CSV")
        if len(self.labels) != len(self.trace_paths):
            raise ValueError("one label per CSV required")


def _read_columns(path: Path, required: tuple[str, ...]) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected columns {','.join(required)}")
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r} (found {','.join(header)})")
        idx = {col: header.index(col) for col in required}
        data: dict[str, list[float]] = {col: [] for col in required}
        for lineno, row in enumerate(reader, 2):
            for col in required:
                try:
                    data[col].append(float(row[idx[col]]))
                except (ValueError, IndexError):
                    raise SchemaError(f"{path}:{lineno}: bad value in column {col!r}")
    if not data[required[0]]:
        raise SchemaError(f"{path}: no data rows")
    return {col: np.asarray(vals) for col, vals in data.items()}


def load_trace(path: Path):
    """Long-format trace -> (t, x, field) with the field pivoted to a
    (len(t), len(x)) grid."""
    cols = _read_columns(path, ("t", "x", "u"))
    t = np.unique(cols["t"])
    x = np.unique(cols["x"])
    if t.size * x.size != cols["u"].size:
        raise SchemaError(f"{path}: rows do not form a full (t, x) grid")
    grid = cols["u"].reshape(t.size, x.size)
    return t, x, grid


def load_norms(path: Path):
    """Norms CSV -> (t, norm); accepts either `linf` or `linf_u`."""
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    col = "linf" if "linf" in header else "linf_u"
    cols = _read_columns(path, ("t", col))
    return cols["t"], cols[col]


def _amplitude_key(label: str) -> float:
    # family files carry the scale as "_s<amp>_"; otherwise take the last
    # number in the label ("amplitude 3")
    match = re.search(r"_s(\d+(?:\.\d+)?)", label)
    if match is None:
        numbers = re.findall(r"(\d+(?:\.\d+)?)", label)
        return float(numbers[-1]) if numbers else 0.0
    return float(match.group(1))


def render(spec: FigureSpec) -> Path:
    """Draw the figure and return the written image path."""
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    if spec.kind == "surface":
        t, x, grid = load_trace(spec.trace_paths[0])
        fig = plt.figure(figsize=(7, 5))
        ax = fig.add_subplot(projection="3d")
        T, X = np.meshgrid(t, x, indexing="ij")
        ax.plot_surface(X, T, grid, cmap="viridis", rcount=60, ccount=60,
                        linewidth=0, antialiased=False)
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        ax.set_zlabel(spec.labels[0])
        fig.tight_layout()
    else:
        order = np.argsort([_amplitude_key(lbl) for lbl in spec.labels])
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for idx in order:
            t, norm = load_norms(spec.trace_paths[idx])
            ax.plot(t, norm, label=spec.labels[idx])
        ax.set_xlabel("t")
        ax.set_ylabel("sup norm")
        ax.set_yscale("log")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend()
        fig.tight_layout()
    fig.savefig(spec.output, dpi=130)
    plt.close(fig)
    return spec.output


# figure catalogue: name -> (kind, data-file pattern(s), axis label)
CATALOG: dict[str, dict] = {
    "fig1": {"kind": "surface", "files": ["fig1_trace.csv"], "label": "u"},
    "fig2a": {"kind": "surface", "files": ["fig2a_trace.csv"], "label": "u"},
    "fig3a": {"kind": "surface", "files": ["fig3a_trace.csv"], "label": "estimation error"},
    "fig2d": {"kind": "norm_overlay", "glob": "fig2d_s*_norms.csv"},
    "fig3d": {"kind": "norm_overlay", "glob": "fig3d_s*_norms.csv"},
    "fig5d": {"kind": "norm_overlay", "glob": "fig5d_s*_norms.csv"},
}


def spec_for(name: str, data_dir: Path, out_dir: Path) -> FigureSpec:
    """Build the FigureSpec for a catalogue figure from a data directory."""
    if name not in CATALOG:
        raise KeyError(f"unknown figure {name!r}; available: {', '.join(sorted(CATALOG))}")
    entry = CATALOG[name]
    out = out_dir / f"{name}.png"
    if entry["kind"] == "surface":
        paths = tuple(data_dir / f for f in entry["files"])
        return FigureSpec(trace_paths=paths, kind="surface",
                          labels=(entry["label"],), output=out)
    paths = tuple(sorted(data_dir.glob(entry["glob"]),
                         key=lambda p: _amplitude_key(p.stem)))
    if not paths:
        raise FileNotFoundError(f"no files matching {entry['glob']} under {data_dir}")
    labels = tuple(f"amplitude {_amplitude_key(p.stem):g}" for p in paths)
    return FigureSpec(trace_paths=paths, kind="norm_overlay", labels=labels, output=out)
