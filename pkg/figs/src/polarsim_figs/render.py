"""Deterministic matplotlib rendering of figure specs."""

from __future__ import annotations

import importlib.resources
from pathlib import Path
from statistics import mean, median

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .spec import FigureSpec, SchemaError, read_csv_columns

# fixed PNG metadata so repeated renders are byte-identical
_METADATA = {"Software": "polarsim-figs"}

_MARKERS = ("o", "s", "^", "v", "D", "x", "*", "+")


def _style_path() -> str:
    return str(importlib.resources.files("polarsim_figs") / "polarsim.mplstyle")


def _to_float(values, column, path):
    out = []
    for v in values:
        try:
            out.append(float(v))
        except ValueError as exc:
            raise SchemaError(
                f"column '{column}' in {path} holds non-numeric value {v!r}"
            ) from exc
    return out


def _sort_key(value: str):
    try:
        return (0, float(value), "")
    except ValueError:
        return (1, 0.0, value)


def _render_scatter(spec: FigureSpec, ax):
    path = spec.inputs[0][0]
    for i, layer in enumerate(spec.layers):
        cols = read_csv_columns(path, [layer["x"], layer["y"]])
        xs = _to_float(cols[layer["x"]], layer["x"], path)
        ys = _to_float(cols[layer["y"]], layer["y"], path)
        ax.scatter(
            xs,
            ys,
            label=layer.get("label", f"layer {i}"),
            marker=layer.get("marker", _MARKERS[i % len(_MARKERS)]),
        )


def _render_line(spec: FigureSpec, ax):
    agg = mean if spec.agg == "mean" else median
    curves = {}
    for path, label in spec.inputs:
        columns = [spec.x, spec.y] + ([spec.series] if spec.series else [])
        cols = read_csv_columns(path, columns)
        xs = _to_float(cols[spec.x], spec.x, path)
        ys = _to_float(cols[spec.y], spec.y, path)
        groups = cols[spec.series] if spec.series else ["" for _ in xs]
        for x, y, group in zip(xs, ys, groups):
            name = ":".join(part for part in (label, group) if part)
            curves.setdefault(name, {}).setdefault(x, []).append(y)
    for name in sorted(curves, key=_sort_key):
        points = sorted(curves[name].items())
        ax.plot(
            [p[0] for p in points],
            [agg(p[1]) for p in points],
            marker="o",
            label=name or None,
        )


def render(spec: FigureSpec) -> Path:
    """Render one spec to its output path; returns the written path.

    Reads all inputs before touching the output so schema errors never leave
    a partial file behind.
    """
    out = Path(spec.out)
    with plt.style.context(_style_path()):
        fig, ax = plt.subplots()
        try:
            if spec.kind == "scatter":
                _render_scatter(spec, ax)
            else:
                _render_line(spec, ax)
            if spec.logy:
                ax.set_yscale("log")
            if spec.title:
                ax.set_title(spec.title)
            ax.set_xlabel(spec.xlabel or (spec.x or ""))
            ax.set_ylabel(spec.ylabel or (spec.y or ""))
            handles, _ = ax.get_legend_handles_labels()
            if handles:
                ax.legend()
            out.parent.mkdir(parents=True, exist_ok=True)
            fig.savefig(out, metadata=_METADATA)
        finally:
            plt.close(fig)
    return out
