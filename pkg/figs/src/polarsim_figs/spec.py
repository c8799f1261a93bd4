"""Figure specifications: what to read, how to map columns, where to write.

A spec is a JSON object. Common fields:
    kind    "scatter" or "line"
    out     output image path
    title, xlabel, ylabel, logy    optional styling

Scatter specs plot coordinate layers from one CSV:
    input   CSV path
    layers  [{"x": col, "y": col, "label": str, "marker": str}, ...]

Line specs aggregate y over x, one curve per series value:
    input   CSV path  (or `inputs`: [{"path": ..., "label": ...}, ...])
    x, y    column names
    series  optional grouping column
    agg     "mean" or "median" over repeated x values (default mean)
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field


class SchemaError(ValueError):
    """Spec or CSV content does not match the expected schema."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    out: str
    inputs: list  # (path, label-or-None) pairs
    layers: list = field(default_factory=list)
    x: str | None = None
    y: str | None = None
    series: str | None = None
    agg: str = "mean"
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logy: bool = False


def load_spec(path) -> FigureSpec:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read spec file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"spec file {path} is not valid JSON: {exc}") from exc
    return parse_spec(raw)


def parse_spec(raw: dict) -> FigureSpec:
    kind = raw.get("kind")
    if kind not in ("scatter", "line"):
        raise SchemaError(f"figure kind must be 'scatter' or 'line', got {kind!r}")
    out = raw.get("out")
    if not out:
        raise SchemaError("spec is missing the output path 'out'")

    if "inputs" in raw:
        inputs = [(item["path"], item.get("label")) for item in raw["inputs"]]
    elif "input" in raw:
        inputs = [(raw["input"], None)]
    else:
        raise SchemaError("spec needs 'input' or 'inputs'")

    spec = FigureSpec(
        kind=kind,
        out=out,
        inputs=inputs,
        layers=raw.get("layers", []),
        x=raw.get("x"),
        y=raw.get("y"),
        series=raw.get("series"),
        agg=raw.get("agg", "mean"),
        title=raw.get("title", ""),
        xlabel=raw.get("xlabel", ""),
        ylabel=raw.get("ylabel", ""),
        logy=bool(raw.get("logy", False)),
    )
    if kind == "scatter":
        if not spec.layers:
            raise SchemaError("scatter spec needs at least one layer")
        for layer in spec.layers:
            if "x" not in layer or "y" not in layer:
                raise SchemaError(f"scatter layer missing x/y mapping: {layer}")
    else:
        if not spec.x or not spec.y:
            raise SchemaError("line spec needs 'x' and 'y' column names")
        if spec.agg not in ("mean", "median"):
            raise SchemaError(f"agg must be 'mean' or 'median', got {spec.agg!r}")
    return spec


def read_csv_columns(path, columns: list[str]) -> dict[str, list[str]]:
    """Read the named columns; missing columns raise a SchemaError naming them."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if header is None:
                raise SchemaError(f"{path} is empty (no header row)")
            for col in columns:
                if col not in header:
                    raise SchemaError(
                        f"column '{col}' not found in {path} (header: {header})"
                    )
            rows = list(reader)
    except OSError as exc:
        raise SchemaError(f"cannot read CSV {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path} contains a header but no data rows")
    return {col: [row[col] for row in rows] for col in columns}
