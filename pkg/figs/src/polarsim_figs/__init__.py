"""Batch renderer turning polarsim CSV outputs into paper-style figures."""

__version__ = "0.1.0"

from .spec import FigureSpec, SchemaError, load_spec
from .render import render

__all__ = ["FigureSpec", "SchemaError", "load_spec", "render"]
