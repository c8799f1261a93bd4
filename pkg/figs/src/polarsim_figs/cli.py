"""Command line entry point: polarsim-figs --spec <file> [--spec <file> ...]"""

from __future__ import annotations

import argparse
import sys

from .render import render
from .spec import SchemaError, load_spec


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="polarsim-figs",
        description="Render polarsim CSV results into figures",
    )
    parser.add_argument(
        "--spec",
        action="append",
        required=True,
        help="figure spec JSON file (repeatable)",
    )
    args = parser.parse_args(argv)
    for path in args.spec:
        try:
            out = render(load_spec(path))
        except SchemaError as exc:
            print(f"error [schema] {exc}", file=sys.stderr)
            return 1
        except OSError as exc:
            print(f"error [io] {exc}", file=sys.stderr)
            return 1
        print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
