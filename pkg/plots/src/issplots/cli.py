"""`plots <figure-name>|all --data <dir> --out <dir>`: render figure
analogues from simulation CSV data sets."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .figures import CATALOG, SchemaError, render, spec_for


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="plots", description=__doc__)
    parser.add_argument("figure", help="figure name (%s) or 'all'"
                                       % ", ".join(sorted(CATALOG)))
    parser.add_argument("--data", required=True, help="directory with the CSV data sets")
    parser.add_argument("--out", default="figures", help="output directory for images")
    args = parser.parse_args(argv)

    data_dir = Path(args.data)
    out_dir = Path(args.out)
    names = sorted(CATALOG) if args.figure == "all" else [args.figure]
    try:
        for name in names:
            path = render(spec_for(name, data_dir, out_dir))
            print(f"{name}: {path}")
    except (KeyError, FileNotFoundError, SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
