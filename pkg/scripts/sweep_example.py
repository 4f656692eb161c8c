"""Run the example sweep config through the CLI entry point and print the summary.

    python scripts/sweep_example.py [--out out/example]
"""
import argparse
import sys
from pathlib import Path

from cplxv.cli import main

HERE = Path(__file__).resolve().parent

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/example")
    args = ap.parse_args()
    code = main(["sweep", "--config", str(HERE / "sweep_example.cfg"), "--out", args.out])
    if code != 2:
        main(["report", "--config", str(HERE / "sweep_example.cfg"), "--out", args.out])
    sys.exit(code)
