"""Command line entry point: python -m fixturegen --out fixtures --seed 0"""

import argparse
import json
from pathlib import Path

from .gen import generate


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fixturegen", description="generate the test corpus")
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    manifest = generate(args.out, args.seed)
    print(json.dumps(manifest["counts"], indent=1))
    print(f"scanner(s): {', '.join(manifest['reference_scanner'])}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
