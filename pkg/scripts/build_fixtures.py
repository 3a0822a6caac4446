#!/usr/bin/env python3
"""Regenerate the bundled fixtures: scenario cassettes and grading corpus.

Deterministic by construction (fixed clock, scripted backends), so
repeated runs produce byte-identical files. Run from the repo root:

    python3 scripts/build_fixtures.py [--root fixtures]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from flowsmith.flow_model import validate
from flowsmith.scenarios import build_fixtures


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="fixtures", help="output directory (default: fixtures)")
    args = parser.parse_args()

    flows = build_fixtures(Path(args.root))
    for name, flow in flows.items():
        report = validate(flow)
        status = "ok" if report.ok else f"INVALID: {report.summary()}"
        print(f"{name}: {flow.id} ({len(flow.nodes)} nodes, {len(flow.edges)} edges) {status}")
    print(f"fixtures written under {args.root}/")


if __name__ == "__main__":
    main()
