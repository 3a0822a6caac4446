#!/usr/bin/env python3
"""Credentialed live smoke run: generate a flow for one goal, grade it.

Not part of CI. Needs provider credentials in the environment
(FLOWSMITH_<PROFILE>_API_KEY) and, usually, a config file pointing the
profiles at real endpoints:

    python3 scripts/live_smoke.py --config config.json \
        --goal "compare prompts for summarizing paragraphs into tweets"

Pass --record DIR to capture cassettes for later replay.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from flowsmith.assembler import assemble
from flowsmith.cli import _build_gateway, _load_config
from flowsmith.flow_model import default_catalog, serialize, validate
from flowsmith.harness import grade
from flowsmith.intent import spec_from_goal


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--goal", required=True)
    parser.add_argument("--config", default=None)
    parser.add_argument("--record", default=None, help="cassette dir to record into")
    parser.add_argument("--out", default="live-smoke.flow.json")
    args = parser.parse_args()

    config = _load_config(args.config)
    gateway = _build_gateway(config, replay=None, record=args.record)
    started = time.monotonic()
    result = assemble(spec_from_goal(args.goal), default_catalog(), gateway, config)
    elapsed = time.monotonic() - started

    Path(args.out).write_bytes(serialize(result.flow))
    report = validate(result.flow)
    grades = grade(result.flow)
    print(f"generated {result.flow.id} in {elapsed:.1f}s -> {args.out}")
    print(f"validate: {'ok' if report.ok else report.summary()}")
    print(
        "grade: compares_two_prompts=%s runs=%s uses_template_chaining=%s"
        % (grades.compares_two_prompts, grades.runs, grades.uses_template_chaining)
    )
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
