"""Command-line entry points: serve, gen, run, grade, grade-batch."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .assembler import REPLAY_TIMESTAMP, ReviewExhausted, assemble
from .config import Config, default_config, load_config
from .executor import run_flow, run_to_doc
from .flow_model import default_catalog, deserialize, serialize, validate
from .gateway import CassetteStore, HttpTransport, LLMGateway
from .harness import batch, grade
from .intent import spec_from_goal
from .planner import plan_to_doc


def _load_config(path: str | None) -> Config:
    return load_config(path) if path else default_config()


def _build_gateway(config: Config, replay: str | None, record: str | None) -> LLMGateway:
    common = dict(
        retry_backoffs=config.retry_backoffs,
        structured_attempts=config.structured_attempts,
        max_in_flight=config.max_in_flight,
        per_provider_rpm=config.per_provider_rpm,
    )
    if replay:
        return LLMGateway(mode="replay", cassettes=CassetteStore(replay), **common)
    transport = HttpTransport(config.profiles)
    if record:
        return LLMGateway(
            mode="record", transport=transport, cassettes=CassetteStore(record), **common
        )
    return LLMGateway(mode="live", transport=transport, **common)


def cmd_gen(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    gateway = _build_gateway(config, args.replay, args.record)
    intent = spec_from_goal(args.goal)
    clock = (lambda: REPLAY_TIMESTAMP) if args.replay else None
    try:
        result = assemble(intent, default_catalog(), gateway, config, clock=clock)
        flow, plan = result.flow, result.plan
    except ReviewExhausted as exc:
        print("warning: reviewer was not satisfied; keeping the last flow", file=sys.stderr)
        flow, plan = exc.flow, None
    out = Path(args.out)
    out.write_bytes(serialize(flow))
    if plan is not None:
        plan_path = out.with_name(out.name.replace(".flow.json", "").replace(".json", "") + ".plan.json")
        plan_path.write_text(
            json.dumps(plan_to_doc(plan), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    report = validate(flow)
    print(f"{flow.id}: {len(flow.nodes)} nodes, {len(flow.edges)} edges -> {out}")
    print(f"validate: {'ok' if report.ok else report.summary()}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    gateway = _build_gateway(config, args.replay, args.record)
    flow = deserialize(Path(args.flow).read_bytes())
    result = run_flow(flow, gateway, config)
    doc = run_to_doc(result)
    if args.out:
        Path(args.out).write_text(
            json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    print(f"status: {result.status}")
    for node_id, responses in result.responses.items():
        print(f"  {node_id}: {len(responses)} responses")
    for node_id, rows in result.tables.items():
        print(f"  {node_id}:")
        for row in rows:
            print(f"    {row.group}: {row.value:.3f} (n={row.count})")
    if result.status != "succeeded":
        print(f"  failed at {result.failed_node}: {result.error}")
        return 1
    return 0


def cmd_grade(args: argparse.Namespace) -> int:
    flow = deserialize(Path(args.flow).read_bytes())
    report = grade(flow)
    if args.json:
        print(
            json.dumps(
                {
                    "flow_id": report.flow_id,
                    "compares_two_prompts": report.compares_two_prompts,
                    "runs": report.runs,
                    "uses_template_chaining": report.uses_template_chaining,
                    "details": report.details,
                },
                indent=2,
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    else:
        print(report.flow_id)
        print(f"  compares_two_prompts: {str(report.compares_two_prompts).lower()}")
        print(f"  runs: {str(report.runs).lower()}")
        print(f"  uses_template_chaining: {str(report.uses_template_chaining).lower()}")
    return 0


def cmd_grade_batch(args: argparse.Namespace) -> int:
    report = batch(args.corpus, out_path=args.out)
    c, r, t, n = report.totals()
    print(f"graded {n} flows ({len(report.errors)} unreadable)")
    print(f"  compares_two_prompts: {c}/{n}")
    print(f"  runs: {r}/{n}")
    print(f"  uses_template_chaining: {t}/{n}")
    if args.out:
        print(f"report written to {args.out}")
    else:
        print(report.to_csv(), end="")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = _load_config(args.config)
    gateway = _build_gateway(config, args.replay, args.record)
    static_dir = args.static
    if static_dir is None and Path("frontend/dist").is_dir():
        static_dir = "frontend/dist"
    app = create_app(args.workspace, config, gateway, static_dir=static_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowsmith", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--workspace", default="workspace", help="state directory")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8800)
    p.add_argument("--replay", default=None, help="cassette dir; answer from recordings only")
    p.add_argument("--record", default=None, help="cassette dir; hit providers and record")
    p.add_argument("--static", default=None, help="built web UI directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gen", help="headless zero-shot generation from a goal")
    p.add_argument("--goal", required=True)
    p.add_argument("--out", default="flow.json")
    p.add_argument("--config", default=None)
    p.add_argument("--replay", default=None)
    p.add_argument("--record", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="execute a flow document")
    p.add_argument("flow")
    p.add_argument("--out", default=None, help="write the full run result JSON here")
    p.add_argument("--config", default=None)
    p.add_argument("--replay", default=None)
    p.add_argument("--record", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("grade", help="grade one flow document")
    p.add_argument("flow")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("grade-batch", help="grade every .flow.json in a directory")
    p.add_argument("corpus")
    p.add_argument("--out", default=None, help="CSV report path")
    p.set_defaults(func=cmd_grade_batch)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
