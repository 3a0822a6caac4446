"""Stitches generated nodes into a validated, positioned flow.

Wiring is rule-first: a template variable connects to the unique
dependency whose title equals the variable name, and response handles
connect to the unique dependency the catalog allows. Only the leftovers
go to a structured gateway call. The optional reviewer can send the
whole pipeline back to the planner once.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

from .config import Config
from .executor import resolve_handle_values
from .flow_model import (
    KIND_CODE_EVALUATOR,
    KIND_LLM_SCORER,
    KIND_PROMPT,
    KIND_VIS,
    OUTPUT_HANDLES,
    Edge,
    Flow,
    Node,
    NodeCatalog,
    ValidationReport,
    VisPayload,
    default_catalog,
    flow_to_doc,
    serialize,
    validate,
)
from .gateway import ChatMessage, ChatRequest, LLMGateway, StructuredOutputFailure, closed_object_schema
from .intent import IntentSpec
from .nodegen import GenContext, generate_node
from .planner import Plan, make_plan, render_intent
from .prompts import load_prompt

log = logging.getLogger(__name__)

LAYOUT_X0 = 80
LAYOUT_Y0 = 60
LAYOUT_DX = 350
LAYOUT_DY = 220

REPLAY_TIMESTAMP = "2025-01-01T00:00:00Z"


class ConnectionUnresolvable(Exception):
    def __init__(self, variable: str, node_id: str) -> None:
        super().__init__(f"no legal source found for '{variable}' of node '{node_id}'")
        self.variable = variable
        self.node_id = node_id


class AssembledFlowInvalid(Exception):
    def __init__(self, report: ValidationReport) -> None:
        super().__init__(f"assembled flow fails validation: {report.summary()}")
        self.report = report


class ReviewExhausted(Exception):
    """Review loops ran out with pass=false; carries the last flow, flagged."""

    def __init__(self, flow: Flow, verdict: "ReviewVerdict") -> None:
        super().__init__("reviewer still unsatisfied after the replanning budget")
        self.flow = flow
        self.verdict = verdict


@dataclass(frozen=True)
class ReviewIssue:
    criterion: str
    detail: str


@dataclass(frozen=True)
class ReviewVerdict:
    passed: bool
    issues: tuple[ReviewIssue, ...] = ()
    suggestion: str | None = None


@dataclass(frozen=True)
class ProgressEvent:
    phase: str  # planning | generating | connecting | reviewing | done
    current: int = 0
    total: int = 0


ProgressCallback = Callable[[ProgressEvent], None]


# ---------------------------------------------------------------------------
# connection


_CONNECT_SCHEMA = closed_object_schema(
    {
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "node": {"type": "string"},
                    "variable": {"type": "string"},
                    "from_node": {"type": "string"},
                },
                "required": ["node", "variable", "from_node"],
                "additionalProperties": False,
            },
        }
    }
)


def _legal_source(source: Node, target: Node, handle: str, catalog: NodeCatalog) -> bool:
    handle_class = "responses" if handle == "responses" else "variable"
    if handle_class == "variable" and handle not in target.template_variables():
        return False
    return catalog.incoming_allowed(source.kind, target.kind, handle_class)


def connect(
    nodes: list[Node],
    plan: Plan,
    catalog: NodeCatalog,
    gateway: LLMGateway | None = None,
    config: Config | None = None,
) -> list[Edge]:
    """Edge set wiring the generated nodes, rule pass first, agent fallback.

    Raises ConnectionUnresolvable when neither exact title matching nor the
    agent produces a catalog-legal edge for some input handle.
    """
    by_produces = {t.produces: t for t in plan.tasks}
    by_id = {n.id: n for n in nodes}
    edges: list[Edge] = []
    unresolved: list[tuple[Node, str]] = []

    for node in nodes:
        task = by_produces.get(node.id)
        dep_nodes: list[Node] = []
        if task is not None:
            for dep_task_id in task.depends_on:
                dep_task = plan.task(dep_task_id)
                dep_node = by_id.get(dep_task.produces)
                if dep_node is not None:
                    dep_nodes.append(dep_node)
        for variable in node.template_variables():
            matches = [
                d
                for d in dep_nodes
                if d.title.strip().lower() == variable.strip().lower()
                and _legal_source(d, node, variable, catalog)
            ]
            if len(matches) == 1:
                edges.append(
                    Edge(
                        from_node=matches[0].id,
                        from_handle=OUTPUT_HANDLES[matches[0].kind],
                        to_node=node.id,
                        to_handle=variable,
                    )
                )
            else:
                unresolved.append((node, variable))
        if node.kind in (KIND_CODE_EVALUATOR, KIND_LLM_SCORER, KIND_VIS):
            sources = [d for d in dep_nodes if _legal_source(d, node, "responses", catalog)]
            if len(sources) == 1:
                edges.append(
                    Edge(
                        from_node=sources[0].id,
                        from_handle=OUTPUT_HANDLES[sources[0].kind],
                        to_node=node.id,
                        to_handle="responses",
                    )
                )
            else:
                unresolved.append((node, "responses"))

    if unresolved:
        edges.extend(_resolve_with_agent(nodes, unresolved, catalog, gateway, config))
    return edges


def _resolve_with_agent(
    nodes: list[Node],
    unresolved: list[tuple[Node, str]],
    catalog: NodeCatalog,
    gateway: LLMGateway | None,
    config: Config | None,
) -> list[Edge]:
    if gateway is None or config is None:
        node, variable = unresolved[0]
        raise ConnectionUnresolvable(variable, node.id)
    from .flow_model import node_to_doc

    pairs = [{"node": n.id, "variable": v} for n, v in unresolved]
    user = (
        "GRAPH NODES:\n"
        + json.dumps([node_to_doc(n) for n in nodes], indent=2, ensure_ascii=False, sort_keys=True)
        + "\n\nUNRESOLVED INPUTS:\n"
        + json.dumps(pairs, indent=2, sort_keys=True)
    )
    profile = config.backend_profile()
    request = ChatRequest(
        provider=profile.provider,
        model=profile.model,
        messages=(
            ChatMessage("system", load_prompt("assembler/connect.txt", config.prompts_dir)),
            ChatMessage("user", user),
        ),
        temperature=profile.temperature if profile.temperature is not None else config.agent_temperature,
        max_tokens=config.max_tokens,
    )
    try:
        value = gateway.complete_structured(request, _CONNECT_SCHEMA).value
    except StructuredOutputFailure as exc:
        node, variable = unresolved[0]
        raise ConnectionUnresolvable(variable, node.id) from exc
    proposed = {(e["node"], e["variable"]): e["from_node"] for e in value.get("edges", [])}
    by_id = {n.id: n for n in nodes}
    out: list[Edge] = []
    for node, variable in unresolved:
        source_id = proposed.get((node.id, variable))
        source = by_id.get(source_id) if source_id else None
        if source is None or not _legal_source(source, node, variable, catalog):
            raise ConnectionUnresolvable(variable, node.id)
        out.append(
            Edge(
                from_node=source.id,
                from_handle=OUTPUT_HANDLES[source.kind],
                to_node=node.id,
                to_handle=variable,
            )
        )
    return out


# ---------------------------------------------------------------------------
# layout


def layout(flow: Flow) -> Flow:
    """Layered left-to-right positions; pure, deterministic, idempotent.

    depth(n) is the longest path from any source; x = 80 + 350*depth,
    y = 60 + 220*(index within the depth layer, ordered by node id).
    """
    depths: dict[str, int] = {}
    incoming: dict[str, list[str]] = {n.id: [] for n in flow.nodes}
    for e in flow.edges:
        if e.to_node in incoming and e.from_node in incoming:
            incoming[e.to_node].append(e.from_node)

    def depth_of(node_id: str, trail: frozenset[str] = frozenset()) -> int:
        if node_id in depths:
            return depths[node_id]
        if node_id in trail:
            raise ValueError("layout requires an acyclic flow")
        sources = incoming[node_id]
        value = 0 if not sources else 1 + max(depth_of(s, trail | {node_id}) for s in sources)
        depths[node_id] = value
        return value

    for node in flow.nodes:
        depth_of(node.id)
    layers: dict[int, list[str]] = {}
    for node_id, depth in depths.items():
        layers.setdefault(depth, []).append(node_id)
    positions: dict[str, tuple[int, int]] = {}
    for depth, ids in layers.items():
        for row, node_id in enumerate(sorted(ids)):
            positions[node_id] = (LAYOUT_X0 + LAYOUT_DX * depth, LAYOUT_Y0 + LAYOUT_DY * row)
    return replace(
        flow,
        nodes=tuple(
            replace(n, x=positions[n.id][0], y=positions[n.id][1]) for n in flow.nodes
        ),
    )


# ---------------------------------------------------------------------------
# reviewer


_REVIEW_SCHEMA = closed_object_schema(
    {
        "pass": {"type": "boolean"},
        "issues": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"criterion": {"type": "string"}, "detail": {"type": "string"}},
                "required": ["criterion", "detail"],
                "additionalProperties": False,
            },
        },
        "suggestion": {"type": ["string", "null"]},
    },
    required=["pass", "issues"],
)


def review(flow: Flow, intent: IntentSpec, gateway: LLMGateway, config: Config) -> ReviewVerdict:
    """Judge the assembled flow against the intent.

    The reviewer is advisory: a structured-output failure degrades to
    pass=true with a logged warning rather than blocking generation.
    """
    user = (
        render_intent(intent)
        + "\n\nGENERATED FLOW:\n"
        + json.dumps(flow_to_doc(flow), indent=2, ensure_ascii=False, sort_keys=True)
    )
    profile = config.backend_profile()
    request = ChatRequest(
        provider=profile.provider,
        model=profile.model,
        messages=(
            ChatMessage("system", load_prompt("assembler/review.txt", config.prompts_dir)),
            ChatMessage("user", user),
        ),
        temperature=profile.temperature if profile.temperature is not None else config.agent_temperature,
        max_tokens=config.max_tokens,
    )
    try:
        value = gateway.complete_structured(request, _REVIEW_SCHEMA).value
    except StructuredOutputFailure as exc:
        log.warning("reviewer reply unusable, treating as pass: %s", exc)
        return ReviewVerdict(passed=True)
    if value["pass"]:
        return ReviewVerdict(passed=True, suggestion=value.get("suggestion"))
    return ReviewVerdict(
        passed=False,
        issues=tuple(ReviewIssue(i["criterion"], i["detail"]) for i in value.get("issues", [])),
        suggestion=value.get("suggestion"),
    )


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class AssembleResult:
    flow: Flow
    plan: Plan
    verdict: ReviewVerdict | None = None
    plans_created: int = 1


def _run_generation_tasks(
    plan: Plan,
    intent: IntentSpec,
    gateway: LLMGateway,
    config: Config,
    emit: Callable[[int, int], None],
    parallel: bool,
) -> dict[str, Node]:
    completed: dict[str, Node] = {}
    done_count = {"n": 0}
    lock = threading.Lock()
    total = len(plan.tasks)

    def run_task(task) -> None:
        ctx = GenContext(
            intent=intent,
            plan=plan,
            completed={dep: completed[dep] for dep in task.depends_on},
        )
        node = generate_node(task, ctx, gateway, config)
        with lock:
            completed[task.id] = node
            done_count["n"] += 1
            emit(done_count["n"], total)

    remaining = list(plan.tasks)
    while remaining:
        ready = [t for t in remaining if all(dep in completed for dep in t.depends_on)]
        if not ready:
            raise ValueError("plan dependencies cannot be scheduled")
        if parallel and len(ready) > 1:
            with ThreadPoolExecutor(max_workers=min(4, len(ready))) as pool:
                list(pool.map(run_task, ready))
        else:
            for task in ready:
                run_task(task)
        remaining = [t for t in remaining if t.id not in completed]
    return completed


def _append_vis(nodes: list[Node], edges: list[Edge], plan: Plan) -> None:
    """Rule-based Vis placement: one Vis after the first evaluator, grouped
    by the axis with the most variation (models if >1, else the widest
    prompt input variable)."""
    evaluator = next(
        (n for n in nodes if n.kind in (KIND_CODE_EVALUATOR, KIND_LLM_SCORER)), None
    )
    if evaluator is None:
        return
    vis_id = f"node-{len(plan.tasks) + 1}"
    interim = Flow(id="interim", name="", nodes=tuple(nodes), edges=tuple(edges), allow_unbound=True)
    group_by = "model"
    prompt_node = None
    for e in edges:
        if e.to_node == evaluator.id and e.to_handle == "responses":
            source = interim.node(e.from_node)
            if source.kind == KIND_PROMPT:
                prompt_node = source
            break
    if prompt_node is not None and len(prompt_node.payload.models) <= 1:
        widest: tuple[int, str] | None = None
        for variable in prompt_node.payload.template.variables:
            try:
                width = len(resolve_handle_values(interim, prompt_node, variable))
            except Exception:
                continue
            if widest is None or width > widest[0]:
                widest = (width, variable)
        if widest is not None:
            group_by = widest[1]
    nodes.append(
        Node(
            id=vis_id,
            kind=KIND_VIS,
            title="Results",
            payload=VisPayload(group_by=group_by, metric="pass_rate"),
        )
    )
    edges.append(
        Edge(
            from_node=evaluator.id,
            from_handle=OUTPUT_HANDLES[evaluator.kind],
            to_node=vis_id,
            to_handle="responses",
        )
    )


def _flow_identity(flow: Flow) -> str:
    digest = hashlib.sha256(serialize(replace(flow, id=""))).hexdigest()
    return f"flow-{digest[:12]}"


def assemble(
    intent: IntentSpec,
    catalog: NodeCatalog | None = None,
    gateway: LLMGateway | None = None,
    config: Config | None = None,
    on_progress: ProgressCallback | None = None,
    clock: Callable[[], str] | None = None,
    parallel: bool = True,
) -> AssembleResult:
    """plan -> generate -> connect -> layout -> (review) -> validated Flow.

    The flow id is a digest of the flow's own canonical serialization, so
    replayed generations are byte-identical end to end. When the reviewer
    is enabled and still fails after the replanning budget, ReviewExhausted
    carries the final flow and verdict so callers can keep it, flagged.
    """
    catalog = catalog or default_catalog()
    config = config or Config()
    if gateway is None:
        raise ValueError("assemble needs a gateway")
    if clock is None:
        clock = (lambda: REPLAY_TIMESTAMP) if gateway.mode in ("replay", "mock") else None

    def emit(phase: str, current: int = 0, total: int = 0) -> None:
        if on_progress is not None:
            on_progress(ProgressEvent(phase=phase, current=current, total=total))

    working_intent = intent
    verdict: ReviewVerdict | None = None
    plans_created = 0
    flow: Flow | None = None
    plan: Plan | None = None
    for attempt in range(config.max_review_loops + 1):
        emit("planning")
        plan = make_plan(working_intent, catalog, gateway, config)
        plans_created += 1
        nodes_by_task = _run_generation_tasks(
            plan,
            working_intent,
            gateway,
            config,
            emit=lambda i, n: emit("generating", i, n),
            parallel=parallel,
        )
        nodes = [nodes_by_task[t.id] for t in plan.tasks]
        emit("connecting")
        edges = connect(nodes, plan, catalog, gateway, config)
        _append_vis(nodes, edges, plan)
        flow = Flow(
            id="",
            name=intent.goal[:60],
            nodes=tuple(nodes),
            edges=tuple(edges),
            created_at=clock() if clock else _now_utc(),
            provenance="generated",
        )
        flow = layout(flow)
        flow = replace(flow, id=_flow_identity(flow))
        report = validate(flow, catalog)
        if not report.ok:
            raise AssembledFlowInvalid(report)
        if not config.reviewer_enabled:
            emit("done")
            return AssembleResult(flow=flow, plan=plan, plans_created=plans_created)
        emit("reviewing")
        verdict = review(flow, working_intent, gateway, config)
        if verdict.passed:
            emit("done")
            return AssembleResult(
                flow=flow, plan=plan, verdict=verdict, plans_created=plans_created
            )
        if attempt < config.max_review_loops and verdict.suggestion:
            working_intent = replace(
                working_intent,
                requirements=working_intent.requirements
                + (f"Reviewer feedback: {verdict.suggestion}",),
            )
        elif attempt < config.max_review_loops:
            working_intent = replace(
                working_intent,
                requirements=working_intent.requirements
                + tuple(f"Unmet criterion: {i.criterion} ({i.detail})" for i in verdict.issues),
            )
    assert flow is not None and verdict is not None
    raise ReviewExhausted(flow, verdict)


def _now_utc() -> str:
    import time

    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
