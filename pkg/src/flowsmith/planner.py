"""Planner agent: IntentSpec + node catalog -> validated Plan of tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

from .config import Config
from .flow_model import KIND_VIS, NodeCatalog, ValidationReport, Violation
from .gateway import ChatMessage, ChatRequest, LLMGateway, closed_object_schema
from .intent import IntentSpec
from .prompts import load_prompt


class PlanInvalid(Exception):
    def __init__(self, report: ValidationReport) -> None:
        super().__init__(f"plan failed validation: {report.summary()}")
        self.report = report


@dataclass(frozen=True)
class Task:
    id: str
    kind: str
    instructions: str
    depends_on: tuple[str, ...] = ()
    produces: str = ""


@dataclass(frozen=True)
class Plan:
    tasks: tuple[Task, ...] = ()
    rationale: str = ""

    def task(self, task_id: str) -> Task:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise KeyError(task_id)


_PLAN_SCHEMA = closed_object_schema(
    {
        "rationale": {"type": "string"},
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"type": "string"},
                    "instructions": {"type": "string"},
                    "depends_on": {"type": "array", "items": {"type": "string"}},
                },
                "required": ["id", "kind", "instructions", "depends_on"],
                "additionalProperties": False,
            },
        },
    }
)


def render_catalog(catalog: NodeCatalog) -> str:
    """The catalog as prompt text: names, descriptions, connection rules."""
    lines = ["NODE CATALOG"]
    for entry in catalog.entries:
        lines.append(f"- {entry.kind} ({entry.display_name}): {entry.description}")
        if entry.allowed_incoming:
            rules = ", ".join(f"{kind} into {handle} handle" for kind, handle in entry.allowed_incoming)
            lines.append(f"  accepts: {rules}")
        else:
            lines.append("  accepts: nothing (source node)")
        if entry.allowed_outgoing:
            rules = ", ".join(f"{kind}.{handle}" for kind, handle in entry.allowed_outgoing)
            lines.append(f"  feeds: {rules}")
        else:
            lines.append("  feeds: nothing (sink node)")
    return "\n".join(lines)


def render_intent(intent: IntentSpec) -> str:
    doc = {
        "goal": intent.goal,
        "requirements": list(intent.requirements),
        "preferences": intent.preferences,
    }
    return "USER INTENT\n" + json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True)


def build_planner_prompt(intent: IntentSpec, catalog: NodeCatalog, config: Config) -> tuple[str, str]:
    """(system, user) prompt pair; deterministic in its inputs.

    Deliberately contains no example plans: few-shot samples here caused
    the planner to copy their shape instead of the user's intent.
    """
    system = load_prompt("planner/system.txt", config.prompts_dir)
    user = render_intent(intent) + "\n\n" + render_catalog(catalog)
    return system, user


def validate_plan(plan: Plan, catalog: NodeCatalog) -> ValidationReport:
    """Pure structural checks; violations are data."""
    violations: list[Violation] = []
    if not plan.tasks:
        violations.append(Violation("empty_plan", "plan", "plan has no tasks"))
        return ValidationReport(tuple(violations))
    seen: set[str] = set()
    for task in plan.tasks:
        if task.id in seen:
            violations.append(Violation("duplicate_id", task.id, "task id reused"))
        seen.add(task.id)
        if catalog.entry(task.kind) is None:
            violations.append(Violation("unknown_kind", task.id, f"unknown kind '{task.kind}'"))
        if not task.instructions.strip():
            violations.append(Violation("empty_instructions", task.id, "task has no instructions"))
        for dep in task.depends_on:
            if dep not in {t.id for t in plan.tasks}:
                violations.append(Violation("unknown_dependency", task.id, f"depends on unknown '{dep}'"))
    violations.extend(_plan_cycles(plan))
    return ValidationReport(tuple(violations))


def _plan_cycles(plan: Plan) -> list[Violation]:
    ids = {t.id for t in plan.tasks}
    indegree = {t.id: 0 for t in plan.tasks}
    for t in plan.tasks:
        for dep in t.depends_on:
            if dep in ids and dep != t.id:
                indegree[t.id] += 1
    ready = [tid for tid, d in indegree.items() if d == 0]
    done: set[str] = set()
    while ready:
        tid = ready.pop()
        done.add(tid)
        for t in plan.tasks:
            if tid in t.depends_on and t.id not in done:
                indegree[t.id] -= 1
                if indegree[t.id] == 0:
                    ready.append(t.id)
    if len(done) != len(ids):
        stuck = sorted(ids - done)
        return [Violation("cycle", ",".join(stuck), "tasks form a dependency cycle")]
    cyclic = [t.id for t in plan.tasks if t.id in t.depends_on]
    return [Violation("cycle", tid, "task depends on itself") for tid in cyclic]


def _normalize(doc: dict[str, Any]) -> Plan:
    """Shape the raw structured reply into a Plan.

    Tasks are re-sorted topologically (stable in emitted order) so that
    depends_on only ever points backwards; visualization tasks are dropped
    because the assembler attaches the Vis node itself; `produces` node ids
    are reserved here as node-1..node-n.
    """
    raw_tasks = [t for t in doc.get("tasks", []) if t.get("kind") != KIND_VIS]
    dropped = {t["id"] for t in doc.get("tasks", []) if t.get("kind") == KIND_VIS}
    tasks = [
        Task(
            id=t["id"],
            kind=t["kind"],
            instructions=t["instructions"],
            depends_on=tuple(d for d in t.get("depends_on", []) if d not in dropped),
        )
        for t in raw_tasks
    ]
    order = _stable_topo(tasks)
    return Plan(
        tasks=tuple(replace(t, produces=f"node-{i + 1}") for i, t in enumerate(order)),
        rationale=doc.get("rationale", ""),
    )


def _stable_topo(tasks: list[Task]) -> list[Task]:
    ids = {t.id for t in tasks}
    remaining = list(tasks)
    out: list[Task] = []
    placed: set[str] = set()
    while remaining:
        progressed = False
        for t in list(remaining):
            if all(dep in placed or dep not in ids for dep in t.depends_on):
                out.append(t)
                placed.add(t.id)
                remaining.remove(t)
                progressed = True
        if not progressed:  # cycle; keep emitted order and let validation flag it
            out.extend(remaining)
            break
    return out


def make_plan(
    intent: IntentSpec,
    catalog: NodeCatalog,
    gateway: LLMGateway,
    config: Config,
) -> Plan:
    """One structured planner call, plus one corrective retry on an invalid plan."""
    if not intent.goal.strip():
        raise ValueError("intent goal is empty")
    system, user = build_planner_prompt(intent, catalog, config)
    profile = config.backend_profile()
    request = ChatRequest(
        provider=profile.provider,
        model=profile.model,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
        temperature=profile.temperature if profile.temperature is not None else config.agent_temperature,
        max_tokens=config.max_tokens,
    )
    result = gateway.complete_structured(request, _PLAN_SCHEMA)
    plan = _normalize(result.value)
    report = validate_plan(plan, catalog)
    if report.ok:
        return plan
    correction = (
        "That plan failed validation: "
        + report.summary()
        + ". Produce a corrected plan as a JSON object with the same shape."
    )
    retry_request = request.with_messages(
        list(request.messages)
        + [
            ChatMessage("assistant", json.dumps(result.value, ensure_ascii=False)),
            ChatMessage("user", correction),
        ]
    )
    retry = gateway.complete_structured(retry_request, _PLAN_SCHEMA)
    plan = _normalize(retry.value)
    report = validate_plan(plan, catalog)
    if not report.ok:
        raise PlanInvalid(report)
    return plan


def plan_to_doc(plan: Plan) -> dict[str, Any]:
    return {
        "rationale": plan.rationale,
        "tasks": [
            {
                "id": t.id,
                "kind": t.kind,
                "instructions": t.instructions,
                "depends_on": list(t.depends_on),
                "produces": t.produces,
            }
            for t in plan.tasks
        ],
    }


def plan_from_doc(doc: dict[str, Any]) -> Plan:
    return Plan(
        rationale=doc.get("rationale", ""),
        tasks=tuple(
            Task(
                id=t["id"],
                kind=t["kind"],
                instructions=t["instructions"],
                depends_on=tuple(t.get("depends_on", [])),
                produces=t.get("produces", ""),
            )
            for t in doc.get("tasks", [])
        ),
    )
