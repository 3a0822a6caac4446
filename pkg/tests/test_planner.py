import json

import pytest

from flowsmith.config import default_config
from flowsmith.flow_model import default_catalog
from flowsmith.gateway import LLMGateway, ScriptedTransport
from flowsmith.intent import IntentSpec
from flowsmith.planner import (
    Plan,
    PlanInvalid,
    Task,
    build_planner_prompt,
    make_plan,
    plan_from_doc,
    plan_to_doc,
    render_catalog,
    validate_plan,
)

CONFIG = default_config()
CATALOG = default_catalog()
INTENT = IntentSpec(goal="find the best prompt for professionalizing emails")


def plan_json(tasks, rationale="because"):
    return json.dumps({"rationale": rationale, "tasks": tasks})


def task_doc(task_id, kind, instructions="do the thing", depends_on=()):
    return {"id": task_id, "kind": kind, "instructions": instructions, "depends_on": list(depends_on)}


GOOD_PLAN = plan_json(
    [
        task_doc("inputs", "TextFields", "collect example emails, title the node 'email'"),
        task_doc("alts", "TextFields", "write 2 rewrite instructions referencing {email}", ["inputs"]),
        task_doc("ask", "Prompt", "prompt template '{instruction}' over two models", ["alts"]),
        task_doc("check", "CodeEvaluator", "check the rewrite is under 500 chars", ["ask"]),
    ]
)


def gw(*entries):
    return LLMGateway(mode="mock", transport=ScriptedTransport(list(entries)), retry_backoffs=())


def test_make_plan_returns_validated_plan():
    plan = make_plan(INTENT, CATALOG, gw(GOOD_PLAN), CONFIG)
    assert [t.kind for t in plan.tasks] == ["TextFields", "TextFields", "Prompt", "CodeEvaluator"]
    assert [t.produces for t in plan.tasks] == ["node-1", "node-2", "node-3", "node-4"]
    assert validate_plan(plan, CATALOG).ok


def test_prompt_comparison_shape():
    plan = make_plan(INTENT, CATALOG, gw(GOOD_PLAN), CONFIG)
    prompt_task = next(t for t in plan.tasks if t.kind == "Prompt")
    evaluator_task = next(t for t in plan.tasks if t.kind == "CodeEvaluator")
    assert prompt_task.id in evaluator_task.depends_on
    assert sum(1 for t in plan.tasks if t.kind == "TextFields") == 2


def test_unknown_kind_invalid_after_retry():
    bad = plan_json([task_doc("a", "Spreadsheet")])
    with pytest.raises(PlanInvalid) as exc:
        make_plan(INTENT, CATALOG, gw(bad, bad), CONFIG)
    assert "unknown_kind" in exc.value.report.rules()
    assert "Spreadsheet" in exc.value.report.summary()


def test_dependency_cycle_invalid():
    bad = plan_json(
        [
            task_doc("a", "TextFields", depends_on=["b"]),
            task_doc("b", "TextFields", depends_on=["a"]),
        ]
    )
    with pytest.raises(PlanInvalid) as exc:
        make_plan(INTENT, CATALOG, gw(bad, bad), CONFIG)
    assert "cycle" in exc.value.report.rules()


def test_corrective_retry_recovers():
    bad = plan_json([task_doc("a", "Spreadsheet")])
    transport = ScriptedTransport([bad, GOOD_PLAN])
    plan = make_plan(INTENT, CATALOG, LLMGateway(mode="mock", transport=transport), CONFIG)
    assert len(plan.tasks) == 4
    # the corrective turn mentioned the validation problem
    assert any("unknown_kind" in m.content for m in transport.requests[1].messages)


def test_empty_plan_violation():
    report = validate_plan(Plan(tasks=()), CATALOG)
    assert "empty_plan" in report.rules()


def test_duplicate_task_id_violation():
    plan = Plan(
        tasks=(
            Task(id="a", kind="TextFields", instructions="x"),
            Task(id="a", kind="Prompt", instructions="y"),
        )
    )
    assert "duplicate_id" in validate_plan(plan, CATALOG).rules()


def test_valid_four_task_plan_zero_violations():
    plan = make_plan(INTENT, CATALOG, gw(GOOD_PLAN), CONFIG)
    assert validate_plan(plan, CATALOG).violations == ()


def test_unordered_tasks_are_normalized():
    shuffled = plan_json(
        [
            task_doc("check", "CodeEvaluator", depends_on=["ask"]),
            task_doc("ask", "Prompt", depends_on=["inputs"]),
            task_doc("inputs", "TextFields"),
        ]
    )
    plan = make_plan(INTENT, CATALOG, gw(shuffled), CONFIG)
    order = [t.id for t in plan.tasks]
    assert order.index("inputs") < order.index("ask") < order.index("check")


def test_vis_tasks_dropped_from_plan():
    with_vis = plan_json(
        [
            task_doc("inputs", "TextFields"),
            task_doc("ask", "Prompt", depends_on=["inputs"]),
            task_doc("viz", "Vis", depends_on=["ask"]),
        ]
    )
    plan = make_plan(INTENT, CATALOG, gw(with_vis), CONFIG)
    assert all(t.kind != "Vis" for t in plan.tasks)


def test_planner_prompt_contains_catalog_verbatim():
    system, user = build_planner_prompt(INTENT, CATALOG, CONFIG)
    for entry in CATALOG.entries:
        assert entry.kind in user
        assert entry.description in user
    assert INTENT.goal in user


FEW_SHOT_MARKERS = ("example plan", "for example:", "few-shot", "sample plan", "### example", "e.g.")


def test_planner_prompt_has_no_few_shot_markers():
    system, user = build_planner_prompt(INTENT, CATALOG, CONFIG)
    combined = (system + "\n" + user).lower()
    for marker in FEW_SHOT_MARKERS:
        assert marker not in combined, f"marker {marker!r} found in planner prompt"


def test_prompt_construction_deterministic():
    assert build_planner_prompt(INTENT, CATALOG, CONFIG) == build_planner_prompt(INTENT, CATALOG, CONFIG)


def test_plan_doc_roundtrip():
    plan = make_plan(INTENT, CATALOG, gw(GOOD_PLAN), CONFIG)
    assert plan_from_doc(plan_to_doc(plan)) == plan


def test_empty_goal_rejected():
    with pytest.raises(ValueError):
        make_plan(IntentSpec(goal="  "), CATALOG, gw(GOOD_PLAN), CONFIG)
