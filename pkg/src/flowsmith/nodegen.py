"""Task-specific agents: one Task in, one fully-populated Node out.

Each agent sees the task instructions verbatim plus the serialized
payloads of its dependency nodes, and nothing else from the transcript.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

from . import executor
from .config import Config
from .expr_lang import ExprError
from .flow_model import (
    KIND_CODE_EVALUATOR,
    KIND_LLM_SCORER,
    KIND_PROMPT,
    KIND_TEXT_FIELDS,
    CodeEvaluatorPayload,
    LLMScorerPayload,
    ModelRef,
    Node,
    PromptPayload,
    ScoreSchema,
    TextFieldsPayload,
    node_to_doc,
)
from .gateway import (
    ChatMessage,
    ChatRequest,
    LLMGateway,
    StructuredOutputFailure,
    closed_object_schema,
)
from .intent import IntentSpec
from .planner import Plan, Task
from .prompts import load_prompt
from .templates import MalformedTemplate, parse_template


class UnsatisfiableTemplate(Exception):
    """Generated prompt template references a variable no dependency supplies."""


class EvaluatorRejected(Exception):
    """Generated evaluator program failed the dry-run syntax check twice."""


@dataclass(frozen=True)
class GenContext:
    intent: IntentSpec
    plan: Plan
    completed: dict[str, Node] = field(default_factory=dict)

    def dependencies(self, task: Task) -> list[Node]:
        return [self.completed[dep] for dep in task.depends_on]


_TEXTFIELDS_SCHEMA = closed_object_schema(
    {
        "title": {"type": "string", "minLength": 1},
        "fields": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    }
)

_PROMPT_SCHEMA = closed_object_schema(
    {
        "title": {"type": "string", "minLength": 1},
        "template": {"type": "string", "minLength": 1},
        "models": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"provider": {"type": "string"}, "model": {"type": "string"}},
                "required": ["provider", "model"],
                "additionalProperties": False,
            },
        },
    },
    required=["title", "template"],
)

_EVALUATOR_SCHEMA = closed_object_schema(
    {
        "title": {"type": "string", "minLength": 1},
        "program": {"type": "string", "minLength": 1},
    }
)

_SCORER_SCHEMA = closed_object_schema(
    {
        "title": {"type": "string", "minLength": 1},
        "rubric_prompt": {"type": "string", "minLength": 1},
        "score_schema": {
            "type": "object",
            "properties": {
                "type": {"type": "string", "enum": ["boolean", "number", "categorical"]},
                "labels": {"type": "array", "items": {"type": "string"}},
            },
            "required": ["type"],
            "additionalProperties": False,
        },
    },
    required=["title", "rubric_prompt"],
)


def _task_request(task: Task, ctx: GenContext, config: Config, prompt_file: str) -> ChatRequest:
    deps = ctx.dependencies(task)
    parts = ["TASK INSTRUCTIONS:\n" + task.instructions]
    if deps:
        dep_docs = [node_to_doc(n) for n in deps]
        parts.append(
            "UPSTREAM NODES THIS NODE CONSUMES:\n"
            + json.dumps(dep_docs, indent=2, ensure_ascii=False, sort_keys=True)
        )
    profile = config.backend_profile()
    return ChatRequest(
        provider=profile.provider,
        model=profile.model,
        messages=(
            ChatMessage("system", load_prompt(prompt_file, config.prompts_dir)),
            ChatMessage("user", "\n\n".join(parts)),
        ),
        temperature=profile.temperature if profile.temperature is not None else config.agent_temperature,
        max_tokens=config.max_tokens,
    )


def _structured_with_post(
    gateway: LLMGateway,
    request: ChatRequest,
    schema: dict[str, Any],
    post: Callable[[dict[str, Any]], str | None],
) -> tuple[dict[str, Any], list[str]]:
    """Structured call plus one corrective retry for semantic postconditions.

    Returns (value, raw attempts); on persistent failure returns the last
    error message via exception from the caller-provided raise site.
    """
    result = gateway.complete_structured(request, schema)
    error = post(result.value)
    if error is None:
        return result.value, result.raw_attempts
    retry_request = request.with_messages(
        list(request.messages)
        + [
            ChatMessage("assistant", json.dumps(result.value, ensure_ascii=False)),
            ChatMessage("user", f"That output is not usable: {error}. Reply again with corrected JSON."),
        ]
    )
    retry = gateway.complete_structured(retry_request, schema)
    error = post(retry.value)
    if error is not None:
        raise _PostconditionFailed(error, result.raw_attempts + retry.raw_attempts)
    return retry.value, result.raw_attempts + retry.raw_attempts


class _PostconditionFailed(Exception):
    def __init__(self, reason: str, raw_attempts: list[str]) -> None:
        super().__init__(reason)
        self.reason = reason
        self.raw_attempts = raw_attempts


def gen_textfields(task: Task, ctx: GenContext, gateway: LLMGateway, config: Config) -> Node:
    if task.kind != KIND_TEXT_FIELDS:
        raise ValueError(f"task {task.id} is not a TextFields task")

    def post(value: dict[str, Any]) -> str | None:
        try:
            for raw in value["fields"]:
                parse_template(raw)
        except MalformedTemplate as exc:
            return f"field is not a valid template: {exc}"
        return None

    try:
        value, _ = _structured_with_post(
            gateway, _task_request(task, ctx, config, "nodegen/textfields/system.txt"), _TEXTFIELDS_SCHEMA, post
        )
    except _PostconditionFailed as exc:
        raise StructuredOutputFailure(exc.reason, exc.raw_attempts) from exc
    return Node(
        id=task.produces,
        kind=KIND_TEXT_FIELDS,
        title=value["title"],
        payload=TextFieldsPayload(fields=tuple(parse_template(f) for f in value["fields"])),
    )


def _models_from_preferences(intent: IntentSpec, config: Config) -> tuple[ModelRef, ...]:
    named = intent.preferences.get("models", "")
    refs = []
    for chunk in named.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "/" in chunk:
            provider, model = chunk.split("/", 1)
        else:
            provider, model = config.backend_profile().provider, chunk
        refs.append(ModelRef(provider=provider, model=model, temperature=config.flow_temperature))
    return tuple(refs)


def gen_prompt(task: Task, ctx: GenContext, gateway: LLMGateway, config: Config) -> Node:
    if task.kind != KIND_PROMPT:
        raise ValueError(f"task {task.id} is not a Prompt task")
    supplied = {n.title for n in ctx.dependencies(task)}

    def post(value: dict[str, Any]) -> str | None:
        try:
            template = parse_template(value["template"])
        except MalformedTemplate as exc:
            return f"template is malformed: {exc}"
        missing = [v for v in template.variables if v not in supplied]
        if missing:
            return (
                f"template references {missing} but upstream nodes only supply "
                f"{sorted(supplied)}; use only those names"
            )
        return None

    try:
        value, _ = _structured_with_post(
            gateway, _task_request(task, ctx, config, "nodegen/prompt/system.txt"), _PROMPT_SCHEMA, post
        )
    except _PostconditionFailed as exc:
        raise UnsatisfiableTemplate(exc.reason) from exc

    emitted = tuple(
        ModelRef(provider=m["provider"], model=m["model"], temperature=config.flow_temperature)
        for m in value.get("models", [])
    )
    models = emitted or _models_from_preferences(ctx.intent, config) or tuple(config.default_flow_models)
    return Node(
        id=task.produces,
        kind=KIND_PROMPT,
        title=value["title"],
        payload=PromptPayload(
            template=parse_template(value["template"]),
            models=models,
            samples_per_prompt=config.default_samples_per_prompt,
        ),
    )


def gen_code_evaluator(task: Task, ctx: GenContext, gateway: LLMGateway, config: Config) -> Node:
    if task.kind != KIND_CODE_EVALUATOR:
        raise ValueError(f"task {task.id} is not a CodeEvaluator task")
    language = config.evaluator_language

    def post(value: dict[str, Any]) -> str | None:
        try:
            executor.check_program(language, value["program"], config)
        except ExprError as exc:
            return f"program rejected by dry-run check: {exc}"
        return None

    try:
        value, _ = _structured_with_post(
            gateway,
            _task_request(task, ctx, config, "nodegen/code_evaluator/system.txt"),
            _EVALUATOR_SCHEMA,
            post,
        )
    except _PostconditionFailed as exc:
        raise EvaluatorRejected(exc.reason) from exc
    return Node(
        id=task.produces,
        kind=KIND_CODE_EVALUATOR,
        title=value["title"],
        payload=CodeEvaluatorPayload(language=language, program=value["program"]),
    )


def _judge_model(intent: IntentSpec, config: Config) -> ModelRef:
    named = intent.preferences.get("judge_model", "").strip()
    if named:
        if "/" in named:
            provider, model = named.split("/", 1)
        else:
            provider, model = config.backend_profile().provider, named
        return ModelRef(provider=provider, model=model, temperature=config.agent_temperature)
    return config.backend_model_ref()


def gen_llm_scorer(task: Task, ctx: GenContext, gateway: LLMGateway, config: Config) -> Node:
    if task.kind != KIND_LLM_SCORER:
        raise ValueError(f"task {task.id} is not an LLMScorer task")

    def post(value: dict[str, Any]) -> str | None:
        try:
            rubric = parse_template(value["rubric_prompt"])
        except MalformedTemplate as exc:
            return f"rubric is malformed: {exc}"
        if "response" not in rubric.variables:
            return "rubric_prompt must contain the {response} placeholder"
        return None

    try:
        value, _ = _structured_with_post(
            gateway, _task_request(task, ctx, config, "nodegen/llm_scorer/system.txt"), _SCORER_SCHEMA, post
        )
    except _PostconditionFailed as exc:
        raise StructuredOutputFailure(exc.reason, exc.raw_attempts) from exc

    schema_doc = value.get("score_schema") or {"type": "boolean", "labels": []}
    return Node(
        id=task.produces,
        kind=KIND_LLM_SCORER,
        title=value["title"],
        payload=LLMScorerPayload(
            rubric_prompt=parse_template(value["rubric_prompt"]),
            judge_model=_judge_model(ctx.intent, config),
            score_schema=ScoreSchema(
                type=schema_doc.get("type", "boolean"), labels=tuple(schema_doc.get("labels", []))
            ),
        ),
    )


GENERATORS: dict[str, Callable[[Task, GenContext, LLMGateway, Config], Node]] = {
    KIND_TEXT_FIELDS: gen_textfields,
    KIND_PROMPT: gen_prompt,
    KIND_CODE_EVALUATOR: gen_code_evaluator,
    KIND_LLM_SCORER: gen_llm_scorer,
}


def generate_node(task: Task, ctx: GenContext, gateway: LLMGateway, config: Config) -> Node:
    try:
        generator = GENERATORS[task.kind]
    except KeyError:
        raise ValueError(f"no task agent for kind '{task.kind}'") from None
    return generator(task, ctx, gateway, config)
