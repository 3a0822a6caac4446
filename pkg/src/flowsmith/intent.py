"""Front-end requirements-gathering agent.

Keeps the evolving context record (goal, requirements, preferences),
turns each user input into record deltas plus a small question form, and
distills the record into the IntentSpec handed to the planner.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any

from .config import Config
from .gateway import ChatMessage, ChatRequest, GatewayError, LLMGateway, closed_object_schema
from .prompts import load_prompt

QUESTION_KINDS = ("goal_clarification", "requirements_exploration", "disambiguation")
MAX_QUESTIONS = 3
MAX_QUESTION_CHARS = 240


class AgentUnavailable(Exception):
    """Gateway failure during a dialogue turn; the state was not changed."""


class EmptyConversation(Exception):
    """finalize() needs at least one user message."""


@dataclass(frozen=True)
class Question:
    id: str
    kind: str
    text: str
    answer: str | None = None


@dataclass(frozen=True)
class QuestionForm:
    questions: tuple[Question, ...] = ()


@dataclass(frozen=True)
class FormAnswer:
    question_id: str
    question: str
    answer: str


@dataclass(frozen=True)
class FormAnswers:
    answers: tuple[FormAnswer, ...] = ()


@dataclass(frozen=True)
class Context:
    goal: str | None = None
    requirements: tuple[str, ...] = ()
    preferences: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ConversationState:
    session_id: str
    history: tuple[ChatMessage, ...] = ()
    context: Context = field(default_factory=Context)


@dataclass(frozen=True)
class AssistantTurn:
    message: str
    form: QuestionForm
    coverage_hint: str


@dataclass(frozen=True)
class IntentSpec:
    goal: str
    requirements: tuple[str, ...] = ()
    preferences: dict[str, str] = field(default_factory=dict)
    transcript_digest: str = ""


_EXTRACT_SCHEMA = closed_object_schema(
    {
        "goal": {"type": ["string", "null"]},
        "new_requirements": {"type": "array", "items": {"type": "string"}},
        "preferences": {"type": "object", "additionalProperties": {"type": "string"}},
    }
)

_QUESTIONS_SCHEMA = closed_object_schema(
    {
        "message": {"type": "string"},
        "questions": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "kind": {"type": "string", "enum": list(QUESTION_KINDS)},
                    "text": {"type": "string"},
                },
                "required": ["kind", "text"],
                "additionalProperties": False,
            },
        },
    }
)


def truncate_question(text: str, cap: int = MAX_QUESTION_CHARS) -> str:
    """Cut over-long question texts at a word boundary, adding an ellipsis."""
    if len(text) <= cap:
        return text
    cut = text[: cap - 1]
    space = cut.rfind(" ")
    if space > 0:
        cut = cut[:space]
    return cut.rstrip() + "…"


def coverage_hint(context: Context) -> str:
    filled = sum(
        1 for present in (context.goal, context.requirements, context.preferences) if present
    )
    return {0: "low", 1: "low", 2: "medium", 3: "high"}[filled]


def _render_input(user_input: str | FormAnswers) -> tuple[str, str]:
    """Return (text for the context record, text stored in history)."""
    if isinstance(user_input, str):
        stripped = user_input.strip()
        if not stripped:
            raise ValueError("empty user input")
        return stripped, stripped
    lines = [f"Q: {a.question}\nA: {a.answer}" for a in user_input.answers if a.answer.strip()]
    if not lines:
        text = "(The user submitted the form without answering any question.)"
        return text, text
    rendered = "\n".join(lines)
    return rendered, rendered


def _record_block(context: Context) -> str:
    record = {
        "goal": context.goal,
        "requirements": list(context.requirements),
        "preferences": context.preferences,
    }
    return "```record\n" + json.dumps(record, indent=2, ensure_ascii=False, sort_keys=True) + "\n```"


def _agent_request(config: Config, system: str, user: str) -> ChatRequest:
    profile = config.frontend_profile()
    return ChatRequest(
        provider=profile.provider,
        model=profile.model,
        messages=(ChatMessage("system", system), ChatMessage("user", user)),
        temperature=profile.temperature if profile.temperature is not None else config.agent_temperature,
        max_tokens=config.max_tokens,
    )


def _merge_requirements(existing: tuple[str, ...], new: list[str]) -> tuple[str, ...]:
    seen = {r.strip().lower() for r in existing}
    out = list(existing)
    for req in new:
        req = req.strip()
        if req and req.lower() not in seen:
            seen.add(req.lower())
            out.append(req)
    return tuple(out)


def advance(
    state: ConversationState,
    user_input: str | FormAnswers,
    gateway: LLMGateway,
    config: Config,
) -> tuple[ConversationState, AssistantTurn]:
    """One dialogue turn: fold the input into the record, ask new questions.

    Two structured gateway calls per turn (extraction, then question
    generation) for schema reliability. Never emits more than three
    questions regardless of what the model returns; over-long question
    texts are truncated, never passed through raw. On any gateway error
    the original state is returned untouched inside AgentUnavailable.
    """
    extract_text, history_text = _render_input(user_input)
    try:
        extraction = gateway.complete_structured(
            _agent_request(
                config,
                load_prompt("intent/extract_context.txt", config.prompts_dir),
                _record_block(state.context) + "\n\nNEW INPUT:\n" + extract_text,
            ),
            _EXTRACT_SCHEMA,
        ).value
        context = Context(
            goal=extraction.get("goal") or state.context.goal,
            requirements=_merge_requirements(
                state.context.requirements, extraction.get("new_requirements", [])
            ),
            preferences={**state.context.preferences, **extraction.get("preferences", {})},
        )
        asked = gateway.complete_structured(
            _agent_request(
                config,
                load_prompt("intent/ask_questions.txt", config.prompts_dir),
                _record_block(context) + "\n\nLATEST USER INPUT:\n" + extract_text,
            ),
            _QUESTIONS_SCHEMA,
        ).value
    except GatewayError as exc:
        raise AgentUnavailable(str(exc)) from exc

    turn = len(state.history) // 2 + 1
    questions = tuple(
        Question(id=f"t{turn}-q{i + 1}", kind=q["kind"], text=truncate_question(q["text"]))
        for i, q in enumerate(asked.get("questions", [])[:MAX_QUESTIONS])
    )
    message = asked.get("message", "").strip()
    assistant_content = message
    if questions:
        assistant_content += "\n" + "\n".join(f"{q.id}. {q.text}" for q in questions)
    new_state = replace(
        state,
        history=state.history
        + (ChatMessage("user", history_text), ChatMessage("assistant", assistant_content)),
        context=context,
    )
    return new_state, AssistantTurn(
        message=message, form=QuestionForm(questions), coverage_hint=coverage_hint(context)
    )


def transcript_digest(history: tuple[ChatMessage, ...]) -> str:
    blob = json.dumps(
        [{"role": m.role, "content": m.content} for m in history],
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def finalize(state: ConversationState) -> IntentSpec:
    """Distill the record into the planner's input. Pure; no gateway calls.

    Zero-shot path: with no extracted goal, the first user message is the
    goal verbatim.
    """
    user_messages = [m for m in state.history if m.role == "user"]
    if not user_messages:
        raise EmptyConversation(f"session {state.session_id} has no user message")
    return IntentSpec(
        goal=state.context.goal or user_messages[0].content,
        requirements=state.context.requirements,
        preferences=dict(state.context.preferences),
        transcript_digest=transcript_digest(state.history),
    )


def spec_from_goal(goal: str) -> IntentSpec:
    """Headless zero-shot intent: a single goal string, nothing else."""
    state = ConversationState(session_id="headless", history=(ChatMessage("user", goal),))
    return finalize(state)


def state_to_doc(state: ConversationState) -> dict[str, Any]:
    return {
        "session_id": state.session_id,
        "history": [{"role": m.role, "content": m.content} for m in state.history],
        "context": {
            "goal": state.context.goal,
            "requirements": list(state.context.requirements),
            "preferences": state.context.preferences,
        },
    }


def state_from_doc(doc: dict[str, Any]) -> ConversationState:
    ctx = doc.get("context", {})
    return ConversationState(
        session_id=doc["session_id"],
        history=tuple(ChatMessage(m["role"], m["content"]) for m in doc.get("history", [])),
        context=Context(
            goal=ctx.get("goal"),
            requirements=tuple(ctx.get("requirements", [])),
            preferences=dict(ctx.get("preferences", {})),
        ),
    )
