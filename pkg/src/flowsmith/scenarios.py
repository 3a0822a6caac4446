"""Bundled end-to-end fixture scenarios.

Each scenario pairs a goal with a deterministic scripted backend
(RoutedTransport rules) so the full generation pipeline can be recorded
once into cassettes and replayed forever after: a zero-shot persona/math
comparison, two prompt-comparison tasks, and a chat session that
exercises the dialogue agent. Also home of the six-flow grading corpus.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable

from .assembler import assemble
from .config import Config, default_config
from .executor import run_flow
from .flow_model import (
    CodeEvaluatorPayload,
    Edge,
    Flow,
    LLMScorerPayload,
    ModelRef,
    Node,
    PromptPayload,
    ScoreSchema,
    TextFieldsPayload,
    serialize,
)
from .gateway import CassetteStore, ChatRequest, LLMGateway, RoutedTransport
from .intent import ConversationState, FormAnswer, FormAnswers, advance, finalize, spec_from_goal
from .templates import parse_template

FIXED_CLOCK = "2025-01-01T00:00:00Z"

GOAL_FIG1 = (
    "investigate how different personas can affect an LLM's response to a complex math question"
)
GOAL_EMAIL = (
    "design an automated tool to help people professionalize their emails for work contexts; "
    "set up a workflow that helps find the best prompt"
)
GOAL_TWEET = (
    "build a tool that summarizes long text paragraphs into concise, catchy tweets limited to "
    "144 characters; set up a workflow that helps find the best prompt"
)

SQRT_PI_PROGRAM = r"re_search('√π|sqrt\\(pi\\)|\\\\sqrt\\{\\\\pi\\}', response.text)"

FIG1_MODELS = [
    {"provider": "openai", "model": "gpt-4o"},
    {"provider": "anthropic", "model": "claude-3-5-sonnet"},
    {"provider": "openai", "model": "gpt-4o-mini"},
    {"provider": "anthropic", "model": "claude-3-haiku"},
]


# ---------------------------------------------------------------------------
# request matchers


def _system(request: ChatRequest) -> str:
    return request.messages[0].content if request.messages else ""


def _user(request: ChatRequest) -> str:
    return request.messages[-1].content if request.messages else ""


def _is_planner(request: ChatRequest) -> bool:
    return _system(request).startswith("You are the planner")


def _is_textfields_gen(request: ChatRequest) -> bool:
    return "one TextFields node" in _system(request)


def _is_prompt_gen(request: ChatRequest) -> bool:
    return "one Prompt node" in _system(request)


def _is_evaluator_gen(request: ChatRequest) -> bool:
    return "one Code Evaluator node" in _system(request)


def _is_scorer_gen(request: ChatRequest) -> bool:
    return "one LLM Scorer node" in _system(request)


def _is_extract(request: ChatRequest) -> bool:
    return _system(request).startswith("You maintain a running record")


def _is_questions(request: ChatRequest) -> bool:
    return _system(request).startswith("You are the requirements-gathering assistant")


def _is_flow_model_call(request: ChatRequest) -> bool:
    # Prompt-node executions carry a single user message, agents a system+user pair
    return len(request.messages) == 1


def _wants(substring: str) -> Callable[[ChatRequest], bool]:
    return lambda request: substring in _user(request)


def _both(*preds: Callable[[ChatRequest], bool]) -> Callable[[ChatRequest], bool]:
    return lambda request: all(p(request) for p in preds)


# ---------------------------------------------------------------------------
# scenario scripts


def _fig1_plan() -> dict:
    return {
        "rationale": (
            "Vary the persona, hold the math question fixed, fan out across four models, "
            "and check each answer for the exact closed form."
        ),
        "tasks": [
            {
                "id": "personas",
                "kind": "TextFields",
                "instructions": (
                    "Create a TextFields node titled 'persona' with at least three distinct "
                    "personas that would approach a hard math question differently."
                ),
                "depends_on": [],
            },
            {
                "id": "question",
                "kind": "TextFields",
                "instructions": (
                    "Create a TextFields node titled 'question' holding one hard math question "
                    "about a classic definite integral with a known closed-form answer."
                ),
                "depends_on": [],
            },
            {
                "id": "ask",
                "kind": "Prompt",
                "instructions": (
                    "Create a Prompt node whose template speaks as {persona} and poses "
                    "{question}; compare across four different LLMs."
                ),
                "depends_on": ["personas", "question"],
            },
            {
                "id": "check",
                "kind": "CodeEvaluator",
                "instructions": (
                    "Create a Code Evaluator that checks whether the response contains the "
                    "exact closed-form answer, the square root of pi, accepting the unicode, "
                    "ascii, and latex spellings via one regex."
                ),
                "depends_on": ["ask"],
            },
        ],
    }


def _fig1_model_reply(request: ChatRequest) -> str:
    answers = {
        "gpt-4o": "Completing the square and switching to polar coordinates gives √π.",
        "claude-3-5-sonnet": "The Gaussian integral evaluates to √π exactly.",
        "gpt-4o-mini": "Numerically about 1.7725, i.e. sqrt(pi).",
        "claude-3-haiku": "The integral is approximately 1.7724538509.",
    }
    return answers.get(request.model, "I am not sure.")


def fig1_transport() -> RoutedTransport:
    return RoutedTransport(
        rules=[
            (_is_planner, _fig1_plan()),
            (
                _both(_is_textfields_gen, _wants("persona")),
                {
                    "title": "persona",
                    "fields": [
                        "a meticulous mathematics professor who insists on rigor",
                        "a creative high-school teacher who explains with pictures",
                        "a terse competitive programmer who answers in one line",
                    ],
                },
            ),
            (
                _both(_is_textfields_gen, _wants("math question")),
                {
                    "title": "question",
                    "fields": [
                        "Evaluate the Gaussian integral of e^(-x^2) over the whole real "
                        "line and state the exact closed-form value."
                    ],
                },
            ),
            (
                _is_prompt_gen,
                {
                    "title": "ask",
                    "template": (
                        "You are {persona}. Solve this problem and state the final answer "
                        "clearly: {question}"
                    ),
                    "models": FIG1_MODELS,
                },
            ),
            (_is_evaluator_gen, {"title": "check for √π", "program": SQRT_PI_PROGRAM}),
            (_is_flow_model_call, _fig1_model_reply),
        ]
    )


def _email_plan() -> dict:
    return {
        "rationale": (
            "Hold sample emails fixed, vary the rewrite instruction as chained templates, "
            "and have a judge score professionalism."
        ),
        "tasks": [
            {
                "id": "emails",
                "kind": "TextFields",
                "instructions": (
                    "Create a TextFields node titled 'email' with two short, informal "
                    "workplace emails that need professionalizing."
                ),
                "depends_on": [],
            },
            {
                "id": "instructions",
                "kind": "TextFields",
                "instructions": (
                    "Create a TextFields node titled 'instruction' with two alternative "
                    "rewrite prompts, each referencing the email as {email}."
                ),
                "depends_on": ["emails"],
            },
            {
                "id": "ask",
                "kind": "Prompt",
                "instructions": (
                    "Create a Prompt node whose template is exactly the chained "
                    "{instruction} variable, queried against two models."
                ),
                "depends_on": ["instructions"],
            },
            {
                "id": "judge",
                "kind": "LLMScorer",
                "instructions": (
                    "Create an LLM Scorer that asks a judge whether the rewritten email is "
                    "professional enough to send at work, true or false."
                ),
                "depends_on": ["ask"],
            },
        ],
    }


def email_transport() -> RoutedTransport:
    return RoutedTransport(
        rules=[
            (_is_planner, _email_plan()),
            (
                _both(_is_textfields_gen, _wants("informal")),
                {
                    "title": "email",
                    "fields": [
                        "hey can u send me the numbers from last week?? need them asap thx",
                        "yo quick q - r we still on for the client thing tmrw or what",
                    ],
                },
            ),
            (
                _both(_is_textfields_gen, _wants("rewrite")),
                {
                    "title": "instruction",
                    "fields": [
                        "Rewrite the following email so it is professional and courteous "
                        "while keeping its meaning:\n{email}",
                        "Polish this email for a formal workplace, fixing tone and "
                        "grammar:\n{email}",
                    ],
                },
            ),
            (
                _is_prompt_gen,
                {
                    "title": "rewrite",
                    "template": "{instruction}",
                    "models": [
                        {"provider": "openai", "model": "gpt-4o"},
                        {"provider": "anthropic", "model": "claude-3-5-sonnet"},
                    ],
                },
            ),
            (
                _is_scorer_gen,
                {
                    "title": "professional?",
                    "rubric_prompt": (
                        "Decide whether this rewritten email is professional enough to send "
                        "in a workplace. Reply with exactly true or false.\n\n{response}"
                    ),
                    "score_schema": {"type": "boolean", "labels": []},
                },
            ),
        ]
    )


def _tweet_plan() -> dict:
    return {
        "rationale": (
            "Keep one long paragraph fixed, vary the summarization prompt via chained "
            "templates, and check the 144-character limit mechanically."
        ),
        "tasks": [
            {
                "id": "paragraphs",
                "kind": "TextFields",
                "instructions": (
                    "Create a TextFields node titled 'text' with one long paragraph that "
                    "needs summarizing."
                ),
                "depends_on": [],
            },
            {
                "id": "prompts",
                "kind": "TextFields",
                "instructions": (
                    "Create a TextFields node titled 'prompts' with two alternative "
                    "summarization prompts, each referencing the paragraph as {text}."
                ),
                "depends_on": ["paragraphs"],
            },
            {
                "id": "ask",
                "kind": "Prompt",
                "instructions": (
                    "Create a Prompt node whose template is exactly the chained {prompts} "
                    "variable, queried against two models."
                ),
                "depends_on": ["prompts"],
            },
            {
                "id": "check",
                "kind": "CodeEvaluator",
                "instructions": (
                    "Create a Code Evaluator that checks the response is at most 144 "
                    "characters long."
                ),
                "depends_on": ["ask"],
            },
        ],
    }


def tweet_transport() -> RoutedTransport:
    return RoutedTransport(
        rules=[
            (_is_planner, _tweet_plan()),
            (
                _both(_is_textfields_gen, _wants("long paragraph")),
                {
                    "title": "text",
                    "fields": [
                        "The city council met for six hours on Tuesday to debate the new "
                        "transit plan, hearing from dozens of residents, and ultimately "
                        "deferred the final vote to next quarter amid unresolved budget "
                        "concerns and disputes over the proposed light-rail routing."
                    ],
                },
            ),
            (
                _both(_is_textfields_gen, _wants("summarization prompts")),
                {
                    "title": "prompts",
                    "fields": [
                        "Summarize {text} as a catchy tweet under 144 characters.",
                        "Condense {text} into one short, punchy tweet.",
                    ],
                },
            ),
            (
                _is_prompt_gen,
                {
                    "title": "tweet",
                    "template": "{prompts}",
                    "models": [
                        {"provider": "openai", "model": "gpt-4o"},
                        {"provider": "anthropic", "model": "claude-3-5-sonnet"},
                    ],
                },
            ),
            (
                _is_evaluator_gen,
                {"title": "under 144 chars", "program": "len(response.text) <= 144"},
            ),
        ]
    )


def session_transport() -> RoutedTransport:
    """The fig1 pipeline reached through two dialogue turns instead of zero-shot."""
    rules = [
        (
            _both(_is_extract, _wants("Gaussian integral")),
            {
                "goal": None,
                "new_requirements": ["Use the Gaussian integral as the test problem"],
                "preferences": {},
            },
        ),
        (
            _is_extract,
            {
                "goal": "Compare how different personas change an LLM's answer to a hard math question",
                "new_requirements": [],
                "preferences": {},
            },
        ),
        (
            _both(_is_questions, _wants("Gaussian integral as the test problem")),
            {"message": "Great — ready to generate whenever you are.", "questions": []},
        ),
        (
            _is_questions,
            {
                "message": "Happy to help. A couple of details first:",
                "questions": [
                    {
                        "kind": "goal_clarification",
                        "text": "Which math problem should the pipeline use?",
                    },
                    {
                        "kind": "requirements_exploration",
                        "text": "How many different models do you want to compare?",
                    },
                ],
            },
        ),
    ]
    return RoutedTransport(rules=rules + fig1_transport()._rules)


SCENARIOS: dict[str, Callable[[], RoutedTransport]] = {
    "fig1": fig1_transport,
    "email": email_transport,
    "tweet": tweet_transport,
    "session": session_transport,
}

SCENARIO_GOALS = {"fig1": GOAL_FIG1, "email": GOAL_EMAIL, "tweet": GOAL_TWEET, "session": GOAL_FIG1}


def recording_gateway(name: str, directory: Path, config: Config | None = None) -> LLMGateway:
    config = config or default_config()
    return LLMGateway(
        mode="record",
        transport=SCENARIOS[name](),
        cassettes=CassetteStore(directory, session=name),
        retry_backoffs=(),
        clock=lambda: FIXED_CLOCK,
    )


def record_scenario(name: str, directory: Path, config: Config | None = None) -> Flow:
    """Drive the scenario's full pipeline once in record mode."""
    config = config or default_config()
    gateway = recording_gateway(name, directory, config)
    if name == "session":
        state = ConversationState(session_id="fixture")
        state, turn = advance(state, SCENARIO_GOALS[name], gateway, config)
        # also record the generate-right-away branch (no form answered)
        assemble(
            finalize(state), gateway=gateway, config=config, clock=lambda: FIXED_CLOCK, parallel=False
        )
        answer = FormAnswer(
            question_id=turn.form.questions[0].id,
            question=turn.form.questions[0].text,
            answer="Use the Gaussian integral.",
        )
        state, _turn = advance(state, FormAnswers(answers=(answer,)), gateway, config)
        intent = finalize(state)
    else:
        intent = spec_from_goal(SCENARIO_GOALS[name])
    result = assemble(
        intent, gateway=gateway, config=config, clock=lambda: FIXED_CLOCK, parallel=False
    )
    if name in ("fig1", "session"):
        run_flow(result.flow, gateway, config)
    return result.flow


# ---------------------------------------------------------------------------
# grading corpus


def _tf(node_id: str, title: str, fields: list[str]) -> Node:
    return Node(
        id=node_id,
        kind="TextFields",
        title=title,
        payload=TextFieldsPayload(fields=tuple(parse_template(f) for f in fields)),
    )


def _prompt(node_id: str, title: str, template: str, n_models: int = 2) -> Node:
    models = tuple(
        ModelRef(provider="openai" if i % 2 == 0 else "anthropic", model=f"model-{i + 1}", temperature=0.7)
        for i in range(n_models)
    )
    return Node(
        id=node_id,
        kind="Prompt",
        title=title,
        payload=PromptPayload(template=parse_template(template), models=models),
    )


def _eval(node_id: str, program: str) -> Node:
    return Node(
        id=node_id,
        kind="CodeEvaluator",
        title="check",
        payload=CodeEvaluatorPayload(language="expr", program=program),
    )


def _edge(a: str, ah: str, b: str, bh: str) -> Edge:
    return Edge(from_node=a, from_handle=ah, to_node=b, to_handle=bh)


def _corpus_flow(flow_id: str, name: str, nodes: list[Node], edges: list[Edge]) -> Flow:
    return Flow(
        id=flow_id,
        name=name,
        nodes=tuple(nodes),
        edges=tuple(edges),
        created_at=FIXED_CLOCK,
        provenance="manual",
    )


def corpus_flows() -> list[tuple[str, Flow]]:
    """Six graded fixtures: designed totals 3/6 compares, 5/6 runs, 3/6 chaining."""
    flows: list[tuple[str, Flow]] = []

    # 1. chained tweet comparison: yes / yes / yes
    flows.append(
        (
            "01-tweet-chained.flow.json",
            _corpus_flow(
                "corpus-tweet",
                "tweet summarization, chained prompts",
                [
                    _tf("node-1", "text", ["A very long paragraph about municipal transit planning."]),
                    _tf(
                        "node-2",
                        "prompts",
                        [
                            "Summarize {text} as a catchy tweet under 144 characters.",
                            "Condense {text} into one short, punchy tweet.",
                        ],
                    ),
                    _prompt("node-3", "tweet", "{prompts}"),
                    _eval("node-4", "len(response.text) <= 144"),
                ],
                [
                    _edge("node-1", "fields", "node-2", "text"),
                    _edge("node-2", "fields", "node-3", "prompts"),
                    _edge("node-3", "responses", "node-4", "responses"),
                ],
            ),
        )
    )

    # 2. chained email rewrite with a judge: yes / yes / yes
    flows.append(
        (
            "02-email-chained.flow.json",
            _corpus_flow(
                "corpus-email",
                "email professionalization, chained prompts",
                [
                    _tf("node-1", "email", ["hey boss need the report asap", "yo r we meeting tmrw"]),
                    _tf(
                        "node-2",
                        "instruction",
                        [
                            "Rewrite professionally, keeping the meaning:\n{email}",
                            "Make this email formal and courteous:\n{email}",
                        ],
                    ),
                    _prompt("node-3", "rewrite", "{instruction}"),
                    Node(
                        id="node-4",
                        kind="LLMScorer",
                        title="professional?",
                        payload=LLMScorerPayload(
                            rubric_prompt=parse_template(
                                "Is this email professional? Reply true or false.\n\n{response}"
                            ),
                            judge_model=ModelRef(provider="openai", model="gpt-4o", temperature=0.0),
                            score_schema=ScoreSchema(type="boolean"),
                        ),
                    ),
                ],
                [
                    _edge("node-1", "fields", "node-2", "email"),
                    _edge("node-2", "fields", "node-3", "instruction"),
                    _edge("node-3", "responses", "node-4", "responses"),
                ],
            ),
        )
    )

    # 3. chained code-translation comparison: yes / yes / yes
    flows.append(
        (
            "03-code-translation-chained.flow.json",
            _corpus_flow(
                "corpus-translate",
                "code translation, chained prompts",
                [
                    _tf("node-1", "snippet", ["const add = (a, b) => a + b;"]),
                    _tf(
                        "node-2",
                        "request",
                        [
                            "Translate this JavaScript to Python, preserving behavior:\n{snippet}",
                            "Port the following JavaScript function to idiomatic Python:\n{snippet}",
                        ],
                    ),
                    _prompt("node-3", "translate", "{request}"),
                    _eval("node-4", "contains(response.text, 'def ')"),
                ],
                [
                    _edge("node-1", "fields", "node-2", "snippet"),
                    _edge("node-2", "fields", "node-3", "request"),
                    _edge("node-3", "responses", "node-4", "responses"),
                ],
            ),
        )
    )

    # 4. single prompt, no comparison: no / yes / no
    flows.append(
        (
            "04-single-prompt.flow.json",
            _corpus_flow(
                "corpus-single",
                "one prompt, one model axis",
                [
                    _tf("node-1", "topic", ["volcanoes"]),
                    _prompt("node-2", "ask", "Tell me about {topic}."),
                    _eval("node-3", "len(response.text) > 0"),
                ],
                [
                    _edge("node-1", "fields", "node-2", "topic"),
                    _edge("node-2", "responses", "node-3", "responses"),
                ],
            ),
        )
    )

    # 5. input variation without prompt comparison: no / yes / no
    flows.append(
        (
            "05-persona-spread.flow.json",
            _corpus_flow(
                "corpus-persona",
                "one prompt across personas",
                [
                    _tf("node-1", "persona", ["a historian", "a physicist", "a poet"]),
                    _tf("node-2", "question", ["Why is the sky blue?"]),
                    _prompt("node-3", "ask", "You are {persona}. {question}"),
                    _eval("node-4", "len(response.text) > 0"),
                ],
                [
                    _edge("node-1", "fields", "node-3", "persona"),
                    _edge("node-2", "fields", "node-3", "question"),
                    _edge("node-3", "responses", "node-4", "responses"),
                ],
            ),
        )
    )

    # 6. unbound variable, flow cannot run: no / no / no
    flows.append(
        (
            "06-unbound.flow.json",
            _corpus_flow(
                "corpus-unbound",
                "prompt with a dangling variable",
                [
                    _tf("node-1", "topic", ["rivers"]),
                    _prompt("node-2", "ask", "Compare {topic} with {other}."),
                ],
                [_edge("node-1", "fields", "node-2", "topic")],
            ),
        )
    )
    return flows


def write_corpus(directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for filename, flow in corpus_flows():
        path = directory / filename
        path.write_bytes(serialize(flow))
        written.append(path)
    return written


def build_fixtures(root: Path, config: Config | None = None) -> dict[str, Flow]:
    """(Re)build every bundled fixture under ``root``: cassettes + corpus."""
    root = Path(root)
    flows = {}
    for name in SCENARIOS:
        directory = root / name
        directory.mkdir(parents=True, exist_ok=True)
        for stale in directory.glob("*.json"):
            stale.unlink()
        flows[name] = record_scenario(name, directory, config)
    write_corpus(root / "corpus")
    return flows
