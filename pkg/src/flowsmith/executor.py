"""Flow execution: template-chain expansion, model calls, evaluators, Vis.

Expansion is the heart: each Prompt-node template variable draws its
candidate values from the connected upstream TextFields node, values that
are themselves templates resolve recursively against *their* node's
upstream connections, and the instance list is the cartesian product of
all fully-resolved value lists crossed with the node's model list.
"""

from __future__ import annotations

import itertools
import json
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Any, Callable

from . import expr_lang
from .config import Config
from .flow_model import (
    KIND_CODE_EVALUATOR,
    KIND_LLM_SCORER,
    KIND_PROMPT,
    KIND_TEXT_FIELDS,
    KIND_VIS,
    Flow,
    ModelRef,
    Node,
    NodeCatalog,
    topological_order,
    validate,
)
from .gateway import ChatMessage, ChatRequest, LLMGateway
from .templates import TemplateString, render_template

MAX_CHAIN_DEPTH = 8


class InvalidFlow(ValueError):
    def __init__(self, report) -> None:
        super().__init__(f"flow fails validation: {report.summary()}")
        self.report = report


class UnboundVariable(ValueError):
    def __init__(self, node_id: str, variable: str) -> None:
        super().__init__(f"variable '{variable}' of node '{node_id}' has no incoming edge")
        self.node_id = node_id
        self.variable = variable


class DepthExceeded(ValueError):
    pass


class EvaluatorTimeout(RuntimeError):
    def __init__(self, response_index: int) -> None:
        super().__init__(f"evaluator timed out on response {response_index}")
        self.response_index = response_index


class EvaluatorCrash(RuntimeError):
    pass


class MetricTypeMismatch(TypeError):
    pass


@dataclass(frozen=True)
class BindingValue:
    """One resolved value plus where it came from.

    ``template`` is the candidate exactly as authored in the source node;
    for chained templates ``inner`` records the bindings that resolved it,
    so a response can be attributed to a specific prompt alternative.
    """

    value: str
    source: str
    template: str
    inner: dict[str, "BindingValue"] = field(default_factory=dict)


@dataclass(frozen=True)
class PromptInstance:
    final_text: str
    bindings: dict[str, BindingValue]
    model: ModelRef


@dataclass(frozen=True)
class ResponseRecord:
    instance: PromptInstance
    sample_index: int
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency_ms: int = 0


@dataclass(frozen=True)
class EvalScore:
    response: ResponseRecord
    evaluator: str
    value: Any  # bool | float | str label


@dataclass(frozen=True)
class AggregateRow:
    group: str
    value: float | int
    count: int


@dataclass
class RunResult:
    flow_id: str
    status: str = "succeeded"  # succeeded | failed
    failed_node: str | None = None
    error: str | None = None
    started_at: str = ""
    finished_at: str = ""
    fields: dict[str, list[str]] = field(default_factory=dict)
    instances: dict[str, list[PromptInstance]] = field(default_factory=dict)
    responses: dict[str, list[ResponseRecord]] = field(default_factory=dict)
    scores: dict[str, list[EvalScore]] = field(default_factory=dict)
    tables: dict[str, list[AggregateRow]] = field(default_factory=dict)
    executed: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# expansion


def resolve_handle_values(flow: Flow, node: Node, variable: str, depth: int = 0) -> list[BindingValue]:
    """Fully-resolved candidate values for one input handle, in order."""
    if depth > MAX_CHAIN_DEPTH:
        raise DepthExceeded(f"template chain deeper than {MAX_CHAIN_DEPTH} at '{variable}'")
    upstream = flow.upstream_for_handle(node.id, variable)
    if upstream is None:
        raise UnboundVariable(node.id, variable)
    out: list[BindingValue] = []
    for field_template in upstream.payload.fields:
        out.extend(_resolve_template(flow, upstream, field_template, depth + 1))
    return out


def _resolve_template(
    flow: Flow, owner: Node, template: TemplateString, depth: int
) -> list[BindingValue]:
    if not template.variables:
        return [
            BindingValue(value=render_template(template, {}), source=owner.id, template=template.raw)
        ]
    per_var = [resolve_handle_values(flow, owner, v, depth) for v in template.variables]
    out: list[BindingValue] = []
    for combo in itertools.product(*per_var):
        inner = dict(zip(template.variables, combo))
        value = render_template(template, {v: b.value for v, b in inner.items()})
        out.append(BindingValue(value=value, source=owner.id, template=template.raw, inner=inner))
    return out


def expand(flow: Flow, prompt_node: Node) -> list[PromptInstance]:
    """All prompt instances for one Prompt node, deterministically ordered:
    upstream field order per variable, template-order major, model fastest."""
    if prompt_node.kind != KIND_PROMPT:
        raise ValueError(f"node '{prompt_node.id}' is not a Prompt node")
    template = prompt_node.payload.template
    per_var = [resolve_handle_values(flow, prompt_node, v) for v in template.variables]
    instances: list[PromptInstance] = []
    for combo in itertools.product(*per_var):
        bindings = dict(zip(template.variables, combo))
        final_text = render_template(template, {v: b.value for v, b in bindings.items()})
        for model in prompt_node.payload.models:
            instances.append(PromptInstance(final_text=final_text, bindings=bindings, model=model))
    return instances


# ---------------------------------------------------------------------------
# evaluators


def check_program(language: str, program: str, config: Config | None = None) -> None:
    """Dry-run syntax check; raises ExprError/SyntaxError style ValueError."""
    if language == "expr":
        expr_lang.check_program(program)
        return
    try:
        compile(program, "<evaluator>", "exec")
    except SyntaxError as exc:
        raise expr_lang.ExprError(f"syntax error: {exc.msg}") from exc
    if "def evaluate" not in program:
        raise expr_lang.ExprError("program must define evaluate(response)")


def _response_view(record: ResponseRecord) -> expr_lang.ResponseView:
    return expr_lang.ResponseView(
        text=record.text,
        model=record.instance.model.key(),
        vars={v: b.value for v, b in record.instance.bindings.items()},
    )


class _RunnerProcess:
    """One external evaluator process speaking line-delimited JSON."""

    def __init__(self, command: list[str]) -> None:
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        self._replies: Queue[str] = Queue()
        self._reader = threading.Thread(target=self._drain, daemon=True)
        self._reader.start()

    def _drain(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._replies.put(line)

    def request(self, payload: dict[str, Any], timeout_s: float) -> dict[str, Any]:
        assert self.proc.stdin is not None
        self.proc.stdin.write(json.dumps(payload) + "\n")
        self.proc.stdin.flush()
        try:
            line = self._replies.get(timeout=timeout_s)
        except Empty:
            raise TimeoutError
        return json.loads(line)

    def close(self) -> None:
        try:
            self.proc.kill()
        except OSError:
            pass


def run_evaluator(
    node: Node, responses: list[ResponseRecord], config: Config | None = None
) -> list[EvalScore]:
    """Score every response with the node's program.

    The built-in expression language runs in-process (its interpreter has
    no file, network, or environment surface). Any other language id is
    delegated to the configured runner process over the line-delimited
    JSON protocol, with a per-response timeout.
    """
    config = config or Config()
    language = node.payload.language
    program = node.payload.program
    if language == "expr":
        scores = []
        for record in responses:
            try:
                value = expr_lang.evaluate(program, _response_view(record))
            except expr_lang.ExprError as exc:
                raise EvaluatorCrash(str(exc)) from exc
            except Exception as exc:
                raise EvaluatorCrash(f"{type(exc).__name__}: {exc}") from exc
            if not isinstance(value, (bool, int, float)):
                raise EvaluatorCrash(f"program returned {type(value).__name__}, expected bool or number")
            scores.append(EvalScore(response=record, evaluator=node.id, value=value))
        return scores

    command = config.evaluator_runners.get(language)
    if command is None:
        raise EvaluatorCrash(f"no runner configured for evaluator language '{language}'")
    runner = _RunnerProcess(command)
    try:
        scores = []
        for i, record in enumerate(responses):
            payload = {
                "program": program,
                "response": {
                    "text": record.text,
                    "model": record.instance.model.key(),
                    "vars": {v: b.value for v, b in record.instance.bindings.items()},
                },
            }
            try:
                reply = runner.request(payload, config.evaluator_timeout_s)
            except TimeoutError:
                raise EvaluatorTimeout(i) from None
            except Exception as exc:
                raise EvaluatorCrash(f"runner protocol failure: {exc}") from exc
            if not reply.get("ok"):
                raise EvaluatorCrash(reply.get("error", "runner reported failure"))
            scores.append(EvalScore(response=record, evaluator=node.id, value=reply["value"]))
        return scores
    finally:
        runner.close()


# ---------------------------------------------------------------------------
# aggregation


def _group_key(score: EvalScore, group_by: str) -> str:
    if group_by == "model":
        return score.response.instance.model.key()
    binding = score.response.instance.bindings.get(group_by)
    if binding is None:
        return "(unbound)"
    # the authored candidate, so prompt alternatives group as alternatives
    return binding.template


def aggregate(scores: list[EvalScore], group_by: str, metric: str) -> list[AggregateRow]:
    """Group scores and compute the metric per group, lexicographic order."""
    groups: dict[str, list[Any]] = {}
    for score in scores:
        groups.setdefault(_group_key(score, group_by), []).append(score.value)
    rows: list[AggregateRow] = []
    for key in sorted(groups):
        values = groups[key]
        if metric == "count":
            rows.append(AggregateRow(group=key, value=len(values), count=len(values)))
            continue
        if metric == "pass_rate":
            if not all(isinstance(v, bool) for v in values):
                raise MetricTypeMismatch("pass_rate needs boolean scores")
            rows.append(
                AggregateRow(group=key, value=sum(1.0 for v in values if v) / len(values), count=len(values))
            )
            continue
        if metric == "mean":
            if not all(isinstance(v, (bool, int, float)) for v in values):
                raise MetricTypeMismatch("mean needs numeric scores")
            rows.append(AggregateRow(group=key, value=sum(float(v) for v in values) / len(values), count=len(values)))
            continue
        raise MetricTypeMismatch(f"unknown metric '{metric}'")
    return rows


# ---------------------------------------------------------------------------
# running a whole flow


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _prompt_requests(node: Node, instances: list[PromptInstance], config: Config) -> list[ChatRequest]:
    requests = []
    for instance in instances:
        for _sample in range(node.payload.samples_per_prompt):
            temperature = instance.model.temperature
            if temperature is None:
                temperature = config.flow_temperature
            requests.append(
                ChatRequest(
                    provider=instance.model.provider,
                    model=instance.model.model,
                    messages=(ChatMessage("user", instance.final_text),),
                    temperature=temperature,
                    max_tokens=config.max_tokens,
                )
            )
    return requests


def _run_prompt_node(
    flow: Flow, node: Node, gateway: LLMGateway, config: Config, result: RunResult
) -> None:
    instances = expand(flow, node)
    result.instances[node.id] = instances
    requests = _prompt_requests(node, instances, config)
    samples = node.payload.samples_per_prompt
    responses: list[ResponseRecord | None] = [None] * len(requests)

    def call(index: int) -> None:
        response = gateway.complete(requests[index])
        instance = instances[index // samples]
        responses[index] = ResponseRecord(
            instance=instance,
            sample_index=index % samples,
            text=response.text,
            input_tokens=response.input_tokens,
            output_tokens=response.output_tokens,
            latency_ms=response.latency_ms,
        )

    if len(requests) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(requests))) as pool:
            list(pool.map(call, range(len(requests))))
    elif requests:
        call(0)
    result.responses[node.id] = [r for r in responses if r is not None]
    if len(result.responses[node.id]) != len(requests):
        raise RuntimeError("prompt node lost responses")


def _upstream_responses(flow: Flow, node: Node, result: RunResult) -> list[ResponseRecord]:
    source = flow.upstream_for_handle(node.id, "responses")
    if source is None:
        return []
    return result.responses.get(source.id, [])


def _upstream_scores(flow: Flow, node: Node, result: RunResult) -> list[EvalScore]:
    source = flow.upstream_for_handle(node.id, "responses")
    if source is None:
        return []
    return result.scores.get(source.id, [])


def _parse_judge_score(text: str, schema) -> Any:
    lowered = text.strip().lower()
    if schema.type == "boolean":
        if "true" in lowered or lowered.startswith("yes"):
            return True
        if "false" in lowered or lowered.startswith("no"):
            return False
        raise EvaluatorCrash(f"judge reply is not a boolean verdict: {text[:80]!r}")
    if schema.type == "number":
        import re as _re

        match = _re.search(r"-?\d+(?:\.\d+)?", lowered)
        if not match:
            raise EvaluatorCrash(f"judge reply has no number: {text[:80]!r}")
        value = float(match.group(0))
        return min(max(value, 0.0), 1.0)
    for label in schema.labels:
        if label.lower() in lowered:
            return label
    raise EvaluatorCrash(f"judge reply matches no label: {text[:80]!r}")


def _run_scorer_node(
    flow: Flow, node: Node, gateway: LLMGateway, config: Config, result: RunResult
) -> None:
    payload = node.payload
    records = _upstream_responses(flow, node, result)
    scores = []
    for record in records:
        bindings = {v: b.value for v, b in record.instance.bindings.items()}
        bindings["response"] = record.text
        rubric = render_template(payload.rubric_prompt, bindings)
        temperature = payload.judge_model.temperature
        if temperature is None:
            temperature = config.agent_temperature
        reply = gateway.complete(
            ChatRequest(
                provider=payload.judge_model.provider,
                model=payload.judge_model.model,
                messages=(ChatMessage("user", rubric),),
                temperature=temperature,
                max_tokens=config.max_tokens,
            )
        )
        scores.append(
            EvalScore(response=record, evaluator=node.id, value=_parse_judge_score(reply.text, payload.score_schema))
        )
    result.scores[node.id] = scores


def run_flow(
    flow: Flow,
    gateway: LLMGateway,
    config: Config | None = None,
    catalog: NodeCatalog | None = None,
    evaluator_mode: str = "full",  # "full" | "syntax"
    on_node_complete: Callable[[str, RunResult], None] | None = None,
) -> RunResult:
    """Execute every node in topological order.

    A node-level error marks the run failed at that node and stops; the
    outputs of already-finished nodes are kept, so the topological
    completeness invariant holds (a node has outputs only when everything
    upstream of it succeeded).
    """
    config = config or Config()
    report = validate(flow, catalog)
    if not report.ok:
        raise InvalidFlow(report)
    result = RunResult(flow_id=flow.id, started_at=_utc_now())
    for node in topological_order(flow):
        try:
            if node.kind == KIND_TEXT_FIELDS:
                result.fields[node.id] = [f.raw for f in node.payload.fields]
            elif node.kind == KIND_PROMPT:
                _run_prompt_node(flow, node, gateway, config, result)
            elif node.kind == KIND_CODE_EVALUATOR:
                check_program(node.payload.language, node.payload.program, config)
                if evaluator_mode == "full":
                    result.scores[node.id] = run_evaluator(
                        node, _upstream_responses(flow, node, result), config
                    )
                else:
                    result.scores[node.id] = []
            elif node.kind == KIND_LLM_SCORER:
                if evaluator_mode == "full":
                    _run_scorer_node(flow, node, gateway, config, result)
                else:
                    result.scores[node.id] = []
            elif node.kind == KIND_VIS:
                scores = _upstream_scores(flow, node, result)
                result.tables[node.id] = (
                    aggregate(scores, node.payload.group_by, node.payload.metric) if scores else []
                )
        except Exception as exc:
            result.status = "failed"
            result.failed_node = node.id
            result.error = f"{type(exc).__name__}: {exc}"
            break
        result.executed.append(node.id)
        if on_node_complete is not None:
            on_node_complete(node.id, result)
    result.finished_at = _utc_now()
    return result


# ---------------------------------------------------------------------------
# serialization for the service layer


def _binding_to_doc(b: BindingValue) -> dict[str, Any]:
    return {
        "value": b.value,
        "source": b.source,
        "template": b.template,
        "inner": {k: _binding_to_doc(v) for k, v in b.inner.items()},
    }


def _instance_to_doc(instance: PromptInstance) -> dict[str, Any]:
    return {
        "final_text": instance.final_text,
        "model": {"provider": instance.model.provider, "model": instance.model.model},
        "bindings": {k: _binding_to_doc(v) for k, v in instance.bindings.items()},
    }


def run_to_doc(result: RunResult) -> dict[str, Any]:
    return {
        "flow_id": result.flow_id,
        "status": result.status,
        "failed_node": result.failed_node,
        "error": result.error,
        "started_at": result.started_at,
        "finished_at": result.finished_at,
        "executed": list(result.executed),
        "fields": result.fields,
        "instances": {nid: [_instance_to_doc(i) for i in lst] for nid, lst in result.instances.items()},
        "responses": {
            nid: [
                {
                    "instance": _instance_to_doc(r.instance),
                    "sample_index": r.sample_index,
                    "text": r.text,
                    "input_tokens": r.input_tokens,
                    "output_tokens": r.output_tokens,
                    "latency_ms": r.latency_ms,
                }
                for r in lst
            ]
            for nid, lst in result.responses.items()
        },
        "scores": {
            nid: [
                {
                    "value": s.value,
                    "evaluator": s.evaluator,
                    "model": s.response.instance.model.key(),
                    "response_text": s.response.text,
                }
                for s in lst
            ]
            for nid, lst in result.scores.items()
        },
        "tables": {
            nid: [{"group": row.group, "value": row.value, "count": row.count} for row in rows]
            for nid, rows in result.tables.items()
        },
    }
