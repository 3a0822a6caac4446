"""Flow graph document: typed nodes, edges, validation, canonical JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

from .templates import MalformedTemplate, TemplateString, parse_template

SCHEMA_VERSION = 1

KIND_TEXT_FIELDS = "TextFields"
KIND_PROMPT = "Prompt"
KIND_CODE_EVALUATOR = "CodeEvaluator"
KIND_LLM_SCORER = "LLMScorer"
KIND_VIS = "Vis"

NODE_KINDS = (
    KIND_TEXT_FIELDS,
    KIND_PROMPT,
    KIND_CODE_EVALUATOR,
    KIND_LLM_SCORER,
    KIND_VIS,
)

# Output handle name per node kind (None = sink).
OUTPUT_HANDLES = {
    KIND_TEXT_FIELDS: "fields",
    KIND_PROMPT: "responses",
    KIND_CODE_EVALUATOR: "responses",
    KIND_LLM_SCORER: "responses",
    KIND_VIS: None,
}

RESPONSES_HANDLE = "responses"

SCORE_TYPES = ("boolean", "number", "categorical")
VIS_METRICS = ("mean", "pass_rate", "count")


class SchemaError(ValueError):
    """Malformed flow document; ``path`` points at the offending field."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ModelRef:
    provider: str
    model: str
    temperature: float | None = None

    def key(self) -> str:
        return f"{self.provider}/{self.model}"


@dataclass(frozen=True)
class ScoreSchema:
    type: str = "boolean"  # boolean | number | categorical
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class TextFieldsPayload:
    fields: tuple[TemplateString, ...] = ()


@dataclass(frozen=True)
class PromptPayload:
    template: TemplateString
    models: tuple[ModelRef, ...] = ()
    samples_per_prompt: int = 1


@dataclass(frozen=True)
class CodeEvaluatorPayload:
    language: str = "expr"
    program: str = ""


@dataclass(frozen=True)
class LLMScorerPayload:
    rubric_prompt: TemplateString
    judge_model: ModelRef
    score_schema: ScoreSchema = ScoreSchema()


@dataclass(frozen=True)
class VisPayload:
    group_by: str = "model"  # "model" or an upstream variable name
    metric: str = "pass_rate"


PAYLOAD_TYPES = {
    KIND_TEXT_FIELDS: TextFieldsPayload,
    KIND_PROMPT: PromptPayload,
    KIND_CODE_EVALUATOR: CodeEvaluatorPayload,
    KIND_LLM_SCORER: LLMScorerPayload,
    KIND_VIS: VisPayload,
}


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    title: str
    payload: Any
    x: float = 0
    y: float = 0

    def template_variables(self) -> tuple[str, ...]:
        """Input handles declared by this node's templates, in order."""
        if self.kind == KIND_TEXT_FIELDS:
            out: list[str] = []
            for f in self.payload.fields:
                for v in f.variables:
                    if v not in out:
                        out.append(v)
            return tuple(out)
        if self.kind == KIND_PROMPT:
            return self.payload.template.variables
        return ()


@dataclass(frozen=True)
class Edge:
    from_node: str
    from_handle: str
    to_node: str
    to_handle: str

    def key(self) -> tuple[str, str, str, str]:
        return (self.from_node, self.from_handle, self.to_node, self.to_handle)

    def label(self) -> str:
        return f"{self.from_node}.{self.from_handle}->{self.to_node}.{self.to_handle}"


@dataclass(frozen=True)
class Flow:
    id: str
    name: str
    nodes: tuple[Node, ...] = ()
    edges: tuple[Edge, ...] = ()
    created_at: str = "1970-01-01T00:00:00Z"
    provenance: str = "manual"  # generated | manual | edited
    allow_unbound: bool = False

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def incoming(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.to_node == node_id]

    def upstream_for_handle(self, node_id: str, handle: str) -> Node | None:
        """The source node of the unique edge into ``handle``, if any."""
        for e in self.edges:
            if e.to_node == node_id and e.to_handle == handle:
                return self.node(e.from_node)
        return None


# ---------------------------------------------------------------------------
# node catalog


@dataclass(frozen=True)
class CatalogEntry:
    kind: str
    display_name: str
    description: str
    # (source kind, target handle class) pairs; handle class is "variable"
    # for template-variable inputs or "responses" for response streams.
    allowed_incoming: tuple[tuple[str, str], ...]
    allowed_outgoing: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class NodeCatalog:
    entries: tuple[CatalogEntry, ...]

    def entry(self, kind: str) -> CatalogEntry | None:
        for e in self.entries:
            if e.kind == kind:
                return e
        return None

    def kinds(self) -> tuple[str, ...]:
        return tuple(e.kind for e in self.entries)

    def incoming_allowed(self, source_kind: str, target_kind: str, handle_class: str) -> bool:
        entry = self.entry(target_kind)
        return entry is not None and (source_kind, handle_class) in entry.allowed_incoming


def default_catalog() -> NodeCatalog:
    """The built-in node set and its connection rules."""
    return NodeCatalog(
        entries=(
            CatalogEntry(
                kind=KIND_TEXT_FIELDS,
                display_name="Text Fields",
                description=(
                    "Holds a list of text values used as inputs. Values may contain "
                    "{variable} placeholders; placeholder handles accept fields from "
                    "other Text Fields nodes, which makes the values act as reusable "
                    "templates."
                ),
                allowed_incoming=((KIND_TEXT_FIELDS, "variable"),),
                allowed_outgoing=((KIND_TEXT_FIELDS, "variable"), (KIND_PROMPT, "variable")),
            ),
            CatalogEntry(
                kind=KIND_PROMPT,
                display_name="Prompt",
                description=(
                    "Fills a prompt template with every combination of upstream values "
                    "and queries one or more models. Each {variable} in the template is "
                    "an input handle fed by a Text Fields node."
                ),
                allowed_incoming=((KIND_TEXT_FIELDS, "variable"),),
                allowed_outgoing=(
                    (KIND_CODE_EVALUATOR, "responses"),
                    (KIND_LLM_SCORER, "responses"),
                ),
            ),
            CatalogEntry(
                kind=KIND_CODE_EVALUATOR,
                display_name="Code Evaluator",
                description=(
                    "Runs a small program over every model response, producing a boolean "
                    "or numeric score per response. Input handle 'responses' accepts a "
                    "Prompt node's output."
                ),
                allowed_incoming=((KIND_PROMPT, "responses"),),
                allowed_outgoing=((KIND_VIS, "responses"),),
            ),
            CatalogEntry(
                kind=KIND_LLM_SCORER,
                display_name="LLM Scorer",
                description=(
                    "Asks a judge model to grade every response against a rubric. The "
                    "rubric must contain a {response} placeholder. Input handle "
                    "'responses' accepts a Prompt node's output."
                ),
                allowed_incoming=((KIND_PROMPT, "responses"),),
                allowed_outgoing=((KIND_VIS, "responses"),),
            ),
            CatalogEntry(
                kind=KIND_VIS,
                display_name="Vis",
                description=(
                    "Aggregates evaluator scores into a small table, grouped by model or "
                    "by an upstream variable. Input handle 'responses' accepts evaluator "
                    "output."
                ),
                allowed_incoming=(
                    (KIND_CODE_EVALUATOR, "responses"),
                    (KIND_LLM_SCORER, "responses"),
                ),
                allowed_outgoing=(),
            ),
        )
    )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: str
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def summary(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(f"{v.rule}({v.subject}): {v.detail}" for v in self.violations)


def _handle_class(node: Node, handle: str) -> str | None:
    if handle in node.template_variables():
        return "variable"
    if handle == RESPONSES_HANDLE and node.kind in (
        KIND_CODE_EVALUATOR,
        KIND_LLM_SCORER,
        KIND_VIS,
    ):
        return "responses"
    return None


def validate(flow: Flow, catalog: NodeCatalog | None = None) -> ValidationReport:
    """Check a flow against the catalog's connection rules and graph invariants.

    Violations are data, never exceptions; an empty report means the
    executor will accept the flow.
    """
    catalog = catalog or default_catalog()
    violations: list[Violation] = []
    by_id: dict[str, Node] = {}

    for node in flow.nodes:
        if node.id in by_id:
            violations.append(Violation("duplicate_node_id", node.id, "node id reused"))
        by_id[node.id] = node

    for node in flow.nodes:
        violations.extend(_check_payload(node, catalog))

    edges_ok: list[Edge] = []
    for edge in flow.edges:
        if edge.from_node == edge.to_node:
            violations.append(Violation("dangling_edge", edge.label(), "self loop"))
            continue
        if edge.from_node not in by_id or edge.to_node not in by_id:
            violations.append(Violation("dangling_edge", edge.label(), "endpoint not in flow"))
            continue
        source = by_id[edge.from_node]
        target = by_id[edge.to_node]
        if OUTPUT_HANDLES.get(source.kind) != edge.from_handle:
            violations.append(
                Violation(
                    "connection_not_allowed",
                    edge.label(),
                    f"{source.kind} has no output handle '{edge.from_handle}'",
                )
            )
            continue
        hclass = _handle_class(target, edge.to_handle)
        if hclass is None:
            violations.append(
                Violation(
                    "connection_not_allowed",
                    edge.label(),
                    f"{target.kind} '{target.id}' has no input handle '{edge.to_handle}'",
                )
            )
            continue
        if not catalog.incoming_allowed(source.kind, target.kind, hclass):
            violations.append(
                Violation(
                    "connection_not_allowed",
                    edge.label(),
                    f"catalog forbids {source.kind} -> {target.kind}.{hclass}",
                )
            )
            continue
        edges_ok.append(edge)

    seen_handles: dict[tuple[str, str], Edge] = {}
    for edge in edges_ok:
        slot = (edge.to_node, edge.to_handle)
        if slot in seen_handles:
            violations.append(
                Violation(
                    "duplicate_binding",
                    edge.label(),
                    f"handle '{edge.to_handle}' already fed by {seen_handles[slot].label()}",
                )
            )
        else:
            seen_handles[slot] = edge

    if not flow.allow_unbound:
        for node in flow.nodes:
            for var in node.template_variables():
                if (node.id, var) not in seen_handles:
                    violations.append(
                        Violation("unbound_variable", node.id, f"variable '{var}' has no incoming edge")
                    )

    violations.extend(_check_cycles(flow, by_id))
    violations.extend(_check_vis_axes(flow, by_id, seen_handles))
    return ValidationReport(tuple(violations))


def _check_payload(node: Node, catalog: NodeCatalog) -> list[Violation]:
    out: list[Violation] = []
    if catalog.entry(node.kind) is None:
        out.append(Violation("payload_mismatch", node.id, f"unknown kind '{node.kind}'"))
        return out
    expected = PAYLOAD_TYPES[node.kind]
    if not isinstance(node.payload, expected):
        out.append(
            Violation(
                "payload_mismatch",
                node.id,
                f"payload {type(node.payload).__name__} does not match kind {node.kind}",
            )
        )
        return out
    if node.kind == KIND_PROMPT:
        if not node.payload.models:
            out.append(Violation("empty_models", node.id, "Prompt node has no models"))
        if node.payload.samples_per_prompt < 1:
            out.append(Violation("payload_mismatch", node.id, "samples_per_prompt must be >= 1"))
    elif node.kind == KIND_LLM_SCORER:
        if "response" not in node.payload.rubric_prompt.variables:
            out.append(
                Violation("payload_mismatch", node.id, "rubric_prompt lacks a {response} placeholder")
            )
        if node.payload.score_schema.type not in SCORE_TYPES:
            out.append(
                Violation(
                    "payload_mismatch", node.id, f"unknown score type '{node.payload.score_schema.type}'"
                )
            )
        elif node.payload.score_schema.type == "categorical" and not node.payload.score_schema.labels:
            out.append(Violation("payload_mismatch", node.id, "categorical schema lists no labels"))
    elif node.kind == KIND_VIS:
        if node.payload.metric not in VIS_METRICS:
            out.append(Violation("payload_mismatch", node.id, f"unknown metric '{node.payload.metric}'"))
    return out


def _check_cycles(flow: Flow, by_id: dict[str, Node]) -> list[Violation]:
    adjacency: dict[str, list[str]] = {nid: [] for nid in by_id}
    indegree = {nid: 0 for nid in by_id}
    for e in flow.edges:
        if e.from_node in by_id and e.to_node in by_id and e.from_node != e.to_node:
            adjacency[e.from_node].append(e.to_node)
            indegree[e.to_node] += 1
    queue = sorted(nid for nid, d in indegree.items() if d == 0)
    visited = 0
    while queue:
        nid = queue.pop(0)
        visited += 1
        for succ in adjacency[nid]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                queue.append(succ)
    if visited != len(by_id):
        stuck = sorted(nid for nid, d in indegree.items() if d > 0)
        return [Violation("cycle", ",".join(stuck), "nodes participate in a cycle")]
    return []


def _check_vis_axes(
    flow: Flow, by_id: dict[str, Node], bound: dict[tuple[str, str], Edge]
) -> list[Violation]:
    out: list[Violation] = []
    for node in flow.nodes:
        if node.kind != KIND_VIS or not isinstance(node.payload, VisPayload):
            continue
        axis = node.payload.group_by
        if axis == "model":
            continue
        if axis not in _reachable_variables(flow, by_id, node.id):
            out.append(
                Violation(
                    "unknown_group_by",
                    node.id,
                    f"group_by '{axis}' is not a variable reachable upstream",
                )
            )
    return out


def _reachable_variables(flow: Flow, by_id: dict[str, Node], node_id: str) -> set[str]:
    names: set[str] = set()
    stack = [node_id]
    seen: set[str] = set()
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        for e in flow.edges:
            if e.to_node != nid or e.from_node not in by_id:
                continue
            names.update(by_id[e.from_node].template_variables())
            if by_id[e.from_node].kind == KIND_TEXT_FIELDS:
                names.add(e.to_handle)
            stack.append(e.from_node)
    return names


def topological_order(flow: Flow) -> list[Node]:
    """Nodes in dependency order; ties broken by node id for stability."""
    by_id = {n.id: n for n in flow.nodes}
    indegree = {nid: 0 for nid in by_id}
    adjacency: dict[str, list[str]] = {nid: [] for nid in by_id}
    for e in flow.edges:
        if e.from_node in by_id and e.to_node in by_id:
            adjacency[e.from_node].append(e.to_node)
            indegree[e.to_node] += 1
    ready = sorted(nid for nid, d in indegree.items() if d == 0)
    order: list[Node] = []
    while ready:
        nid = ready.pop(0)
        order.append(by_id[nid])
        inserted = False
        for succ in adjacency[nid]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                ready.append(succ)
                inserted = True
        if inserted:
            ready.sort()
    if len(order) != len(by_id):
        raise ValueError("flow contains a cycle")
    return order


# ---------------------------------------------------------------------------
# canonical serialization


def _model_to_doc(m: ModelRef) -> dict[str, Any]:
    return {"provider": m.provider, "model": m.model, "temperature": m.temperature}


def _num(value: float) -> float | int:
    return int(value) if float(value).is_integer() else float(value)


def _payload_to_doc(node: Node) -> dict[str, Any]:
    p = node.payload
    if node.kind == KIND_TEXT_FIELDS:
        return {"fields": [f.raw for f in p.fields]}
    if node.kind == KIND_PROMPT:
        return {
            "template": p.template.raw,
            "models": [_model_to_doc(m) for m in p.models],
            "samples_per_prompt": p.samples_per_prompt,
        }
    if node.kind == KIND_CODE_EVALUATOR:
        return {"language": p.language, "program": p.program}
    if node.kind == KIND_LLM_SCORER:
        return {
            "rubric_prompt": p.rubric_prompt.raw,
            "judge_model": _model_to_doc(p.judge_model),
            "score_schema": {"type": p.score_schema.type, "labels": list(p.score_schema.labels)},
        }
    if node.kind == KIND_VIS:
        return {"group_by": p.group_by, "metric": p.metric}
    raise ValueError(f"unknown kind {node.kind}")


def node_to_doc(node: Node) -> dict[str, Any]:
    return {
        "id": node.id,
        "kind": node.kind,
        "title": node.title,
        "x": _num(node.x),
        "y": _num(node.y),
        "payload": _payload_to_doc(node),
    }


def flow_to_doc(flow: Flow) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": flow.id,
        "name": flow.name,
        "created_at": flow.created_at,
        "provenance": flow.provenance,
        "allow_unbound": flow.allow_unbound,
        "nodes": [node_to_doc(n) for n in sorted(flow.nodes, key=lambda n: n.id)],
        "edges": [
            {
                "from_node": e.from_node,
                "from_handle": e.from_handle,
                "to_node": e.to_node,
                "to_handle": e.to_handle,
            }
            for e in sorted(flow.edges, key=lambda e: e.key())
        ],
    }


def serialize(flow: Flow) -> bytes:
    """Canonical UTF-8 JSON: sorted keys, nodes/edges ordered by id."""
    doc = flow_to_doc(flow)
    return (json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode("utf-8")


def _expect(doc: Any, key: str, kind: type, path: str) -> Any:
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object")
    if key not in doc:
        raise SchemaError(f"{path}.{key}", "missing field")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"{path}.{key}", "expected a number")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise SchemaError(f"{path}.{key}", "expected an integer")
        return value
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}", f"expected {kind.__name__}")
    return value


def _template_from_doc(raw: Any, path: str) -> TemplateString:
    if not isinstance(raw, str):
        raise SchemaError(path, "expected string template")
    try:
        return parse_template(raw)
    except MalformedTemplate as exc:
        raise SchemaError(path, str(exc)) from exc


def _model_from_doc(doc: Any, path: str) -> ModelRef:
    provider = _expect(doc, "provider", str, path)
    model = _expect(doc, "model", str, path)
    temperature = doc.get("temperature")
    if temperature is not None and (not isinstance(temperature, (int, float)) or isinstance(temperature, bool)):
        raise SchemaError(f"{path}.temperature", "expected a number or null")
    return ModelRef(provider=provider, model=model, temperature=temperature)


def _payload_from_doc(kind: str, doc: Any, path: str) -> Any:
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object")
    if kind == KIND_TEXT_FIELDS:
        fields = _expect(doc, "fields", list, path)
        return TextFieldsPayload(
            fields=tuple(_template_from_doc(f, f"{path}.fields[{i}]") for i, f in enumerate(fields))
        )
    if kind == KIND_PROMPT:
        template = _template_from_doc(doc.get("template"), f"{path}.template")
        models_doc = _expect(doc, "models", list, path)
        models = tuple(
            _model_from_doc(m, f"{path}.models[{i}]") for i, m in enumerate(models_doc)
        )
        samples = doc.get("samples_per_prompt", 1)
        if not isinstance(samples, int) or isinstance(samples, bool):
            raise SchemaError(f"{path}.samples_per_prompt", "expected an integer")
        return PromptPayload(template=template, models=models, samples_per_prompt=samples)
    if kind == KIND_CODE_EVALUATOR:
        return CodeEvaluatorPayload(
            language=_expect(doc, "language", str, path),
            program=_expect(doc, "program", str, path),
        )
    if kind == KIND_LLM_SCORER:
        schema_doc = doc.get("score_schema", {"type": "boolean", "labels": []})
        if not isinstance(schema_doc, dict):
            raise SchemaError(f"{path}.score_schema", "expected an object")
        labels = schema_doc.get("labels", [])
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise SchemaError(f"{path}.score_schema.labels", "expected a list of strings")
        return LLMScorerPayload(
            rubric_prompt=_template_from_doc(doc.get("rubric_prompt"), f"{path}.rubric_prompt"),
            judge_model=_model_from_doc(doc.get("judge_model"), f"{path}.judge_model"),
            score_schema=ScoreSchema(
                type=_expect(schema_doc, "type", str, f"{path}.score_schema"),
                labels=tuple(labels),
            ),
        )
    if kind == KIND_VIS:
        return VisPayload(
            group_by=_expect(doc, "group_by", str, path),
            metric=_expect(doc, "metric", str, path),
        )
    raise SchemaError(f"{path[: path.rfind('.payload')]}.kind", f"unknown node kind '{kind}'")


def flow_from_doc(doc: Any) -> Flow:
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected a JSON object")
    version = _expect(doc, "schema_version", int, "$")
    if version != SCHEMA_VERSION:
        raise SchemaError("$.schema_version", f"unsupported version {version}")
    nodes_doc = _expect(doc, "nodes", list, "$")
    edges_doc = _expect(doc, "edges", list, "$")
    nodes = []
    for i, nd in enumerate(nodes_doc):
        path = f"$.nodes[{i}]"
        kind = _expect(nd, "kind", str, path)
        if kind not in NODE_KINDS:
            raise SchemaError(f"{path}.kind", f"unknown node kind '{kind}'")
        nodes.append(
            Node(
                id=_expect(nd, "id", str, path),
                kind=kind,
                title=_expect(nd, "title", str, path),
                x=_expect(nd, "x", float, path),
                y=_expect(nd, "y", float, path),
                payload=_payload_from_doc(kind, nd.get("payload"), f"{path}.payload"),
            )
        )
    edges = []
    for i, ed in enumerate(edges_doc):
        path = f"$.edges[{i}]"
        edges.append(
            Edge(
                from_node=_expect(ed, "from_node", str, path),
                from_handle=_expect(ed, "from_handle", str, path),
                to_node=_expect(ed, "to_node", str, path),
                to_handle=_expect(ed, "to_handle", str, path),
            )
        )
    provenance = doc.get("provenance", "manual")
    if provenance not in ("generated", "manual", "edited"):
        raise SchemaError("$.provenance", f"unknown provenance '{provenance}'")
    allow_unbound = doc.get("allow_unbound", False)
    if not isinstance(allow_unbound, bool):
        raise SchemaError("$.allow_unbound", "expected a boolean")
    return Flow(
        id=_expect(doc, "id", str, "$"),
        name=_expect(doc, "name", str, "$"),
        nodes=tuple(nodes),
        edges=tuple(edges),
        created_at=_expect(doc, "created_at", str, "$"),
        provenance=provenance,
        allow_unbound=allow_unbound,
    )


def deserialize(data: bytes | str) -> Flow:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON: {exc}") from exc
    return flow_from_doc(doc)


def with_position(node: Node, x: float, y: float) -> Node:
    return replace(node, x=x, y=y)
