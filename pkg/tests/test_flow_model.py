import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowsmith.flow_model import (
    KIND_PROMPT,
    Edge,
    Flow,
    SchemaError,
    default_catalog,
    deserialize,
    flow_to_doc,
    serialize,
    topological_order,
    validate,
)
from builders import edge, evaluator, flow, persona_math_flow, prompt, textfields, tweet_chained_flow, vis


def test_empty_flow_is_valid():
    assert validate(flow([], [])).ok


def test_two_node_cycle_reports_cycle():
    a = textfields("a", "x", ["{y}"])
    b = textfields("b", "y", ["{x}"])
    f = flow([a, b], [edge("a", "fields", "b", "x"), edge("b", "fields", "a", "y")])
    report = validate(f)
    assert "cycle" in report.rules()


def test_unbound_prompt_variable_flagged():
    p = prompt("p", "ask", "say {text}", 1)
    report = validate(flow([p], []))
    assert "unbound_variable" in report.rules()
    assert any(v.subject == "p" for v in report.violations)


def test_allow_unbound_suppresses_unbound_rule():
    p = prompt("p", "ask", "say {text}", 1)
    report = validate(flow([p], [], allow_unbound=True))
    assert "unbound_variable" not in report.rules()


def test_dangling_edge_endpoint():
    p = prompt("p", "ask", "hi", 1)
    report = validate(flow([p], [edge("ghost", "fields", "p", "text")]))
    assert "dangling_edge" in report.rules()


def test_self_loop_is_dangling():
    t = textfields("t", "t", ["{t}"])
    report = validate(flow([t], [edge("t", "fields", "t", "t")], allow_unbound=True))
    assert "dangling_edge" in report.rules()


def test_empty_model_list_flagged():
    p = prompt("p", "ask", "hi", 0)
    report = validate(flow([p], []))
    assert "empty_models" in report.rules()


def test_catalog_forbids_prompt_into_prompt_variable():
    p1 = prompt("p1", "first", "hello", 1)
    p2 = prompt("p2", "second", "{first}", 1)
    report = validate(flow([p1, p2], [edge("p1", "responses", "p2", "first")]))
    assert "connection_not_allowed" in report.rules()


def test_evaluator_input_must_come_from_prompt():
    t = textfields("t", "t", ["x"])
    e = evaluator("e", "len(response.text) <= 10")
    report = validate(flow([t, e], [edge("t", "fields", "e", "responses")]))
    assert "connection_not_allowed" in report.rules()


def test_duplicate_binding_flagged():
    t1 = textfields("t1", "text", ["a"])
    t2 = textfields("t2", "text", ["b"])
    p = prompt("p", "ask", "{text}", 1)
    f = flow([t1, t2, p], [edge("t1", "fields", "p", "text"), edge("t2", "fields", "p", "text")])
    assert "duplicate_binding" in validate(f).rules()


def test_vis_group_by_unknown_variable():
    f = persona_math_flow()
    bad_vis = vis("node-5", group_by="nonexistent")
    nodes = [bad_vis if n.id == "node-5" else n for n in f.nodes]
    report = validate(Flow(id=f.id, name=f.name, nodes=tuple(nodes), edges=f.edges))
    assert "unknown_group_by" in report.rules()


def test_vis_group_by_chained_variable_ok():
    assert validate(tweet_chained_flow()).ok


def test_fixture_flows_validate_clean():
    assert validate(persona_math_flow()).ok
    assert validate(tweet_chained_flow()).ok


def test_validate_is_pure():
    f = persona_math_flow()
    assert validate(f) == validate(f)


# ---------------------------------------------------------------------------
# serialization


def test_roundtrip_identity():
    f = persona_math_flow()
    assert deserialize(serialize(f)) == f


def test_serialize_deterministic():
    f = tweet_chained_flow()
    assert serialize(f) == serialize(f)


def test_serialize_canonical_under_reordering():
    f = persona_math_flow()
    shuffled = Flow(
        id=f.id,
        name=f.name,
        nodes=tuple(reversed(f.nodes)),
        edges=tuple(reversed(f.edges)),
        created_at=f.created_at,
        provenance=f.provenance,
    )
    assert serialize(f) == serialize(shuffled)


def test_unknown_kind_reports_path():
    doc = flow_to_doc(persona_math_flow())
    doc["nodes"][0]["kind"] = "Join"
    with pytest.raises(SchemaError) as exc:
        deserialize(json.dumps(doc))
    assert "nodes[0].kind" in str(exc.value)


def test_missing_field_reports_path():
    doc = flow_to_doc(persona_math_flow())
    del doc["nodes"][1]["title"]
    with pytest.raises(SchemaError) as exc:
        deserialize(json.dumps(doc))
    assert "nodes[1]" in str(exc.value)


def test_not_json_is_schema_error():
    with pytest.raises(SchemaError):
        deserialize(b"this is not json")


def test_top_level_keys_present():
    doc = json.loads(serialize(persona_math_flow()))
    for key in ("schema_version", "id", "name", "nodes", "edges"):
        assert key in doc
    node = doc["nodes"][0]
    for key in ("id", "kind", "title", "x", "y", "payload"):
        assert key in node


# ---------------------------------------------------------------------------
# graph properties


@st.composite
def chain_flows(draw):
    n = draw(st.integers(min_value=2, max_value=7))
    nodes = [textfields("t1", "t1", ["{t%d}" % n])]
    edges_ = []
    for i in range(2, n + 1):
        nodes.append(textfields(f"t{i}", f"t{i}", ["value {t%d} here" % (i - 1)]))
        edges_.append(edge(f"t{i - 1}", "fields", f"t{i}", f"t{i - 1}"))
    return flow(nodes, edges_, allow_unbound=True), n


@given(chain_flows())
@settings(max_examples=40)
def test_random_dag_has_no_cycle_violation(built):
    f, _n = built
    assert not [v for v in validate(f).violations if v.rule == "cycle"]


@given(chain_flows())
@settings(max_examples=40)
def test_injected_back_edge_yields_exactly_cycle(built):
    f, n = built
    back = edge(f"t{n}", "fields", "t1", f"t{n}")
    cyclic = Flow(
        id=f.id, name=f.name, nodes=f.nodes, edges=f.edges + (back,), allow_unbound=True
    )
    cycle_violations = [v for v in validate(cyclic).violations if v.rule == "cycle"]
    assert len(cycle_violations) == 1


def test_topological_order_stable():
    f = persona_math_flow()
    order = [n.id for n in topological_order(f)]
    assert order == ["node-1", "node-2", "node-3", "node-4", "node-5"]
    assert order.index("node-3") > order.index("node-1")
