import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowsmith.templates import MalformedTemplate, parse_template, render_template


def test_two_variables_in_order():
    t = parse_template("You are {persona}. Solve: {question}")
    assert t.variables == ("persona", "question")


def test_duplicate_variable_deduplicated():
    assert parse_template("{a} and {a}").variables == ("a",)


def test_plain_text_has_no_variables():
    assert parse_template("plain text").variables == ()


def test_unbalanced_open_brace_raises():
    with pytest.raises(MalformedTemplate):
        parse_template("broken {")


def test_unbalanced_close_brace_raises():
    with pytest.raises(MalformedTemplate):
        parse_template("broken }")


def test_empty_variable_name_raises():
    with pytest.raises(MalformedTemplate):
        parse_template("oops {}")


def test_nested_open_brace_raises():
    with pytest.raises(MalformedTemplate):
        parse_template("{outer {inner}}")


def test_escaped_braces_are_literal():
    t = parse_template(r"keep \{this\} literal")
    assert t.variables == ()
    assert render_template(t, {}) == "keep {this} literal"


def test_escape_adjacent_to_variable():
    t = parse_template(r"\{{x}\}")
    assert t.variables == ("x",)
    assert render_template(t, {"x": "X"}) == "{X}"


def test_render_substitutes_all():
    t = parse_template("{a}-{b}-{a}")
    assert render_template(t, {"a": "1", "b": "2"}) == "1-2-1"


def test_render_missing_binding_raises():
    with pytest.raises(KeyError):
        render_template(parse_template("{a}"), {})


plain_text = st.text(
    alphabet=st.characters(blacklist_characters="{}\\", blacklist_categories=("Cs",)),
    max_size=80,
)


@given(plain_text)
def test_brace_free_text_roundtrips(text):
    t = parse_template(text)
    assert t.variables == ()
    assert render_template(t, {}) == text


@given(plain_text)
def test_escaped_braces_never_yield_variables(text):
    escaped = text.replace("x", r"\{x\}")
    t = parse_template(escaped)
    assert t.variables == ()


names = st.text(alphabet="abcdefg_", min_size=1, max_size=6)


@given(st.lists(names, min_size=1, max_size=5), plain_text)
def test_variables_first_appearance_order(variables, filler):
    raw = filler + "".join("{%s}%s" % (v, filler) for v in variables)
    t = parse_template(raw)
    expected = []
    for v in variables:
        if v not in expected:
            expected.append(v)
    assert list(t.variables) == expected
