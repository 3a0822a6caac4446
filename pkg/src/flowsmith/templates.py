"""Prompt template strings with `{variable}` placeholders and brace escaping."""

from __future__ import annotations

from dataclasses import dataclass, field


class MalformedTemplate(ValueError):
    """Raised when a template has unbalanced or empty brace delimiters."""


@dataclass(frozen=True)
class TemplateString:
    """A text template plus its variables in first-appearance order.

    ``\\{`` and ``\\}`` denote literal braces and never open a variable.
    """

    raw: str
    variables: tuple[str, ...] = field(default_factory=tuple)

    def has_variables(self) -> bool:
        return bool(self.variables)


def parse_template(raw: str) -> TemplateString:
    """Extract unescaped ``{name}`` variables from ``raw``.

    Variables are deduplicated, keeping first-appearance order. An
    unbalanced unescaped brace or an empty variable name raises
    :class:`MalformedTemplate`.
    """
    variables: list[str] = []
    seen: set[str] = set()
    i = 0
    n = len(raw)
    while i < n:
        ch = raw[i]
        if ch == "\\" and i + 1 < n and raw[i + 1] in "{}":
            i += 2
            continue
        if ch == "{":
            end = _scan_variable(raw, i)
            name = raw[i + 1 : end]
            if name not in seen:
                seen.add(name)
                variables.append(name)
            i = end + 1
            continue
        if ch == "}":
            raise MalformedTemplate(f"unmatched '}}' at position {i}")
        i += 1
    return TemplateString(raw=raw, variables=tuple(variables))


def _scan_variable(raw: str, start: int) -> int:
    """Return the index of the '}' closing the variable opened at ``start``."""
    j = start + 1
    while j < len(raw):
        ch = raw[j]
        if ch == "{":
            raise MalformedTemplate(f"nested '{{' at position {j}")
        if ch == "}":
            if j == start + 1:
                raise MalformedTemplate(f"empty variable name at position {start}")
            return j
        j += 1
    raise MalformedTemplate(f"unclosed '{{' at position {start}")


def render_template(template: TemplateString, bindings: dict[str, str]) -> str:
    """Substitute every variable and unescape literal braces.

    Raises KeyError for a variable missing from ``bindings``.
    """
    raw = template.raw
    out: list[str] = []
    i = 0
    n = len(raw)
    while i < n:
        ch = raw[i]
        if ch == "\\" and i + 1 < n and raw[i + 1] in "{}":
            out.append(raw[i + 1])
            i += 2
            continue
        if ch == "{":
            end = _scan_variable(raw, i)
            name = raw[i + 1 : end]
            out.append(bindings[name])
            i = end + 1
            continue
        out.append(ch)
        i += 1
    return "".join(out)
