"""Structural grading of flows: three structural success metrics.

- compares_two_prompts: at least two distinct fully-resolved prompt texts
  reach some Prompt node for the same non-prompt binding context, either
  through a chained TextFields holding >=2 template values or through
  parallel Prompt nodes sharing the same inputs.
- runs: validation is clean and a dry run under a mock gateway completes
  (evaluator programs are only syntax-checked, so grading is side-effect
  free).
- uses_template_chaining: some TextFields value contains a template
  variable and that node feeds a Prompt node's template variable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .config import Config
from .executor import run_flow
from .flow_model import (
    KIND_PROMPT,
    KIND_TEXT_FIELDS,
    Flow,
    NodeCatalog,
    default_catalog,
    deserialize,
    validate,
)
from .gateway import LLMGateway, ScriptedTransport


@dataclass(frozen=True)
class GradeReport:
    flow_id: str
    compares_two_prompts: bool
    runs: bool
    uses_template_chaining: bool
    details: dict[str, Any] = field(default_factory=dict)


def _chaining_evidence(flow: Flow) -> list[dict[str, str]]:
    evidence = []
    for node in flow.nodes:
        if node.kind != KIND_TEXT_FIELDS:
            continue
        if not any(f.variables for f in node.payload.fields):
            continue
        for edge in flow.edges:
            if edge.from_node != node.id:
                continue
            try:
                target = flow.node(edge.to_node)
            except KeyError:
                continue
            if target.kind == KIND_PROMPT and edge.to_handle in target.template_variables():
                evidence.append(
                    {"textfields": node.id, "prompt": target.id, "variable": edge.to_handle}
                )
    return evidence


def _chained_comparison_evidence(flow: Flow) -> list[dict[str, str]]:
    """Route (a): a chained TextFields with >=2 distinct template values
    feeding a Prompt variable varies the prompt while the inner bindings
    stay the comparison context."""
    evidence = []
    for edge in flow.edges:
        try:
            source = flow.node(edge.from_node)
            target = flow.node(edge.to_node)
        except KeyError:
            continue
        if source.kind != KIND_TEXT_FIELDS or target.kind != KIND_PROMPT:
            continue
        if edge.to_handle not in target.template_variables():
            continue
        templated = {f.raw for f in source.payload.fields if f.variables}
        if len(templated) >= 2:
            evidence.append(
                {"textfields": source.id, "prompt": target.id, "variable": edge.to_handle}
            )
    return evidence


def _parallel_prompt_evidence(flow: Flow) -> list[dict[str, str]]:
    """Route (b): two Prompt nodes with identical input wiring but
    different templates compare two prompts over the same context."""
    signatures: dict[tuple, list] = {}
    for node in flow.nodes:
        if node.kind != KIND_PROMPT:
            continue
        wiring = tuple(
            sorted(
                (e.to_handle, e.from_node)
                for e in flow.edges
                if e.to_node == node.id and e.to_handle in node.template_variables()
            )
        )
        signatures.setdefault(wiring, []).append(node)
    evidence = []
    for group in signatures.values():
        templates = {n.payload.template.raw for n in group}
        if len(group) >= 2 and len(templates) >= 2:
            evidence.append({"prompts": ",".join(sorted(n.id for n in group))})
    return evidence


def _dry_run(flow: Flow, catalog: NodeCatalog, config: Config) -> tuple[bool, str]:
    gateway = LLMGateway(
        mode="mock",
        transport=ScriptedTransport(default=lambda _req: "dry-run response"),
    )
    try:
        result = run_flow(flow, gateway, config, catalog, evaluator_mode="syntax")
    except Exception as exc:
        return False, f"{type(exc).__name__}: {exc}"
    if result.status != "succeeded":
        return False, f"failed at {result.failed_node}: {result.error}"
    return True, "completed"


def grade(flow: Flow, catalog: NodeCatalog | None = None, config: Config | None = None) -> GradeReport:
    """Grade one flow; purely structural plus a mock-gateway dry run."""
    catalog = catalog or default_catalog()
    config = config or Config()
    report = validate(flow, catalog)
    details: dict[str, Any] = {}

    if report.ok:
        runs, run_detail = _dry_run(flow, catalog, config)
        details["runs"] = {"validation": "clean", "dry_run": run_detail}
    else:
        runs = False
        details["runs"] = {
            "validation": [f"{v.rule}({v.subject})" for v in report.violations],
            "dry_run": "skipped",
        }

    chaining_evidence = _chaining_evidence(flow)
    chained_cmp = _chained_comparison_evidence(flow)
    parallel_cmp = _parallel_prompt_evidence(flow)
    compares = bool(chained_cmp or parallel_cmp)
    details["uses_template_chaining"] = {"evidence": chaining_evidence}
    details["compares_two_prompts"] = {
        "via": "chained_textfields" if chained_cmp else ("parallel_prompts" if parallel_cmp else None),
        "evidence": chained_cmp + parallel_cmp,
    }
    if chaining_evidence and not chained_cmp:
        details["compares_two_prompts"]["exception"] = (
            "template chaining present but the chained node holds fewer than two alternatives"
        )
    return GradeReport(
        flow_id=flow.id,
        compares_two_prompts=compares,
        runs=runs,
        uses_template_chaining=bool(chaining_evidence),
        details=details,
    )


# ---------------------------------------------------------------------------
# batch grading


@dataclass
class BatchReport:
    reports: list[tuple[str, GradeReport]] = field(default_factory=list)  # (filename, report)
    errors: list[tuple[str, str]] = field(default_factory=list)

    def totals(self) -> tuple[int, int, int, int]:
        c = sum(1 for _, r in self.reports if r.compares_two_prompts)
        rn = sum(1 for _, r in self.reports if r.runs)
        t = sum(1 for _, r in self.reports if r.uses_template_chaining)
        return c, rn, t, len(self.reports)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["flow_id", "compares_two_prompts", "runs", "uses_template_chaining", "error"])
        for _, report in self.reports:
            writer.writerow(
                [
                    report.flow_id,
                    str(report.compares_two_prompts).lower(),
                    str(report.runs).lower(),
                    str(report.uses_template_chaining).lower(),
                    "",
                ]
            )
        c, rn, t, n = self.totals()
        writer.writerow(["TOTAL", f"{c}/{n}", f"{rn}/{n}", f"{t}/{n}", ""])
        for filename, message in self.errors:
            writer.writerow([filename, "", "", "", message])
        return buf.getvalue()


def batch(
    corpus_dir: str | Path,
    out_path: str | Path | None = None,
    catalog: NodeCatalog | None = None,
    config: Config | None = None,
) -> BatchReport:
    """Grade every ``*.flow.json`` in a directory; unreadable files become
    error entries, never failures."""
    corpus_dir = Path(corpus_dir)
    result = BatchReport()
    for path in sorted(corpus_dir.glob("*.flow.json")):
        try:
            flow = deserialize(path.read_bytes())
        except Exception as exc:
            result.errors.append((path.name, f"{type(exc).__name__}: {exc}"))
            continue
        result.reports.append((path.name, grade(flow, catalog, config)))
    if out_path is not None:
        Path(out_path).write_text(result.to_csv(), encoding="utf-8")
    return result
