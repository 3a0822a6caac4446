"""Reference evaluator runner for full Python programs.

Speaks the line-delimited JSON protocol over stdin/stdout: one request
object per line, ``{"program": str, "response": {"text", "model", "vars"}}``,
answered by ``{"ok": true, "value": ...}`` or ``{"ok": false, "error": ...}``.
The program must define ``evaluate(response)`` returning a boolean, a
number, or a short label string.

Run with ``python -m flowsmith.eval_runner``. The runner keeps no state
between requests; each program is exec'd in a fresh namespace.
"""

from __future__ import annotations

import json
import sys
from types import SimpleNamespace
from typing import Any


def run_one(request: dict[str, Any]) -> dict[str, Any]:
    program = request.get("program", "")
    rec = request.get("response", {})
    response = SimpleNamespace(
        text=rec.get("text", ""),
        model=rec.get("model", ""),
        vars=dict(rec.get("vars", {})),
    )
    namespace: dict[str, Any] = {}
    try:
        exec(compile(program, "<evaluator>", "exec"), namespace)
        fn = namespace.get("evaluate")
        if not callable(fn):
            return {"ok": False, "error": "program does not define evaluate(response)"}
        value = fn(response)
    except Exception as exc:  # propagate as protocol error, never crash the loop
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
    if not isinstance(value, (bool, int, float, str)):
        return {"ok": False, "error": f"evaluate returned unsupported type {type(value).__name__}"}
    return {"ok": True, "value": value}


def main() -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            reply = {"ok": False, "error": f"bad request line: {exc}"}
        else:
            reply = run_one(request)
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
