"""Loader for the on-disk prompt template bundle."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def load_prompt(relpath: str, override_dir: str | None = None) -> str:
    """Read a bundle file like ``planner/system.txt``.

    ``override_dir`` (config ``prompts_dir``) takes precedence over the
    templates shipped inside the package.
    """
    if override_dir:
        candidate = Path(override_dir) / relpath
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8")
    base = resources.files("flowsmith").joinpath("prompts")
    return base.joinpath(relpath).read_text(encoding="utf-8")
