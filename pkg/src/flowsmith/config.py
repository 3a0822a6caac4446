"""Runtime configuration: provider profiles, model routing, limits."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .flow_model import ModelRef
from .gateway import ProviderProfile


@dataclass
class Config:
    profiles: dict[str, ProviderProfile] = field(default_factory=dict)
    # dialogue agent and generation agents route through named profiles
    frontend_model: str = "frontend"
    backend_model: str = "backend"
    reviewer_enabled: bool = False
    max_review_loops: int = 1
    max_in_flight: int = 8
    per_provider_rpm: int = 60
    retry_backoffs: tuple[float, ...] = (0.5, 1.0, 2.0)
    structured_attempts: int = 2
    agent_temperature: float = 0.3
    flow_temperature: float = 0.7
    max_tokens: int = 2048
    default_samples_per_prompt: int = 1
    # models assigned to generated Prompt nodes when nothing names any
    default_flow_models: tuple[ModelRef, ...] = ()
    evaluator_language: str = "expr"
    evaluator_runners: dict[str, list[str]] = field(default_factory=dict)
    evaluator_timeout_s: float = 5.0
    prompts_dir: str | None = None  # override the bundled prompt templates

    def profile(self, name: str) -> ProviderProfile:
        try:
            return self.profiles[name]
        except KeyError:
            raise KeyError(f"no provider profile named '{name}' in config") from None

    def frontend_profile(self) -> ProviderProfile:
        return self.profile(self.frontend_model)

    def backend_profile(self) -> ProviderProfile:
        return self.profile(self.backend_model)

    def backend_model_ref(self) -> ModelRef:
        p = self.backend_profile()
        return ModelRef(provider=p.provider, model=p.model, temperature=self.agent_temperature)


def default_config() -> Config:
    cfg = Config(
        profiles={
            "frontend": ProviderProfile(
                name="frontend",
                provider="anthropic",
                model="claude-3-5-sonnet",
                base_url="https://api.anthropic.com/v1",
            ),
            "backend": ProviderProfile(
                name="backend",
                provider="openai",
                model="gpt-4o",
                base_url="https://api.openai.com/v1",
            ),
        },
        default_flow_models=(
            ModelRef(provider="openai", model="gpt-4o", temperature=0.7),
            ModelRef(provider="anthropic", model="claude-3-5-sonnet", temperature=0.7),
        ),
        evaluator_runners={"python": [sys.executable, "-m", "flowsmith.eval_runner"]},
    )
    return cfg


def _profile_from_doc(name: str, doc: dict[str, Any]) -> ProviderProfile:
    return ProviderProfile(
        name=name,
        provider=doc.get("provider", name),
        model=doc.get("model", ""),
        base_url=doc.get("base_url", ""),
        api_key_env=doc.get("api_key_env", ""),
        temperature=doc.get("temperature"),
    )


def load_config(path: str | Path) -> Config:
    """Load a JSON (or YAML, by extension) config file over the defaults."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        doc = yaml.safe_load(text) or {}
    else:
        doc = json.loads(text)
    return config_from_doc(doc)


def config_from_doc(doc: dict[str, Any]) -> Config:
    cfg = default_config()
    if "profiles" in doc:
        cfg.profiles = {
            name: _profile_from_doc(name, profile_doc)
            for name, profile_doc in doc["profiles"].items()
        }
    for key in (
        "frontend_model",
        "backend_model",
        "reviewer_enabled",
        "max_review_loops",
        "max_in_flight",
        "per_provider_rpm",
        "structured_attempts",
        "agent_temperature",
        "flow_temperature",
        "max_tokens",
        "default_samples_per_prompt",
        "evaluator_language",
        "evaluator_timeout_s",
        "prompts_dir",
    ):
        if key in doc:
            setattr(cfg, key, doc[key])
    if "retry_backoffs" in doc:
        cfg.retry_backoffs = tuple(float(x) for x in doc["retry_backoffs"])
    if "evaluator_runners" in doc:
        cfg.evaluator_runners.update({k: list(v) for k, v in doc["evaluator_runners"].items()})
    if "default_flow_models" in doc:
        cfg.default_flow_models = tuple(
            ModelRef(
                provider=m["provider"],
                model=m["model"],
                temperature=m.get("temperature", cfg.flow_temperature),
            )
            for m in doc["default_flow_models"]
        )
    return cfg


def with_reviewer(cfg: Config, enabled: bool, max_loops: int | None = None) -> Config:
    out = replace(cfg)
    out.profiles = dict(cfg.profiles)
    out.reviewer_enabled = enabled
    if max_loops is not None:
        out.max_review_loops = max_loops
    return out
