"""Runtime configuration: defaults, overridden by a YAML file, then BOOKRAG_* env vars, then CLI flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from bookindex.errors import FormatError
from bookindex.gateway import ModelGateway, RetryPolicy, mock_gateway
from bookindex.gateway.mock import MockLLM
from bookindex.index import BuildConfig
from bookindex.operators import ExecConfig
from bookindex.resolution import ResolutionConfig


@dataclass
class GatewayConfig:
    llm_url: str = "http://localhost:8000/v1"
    llm_model: str = "qwen2.5-72b-instruct"
    vlm_url: str = ""
    vlm_model: str = ""
    embed_url: str = ""
    embed_model: str = "bge-m3"
    rerank_url: str = ""
    rerank_model: str = "bge-reranker-v2-m3"
    api_key: str = ""
    timeout: float = 60.0
    dimension: int = 1024
    retries: int = 3
    mock: bool = False
    mock_script: str = ""
    mock_dimension: int = 64


@dataclass
class ResolutionSection:
    top_k: int = 10
    g: float = 0.6
    tau_min: float = 0.0


@dataclass
class PlannerSection:
    section_depth: int = 1
    batch_size: int = 20


@dataclass
class ReasonerSection:
    damping: float = 0.85
    tolerance: float = 1e-8
    max_iter: int = 200
    theta_link: float = 0.75
    text_cap: int = 1024


@dataclass
class PathsSection:
    index_dir: str = "index"
    report_dir: str = "report"


@dataclass
class Config:
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    resolution: ResolutionSection = field(default_factory=ResolutionSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    reasoner: ReasonerSection = field(default_factory=ReasonerSection)
    paths: PathsSection = field(default_factory=PathsSection)
    workers: int = 1

    def validate(self) -> "Config":
        checks = [
            (self.resolution.top_k >= 1, "resolution.top_k must be >= 1"),
            (0.0 < self.resolution.g <= 1.0, "resolution.g must lie in (0, 1]"),
            (self.resolution.tau_min >= 0.0, "resolution.tau_min must be >= 0"),
            (self.planner.section_depth >= 1, "planner.section_depth must be >= 1"),
            (self.planner.batch_size >= 1, "planner.batch_size must be >= 1"),
            (0.0 < self.reasoner.damping < 1.0, "reasoner.damping must lie in (0, 1)"),
            (self.reasoner.tolerance > 0.0, "reasoner.tolerance must be > 0"),
            (self.reasoner.max_iter >= 1, "reasoner.max_iter must be >= 1"),
            (-1.0 <= self.reasoner.theta_link <= 1.0, "reasoner.theta_link must lie in [-1, 1]"),
            (self.reasoner.text_cap >= 1, "reasoner.text_cap must be >= 1"),
            (self.gateway.dimension >= 1, "gateway.dimension must be >= 1"),
            (self.gateway.mock_dimension >= 2, "gateway.mock_dimension must be >= 2"),
            (self.gateway.timeout > 0, "gateway.timeout must be > 0"),
            (self.gateway.retries >= 1, "gateway.retries must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise FormatError("invalid config: " + "; ".join(bad))
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def build_config(self) -> BuildConfig:
        return BuildConfig(
            batch_size=self.planner.batch_size,
            resolution=ResolutionConfig(top_k=self.resolution.top_k, g=self.resolution.g, tau_min=self.resolution.tau_min),
            workers=self.workers,
        )

    def exec_config(self, timings: bool = True) -> ExecConfig:
        r = self.reasoner
        return ExecConfig(
            theta_link=r.theta_link,
            damping=r.damping,
            tol=r.tolerance,
            max_iter=r.max_iter,
            text_cap=r.text_cap,
            timings=timings,
        )

    def make_gateway(self) -> ModelGateway:
        gw = self.gateway
        if gw.mock:
            script = MockLLM.from_file(gw.mock_script).script if gw.mock_script else None
            return mock_gateway(script, dimension=gw.mock_dimension)
        from bookindex.gateway.http import http_gateway

        return http_gateway(gw, RetryPolicy(attempts=gw.retries))


# env var -> (section, key)
ENV_VARS = {
    "BOOKRAG_LLM_URL": ("gateway", "llm_url"),
    "BOOKRAG_LLM_MODEL": ("gateway", "llm_model"),
    "BOOKRAG_VLM_URL": ("gateway", "vlm_url"),
    "BOOKRAG_VLM_MODEL": ("gateway", "vlm_model"),
    "BOOKRAG_EMBED_URL": ("gateway", "embed_url"),
    "BOOKRAG_EMBED_MODEL": ("gateway", "embed_model"),
    "BOOKRAG_EMBED_DIM": ("gateway", "dimension"),
    "BOOKRAG_RERANK_URL": ("gateway", "rerank_url"),
    "BOOKRAG_RERANK_MODEL": ("gateway", "rerank_model"),
    "BOOKRAG_API_KEY": ("gateway", "api_key"),
    "BOOKRAG_TIMEOUT": ("gateway", "timeout"),
}


def _coerce(current: Any, value: Any, where: str) -> Any:
    kind = type(current)
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.strip().lower() in ("1", "true", "yes", "on"):
                    return True
                if value.strip().lower() in ("0", "false", "no", "off", ""):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            return float(value)
        return "" if value is None else str(value)
    except (TypeError, ValueError):
        raise FormatError(f"config {where}: cannot use {value!r} as {kind.__name__}") from None


def apply(cfg: Config, overrides: Mapping[str, Any], source: str = "config") -> Config:
    """Apply a nested mapping of overrides; unknown keys are an error."""
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise FormatError(f"{source}: unknown key {key!r}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, Mapping):
                raise FormatError(f"{source}: {key} must be a mapping")
            for sub, v in value.items():
                if not hasattr(current, sub):
                    raise FormatError(f"{source}: unknown key {key}.{sub}")
                setattr(current, sub, _coerce(getattr(current, sub), v, f"{key}.{sub}"))
        else:
            setattr(cfg, key, _coerce(current, value, key))
    return cfg


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    flags: Mapping[str, Any] | None = None,
) -> Config:
    cfg = Config()
    if path is not None:
        p = Path(path)
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise FormatError(f"config file {p} not found") from None
        except yaml.YAMLError as exc:
            raise FormatError(f"config file {p}: {exc}") from exc
        if not isinstance(data, Mapping):
            raise FormatError(f"config file {p} must hold a mapping")
        apply(cfg, data, str(p))
    env = os.environ if env is None else env
    from_env: dict[str, dict[str, Any]] = {}
    for var, (section, key) in ENV_VARS.items():
        if var in env:
            from_env.setdefault(section, {})[key] = env[var]
    apply(cfg, from_env, "environment")
    if flags:
        apply(cfg, flags, "flags")
    return cfg.validate()
