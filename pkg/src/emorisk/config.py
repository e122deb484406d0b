"""Run configuration: YAML/JSON file merged with command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .analytics import Window, parse_threshold_rule
from .backend import BackendConfig
from .eval import DEPRESSIONEMO_FIELDS, FieldMap
from .prompt import DEFAULT_MAX_CHARS, PromptTemplate, PromptVariant


class FatalConfig(Exception):
    """Invalid configuration; nothing has been sent to the backend."""


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    backend_kind: str = "http"  # "http" or "mock"
    variant: PromptVariant = PromptVariant.BASE
    template_file: Path | None = None
    max_chars: int = DEFAULT_MAX_CHARS
    inputs: list[Path] = field(default_factory=list)
    cache: Path | None = None
    output_dir: Path = Path("out")
    field_map: FieldMap = field(default_factory=lambda: FieldMap(text="selftext", labels=None))
    gold_field_map: FieldMap = DEPRESSIONEMO_FIELDS
    window: Window = field(default_factory=Window)
    threshold_rule: str = "ge7"
    seed: int = 0
    sample: int | None = None
    failure_ceiling: float = 0.10
    retry_failed: bool = False

    @property
    def cache_path(self) -> Path:
        return self.cache if self.cache is not None else self.output_dir / "cache.jsonl"

    @property
    def results_path(self) -> Path:
        return self.output_dir / "results.jsonl"

    @property
    def analytics_dir(self) -> Path:
        return self.output_dir / "analytics"

    @property
    def threshold(self) -> tuple[str, int]:
        return parse_threshold_rule(self.threshold_rule)

    def template(self) -> PromptTemplate | None:
        return PromptTemplate.from_file(self.template_file) if self.template_file else None

    @property
    def prompt_version(self) -> str:
        tpl = self.template()
        return (tpl or PromptTemplate()).version_tag(self.variant)

    def validate(self, *, need_inputs: bool = False) -> "RunConfig":
        """Resolve and check every path; raises FatalConfig."""
        try:
            self.threshold
        except ValueError as exc:
            raise FatalConfig(str(exc)) from None
        if self.backend_kind not in ("http", "mock"):
            raise FatalConfig(f"unknown backend kind {self.backend_kind!r}")
        if not 0 <= self.failure_ceiling <= 1:
            raise FatalConfig("failure_ceiling must be within [0, 1]")
        if self.max_chars < 1:
            raise FatalConfig("max_chars must be positive")
        self.inputs = [Path(p).expanduser().resolve() for p in self.inputs]
        if need_inputs:
            if not self.inputs:
                raise FatalConfig("no input corpus given")
            for p in self.inputs:
                if not p.is_file():
                    raise FatalConfig(f"input not found: {p}")
        if self.template_file is not None:
            self.template_file = Path(self.template_file).expanduser().resolve()
            if not self.template_file.is_file():
                raise FatalConfig(f"template file not found: {self.template_file}")
            try:
                self.template()
            except ValueError as exc:
                raise FatalConfig(f"bad template: {exc}") from None
        self.output_dir = Path(self.output_dir).expanduser().resolve()
        if self.output_dir.exists() and not self.output_dir.is_dir():
            raise FatalConfig(f"output path is not a directory: {self.output_dir}")
        if self.cache is not None:
            self.cache = Path(self.cache).expanduser().resolve()
            if self.cache.exists() and not self.cache.is_file():
                raise FatalConfig(f"cache path is not a file: {self.cache}")
        return self


def _backend_from(data: Mapping[str, Any], base: BackendConfig) -> BackendConfig:
    known = {f.name for f in fields(BackendConfig)}
    extra = set(data) - known - {"kind"}
    if extra:
        raise FatalConfig(f"unknown backend keys: {sorted(extra)}")
    try:
        return replace(base, **{k: v for k, v in data.items() if k in known})
    except (TypeError, ValueError) as exc:
        raise FatalConfig(f"bad backend config: {exc}") from None


def load_config(path: str | Path | None = None, **overrides: Any) -> RunConfig:
    """Build a RunConfig from an optional config file, then apply non-None overrides.

    Recognised override keys mirror the command-line flags: ``inputs``,
    ``output_dir``, ``cache``, ``model``, ``endpoint``, ``variant``,
    ``concurrency``, ``threshold_rule``, ``window``, ``backend_kind``,
    ``template_file``. Environment overrides for the base URL apply last.
    """
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FatalConfig(f"config file not found: {p}")
        try:
            data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise FatalConfig(f"cannot parse {p}: {exc}") from None
        if not isinstance(data, dict):
            raise FatalConfig(f"{p}: top level must be a mapping")
    cfg = RunConfig()
    try:
        backend = data.pop("backend", {}) or {}
        cfg.backend_kind = backend.get("kind", cfg.backend_kind)
        cfg.backend = _backend_from(backend, cfg.backend)
        prompt = data.pop("prompt", {}) or {}
        if "variant" in prompt:
            cfg.variant = PromptVariant(prompt["variant"])
        if prompt.get("template_file"):
            cfg.template_file = Path(prompt["template_file"])
        cfg.max_chars = int(prompt.get("max_chars", cfg.max_chars))
        inputs = data.pop("input", data.pop("inputs", []))
        cfg.inputs = [Path(x) for x in ([inputs] if isinstance(inputs, str) else inputs or [])]
        if data.get("cache"):
            cfg.cache = Path(data.pop("cache"))
        if data.get("output_dir"):
            cfg.output_dir = Path(data.pop("output_dir"))
        if "field_map" in data:
            cfg.field_map = FieldMap.from_dict(data.pop("field_map"))
        if "gold_field_map" in data:
            cfg.gold_field_map = FieldMap.from_dict(data.pop("gold_field_map"))
        if data.get("window"):
            cfg.window = Window.parse(str(data.pop("window")))
        for key in ("threshold_rule", "seed", "sample", "failure_ceiling", "retry_failed"):
            if key in data:
                setattr(cfg, key, data.pop(key))
    except (ValueError, TypeError) as exc:
        raise FatalConfig(str(exc)) from None
    leftover = {k for k, v in data.items() if v is not None} - {"cache", "output_dir", "window"}
    if leftover:
        raise FatalConfig(f"unknown config keys: {sorted(leftover)}")

    o = {k: v for k, v in overrides.items() if v is not None}
    try:
        if "inputs" in o:
            cfg.inputs = [Path(x) for x in o["inputs"]]
        if "output_dir" in o:
            cfg.output_dir = Path(o["output_dir"])
        if "cache" in o:
            cfg.cache = Path(o["cache"])
        if "model" in o:
            cfg.backend = replace(cfg.backend, model_name=o["model"])
        if "endpoint" in o:
            cfg.backend = replace(cfg.backend, base_url=o["endpoint"])
        if "concurrency" in o:
            cfg.backend = replace(cfg.backend, max_in_flight=int(o["concurrency"]))
        if "variant" in o:
            cfg.variant = PromptVariant(o["variant"])
        if "threshold_rule" in o:
            cfg.threshold_rule = o["threshold_rule"]
        if "window" in o:
            cfg.window = Window.parse(o["window"])
        if "backend_kind" in o:
            cfg.backend_kind = o["backend_kind"]
        if "template_file" in o:
            cfg.template_file = Path(o["template_file"])
    except ValueError as exc:
        raise FatalConfig(str(exc)) from None
    cfg.backend = cfg.backend.with_env_override()
    return cfg
