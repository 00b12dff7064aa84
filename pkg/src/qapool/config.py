"""Run configuration: a single JSON file drives every pipeline stage.

Relative paths inside the file resolve against the file's own directory
(manifest, scenario, cache, workdir); artifact paths resolve against the
workdir. The raw parsed dict is kept verbatim for artifact snapshots."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .datagen import DatagenConfig, PromptTemplates, StepParams, default_pronoun_bans
from .embedding import ProviderConfig
from .errors import ConfigError, InvalidRequest
from .gateway import BackendConfig
from .prompting import PromptFormat
from .selection import SelectionConfig

_STEP_NAMES = ("examples", "passage", "entities", "question", "double_check", "explanation")


@dataclass(frozen=True)
class RunPaths:
    workdir: Path
    dataset: Path
    passages: Path
    index: Path
    kmeans: Path
    runlog: Path
    report: Path


@dataclass(frozen=True)
class Seeds:
    selection: int = 0
    kmeans: int = 0
    subset: int = 0


@dataclass(frozen=True)
class RunConfig:
    backend: BackendConfig
    provider: ProviderConfig
    manifest_path: Path
    selection: SelectionConfig
    format: PromptFormat
    webq_postprocess: bool
    cluster_k: int | None
    subset_n: int | None
    seeds: Seeds
    paths: RunPaths
    datagen: DatagenConfig
    raw: dict = field(default_factory=dict, compare=False)


def _build_backend(section: dict, base: Path) -> BackendConfig:
    known = {
        "kind",
        "model_id",
        "base_url",
        "api_key_env",
        "max_retries",
        "requests_per_minute",
        "cache_dir",
        "scenario_path",
        "ban_strings",
        "backoff_base",
        "request_timeout",
    }
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"backend: unknown keys {sorted(unknown)}")
    if "ban_strings" in section:
        bans = tuple(sorted((str(s), int(i)) for s, i in section["ban_strings"].items()))
    else:
        bans = tuple(sorted(default_pronoun_bans()[0].items()))
    kwargs = {k: v for k, v in section.items() if k not in ("cache_dir", "scenario_path", "ban_strings")}
    cache_dir = str(base / section.get("cache_dir", ".qapool-cache"))
    scenario = section.get("scenario_path")
    return BackendConfig(
        cache_dir=cache_dir,
        scenario_path=str(base / scenario) if scenario else None,
        ban_strings=bans,
        **kwargs,
    )


def _build_provider(section: dict) -> ProviderConfig:
    try:
        return ProviderConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"provider: {exc}") from exc


def _build_datagen(section: dict) -> DatagenConfig:
    steps = section.get("steps", {})
    unknown = set(steps) - set(_STEP_NAMES)
    if unknown:
        raise ConfigError(f"datagen.steps: unknown steps {sorted(unknown)}")
    defaults = DatagenConfig()
    step_kwargs = {}
    for name in _STEP_NAMES:
        if name in steps:
            raw = steps[name]
            base: StepParams = getattr(defaults, name)
            step_kwargs[name] = StepParams(
                temperature=float(raw.get("temperature", base.temperature)),
                max_tokens=int(raw.get("max_tokens", base.max_tokens)),
            )
    if "pronoun_token_bias" in section:
        bias = tuple(sorted((int(t), float(b)) for t, b in section["pronoun_token_bias"].items()))
    else:
        bias = default_pronoun_bans()[1]
    templates = PromptTemplates(**section.get("templates", {}))
    return DatagenConfig(
        **step_kwargs,
        max_answer_words=int(section.get("max_answer_words", defaults.max_answer_words)),
        max_qas_per_passage=int(section.get("max_qas_per_passage", defaults.max_qas_per_passage)),
        example_retry_rounds=int(section.get("example_retry_rounds", defaults.example_retry_rounds)),
        workers=int(section.get("workers", defaults.workers)),
        pronoun_token_bias=bias,
        templates=templates,
    )


def load_config(path) -> RunConfig:
    """Parse and validate a run-config JSON file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    base = path.parent
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc

    seeds_raw = raw.get("seeds", {})
    seeds = Seeds(
        selection=int(seeds_raw.get("selection", 0)),
        kmeans=int(seeds_raw.get("kmeans", 0)),
        subset=int(seeds_raw.get("subset", 0)),
    )
    sel_raw = raw.get("selection", {})
    unknown = set(sel_raw) - {"strategy", "k"}
    if unknown:
        raise ConfigError(f"{path}: selection: unknown keys {sorted(unknown)} (seed lives under seeds.selection)")
    try:
        backend = _build_backend(raw.get("backend", {}), base)
        backend.validate()
        provider = _build_provider(raw.get("provider", {}))
        provider.validate()
        selection = SelectionConfig(
            strategy=sel_raw.get("strategy", "RetrieveInCluster"),
            k=int(sel_raw.get("k", 10)),
            seed=seeds.selection,
        )
        selection.validate()
        fmt = PromptFormat.parse(raw.get("format", "QAE"))
        datagen_cfg = _build_datagen(raw.get("datagen", {}))
    except (TypeError, ValueError, KeyError, InvalidRequest) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    manifest = base / raw.get("manifest", "manifest.json")
    workdir = base / raw.get("paths", {}).get("workdir", "run")
    path_names = {
        "dataset": "dataset.jsonl",
        "passages": "passages.jsonl",
        "index": "index.bin",
        "kmeans": "kmeans.json",
        "runlog": "runlog.jsonl",
        "report": "report.json",
    }
    given = raw.get("paths", {})
    paths = RunPaths(
        workdir=workdir,
        **{name: workdir / given.get(name, default) for name, default in path_names.items()},
    )

    cluster_k = raw.get("cluster_k")
    subset_n = raw.get("subset_n")
    return RunConfig(
        backend=backend,
        provider=provider,
        manifest_path=manifest,
        selection=selection,
        format=fmt,
        webq_postprocess=bool(raw.get("webq_postprocess", False)),
        cluster_k=int(cluster_k) if cluster_k is not None else None,
        subset_n=int(subset_n) if subset_n is not None else None,
        seeds=seeds,
        paths=paths,
        datagen=datagen_cfg,
        raw=raw,
    )
