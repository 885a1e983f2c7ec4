"""Run configuration: defaults, config-file loading, flag overrides, validation.

Precedence for every key is command-line flag > config file > built-in
default. Credentials are never configuration values: backends name the
environment variable that holds the key (``api_key_env``).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from . import __version__
from .pipeline import FAMILIES
from .pools import REGIMES
from .prompts import REGISTRY
from .scorers import METHODS
from .simulation import STRATEGIES, SimConfig

_OUTPUT_KEYS = ("out", "csv")
_SECRET_KEYS = {"api_key", "apikey", "token", "password", "secret", "authorization"}


def _synthetic(seed: int, name: str) -> dict:
    return {"type": "synthetic", "seed": seed, "id": name}


@dataclass
class RunConfig:
    seed: int = 0
    k: list | None = None
    template_id: str = "visualrag_aux"
    method: str = "utility"
    concurrency_limit: int = 4
    regime: str = "benchmark_default"
    target_size: int = 10
    surrogate: dict = field(default_factory=lambda: _synthetic(0, "synthetic-surrogate"))
    main: dict = field(default_factory=lambda: _synthetic(1, "synthetic-main"))
    cost_family: str | None = None
    surrogate_profile: dict | None = None
    main_profile: dict | None = None
    strip_image_placeholders: bool = False
    feasibility_filter: bool = False
    max_failure_rate: float = 0.0
    max_tokens: int = 64
    input: str | None = None
    pools: str | None = None
    queries: str | None = None
    results: str | None = None
    surrogate_scores: str | None = None
    main_scores: str | None = None
    out: str | None = None
    format: str = "text"
    group_by: str | None = "category"
    fp_mode: str = "per_query"
    judge: str = "exact"
    n_candidates: int = 10
    prefill_only: bool = False
    theorems: bool = False
    compare: bool = False
    n_worlds: int = 1000
    n_draws: int = 10_000
    strategies: list = field(default_factory=lambda: list(STRATEGIES))
    csv: str | None = None
    sim: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Digest of every setting except output destinations."""
        d = {k: v for k, v in self.to_dict().items() if k not in _OUTPUT_KEYS}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def sim_config(self) -> SimConfig:
        return SimConfig(**self.sim)


def load_config_file(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data


def build_config(file_values: Mapping[str, Any] | None, flag_values: Mapping[str, Any]) -> tuple[RunConfig, list[str]]:
    """Merge defaults, file values and explicitly given flags; collect unknown keys."""
    known = {f.name for f in fields(RunConfig)}
    problems = []
    merged: dict[str, Any] = {}
    for source, values in (("config file", file_values or {}), ("flags", flag_values)):
        for key, value in values.items():
            if value is None:
                continue
            if key not in known:
                problems.append(f"{source}: unknown key {key!r}")
                continue
            merged[key] = value
    cfg = RunConfig(**merged)
    return cfg, problems


def _find_secrets(obj, path="") -> list[str]:
    found = []
    if isinstance(obj, Mapping):
        for k, v in obj.items():
            where = f"{path}.{k}" if path else str(k)
            if str(k).casefold() in _SECRET_KEYS:
                found.append(where)
            found += _find_secrets(v, where)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            found += _find_secrets(v, f"{path}[{i}]")
    return found


def _check_backend(name: str, spec, problems: list[str]) -> None:
    if not isinstance(spec, Mapping):
        problems.append(f"{name}: backend spec must be a mapping")
        return
    kind = spec.get("type", "synthetic")
    if kind == "openai":
        for key in ("base_url", "model"):
            if not spec.get(key):
                problems.append(f"{name}: openai backend needs {key!r}")
        env = spec.get("api_key_env", "OPENAI_API_KEY")
        if env is not None and not isinstance(env, str):
            problems.append(f"{name}: api_key_env must name an environment variable")
    elif kind != "synthetic":
        problems.append(f"{name}: unknown backend type {kind!r}")


def _check_file(label: str, path, problems: list[str], required: bool = True) -> None:
    if path is None:
        if required:
            problems.append(f"missing required path: --{label.replace('_', '-')}")
        return
    if not Path(path).is_file():
        problems.append(f"{label}: file not found: {path}")


def validate(cfg: RunConfig, command: str) -> list[str]:
    """Every problem with ``cfg`` for ``command``; empty when valid."""
    problems = [
        f"credential-like key {where!r} in config; use an api_key_env variable name instead"
        for where in _find_secrets(cfg.to_dict())
    ]
    if not isinstance(cfg.seed, int):
        problems.append("seed must be an integer")
    ks = resolved_ks(cfg, command)
    if not ks or any(not isinstance(k, int) or k < 1 for k in ks):
        problems.append(f"k values must be positive integers, got {cfg.k!r}")
    if cfg.concurrency_limit < 1:
        problems.append("concurrency_limit must be >= 1")
    if not 0.0 <= cfg.max_failure_rate <= 1.0:
        problems.append("max_failure_rate must lie in [0, 1]")
    if cfg.out is not None and not Path(cfg.out).resolve().parent.is_dir():
        problems.append(f"out: parent directory does not exist: {cfg.out}")
    if cfg.format not in ("text", "csv", "json"):
        problems.append(f"format must be text, csv or json, got {cfg.format!r}")

    if command == "pool":
        _check_file("input", cfg.input, problems)
        if cfg.regime not in REGIMES:
            problems.append(f"unknown regime {cfg.regime!r}")
        if cfg.target_size < 1:
            problems.append("target_size must be >= 1")
    elif command in ("rank", "run"):
        _check_file("pools", cfg.pools, problems)
        _check_file("queries", cfg.queries, problems)
        if cfg.template_id not in REGISTRY:
            problems.append(f"unknown template {cfg.template_id!r}")
        elif REGISTRY[cfg.template_id].kind != "probe":
            problems.append(f"template {cfg.template_id!r} is not a helpfulness probe")
        _check_backend("surrogate", cfg.surrogate, problems)
        if command == "run":
            _check_backend("main", cfg.main, problems)
            if len(ks) != 1:
                problems.append("run takes a single k value")
            _check_profiles(cfg, problems)
        if command == "rank" and cfg.method not in ("utility",) + METHODS:
            problems.append(f"unknown method {cfg.method!r}")
    elif command == "eval":
        if cfg.results is None and cfg.surrogate_scores is None:
            problems.append("eval needs --results and/or --surrogate-scores with --main-scores")
        _check_file("results", cfg.results, problems, required=False)
        if (cfg.surrogate_scores is None) != (cfg.main_scores is None):
            problems.append("--surrogate-scores and --main-scores go together")
        _check_file("surrogate_scores", cfg.surrogate_scores, problems, required=False)
        _check_file("main_scores", cfg.main_scores, problems, required=False)
        if cfg.fp_mode not in ("per_query", "global"):
            problems.append(f"fp_mode must be per_query or global, got {cfg.fp_mode!r}")
        if cfg.judge not in ("exact", "keyword"):
            problems.append(f"judge must be exact or keyword, got {cfg.judge!r}")
    elif command == "cost":
        if cfg.n_candidates < 1:
            problems.append("n_candidates must be >= 1")
        _check_profiles(cfg, problems)
    elif command == "simulate":
        try:
            problems += [f"sim: {p}" for p in cfg.sim_config().validate()]
        except TypeError as exc:
            problems.append(f"sim: {exc}")
        bad = [s for s in cfg.strategies if s not in STRATEGIES]
        if bad:
            problems.append(f"unknown strategies {bad}")
        if cfg.n_worlds < 1 or cfg.n_draws < 1:
            problems.append("n_worlds and n_draws must be >= 1")
    return problems


def resolved_ks(cfg: RunConfig, command: str) -> list:
    """The k list for ``command``: a single 3 for run, (1, 3, 5) elsewhere."""
    if cfg.k is None:
        return [3] if command == "run" else [1, 3, 5]
    return list(cfg.k) if isinstance(cfg.k, (list, tuple)) else [cfg.k]


def _check_profiles(cfg: RunConfig, problems: list[str]) -> None:
    if cfg.cost_family is not None and cfg.cost_family not in FAMILIES:
        problems.append(f"unknown cost family {cfg.cost_family!r}; known: {', '.join(FAMILIES)}")
    if (cfg.surrogate_profile is None) != (cfg.main_profile is None):
        problems.append("surrogate_profile and main_profile go together")
    for name in ("surrogate_profile", "main_profile"):
        spec = getattr(cfg, name)
        if spec is None:
            continue
        from .pipeline import CostProfile

        try:
            CostProfile(**spec)
        except (TypeError, ValueError) as exc:
            problems.append(f"{name}: {exc}")


def header(cfg: RunConfig, command: str) -> dict:
    return {
        "kind": "header",
        "tool": "evidence-utility",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }
