"""Run configuration with layered resolution: flags > config file > environment > defaults."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError
from .game import HyperParams
from .orchestrator.state import SELECTION_MODES, DialogueConfig

SCENARIOS = ("courtroom", "debate")
BACKENDS = ("fixture", "http")

ENV_VARS = {
    "endpoint": "SIGNALGAME_ENDPOINT",
    "model": "SIGNALGAME_MODEL",
    "api_key": "SIGNALGAME_API_KEY",
    "top_logprobs": "SIGNALGAME_TOP_LOGPROBS",
    "timeout": "SIGNALGAME_TIMEOUT",
}


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None = None
    inputs: tuple[str, ...] = ()
    backend: str = "fixture"
    fixture: str | None = None
    endpoint: str = "http://localhost:8000/v1"
    model: str = "default"
    api_key: str | None = None
    top_logprobs: int = 20
    timeout: float = 60.0
    scoring: bool = True
    selection: str = "equilibrium"
    w: float = 0.5
    lam: float = 0.1
    eta: float = 0.1
    rounds: int = 5000
    candidates: int = 3
    max_turns: int | None = None
    length_normalise: bool = False
    out: str = "runs"
    trace: bool = False
    workers: int = 1
    seed: int = 0
    inventory: str | None = None

    def __post_init__(self):
        problems = []
        if self.scenario is not None and self.scenario not in SCENARIOS:
            problems.append(f"scenario must be one of {SCENARIOS}")
        if self.backend not in BACKENDS:
            problems.append(f"backend must be one of {BACKENDS}")
        if self.selection not in SELECTION_MODES:
            problems.append(f"selection must be one of {SELECTION_MODES}")
        if self.workers < 1:
            problems.append("workers must be at least 1")
        if self.max_turns is not None and self.max_turns < 1:
            problems.append("max_turns must be positive")
        if problems:
            raise ValidationError("; ".join(problems), problems)
        self.hyper()

    def hyper(self) -> HyperParams:
        return HyperParams(w=self.w, lam=self.lam, eta=self.eta, rounds=self.rounds, n_candidates=self.candidates)

    def dialogue_config(self, trace_dir: str | None = None) -> DialogueConfig:
        caps = {}
        if self.max_turns is not None:
            caps = {"max_turns_per_stage": self.max_turns, "max_turns_debate": self.max_turns}
        return DialogueConfig(self.hyper(), self.selection, length_normalise=self.length_normalise, trace_dir=trace_dir, **caps)

    def to_dict(self) -> dict:
        """Provenance record; the API key is never written out."""
        d = asdict(self)
        d["inputs"] = list(self.inputs)
        d["api_key"] = "***" if self.api_key else None
        d["lambda"] = d.pop("lam")
        return d


_FIELDS = {f.name: f for f in fields(RunConfig)}
_ALIASES = {"lambda": "lam", "input": "inputs", "n_candidates": "candidates"}


def _cast(name: str, value):
    kind = _FIELDS[name].type
    if value is None:
        return None
    if name == "inputs":
        return tuple([value] if isinstance(value, str) else value)
    if "bool" in kind and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if kind.startswith("int"):
        return int(value)
    if kind.startswith("float"):
        return float(value)
    return value


def _normalise(layer: Mapping) -> dict:
    out = {}
    for key, value in layer.items():
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in _FIELDS:
            raise ValidationError(f"unknown configuration key {key!r}")
        try:
            out[key] = _cast(key, value)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"bad value for {key!r}: {value!r}") from exc
    return out


def env_layer(environ: Mapping[str, str] | None = None) -> dict:
    env = os.environ if environ is None else environ
    return _normalise({k: env[v] for k, v in ENV_VARS.items() if env.get(v)})


def file_layer(path: str | Path | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValidationError("config file must hold a JSON object")
    if doc.get("api_key") == "***":
        doc.pop("api_key")
    return _normalise(doc)


def resolve(flags: Mapping[str, Any], config_path: str | Path | None = None, environ: Mapping[str, str] | None = None) -> RunConfig:
    """Merge the layers; ``None`` flag values mean "not given"."""
    merged: dict = {}
    merged.update(env_layer(environ))
    merged.update(file_layer(config_path))
    merged.update(_normalise({k: v for k, v in flags.items() if v is not None}))
    return RunConfig(**merged)
