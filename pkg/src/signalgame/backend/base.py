from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ..errors import ValidationError

PURPOSES = (
    "intent-prior",
    "strategy-prior",
    "generate",
    "score",
    "infer-intent",
    "infer-strategy",
    "summarise",
    "closure",
    "rerank",
)


@dataclass(frozen=True)
class BackendRequest:
    """One call to the policy oracle.

    ``context`` is exactly what the speaking role can see. Everything the
    prompt needs beyond that (option lists, the candidate being read, the
    gold signal) travels in ``payload`` and never enters later contexts.
    """

    dialogue_id: str
    turn: str
    role: str
    context: str
    purpose: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise ValidationError(f"unknown purpose {self.purpose!r}")
        object.__setattr__(self, "turn", str(self.turn))

    def with_payload(self, **extra) -> "BackendRequest":
        return BackendRequest(self.dialogue_id, self.turn, self.role, self.context, self.purpose, {**self.payload, **extra})

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "turn": self.turn,
            "role": self.role,
            "purpose": self.purpose,
            "context": self.context,
            "payload": dict(self.payload),
        }


@dataclass(frozen=True)
class ScoredChoice:
    """Natural-log scores keyed by option id, covering exactly the requested options."""

    scores: Mapping[str, float]

    def __post_init__(self):
        vals = np.array(list(self.scores.values()), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("scored choice contains non-finite values")

    def covers(self, options: Sequence[str]) -> bool:
        return set(self.scores) == set(options)

    def distribution(self, options: Sequence[str]) -> np.ndarray:
        if not self.covers(options):
            raise ValidationError("scored choice does not cover the requested options")
        x = np.array([self.scores[o] for o in options], dtype=np.float64)
        z = np.exp(x - x.max())
        return z / z.sum()


@dataclass(frozen=True)
class Generation:
    text: str
    logprob: float
    n_tokens: int


class RequestLog:
    """Append-only record of request/response pairs, optionally mirrored to JSONL."""

    def __init__(self, path: str | Path | None = None, append: bool = False):
        self.entries: list[dict] = []
        self._lock = threading.Lock()
        self._path = Path(path) if path else None
        if self._path:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            if append and self._path.exists():
                with open(self._path, encoding="utf-8") as fh:
                    self.entries = [json.loads(line) for line in fh if line.strip()]
            else:
                self._path.write_text("", encoding="utf-8")

    def record(self, req: BackendRequest, response: Any, kind: str) -> None:
        with self._lock:
            entry = {"seq": len(self.entries), "kind": kind, "request": req.to_dict(), "response": response}
            self.entries.append(entry)
            if self._path:
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")

    def __len__(self):
        return len(self.entries)

    def contexts(self) -> list[str]:
        return [e["request"]["context"] for e in self.entries]


class Backend(ABC):
    """Turns prompts into index log-probabilities, scored candidates and text.

    Subclasses implement the underscored primitives; the public methods add
    request logging. Implementations must tolerate concurrent calls coming
    from independent dialogues.
    """

    name = "abstract"
    supports_scoring = True

    def __init__(self, log: RequestLog | None = None):
        self.log = log if log is not None else RequestLog()

    def index_logprobs(self, req: BackendRequest) -> dict[str, float]:
        """Top-k log-probabilities of the tokens at the answer position."""
        out = self._index_logprobs(req)
        self.log.record(req, dict(out), "index")
        return out

    def generate(self, req: BackendRequest, n: int) -> list[Generation]:
        out = self._generate(req, n)
        self.log.record(req, [g.__dict__ for g in out], "generate")
        return out

    def score(self, req: BackendRequest, candidates: Sequence[str]) -> list[float]:
        """Teacher-forced log-likelihood of each candidate; CapabilityError if unsupported."""
        try:
            out = self._score(req, candidates)
        except Exception as exc:
            self.log.record(req, {"error": type(exc).__name__, "message": str(exc)}, "score")
            raise
        self.log.record(req, list(out), "score")
        return out

    def complete(self, req: BackendRequest) -> str:
        out = self._complete(req)
        self.log.record(req, out, "complete")
        return out

    @abstractmethod
    def _index_logprobs(self, req: BackendRequest) -> dict[str, float]: ...

    @abstractmethod
    def _generate(self, req: BackendRequest, n: int) -> list[Generation]: ...

    @abstractmethod
    def _score(self, req: BackendRequest, candidates: Sequence[str]) -> list[float]: ...

    @abstractmethod
    def _complete(self, req: BackendRequest) -> str: ...
