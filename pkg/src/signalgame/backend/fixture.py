"""Deterministic, file-driven stand-in for a language-model endpoint.

A fixture script maps (turn key, purpose) to canned scores or text. Anything
the script leaves out is filled from ``defaults.scores``:

* ``uniform`` - every index and candidate scores the same;
* ``hashed``  - scores drawn from a SHA-256 of the full lookup key, so a
  script only needs to pin the turns a test cares about.

Either way the backend is a pure function of (script, request key).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Sequence

from ..errors import CapabilityError, ParseError
from ..schemas import validate_document
from .base import Backend, BackendRequest, Generation, RequestLog

FIXTURE_SCHEMA = "lingua-game-fixture/1"


def _unit(*parts) -> float:
    digest = hashlib.sha256("|".join(map(str, parts)).encode("utf-8")).hexdigest()
    return int(digest[:13], 16) / float(16**13)


def whitespace_tokens(text: str) -> int:
    return len(text.split())


class FixtureBackend(Backend):
    name = "fixture"

    def __init__(self, script: Mapping, log: RequestLog | None = None):
        super().__init__(log)
        validate_document(script, "fixture")
        self.script = script
        self.dialogue_id = script["dialogue_id"]
        defaults = script.get("defaults", {})
        self.mode = defaults.get("scores", "uniform")
        self.supports_scoring = defaults.get("scoring", True)
        self.turns = script.get("turns", {})

    @classmethod
    def from_file(cls, path: str | Path, log: RequestLog | None = None) -> "FixtureBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), log)

    def _entry(self, req: BackendRequest, purpose: str):
        attempt = req.payload.get("attempt", 0)
        if attempt:
            hit = self.turns.get(f"{req.turn}#{attempt}", {}).get(purpose)
            if hit is not None:
                return hit
        return self.turns.get(req.turn, {}).get(purpose)

    def _default(self, low: float, high: float, *key) -> float:
        if self.mode == "hashed":
            return low + (high - low) * _unit(self.dialogue_id, *key)
        return 0.5 * (low + high)

    def _lookup_scores(self, spec, options: Sequence[str], *key) -> list[float]:
        if isinstance(spec, list):
            if len(spec) != len(options):
                raise ParseError(f"fixture scores for {key} have {len(spec)} entries, need {len(options)}")
            return [float(x) for x in spec]
        spec = spec or {}
        return [float(spec[o]) if o in spec else self._default(-4.0, 0.0, *key, o) for o in options]

    def _index_logprobs(self, req: BackendRequest) -> dict[str, float]:
        options = req.payload["options"]
        entry = self._entry(req, req.purpose)
        if req.purpose == "strategy-prior":
            sub = req.payload["intent"]
            entry = (entry or {}).get(sub)
        elif req.purpose in ("infer-intent", "infer-strategy"):
            sub = str(req.payload["candidate_index"])
            entry = (entry or {}).get(sub)
        else:
            sub = ""
        scores = self._lookup_scores(entry, options, req.turn, req.purpose, sub)
        return {str(k): lp for k, lp in enumerate(scores, 1)}

    def _generate(self, req: BackendRequest, n: int) -> list[Generation]:
        if req.payload.get("direct"):
            return [self._direct(req)]
        entry = self._entry(req, "generate")
        if entry is None:
            texts = [f"({req.role}) turn {req.turn}, option {j + 1}." for j in range(n)]
            scores = [self._default(-40.0, -10.0, req.turn, "generate", j) for j in range(n)]
            tokens = [whitespace_tokens(t) for t in texts]
        else:
            texts = list(entry["candidates"])
            scores = entry.get("scores") or [self._default(-40.0, -10.0, req.turn, "generate", j) for j in range(len(texts))]
            tokens = entry.get("tokens") or [whitespace_tokens(t) for t in texts]
        if len(texts) != n:
            raise ParseError(f"fixture turn {req.turn} scripts {len(texts)} candidates, {n} requested")
        return [Generation(t, float(s), int(k)) for t, s, k in zip(texts, scores, tokens)]

    def _direct(self, req: BackendRequest) -> Generation:
        """Single utterance: a ``direct`` entry, else a one-candidate ``generate`` entry."""
        entry = self._entry(req, "direct")
        if entry is not None:
            text = entry["text"]
            return Generation(text, float(entry.get("score", self._default(-40.0, -10.0, req.turn, "direct"))), int(entry.get("tokens", whitespace_tokens(text))))
        gen = self._entry(req, "generate")
        if gen is not None and len(gen["candidates"]) == 1:
            return self._generate(req.with_payload(direct=False), 1)[0]
        text = f"({req.role}) turn {req.turn}."
        return Generation(text, self._default(-40.0, -10.0, req.turn, "direct"), whitespace_tokens(text))

    def _score(self, req: BackendRequest, candidates: Sequence[str]) -> list[float]:
        if not self.supports_scoring:
            raise CapabilityError("fixture configured without teacher-forced scoring")
        i, s = req.payload["pair"]
        key = f"{i}/{s if s is not None else '-'}"
        entry = (self._entry(req, "score") or {}).get(key)
        if entry is not None:
            if len(entry) != len(candidates):
                raise ParseError(f"fixture score row {key} has wrong length")
            return [float(x) for x in entry]
        if req.payload.get("gold"):
            try:
                gens = self._generate(req, len(candidates))
            except ParseError:
                gens = []
            if [g.text for g in gens] == list(candidates):
                return [g.logprob for g in gens]
        return [self._default(-40.0, -10.0, req.turn, "score", key, j) for j in range(len(candidates))]

    def _complete(self, req: BackendRequest) -> str:
        entry = self._entry(req, req.purpose)
        if req.purpose == "summarise":
            if entry is not None:
                return entry
            return f"The {req.payload.get('stage_name', 'previous')} stage has been completed."
        if req.purpose == "closure":
            return "yes" if entry else "no"
        if req.purpose == "rerank":
            return str(int(entry) + 1) if entry is not None else "1"
        raise CapabilityError(f"fixture cannot complete purpose {req.purpose!r}")
