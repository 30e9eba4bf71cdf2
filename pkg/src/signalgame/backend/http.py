"""Client for chat-completions style endpoints that expose token log-probabilities.

Index elicitation and candidate generation use ``/chat/completions`` with
``logprobs``. Teacher-forced scoring uses the legacy ``/completions`` route
with ``echo`` (served by vLLM and similar); endpoints without it raise
CapabilityError and the caller falls back to uniform rows.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import httpx

from ..errors import BackendFailure, CapabilityError, ParseError
from .base import Backend, BackendRequest, Generation, RequestLog
from .ops import parse_tagged_candidates
from .prompts import build_messages

log = logging.getLogger(__name__)

ENV_PREFIX = "SIGNALGAME_"


@dataclass(frozen=True)
class HTTPConfig:
    endpoint: str = "http://localhost:8000/v1"
    model: str = "default"
    api_key: str | None = None
    top_logprobs: int = 20
    timeout: float = 60.0
    temperature: float = 0.7
    max_tokens: int = 1024
    scoring: bool = True
    retries: int = 2
    backoff: float = 0.5

    @classmethod
    def from_env(cls, environ=None, **overrides) -> "HTTPConfig":
        env = os.environ if environ is None else environ
        vals = {}
        for name, cast in (("endpoint", str), ("model", str), ("api_key", str), ("top_logprobs", int), ("timeout", float)):
            raw = env.get(ENV_PREFIX + name.upper())
            if raw:
                vals[name] = cast(raw)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**vals)

    def public(self) -> dict:
        d = asdict(self)
        d["api_key"] = "***" if self.api_key else None
        return d


class _Status(Exception):
    def __init__(self, code: int, body: str):
        super().__init__(f"HTTP {code}: {body[:200]}")
        self.code = code


class HTTPBackend(Backend):
    name = "http"

    def __init__(self, config: HTTPConfig, log: RequestLog | None = None, client: httpx.Client | None = None):
        super().__init__(log)
        self.config = config
        self.supports_scoring = config.scoring
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self.client = client or httpx.Client(timeout=config.timeout, headers=headers)

    def close(self) -> None:
        self.client.close()

    def _url(self, route: str) -> str:
        return self.config.endpoint.rstrip("/") + route

    def _post(self, route: str, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.config.retries + 1):
            if attempt:
                time.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(self._url(route), json=body)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code >= 500:
                last = _Status(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise _Status(resp.status_code, resp.text)
            return resp.json()
        raise BackendFailure(f"{route} failed after {self.config.retries + 1} attempts: {last}")

    def _chat(self, req: BackendRequest, **params) -> dict:
        body = {
            "model": self.config.model,
            "messages": build_messages(req.role, req.context, req.purpose, req.payload),
            **params,
        }
        try:
            return self._post("/chat/completions", body)
        except _Status as exc:
            raise BackendFailure(str(exc)) from exc

    def _index_logprobs(self, req: BackendRequest) -> dict[str, float]:
        k = self.config.top_logprobs
        if k < len(req.payload.get("options", ())):
            log.warning("top_logprobs=%d cannot cover %d options", k, len(req.payload["options"]))
        data = self._chat(req, max_tokens=1, temperature=0.0, logprobs=True, top_logprobs=k)
        try:
            first = data["choices"][0]["logprobs"]["content"][0]
            tops = first["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            raise CapabilityError("endpoint returned no token log-probabilities") from None
        return {t["token"]: float(t["logprob"]) for t in tops}

    def _generate(self, req: BackendRequest, n: int) -> list[Generation]:
        data = self._chat(
            req,
            max_tokens=self.config.max_tokens,
            temperature=self.config.temperature,
            logprobs=True,
        )
        try:
            choice = data["choices"][0]
            content = choice["logprobs"]["content"]
        except (KeyError, IndexError, TypeError):
            raise CapabilityError("endpoint returned no token log-probabilities") from None
        tokens = [(t["token"], float(t["logprob"])) for t in content]
        text = "".join(tok for tok, _ in tokens)
        if req.payload.get("direct"):
            stripped = text.strip()
            return [Generation(stripped, sum(lp for _, lp in tokens), len(tokens))]
        spans = parse_tagged_candidates(text, n)
        out = []
        for utterance, start, end in spans:
            pos, total, count = 0, 0.0, 0
            for tok, lp in tokens:
                a, b = pos, pos + len(tok)
                pos = b
                if b > start and a < end:
                    total += lp
                    count += 1
            out.append(Generation(utterance, total, count))
        return out

    def _score(self, req: BackendRequest, candidates: Sequence[str]) -> list[float]:
        if not self.config.scoring:
            raise CapabilityError("scoring disabled in configuration")
        messages = build_messages(req.role, req.context, req.purpose, req.payload)
        prefix = "\n\n".join(m["content"] for m in messages) + "\n\n"
        scores = []
        for cand in candidates:
            body = {
                "model": self.config.model,
                "prompt": prefix + cand,
                "max_tokens": 1,
                "temperature": 0.0,
                "echo": True,
                "logprobs": 1,
            }
            try:
                data = self._post("/completions", body)
                lp = data["choices"][0]["logprobs"]
                offsets, token_lps = lp["text_offset"], lp["token_logprobs"]
            except _Status as exc:
                raise CapabilityError(f"endpoint cannot score: {exc}") from exc
            except (KeyError, IndexError, TypeError):
                raise CapabilityError("endpoint returned no echoed log-probabilities") from None
            lo, hi = len(prefix), len(prefix) + len(cand)
            scores.append(float(sum(x for off, x in zip(offsets, token_lps) if x is not None and lo <= off < hi)))
        return scores

    def _complete(self, req: BackendRequest) -> str:
        data = self._chat(req, max_tokens=self.config.max_tokens, temperature=0.0)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise ParseError("malformed chat completion") from None
