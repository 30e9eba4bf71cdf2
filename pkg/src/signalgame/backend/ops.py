"""Backend operations: turn raw oracle output into priors, policies and choices."""

from __future__ import annotations

import logging
import re
from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np

from ..errors import ElicitationError, ParseError, PreconditionError, TurnError
from ..game import CandidateSet, Pair, SignalPrior, softmax
from ..inventory import Inventory
from .base import Backend, BackendRequest

log = logging.getLogger(__name__)

PARSE_RETRIES = 1
_TAG = re.compile(r"<(\d+)>(.*?)</\1>", re.DOTALL)
_FIRST_INT = re.compile(r"\d+")


def _as(req: BackendRequest, purpose: str, **payload) -> BackendRequest:
    return replace(req, purpose=purpose, payload={**req.payload, **payload})


def _note(notes: list | None, **event) -> None:
    if notes is not None:
        notes.append(event)


def restricted_softmax(top: Mapping[str, float], n_options: int) -> tuple[np.ndarray, list[int]]:
    """Distribution over index tokens "1".."n" read from top-k log-probabilities.

    Mass on any other token is discarded and the valid part renormalised.
    Valid indices absent from the top-k share the unaccounted probability
    mass equally. Returns the distribution and the zero-based missing indices.
    """
    valid = {str(k): k - 1 for k in range(1, n_options + 1)}
    logp = np.full(n_options, -np.inf)
    for token, lp in top.items():
        k = valid.get(token.strip())
        if k is not None:
            logp[k] = np.logaddexp(logp[k], lp)
    present = np.isfinite(logp)
    if not present.any():
        raise ElicitationError(f"none of the {n_options} valid indices appear in the returned log-probabilities")
    p = np.zeros(n_options)
    m = logp[present].max()
    p[present] = np.exp(logp[present] - m)
    missing = [int(k) for k in np.flatnonzero(~present)]
    if missing:
        seen = float(np.sum(np.exp(np.array(list(top.values()), dtype=np.float64))))
        residual = max(1.0 - seen, 1e-12)
        p[~present] = residual / len(missing) / np.exp(m)
    return p / p.sum(), missing


def _elicit(backend: Backend, req: BackendRequest, n_options: int, notes) -> np.ndarray:
    last = None
    for attempt in range(PARSE_RETRIES + 1):
        r = req if attempt == 0 else req.with_payload(attempt=attempt)
        try:
            probs, missing = restricted_softmax(backend.index_logprobs(r), n_options)
        except ElicitationError as exc:
            last = exc
            _note(notes, event="elicitation-retry", purpose=req.purpose, attempt=attempt)
            continue
        if missing:
            log.info("top-k missed indices %s for %s", missing, req.purpose)
            _note(notes, event="missing-indices", purpose=req.purpose, indices=missing)
        return probs
    raise last


def _option_payload(names: Sequence[str], notes_: Sequence[str], ids: Sequence[str]) -> dict:
    return {"options": list(ids), "option_names": list(names), "option_notes": list(notes_)}


def _intent_options(inv: Inventory, ids: Sequence[str]) -> dict:
    defs = [inv.intent(i) for i in ids]
    return _option_payload([d.name for d in defs], [d.description for d in defs], ids)


def _strategy_options(inv: Inventory, ids: Sequence[str]) -> dict:
    defs = [inv.strategy(s) for s in ids]
    return _option_payload([d.name for d in defs], [d.description for d in defs], ids)


def elicit_signal_prior(backend: Backend, req: BackendRequest, inv: Inventory, chosen_intent: str | None = None, notes=None) -> np.ndarray:
    """Prior over the full intent set, or p(. | chosen_intent) over its strategies.

    The intent prior is zero on intents the speaking role may not select.
    """
    if chosen_intent is None:
        allowed = inv.intents_for_role(req.role)
        r = _as(req, "intent-prior", **_intent_options(inv, allowed))
        probs = _elicit(backend, r, len(allowed), notes)
        full = np.zeros(len(inv.intents))
        for k, i in enumerate(allowed):
            full[inv.intent_ids.index(i)] = probs[k]
        return full
    strategies = inv.map[chosen_intent]
    if not strategies:
        raise PreconditionError(f"intent {chosen_intent!r} has no strategies")
    r = _as(req, "strategy-prior", intent=chosen_intent, intent_name=inv.intent(chosen_intent).name, **_strategy_options(inv, strategies))
    return _elicit(backend, r, len(strategies), notes)


def build_signal_prior(inv: Inventory, intent_prior, strategy_rows: Mapping[str, np.ndarray]) -> SignalPrior:
    """Assemble the factored prior; intents without an elicited row get a uniform one."""
    rows = {}
    for i in inv.intent_ids:
        ss = inv.map[i]
        if ss:
            rows[i] = strategy_rows.get(i, np.full(len(ss), 1.0 / len(ss)))
    return SignalPrior(inv.intent_ids, intent_prior, inv.map, rows)


def gold_signal_text(inv: Inventory, pair: Pair) -> str:
    i, s = pair
    text = f"Intent: {inv.intent(i).name}"
    if s is not None:
        text += f"; Strategy: {inv.strategy(s).name}"
    return text


def parse_tagged_candidates(text: str, n: int) -> list[tuple[str, int, int]]:
    """Extract ``<k>...</k>`` utterances in order as (utterance, start, end) spans."""
    found = {}
    for m in _TAG.finditer(text):
        k = int(m.group(1))
        body = m.group(2)
        lead = len(body) - len(body.lstrip())
        stripped = body.strip()
        start = m.start(2) + lead
        if k in found:
            raise ParseError(f"tag <{k}> appears twice")
        found[k] = (stripped, start, start + len(stripped))
    if sorted(found) != list(range(1, n + 1)):
        raise ParseError(f"expected tags 1..{n}, found {sorted(found)}")
    out = [found[k] for k in range(1, n + 1)]
    utts = [u for u, _, _ in out]
    if any(not u for u in utts):
        raise ParseError("empty candidate utterance")
    if len(set(utts)) != n:
        raise ParseError("duplicate candidate utterances")
    return out


def generate_candidates(
    backend: Backend,
    req: BackendRequest,
    inv: Inventory,
    pair: Pair,
    n: int,
    length_normalise: bool = False,
    notes=None,
) -> tuple[CandidateSet, np.ndarray]:
    """Generate n candidates under the gold pair and seed the gold sender row.

    The gold row is the softmax of each candidate's summed token
    log-probabilities (optionally divided by its token count).
    """
    if n < 1:
        raise PreconditionError("need at least one candidate")
    r = _as(req, "generate", n=n, pair=list(pair), gold_signal=gold_signal_text(inv, pair))
    gens = None
    for attempt in range(PARSE_RETRIES + 1):
        try:
            gens = backend.generate(r if attempt == 0 else r.with_payload(attempt=attempt), n)
            if len(gens) != n:
                raise ParseError(f"expected {n} candidates, got {len(gens)}")
            if len({g.text for g in gens}) != n or any(not g.text.strip() for g in gens):
                raise ParseError("candidates must be distinct and non-empty")
            break
        except ParseError as exc:
            _note(notes, event="generation-reprompt", attempt=attempt, error=str(exc))
            gens = None
    if gens is None:
        raise TurnError("candidate generation failed after reprompt")
    scores = np.array([g.logprob for g in gens], dtype=np.float64)
    tokens = tuple(int(g.n_tokens) for g in gens)
    if length_normalise:
        scores = scores / np.maximum(np.array(tokens, dtype=np.float64), 1.0)
    cands = CandidateSet(tuple(g.text for g in gens), pair, {pair: tuple(scores)}, tokens)
    return cands, softmax(scores)


def score_candidates(backend: Backend, req: BackendRequest, inv: Inventory, pair: Pair, candidates: Sequence[str]) -> list[float]:
    """Teacher-forced log-likelihoods of the candidates under another pair's prompt."""
    if not candidates:
        raise PreconditionError("no candidates to score")
    r = _as(req, "score", pair=list(pair), gold_signal=gold_signal_text(inv, pair), candidates=list(candidates))
    return [float(x) for x in backend.score(r, candidates)]


def infer_signal(
    backend: Backend,
    req: BackendRequest,
    inv: Inventory,
    utterance: str,
    candidate_index: int,
    gold_intent: str,
    notes=None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Receiver's intent distribution (all intents) and strategy distribution (gold intent's strategies)."""
    if not utterance.strip():
        raise PreconditionError("cannot infer from an empty utterance")
    r = _as(req, "infer-intent", utt=utterance, candidate_index=candidate_index, **_intent_options(inv, inv.intent_ids))
    intent_dist = _elicit(backend, r, len(inv.intents), notes)
    strategies = inv.map[gold_intent]
    if not strategies:
        return intent_dist, None
    r = _as(
        req,
        "infer-strategy",
        utt=utterance,
        candidate_index=candidate_index,
        intent=gold_intent,
        intent_name=inv.intent(gold_intent).name,
        **_strategy_options(inv, strategies),
    )
    return intent_dist, _elicit(backend, r, len(strategies), notes)


def summarise_stage(backend: Backend, req: BackendRequest, stage_transcript: str, stage_name: str) -> str:
    if not stage_transcript.strip():
        raise PreconditionError("cannot summarise an empty stage")
    return backend.complete(_as(req, "summarise", stage_transcript=stage_transcript, stage_name=stage_name)).strip()


def assess_closure(backend: Backend, req: BackendRequest, notes=None) -> bool:
    """True iff the backend answers yes; anything unparseable counts as no."""
    text = backend.complete(_as(req, "closure")).strip().lower()
    word = re.match(r"[a-z]+", text)
    if word and word.group(0) in ("yes", "no"):
        return word.group(0) == "yes"
    log.warning("unparseable closure answer %r, continuing", text[:40])
    _note(notes, event="closure-unparseable", answer=text[:80])
    return False


def rerank_select(backend: Backend, req: BackendRequest, candidates: Sequence[str], fallback: int, notes=None) -> int:
    """Zero-based index the backend picks among the candidates (1-based in the prompt)."""
    if len(candidates) < 1:
        raise PreconditionError("no candidates to rerank")
    r = _as(req, "rerank", candidates=list(candidates))
    for attempt in range(PARSE_RETRIES + 1):
        text = backend.complete(r if attempt == 0 else r.with_payload(attempt=attempt))
        m = _FIRST_INT.search(text)
        if m and 1 <= int(m.group(0)) <= len(candidates):
            return int(m.group(0)) - 1
        _note(notes, event="rerank-reprompt", attempt=attempt, answer=text[:40])
    _note(notes, event="rerank-fallback", index=fallback)
    return fallback

