"""One dialogue turn: build the signalling game, solve it, keep only the winner."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np

from ..backend.base import Backend, BackendRequest
from ..backend.ops import (
    build_signal_prior,
    elicit_signal_prior,
    generate_candidates,
    infer_signal,
    rerank_select,
    score_candidates,
)
from ..equilibrium import run_equilibrium, run_with_trace
from ..errors import CapabilityError, TurnError
from ..game import CandidateSet, GameInstance, GameOutcome, PolicyMatrix, softmax
from ..inventory import Inventory
from .state import ROLE_NAMES, DialogueConfig, DialogueState, TurnRecord


def pair_key(pair) -> str:
    i, s = pair
    return f"{i}/{s if s is not None else '-'}"


def _rows(m: PolicyMatrix) -> list[list[float]]:
    return [[float(x) for x in row] for row in m.probs]


def base_request(state: DialogueState, role: str, turn: int, attempt: int = 0, purpose: str = "intent-prior") -> BackendRequest:
    payload = {"setting": state.setting()}
    if attempt:
        payload["attempt"] = attempt
    return BackendRequest(state.dialogue_id, str(turn), role, state.visible_context(), purpose, payload)


def build_game(
    state: DialogueState,
    sender: str,
    receiver: str,
    backend: Backend,
    inv: Inventory,
    config: DialogueConfig,
    turn: int,
    attempt: int = 0,
    notes: list | None = None,
) -> GameInstance:
    """Elicit priors, candidates and receiver beliefs, and assemble the turn's game."""
    notes = [] if notes is None else notes
    req = base_request(state, sender, turn, attempt)

    intent_prior = elicit_signal_prior(backend, req, inv, notes=notes)
    gold_intent = inv.intent_ids[int(np.argmax(intent_prior))]
    rows = {}
    for k, i in enumerate(inv.intent_ids):
        if inv.map[i] and intent_prior[k] > 0:
            rows[i] = elicit_signal_prior(backend, req, inv, chosen_intent=i, notes=notes)
    prior = build_signal_prior(inv, intent_prior, rows)
    gold_strats = inv.map[gold_intent]
    gold_pair = (gold_intent, gold_strats[int(np.argmax(prior.strategy_prior[gold_intent]))] if gold_strats else None)

    n = config.hyper.n_candidates
    cands, gold_row = generate_candidates(backend, req, inv, gold_pair, n, config.length_normalise, notes)
    tokens = np.maximum(np.array(cands.token_counts, dtype=np.float64), 1.0)

    scores = dict(cands.raw_scores)
    sender_rows = []
    pp = prior.pair_prior()
    can_score = backend.supports_scoring
    for pair, weight in zip(prior.pairs(), pp):
        if pair == gold_pair:
            sender_rows.append(gold_row)
            continue
        row = None
        if weight > 0 and can_score:
            try:
                raw = np.array(score_candidates(backend, req, inv, pair, cands.candidates), dtype=np.float64)
            except CapabilityError as exc:
                can_score = False
                notes.append({"event": "scoring-fallback", "reason": str(exc)})
            else:
                if config.length_normalise:
                    raw = raw / tokens
                scores[pair] = tuple(float(x) for x in raw)
                row = softmax(raw)
        if row is None:
            row = np.full(n, 1.0 / n)
        sender_rows.append(row)
    if not backend.supports_scoring:
        notes.append({"event": "scoring-fallback", "reason": "backend has no teacher-forced scoring"})
    cands = CandidateSet(cands.candidates, gold_pair, scores, cands.token_counts)

    r_req = base_request(state, receiver, turn, attempt)
    recv_i, recv_s = [], []
    for u, text in enumerate(cands.candidates):
        di, ds = infer_signal(backend, r_req, inv, text, u, gold_intent, notes)
        recv_i.append(di)
        if ds is not None:
            recv_s.append(ds)
    labels = tuple(range(n))
    return GameInstance(
        prior,
        cands,
        PolicyMatrix(prior.pairs(), labels, np.array(sender_rows)),
        PolicyMatrix(labels, inv.intent_ids, np.array(recv_i)),
        PolicyMatrix(labels, gold_strats, np.array(recv_s) if gold_strats else np.zeros((n, 0))),
        config.hyper,
        inv.scenario_id,
    )


def _initial_outcome(game: GameInstance, index: int) -> GameOutcome:
    return GameOutcome(
        game.candidates.candidates[index],
        index,
        game.initial_index,
        (game.sender0, game.recv_intent0, game.recv_strategy0),
        0,
    )


def game_audit(game: GameInstance, outcome: GameOutcome) -> dict:
    prior = game.prior
    final_s, final_i, final_r = outcome.final_policies
    return {
        "gold_pair": list(game.gold_pair),
        "w": game.w,
        "intent_prior": {i: float(p) for i, p in zip(prior.intents, prior.intent_prior)},
        "strategy_prior": {i: [float(x) for x in row] for i, row in prior.strategy_prior.items() if len(row)},
        "candidates": list(game.candidates.candidates),
        "token_counts": list(game.candidates.token_counts or ()),
        "raw_scores": {pair_key(p): list(v) for p, v in game.candidates.raw_scores.items()},
        "sender0": {pair_key(p): [float(x) for x in game.sender0.row(p)] for p in game.sender0.rows},
        "recv_intent0": _rows(game.recv_intent0),
        "recv_strategy0": _rows(game.recv_strategy0),
        "final_sender": {pair_key(p): [float(x) for x in final_s.row(p)] for p in final_s.rows},
        "final_intent": _rows(final_i),
        "final_strategy": _rows(final_r),
        "rounds_run": outcome.rounds_run,
    }


def play_turn_game(
    state: DialogueState,
    sender: str,
    receiver: str,
    backend: Backend,
    inv: Inventory,
    config: DialogueConfig,
    addressee: str | None = None,
    attempt: int = 0,
) -> TurnRecord:
    """Run the full per-turn pipeline for ``sender`` speaking to ``receiver``.

    Returns the record without committing it; the caller appends the winning
    utterance to the dialogue. If candidate generation fails even after its
    reprompt, the turn falls back to a single directly generated utterance.
    """
    turn = state.turn + 1
    notes: list = []
    try:
        game = build_game(state, sender, receiver, backend, inv, config, turn, attempt, notes)
    except TurnError as exc:
        notes.append({"event": "generation-failed", "error": str(exc)})
        rec = direct_turn(state, sender, backend, addressee or receiver, attempt, reason="generation-failed")
        return replace(rec, receiver=receiver, audit={**rec.audit, "notes": notes})

    mode = config.selection
    if mode == "equilibrium" and config.trace_dir:
        trace = Path(config.trace_dir) / f"{state.dialogue_id}-turn{turn:03d}.csv"
        trace.parent.mkdir(parents=True, exist_ok=True)
        outcome = run_with_trace(game, trace)
    elif mode == "equilibrium":
        outcome = run_equilibrium(game)
    elif mode == "rerank":
        req = base_request(state, sender, turn, attempt).with_payload(role_name=ROLE_NAMES.get(sender, sender))
        idx = rerank_select(backend, req, game.candidates.candidates, game.initial_index, notes)
        outcome = _initial_outcome(game, idx)
    else:
        outcome = _initial_outcome(game, game.initial_index)

    audit = game_audit(game, outcome)
    audit["notes"] = notes
    toks = game.candidates.token_counts
    return TurnRecord(
        turn=turn,
        stage=state.stage,
        speaker=sender,
        addressee=addressee or receiver,
        receiver=receiver,
        utterance=outcome.winning_utterance,
        selection_mode=mode,
        game_played=True,
        winning_index=outcome.winning_index,
        initial_index=outcome.initial_index,
        n_tokens=int(toks[outcome.winning_index]) if toks else len(outcome.winning_utterance.split()),
        audit=audit,
    )


def direct_turn(state: DialogueState, speaker: str, backend: Backend, addressee: str, attempt: int = 0, reason: str = "monologue") -> TurnRecord:
    """A turn generated without a game (no scheduled receiver)."""
    turn = state.turn + 1
    req = base_request(state, speaker, turn, attempt, purpose="generate").with_payload(direct=True, n=1)
    gen = backend.generate(req, 1)[0]
    return TurnRecord(
        turn=turn,
        stage=state.stage,
        speaker=speaker,
        addressee=addressee,
        receiver=None,
        utterance=gen.text.strip(),
        selection_mode="initial",
        game_played=False,
        winning_index=0,
        initial_index=0,
        n_tokens=int(gen.n_tokens),
        audit={"reason": reason},
    )
