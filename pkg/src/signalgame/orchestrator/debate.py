"""Two-sided debate: strict alternation, closure judged after every exchange."""

from __future__ import annotations

from typing import Callable, Mapping

from ..backend.base import Backend
from ..backend.ops import assess_closure
from ..inventory import Inventory
from ..schemas import validate_document
from .runner import drive
from .state import DialogueConfig, DialogueState
from .turn import base_request, play_turn_game

SIDES = ("proponent", "opponent")


def speaker_for(turn: int) -> str:
    """Proponent holds the odd turns."""
    return SIDES[(turn - 1) % 2]


def start_debate(prop: Mapping, dialogue_id: str | None = None) -> DialogueState:
    validate_document(prop, "proposition")
    return DialogueState(dialogue_id or prop["proposition_id"], "debate", dict(prop), "open", next_speaker="proponent")


def _close(state: DialogueState, emit, closed_by: str) -> None:
    state.stage = "closed"
    state.pending = None
    emit({"kind": "end", "turns": state.turn, "closed_by": closed_by, "flags": list(state.flags)})


def step_debate(state: DialogueState, backend: Backend, inv: Inventory, config: DialogueConfig, emit: Callable) -> None:
    if state.closed:
        return
    if state.pending == "closure":
        notes: list = []
        req = base_request(state, speaker_for(state.turn), state.turn, purpose="closure")
        done = assess_closure(backend, req, notes)
        for n in notes:
            state.flag(turn=state.turn, **n)
        state.pending = None
        if done:
            _close(state, emit, "closure")
        elif state.turn >= config.max_turns_debate:
            state.flag(event="turn-cap", turns=state.turn)
            _close(state, emit, "cap")
        return
    speaker = speaker_for(state.turn + 1)
    listener = SIDES[1 - SIDES.index(speaker)]
    rec = play_turn_game(state, speaker, listener, backend, inv, config, addressee=listener)
    emit(state.commit_turn(rec))
    state.next_speaker = listener
    if state.turn >= 2:
        state.pending = "closure"
    elif state.turn >= config.max_turns_debate:
        state.flag(event="turn-cap", turns=state.turn)
        _close(state, emit, "cap")


def run_debate(
    prop: Mapping,
    backend: Backend,
    inv: Inventory,
    config: DialogueConfig = DialogueConfig(),
    state: DialogueState | None = None,
    sink: Callable[[dict], None] | None = None,
    checkpoint=None,
):
    """Run (or resume) a debate and return its Transcript."""
    if state is None:
        state = start_debate(prop)
    return drive(state, lambda s, emit: step_debate(s, backend, inv, config, emit), sink, checkpoint)
