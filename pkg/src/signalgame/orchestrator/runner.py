"""Shared driver loop with checkpoint-on-failure."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable

from ..errors import BackendError, SignalGameError
from .state import DialogueState
from .transcript import Transcript


class RunAborted(SignalGameError):
    """A backend failure stopped the dialogue; ``checkpoint`` holds the resumable state."""

    def __init__(self, message: str, state: DialogueState, checkpoint: Path | None):
        super().__init__(message)
        self.state = state
        self.checkpoint = checkpoint


def write_checkpoint(state: DialogueState, path: str | Path) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(state.to_dict(), ensure_ascii=False, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> DialogueState:
    with open(path, encoding="utf-8") as fh:
        return DialogueState.from_dict(json.load(fh))


def drive(state: DialogueState, step: Callable, sink=None, checkpoint=None) -> Transcript:
    """Call ``step(state, emit)`` until the dialogue closes.

    Every step either completes and commits, or raises before mutating the
    state, so a checkpoint written on failure resumes cleanly.
    """

    def emit(event: dict) -> None:
        state.events.append(event)
        if sink is not None:
            sink(event)

    if not state.events:
        emit({"kind": "start", "dialogue_id": state.dialogue_id, "scenario": state.scenario, "material": dict(state.material)})
    while not state.closed:
        try:
            step(state, emit)
        except BackendError as exc:
            path = write_checkpoint(state, checkpoint) if checkpoint else None
            raise RunAborted(f"{state.dialogue_id}: {type(exc).__name__}: {exc}", state, path) from exc
    if checkpoint and Path(checkpoint).exists():
        Path(checkpoint).unlink()
    return Transcript(state.dialogue_id, state.scenario, list(state.events))
