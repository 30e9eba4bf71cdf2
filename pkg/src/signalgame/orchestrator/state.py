"""Dialogue state, turn records and the visible-context rules."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

from ..backend.prompts import COURT_STAGES
from ..errors import ValidationError
from ..game import HyperParams

SELECTION_MODES = ("equilibrium", "rerank", "initial")

ROLE_NAMES = {
    "judge": "Judge",
    "plaintiff": "Plaintiff Lawyer",
    "defendant": "Defendant Lawyer",
    "proponent": "Proponent",
    "opponent": "Opponent",
}

EVERYONE = "all"
COURT_KEYS = tuple(str(k) for k in COURT_STAGES)


@dataclass(frozen=True)
class DialogueConfig:
    hyper: HyperParams = HyperParams()
    selection: str = "equilibrium"
    max_turns_per_stage: int = 40
    max_turns_debate: int = 60
    length_normalise: bool = False
    trace_dir: str | None = None

    def __post_init__(self):
        if self.selection not in SELECTION_MODES:
            raise ValidationError(f"selection must be one of {SELECTION_MODES}, got {self.selection!r}")
        if self.max_turns_per_stage < 1 or self.max_turns_debate < 1:
            raise ValidationError("turn caps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DialogueConfig":
        d = dict(d)
        d["hyper"] = HyperParams.from_dict(d.get("hyper", {}))
        return cls(**d)


@dataclass(frozen=True)
class TurnRecord:
    """One committed utterance.

    ``audit`` carries every game intermediate (priors, candidates, policies).
    It is persisted in the transcript but never fed back into any context.
    """

    turn: int
    stage: str
    speaker: str
    addressee: str
    receiver: str | None
    utterance: str
    selection_mode: str
    game_played: bool
    winning_index: int
    initial_index: int
    n_tokens: int
    audit: Mapping[str, Any] = field(default_factory=dict)

    @property
    def alternation(self) -> str:
        return "flipped" if self.winning_index != self.initial_index else "unchanged"

    def to_dict(self) -> dict:
        return {
            "kind": "turn",
            "turn": self.turn,
            "stage": self.stage,
            "speaker": self.speaker,
            "addressee": self.addressee,
            "receiver": self.receiver,
            "utterance": self.utterance,
            "selection_mode": self.selection_mode,
            "alternation": self.alternation,
            "game_played": self.game_played,
            "winning_index": self.winning_index,
            "initial_index": self.initial_index,
            "n_tokens": self.n_tokens,
            "audit": dict(self.audit),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TurnRecord":
        keys = ("turn", "stage", "speaker", "addressee", "receiver", "utterance", "selection_mode",
                "game_played", "winning_index", "initial_index", "n_tokens", "audit")
        return cls(**{k: d[k] for k in keys})


def describe_case(case: Mapping) -> str:
    lines = [f"Case {case['case_id']}" + (f": {case['cause_of_action']}" if case.get("cause_of_action") else "")]
    for party in ("plaintiff", "defendant"):
        attrs = case["parties"][party]
        lines.append(f"{party.capitalize()}: " + "; ".join(f"{k}: {v}" for k, v in attrs.items()))
    lines.append(f"Description: {case['description']}")
    return "\n".join(lines)


def describe_proposition(prop: Mapping) -> str:
    return f"Proposition: {prop['proposition']}"


def history_line(role: str, utterance: str) -> str:
    return f"[{ROLE_NAMES.get(role, role)}]: {utterance}"


@dataclass
class DialogueState:
    """Everything needed to continue a dialogue; JSON round-trippable for checkpoints.

    Courtroom ``stage`` is "1".."5" (then "closed"); debate uses "open"/"closed".
    """

    dialogue_id: str
    scenario: str
    material: Mapping[str, Any]
    stage: str
    turn: int = 0
    stage_turns: int = 0
    history: list[tuple[str, str]] = field(default_factory=list)
    summaries: list[tuple[str, str]] = field(default_factory=list)
    full_history: list[tuple[str, str]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    next_speaker: str | None = None
    last_party: str | None = None
    pending: str | None = None
    flags: list[dict] = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return self.stage == "closed"

    def material_text(self) -> str:
        if self.scenario == "courtroom":
            return describe_case(self.material)
        return describe_proposition(self.material)

    def visible_context(self, include_stage: bool = True) -> str:
        """Context shared by every role at this point.

        Courtroom: case material, the summaries of completed stages and the
        current stage's history. Debate: proposition and the full history.
        """
        parts = [self.material_text()]
        if self.scenario == "courtroom":
            for stage, text in self.summaries:
                parts.append(f"Summary of the [{COURT_STAGES[int(stage)]}] stage:\n{text}")
            lines = self.history
            if include_stage and self.stage in COURT_KEYS and lines:
                parts.append(f"Current stage [{COURT_STAGES[int(self.stage)]}]:\n" + "\n".join(history_line(r, u) for r, u in lines))
        elif self.full_history:
            parts.append("\n".join(history_line(r, u) for r, u in self.full_history))
        return "\n\n".join(parts)

    def setting(self) -> dict:
        if self.scenario == "courtroom":
            return {"scenario": "courtroom", "stage": int(self.stage) if self.stage.isdigit() else None}
        return {"scenario": "debate", "proposition": self.material["proposition"]}

    def commit_turn(self, rec: TurnRecord) -> dict:
        self.history.append((rec.speaker, rec.utterance))
        self.full_history.append((rec.speaker, rec.utterance))
        self.turn = rec.turn
        self.stage_turns += 1
        return rec.to_dict()

    def stage_transcript(self) -> str:
        return "\n".join(history_line(r, u) for r, u in self.history)

    def flag(self, **event) -> dict:
        self.flags.append(event)
        return event

    def commit_summary(self, stage: str, text: str) -> dict:
        self.summaries.append((stage, text))
        return {"kind": "summary", "stage": stage, "after_turn": self.turn, "text": text}

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("history", "summaries", "full_history"):
            d[k] = [list(x) for x in d[k]]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DialogueState":
        d = dict(d)
        for k in ("history", "summaries", "full_history"):
            d[k] = [tuple(x) for x in d.get(k, [])]
        return cls(**d)
