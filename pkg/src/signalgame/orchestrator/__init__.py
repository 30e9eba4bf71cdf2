"""Multi-agent dialogue layer: courtroom and debate loops around the per-turn game."""

from .courtroom import END_PHRASE, Directive, parse_judge_directive, run_courtroom, start_courtroom
from .debate import run_debate, start_debate
from .runner import RunAborted, load_checkpoint, write_checkpoint
from .state import DialogueConfig, DialogueState, TurnRecord
from .transcript import Transcript, alternation_stats, audit_visible_context, corpus_report, dialogue_stats, load_transcripts
from .turn import build_game, direct_turn, play_turn_game
