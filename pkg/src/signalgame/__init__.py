"""Signalling-game utterance selection for multi-agent dialogue."""

from .game import (
    CandidateSet,
    GameInstance,
    GameOutcome,
    HyperParams,
    PolicyMatrix,
    SignalPrior,
    kl_divergence,
    receiver_utility,
    select_winner,
    sender_utility,
    shared_utility,
)
from .equilibrium import exploitability, pikl_step, run_equilibrium
from .inventory import Inventory, load_inventory, shipped_inventory, strategies_for

__version__ = "0.1.0"
