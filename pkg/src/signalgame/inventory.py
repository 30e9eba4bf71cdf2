"""Scenario inventories: the intents a speaker can pursue and the strategies realising them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import UnknownIdError, ValidationError
from .game import SignalPrior
from .schemas import validate_document

INVENTORY_SCHEMA = "lingua-game-inventory/1"

# intents, strategies
SHIPPED_COUNTS = {"courtroom": (9, 12), "debate": (6, 8)}


@dataclass(frozen=True)
class IntentDef:
    id: str
    name: str
    description: str


@dataclass(frozen=True)
class StrategyDef:
    id: str
    name: str
    description: str
    parent_intents: tuple[str, ...]


@dataclass(frozen=True)
class Inventory:
    scenario_id: str
    intents: tuple[IntentDef, ...]
    strategies: tuple[StrategyDef, ...]
    map: Mapping[str, tuple[str, ...]]
    roles: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def intent_ids(self) -> tuple[str, ...]:
        return tuple(i.id for i in self.intents)

    def intent(self, intent_id: str) -> IntentDef:
        for i in self.intents:
            if i.id == intent_id:
                return i
        raise UnknownIdError(intent_id)

    def strategy(self, strategy_id: str) -> StrategyDef:
        for s in self.strategies:
            if s.id == strategy_id:
                return s
        raise UnknownIdError(strategy_id)

    def intents_for_role(self, role: str) -> tuple[str, ...]:
        """Intents the role may select; every intent when the role is unrestricted."""
        return tuple(self.roles.get(role, self.intent_ids))

    def uniform_prior(self) -> SignalPrior:
        return SignalPrior.uniform(self.intent_ids, self.map)

    def label_strings(self) -> set[str]:
        """Every intent and strategy name, for leak scans."""
        return {i.name for i in self.intents} | {s.name for s in self.strategies}


def strategies_for(inv: Inventory, intent: str) -> tuple[str, ...]:
    if intent not in inv.map:
        raise UnknownIdError(f"unknown intent {intent!r}")
    return inv.map[intent]


def load_inventory(doc: Mapping) -> Inventory:
    """Validate an inventory document and build the Inventory.

    All problems are collected and reported together.
    """
    validate_document(doc, "inventory")
    problems: list[str] = []
    intents = tuple(IntentDef(d["id"], d["name"], d["description"]) for d in doc["intents"])
    strategies = tuple(
        StrategyDef(d["id"], d["name"], d["description"], tuple(d["parent_intents"])) for d in doc["strategies"]
    )
    intent_ids = [i.id for i in intents]
    strategy_ids = [s.id for s in strategies]
    for kind, ids in (("intent", intent_ids), ("strategy", strategy_ids)):
        seen = set()
        for x in ids:
            if x in seen:
                problems.append(f"duplicate {kind} id {x!r}")
            seen.add(x)
    for s in strategies:
        for parent in s.parent_intents:
            if parent not in intent_ids:
                problems.append(f"strategy {s.id!r} references unknown intent {parent!r}")
        if len(set(s.parent_intents)) != len(s.parent_intents):
            problems.append(f"strategy {s.id!r} lists a parent intent twice")
    roles = {r: tuple(v) for r, v in doc.get("roles", {}).items()}
    for role, allowed in roles.items():
        for x in allowed:
            if x not in intent_ids:
                problems.append(f"role {role!r} references unknown intent {x!r}")
    sid = doc["scenario_id"]
    if sid in SHIPPED_COUNTS:
        want_i, want_s = SHIPPED_COUNTS[sid]
        if len(intents) != want_i or len(strategies) != want_s:
            problems.append(
                f"scenario {sid!r} must have {want_i} intents and {want_s} strategies, "
                f"got {len(intents)} and {len(strategies)}"
            )
    if problems:
        raise ValidationError(f"invalid inventory {sid!r}: " + "; ".join(problems), problems)
    mapping = {i: tuple(s.id for s in strategies if i in s.parent_intents) for i in intent_ids}
    return Inventory(sid, intents, strategies, mapping, roles)


def serialise_inventory(inv: Inventory) -> dict:
    doc = {
        "schema": INVENTORY_SCHEMA,
        "scenario_id": inv.scenario_id,
        "intents": [{"id": i.id, "name": i.name, "description": i.description} for i in inv.intents],
        "strategies": [
            {"id": s.id, "name": s.name, "description": s.description, "parent_intents": list(s.parent_intents)}
            for s in inv.strategies
        ],
    }
    if inv.roles:
        doc["roles"] = {r: list(v) for r, v in inv.roles.items()}
    return doc


def load_inventory_file(path: str | Path) -> Inventory:
    with open(path, encoding="utf-8") as fh:
        return load_inventory(json.load(fh))


def shipped_inventory(scenario: str) -> Inventory:
    """Load ``courtroom`` or ``debate`` from the package data."""
    if scenario not in SHIPPED_COUNTS:
        raise UnknownIdError(f"no shipped inventory {scenario!r}")
    text = resources.files("signalgame.data").joinpath(f"{scenario}.json").read_text(encoding="utf-8")
    return load_inventory(json.loads(text))
