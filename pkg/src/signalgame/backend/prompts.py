"""Prompt templates and chat-message assembly.

Templates live as text assets next to this module. The first line of each
file is a ``%% <name> v<version>`` header; placeholders use ``{name}``.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

PROMPT_SET_VERSION = "1"

COURT_STAGES = {
    1: "Evidence Presentation and Cross-Examination",
    2: "Court Investigation and Questioning",
    3: "Court Debate",
    4: "Final Statement",
    5: "Judgment Announcement",
}

_HEADER = re.compile(r"^%% (\S+) v(\d+)$")
_FIELD = re.compile(r"{(\w+)}")
_NUMBER_WORDS = {1: "one", 2: "two", 3: "three", 4: "four", 5: "five", 6: "six", 7: "seven", 8: "eight", 9: "nine"}


@lru_cache(maxsize=None)
def load_template(name: str) -> tuple[str, str]:
    """Return (version, body) for a template asset."""
    text = resources.files("signalgame.backend").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")
    first, _, body = text.partition("\n")
    m = _HEADER.match(first)
    if not m or m.group(1) != name:
        raise ValueError(f"template {name!r} lacks a valid header")
    return m.group(2), body.rstrip("\n")


def render(name: str, **fields) -> str:
    _, body = load_template(name)
    missing = sorted(set(_FIELD.findall(body)) - set(fields))
    if missing:
        raise KeyError(f"template {name!r} needs {missing}")
    return _FIELD.sub(lambda m: str(fields[m.group(1)]), body)


def indexed_list(names: Sequence[str]) -> str:
    return "; ".join(f"{k}. {n}" for k, n in enumerate(names, 1))


def notes_list(names: Sequence[str], notes: Sequence[str]) -> str:
    return "; ".join(f"{n}: {d}" for n, d in zip(names, notes))


def number_word(n: int) -> str:
    return _NUMBER_WORDS.get(n, str(n))


def tag_example(n: int) -> str:
    return ", ".join(f"<{k}>...</{k}>" for k in range(1, n + 1))


def system_prompt(role: str, setting: Mapping) -> str:
    """Role assignment, plus the stage instruction when the judge is speaking."""
    if setting.get("scenario") == "debate":
        return render(f"role_{role}", proposition=setting.get("proposition", ""))
    parts = [render(f"role_{role}")]
    stage = setting.get("stage")
    if role == "judge" and stage in COURT_STAGES:
        parts.append(render(f"stage_{stage}"))
    elif stage in COURT_STAGES:
        parts.append(f"It is now the [{COURT_STAGES[stage]}] stage.")
    return "\n\n".join(parts)


def rules_phrase(setting: Mapping) -> str:
    return "debate rules" if setting.get("scenario") == "debate" else "courtroom rules"


def task_prompt(purpose: str, payload: Mapping) -> str:
    """User-turn instruction for one backend purpose."""
    setting = payload.get("setting", {})
    if purpose in ("intent-prior", "infer-intent"):
        names = payload["option_names"]
        fields = dict(
            num_intents=len(names),
            available_intents=indexed_list(names),
            available_intents_notes=notes_list(names, payload["option_notes"]),
        )
        if purpose == "infer-intent":
            return render("intent_inference", utt=payload["utt"], **fields)
        return render("intent_selection", **fields)
    if purpose in ("strategy-prior", "infer-strategy"):
        names = payload["option_names"]
        fields = dict(
            intent=payload["intent_name"],
            num_strategies=len(names),
            available_strategies=indexed_list(names),
            available_strategies_notes=notes_list(names, payload["option_notes"]),
        )
        if purpose == "infer-strategy":
            return render("strategy_inference", utt=payload["utt"], **fields)
        return render("strategy_selection", **fields)
    if purpose == "generate":
        n = payload["n"]
        if payload.get("direct"):
            return render("direct_generation", rules=rules_phrase(setting))
        return render(
            "candidate_generation",
            gold_signal=payload["gold_signal"],
            rules=rules_phrase(setting),
            n_words=number_word(n),
            tag_example=tag_example(n),
        )
    if purpose == "score":
        return render("candidate_scoring", gold_signal=payload["gold_signal"], rules=rules_phrase(setting))
    if purpose == "summarise":
        return render("summarise", stage_name=payload["stage_name"], stage_transcript=payload["stage_transcript"])
    if purpose == "closure":
        return render("closure")
    if purpose == "rerank":
        cands = payload["candidates"]
        listing = "\n".join(f"{k}. {c}" for k, c in enumerate(cands, 1))
        return render("rerank", role=payload.get("role_name", "speaker"), candidates=listing, n=len(cands))
    raise ValueError(f"no prompt for purpose {purpose!r}")


def build_messages(role: str, context: str, purpose: str, payload: Mapping) -> list[dict]:
    setting = payload.get("setting", {})
    user = task_prompt(purpose, payload)
    if context:
        user = f"Dialogue context:\n{context}\n\n{user}"
    return [
        {"role": "system", "content": system_prompt(role, setting)},
        {"role": "user", "content": user},
    ]
