"""Domain types of the per-turn signalling game and its utility functions.

A game is played between a sender, who privately holds an (intent, strategy)
pair and picks one of a handful of candidate utterances, and a receiver, who
reads the utterance and independently guesses the intent (over the whole
intent set) and the strategy (over the strategies of the gold intent).

All arithmetic is float64. Matrices are immutable once built.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import StructuralError, ValidationError

GAME_SPEC_SCHEMA = "lingua-game/1"
ROW_TOL = 1e-9
DEFAULT_FLOOR = 1e-12

Pair = tuple[str, "str | None"]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _check_distribution(vec: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{what}: non-finite entries")
    if np.any(vec < 0):
        raise ValidationError(f"{what}: negative entries")
    if abs(vec.sum() - 1.0) > ROW_TOL:
        raise ValidationError(f"{what}: sums to {vec.sum():.12g}, expected 1")


@dataclass(frozen=True)
class PolicyMatrix:
    """Row-stochastic conditional distribution with labelled axes.

    A matrix with zero columns is allowed and stands for an absent policy
    (the strategy receiver when the gold intent has no strategies).
    """

    rows: tuple
    cols: tuple
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "cols", tuple(self.cols))
        probs = np.array(self.probs, dtype=np.float64).reshape(len(self.rows), len(self.cols))
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if len(set(self.rows)) != len(self.rows) or len(set(self.cols)) != len(self.cols):
            raise StructuralError("axis labels must be unique")
        if self.cols:
            for label, row in zip(self.rows, probs):
                _check_distribution(row, f"row {label!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    @property
    def empty(self) -> bool:
        return len(self.cols) == 0

    def row(self, label: Hashable) -> np.ndarray:
        try:
            return self.probs[self.rows.index(label)]
        except ValueError:
            raise StructuralError(f"no row {label!r}") from None

    def col_index(self, label: Hashable) -> int:
        return self.cols.index(label)

    def replace(self, probs) -> "PolicyMatrix":
        return PolicyMatrix(self.rows, self.cols, probs)

    @classmethod
    def uniform(cls, rows: Sequence, cols: Sequence) -> "PolicyMatrix":
        n = len(cols)
        return cls(tuple(rows), tuple(cols), np.full((len(rows), n), 1.0 / n if n else 0.0))

    def __eq__(self, other):
        if not isinstance(other, PolicyMatrix):
            return NotImplemented
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and np.array_equal(self.probs, other.probs)
        )

    __hash__ = None


@dataclass(frozen=True)
class SignalPrior:
    """Factored prior p(i, s) = p(i) * p(s | i).

    ``strategies`` maps each intent to its ordered strategy ids (possibly
    empty); ``strategy_prior`` holds p(. | i) over those ids.
    """

    intents: tuple[str, ...]
    intent_prior: np.ndarray
    strategies: Mapping[str, tuple[str, ...]]
    strategy_prior: Mapping[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "intents", tuple(self.intents))
        p = _frozen(self.intent_prior)
        object.__setattr__(self, "intent_prior", p)
        if p.shape != (len(self.intents),):
            raise StructuralError("intent_prior length does not match intents")
        _check_distribution(p, "intent prior")
        strategies = {i: tuple(self.strategies.get(i, ())) for i in self.intents}
        extra = set(self.strategies) - set(self.intents)
        if extra:
            raise StructuralError(f"strategies given for unknown intents {sorted(extra)}")
        sp = {}
        for i in self.intents:
            if strategies[i]:
                if i not in self.strategy_prior:
                    raise StructuralError(f"missing strategy prior for intent {i!r}")
                row = _frozen(self.strategy_prior[i])
                if row.shape != (len(strategies[i]),):
                    raise StructuralError(f"strategy prior for {i!r} has wrong length")
                _check_distribution(row, f"strategy prior of {i!r}")
                sp[i] = row
            else:
                sp[i] = _frozen(np.zeros(0))
        object.__setattr__(self, "strategies", strategies)
        object.__setattr__(self, "strategy_prior", sp)

    @classmethod
    def uniform(cls, intents: Sequence[str], strategies: Mapping[str, Sequence[str]]) -> "SignalPrior":
        intents = tuple(intents)
        sp = {i: np.full(len(strategies.get(i, ())), 1.0 / max(len(strategies.get(i, ())), 1)) for i in intents}
        return cls(intents, np.full(len(intents), 1.0 / len(intents)), {i: tuple(strategies.get(i, ())) for i in intents}, sp)

    def pairs(self) -> tuple[Pair, ...]:
        """Sender conditions in canonical order; strategy-less intents give (i, None)."""
        out = []
        for i in self.intents:
            if self.strategies[i]:
                out.extend((i, s) for s in self.strategies[i])
            else:
                out.append((i, None))
        return tuple(out)

    def pair_prior(self) -> np.ndarray:
        out = []
        for k, i in enumerate(self.intents):
            if self.strategies[i]:
                out.extend(self.intent_prior[k] * self.strategy_prior[i])
            else:
                out.append(self.intent_prior[k])
        return np.array(out, dtype=np.float64)

    def p_intent(self, intent: str) -> float:
        return float(self.intent_prior[self.intents.index(intent)])

    def p_strategy(self, intent: str, strategy: str) -> float:
        return float(self.strategy_prior[intent][self.strategies[intent].index(strategy)])


@dataclass(frozen=True)
class CandidateSet:
    """Candidate utterances plus the log-score rows used to seed the sender.

    ``raw_scores`` maps a pair to one log-score per candidate. The gold row
    comes from generation; other rows from teacher-forced scoring.
    """

    candidates: tuple[str, ...]
    gold_pair: Pair
    raw_scores: Mapping[Pair, tuple[float, ...]] = field(default_factory=dict)
    token_counts: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        object.__setattr__(self, "gold_pair", tuple(self.gold_pair))
        if not self.candidates:
            raise ValidationError("candidate set is empty")
        if any(not c.strip() for c in self.candidates):
            raise ValidationError("candidates must be non-empty strings")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValidationError("candidates must be distinct")
        scores = {tuple(k): tuple(float(x) for x in v) for k, v in self.raw_scores.items()}
        for k, v in scores.items():
            if len(v) != len(self.candidates):
                raise StructuralError(f"score row {k!r} has {len(v)} entries for {len(self.candidates)} candidates")
        object.__setattr__(self, "raw_scores", scores)

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class HyperParams:
    w: float = 0.5
    lam: float = 0.1
    eta: float = 0.1
    rounds: int = 5000
    n_candidates: int = 3
    prob_floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        problems = []
        if not 0.0 <= self.w <= 1.0:
            problems.append(f"w={self.w} outside [0, 1]")
        if not self.lam >= 0.0:
            problems.append(f"lambda={self.lam} must be non-negative")
        if not self.eta > 0.0:
            problems.append(f"eta={self.eta} must be positive")
        if int(self.rounds) != self.rounds or self.rounds < 0:
            problems.append(f"rounds={self.rounds} must be a non-negative integer")
        if int(self.n_candidates) != self.n_candidates or self.n_candidates < 1:
            problems.append(f"n_candidates={self.n_candidates} must be a positive integer")
        if not 0.0 < self.prob_floor < 1.0:
            problems.append(f"prob_floor={self.prob_floor} must lie in (0, 1)")
        if problems:
            raise ValidationError("; ".join(problems), problems)

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "lambda": self.lam,
            "eta": self.eta,
            "rounds": self.rounds,
            "n_candidates": self.n_candidates,
            "prob_floor": self.prob_floor,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class GameInstance:
    prior: SignalPrior
    candidates: CandidateSet
    sender0: PolicyMatrix
    recv_intent0: PolicyMatrix
    recv_strategy0: PolicyMatrix
    hyper: HyperParams = HyperParams()
    scenario_id: str | None = None

    def __post_init__(self):
        n = len(self.candidates)
        cand_labels = tuple(range(n))
        gi, gs = self.gold_pair
        if gi not in self.prior.intents:
            raise ValidationError(f"gold intent {gi!r} unknown")
        gold_strats = self.prior.strategies[gi]
        if gold_strats and gs not in gold_strats:
            raise ValidationError(f"gold strategy {gs!r} is not a strategy of {gi!r}")
        if not gold_strats and gs is not None:
            raise ValidationError(f"intent {gi!r} has no strategies but gold strategy {gs!r} given")
        if self.sender0.rows != self.prior.pairs() or self.sender0.cols != cand_labels:
            raise StructuralError("sender0 axes must be prior.pairs() x candidate indices")
        if self.recv_intent0.rows != cand_labels or self.recv_intent0.cols != self.prior.intents:
            raise StructuralError("recv_intent0 axes must be candidate indices x intents")
        if self.recv_strategy0.rows != cand_labels or self.recv_strategy0.cols != gold_strats:
            raise StructuralError("recv_strategy0 axes must be candidate indices x strategies of the gold intent")

    @property
    def gold_pair(self) -> Pair:
        return self.candidates.gold_pair

    @property
    def gold_strategies(self) -> tuple[str, ...]:
        return self.prior.strategies[self.gold_pair[0]]

    @property
    def w(self) -> float:
        """Effective intent weight; strategy inference is off without gold strategies."""
        return self.hyper.w if self.gold_strategies else 1.0

    @property
    def initial_index(self) -> int:
        return int(np.argmax(self.sender0.row(self.gold_pair)))


@dataclass(frozen=True)
class GameOutcome:
    winning_utterance: str
    winning_index: int
    initial_index: int
    final_policies: tuple[PolicyMatrix, PolicyMatrix, PolicyMatrix]
    rounds_run: int

    @property
    def alternated(self) -> bool:
        return self.winning_index != self.initial_index


# -- utilities -------------------------------------------------------------


def _check_profile(prior: SignalPrior, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> None:
    if sender.rows != prior.pairs():
        raise StructuralError("sender rows do not match the prior's pairs")
    if recv_i.rows != sender.cols or recv_s.rows != sender.cols:
        raise StructuralError("receiver rows must be the sender's candidates")
    if recv_i.cols != prior.intents:
        raise StructuralError("intent receiver columns must be the prior's intents")
    known = {s for ss in prior.strategies.values() for s in ss}
    if not set(recv_s.cols) <= known:
        raise StructuralError("strategy receiver has unknown strategy columns")


def shared_utility(prior: SignalPrior, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix, w: float) -> float:
    """Expected probability, under the prior, that the receiver decodes the signal.

    Pairs without a strategy contribute only their intent term with weight 1.
    A strategy outside the receiver's strategy columns is never guessed, so
    its term is zero.
    """
    _check_profile(prior, sender, recv_i, recv_s)
    total = 0.0
    for p, pair, row in zip(prior.pair_prior(), sender.rows, sender.probs):
        i, s = pair
        hit_i = recv_i.probs[:, recv_i.col_index(i)]
        if s is None:
            total += p * float(row @ hit_i)
            continue
        hit_s = recv_s.probs[:, recv_s.col_index(s)] if s in recv_s.cols else 0.0
        total += p * float(row @ (w * hit_i + (1.0 - w) * hit_s))
    return total


def kl_divergence(p, q, floor: float = DEFAULT_FLOOR) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise StructuralError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(np.maximum(q[mask], floor)))))


def sender_kl(game: GameInstance, sender: PolicyMatrix) -> float:
    """Prior-weighted sum of per-condition KLs against the initial sender."""
    weights = game.prior.pair_prior()
    floor = game.hyper.prob_floor
    return float(sum(wt * kl_divergence(a, b, floor) for wt, a, b in zip(weights, sender.probs, game.sender0.probs)))


def receiver_kl(game: GameInstance, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> float:
    """Candidate-averaged sum of intent and strategy KLs against the initial receiver."""
    floor = game.hyper.prob_floor
    n = len(game.candidates)
    total = sum(kl_divergence(a, b, floor) for a, b in zip(recv_i.probs, game.recv_intent0.probs))
    if not recv_s.empty:
        total += sum(kl_divergence(a, b, floor) for a, b in zip(recv_s.probs, game.recv_strategy0.probs))
    return float(total / n)


def sender_utility(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> float:
    u = shared_utility(game.prior, sender, recv_i, recv_s, game.w)
    return u - game.hyper.lam * sender_kl(game, sender)


def receiver_utility(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> float:
    u = shared_utility(game.prior, sender, recv_i, recv_s, game.w)
    return u - game.hyper.lam * receiver_kl(game, recv_i, recv_s)


def select_winner(game: GameInstance, final_sender: PolicyMatrix, final_policies=None, rounds_run: int = 0) -> GameOutcome:
    """Pick the candidate the final sender prefers at the gold pair (lowest index on ties)."""
    if not game.candidates.candidates:
        raise ValidationError("no candidates to select from")
    row = final_sender.row(game.gold_pair)
    idx = int(np.argmax(row))
    if final_policies is None:
        final_policies = (final_sender, game.recv_intent0, game.recv_strategy0)
    return GameOutcome(
        winning_utterance=game.candidates.candidates[idx],
        winning_index=idx,
        initial_index=game.initial_index,
        final_policies=tuple(final_policies),
        rounds_run=int(rounds_run),
    )


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("softmax of non-finite scores")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


# -- game-spec files -------------------------------------------------------


def _pair_key(pair: Pair) -> str:
    i, s = pair
    return f"{i}/{s}" if s is not None else f"{i}/-"


def _parse_pair_key(key: str) -> Pair:
    i, _, s = key.partition("/")
    return (i, None if s in ("", "-") else s)


def game_to_spec(game: GameInstance) -> dict:
    p = game.prior
    return {
        "schema": GAME_SPEC_SCHEMA,
        "scenario_id": game.scenario_id,
        "intents": list(p.intents),
        "intent_prior": p.intent_prior.tolist(),
        "strategies": {i: list(ss) for i, ss in p.strategies.items()},
        "strategy_prior": {i: p.strategy_prior[i].tolist() for i in p.intents if p.strategies[i]},
        "candidates": list(game.candidates.candidates),
        "gold_pair": list(game.gold_pair),
        "raw_scores": {_pair_key(k): list(v) for k, v in game.candidates.raw_scores.items()},
        "pairs": [list(pr) for pr in game.sender0.rows],
        "sender0": game.sender0.probs.tolist(),
        "recv_intent0": game.recv_intent0.probs.tolist(),
        "recv_strategy0": game.recv_strategy0.probs.tolist(),
        "hyper": game.hyper.to_dict(),
    }


def game_from_spec(doc: Mapping) -> GameInstance:
    from .schemas import validate_document

    validate_document(doc, "game-spec")
    strategies = {i: tuple(v) for i, v in doc.get("strategies", {}).items()}
    prior = SignalPrior(
        intents=tuple(doc["intents"]),
        intent_prior=doc["intent_prior"],
        strategies=strategies,
        strategy_prior=doc.get("strategy_prior", {}),
    )
    gold = (doc["gold_pair"][0], doc["gold_pair"][1])
    cands = CandidateSet(
        candidates=tuple(doc["candidates"]),
        gold_pair=gold,
        raw_scores={_parse_pair_key(k): v for k, v in doc.get("raw_scores", {}).items()},
    )
    pairs = prior.pairs()
    if "pairs" in doc and [tuple(x) for x in doc["pairs"]] != [tuple(x) for x in pairs]:
        raise StructuralError("listed pairs do not match the canonical pair order")
    labels = tuple(range(len(cands)))
    gold_strats = prior.strategies[gold[0]]
    rs = doc.get("recv_strategy0") or [[] for _ in labels]
    return GameInstance(
        prior=prior,
        candidates=cands,
        sender0=PolicyMatrix(pairs, labels, doc["sender0"]),
        recv_intent0=PolicyMatrix(labels, prior.intents, doc["recv_intent0"]),
        recv_strategy0=PolicyMatrix(labels, gold_strats, rs if gold_strats else np.zeros((len(labels), 0))),
        hyper=HyperParams.from_dict(doc.get("hyper", {})),
        scenario_id=doc.get("scenario_id"),
    )


def load_game_spec(path: str | Path) -> GameInstance:
    with open(path, encoding="utf-8") as fh:
        return game_from_spec(json.load(fh))


def dump_game_spec(game: GameInstance, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(game_to_spec(game), fh, indent=2)
        fh.write("\n")
