"""KL-anchored no-regret iteration for the per-turn signalling game.

Each round every player responds to the *average* of the opponent's past
policies:

    pi^{t+1}(a) ∝ exp{(Q^t(a) + lam * log pi^0(a)) / (eta + lam / t)}

where Q^t is the expected utility of action ``a`` against that average.
Sender and receiver update simultaneously from the same round's averages.

Exploitability is provided as an exact best-response oracle for tests and
diagnostics only; the loop always runs the configured number of rounds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import NumericError, PreconditionError, StructuralError
from .game import GameInstance, GameOutcome, PolicyMatrix, SignalPrior, select_winner

PLAYERS = ("sender", "intent", "strategy")


@dataclass
class PolicyHistory:
    """Running sums of past policies, one accumulator per matrix."""

    templates: dict[str, PolicyMatrix]
    t: int = 0
    sums: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def start(cls, game: GameInstance) -> "PolicyHistory":
        templates = dict(zip(PLAYERS, (game.sender0, game.recv_intent0, game.recv_strategy0)))
        return cls(templates, 0, {k: np.zeros(m.shape) for k, m in templates.items()})

    def record(self, sender: np.ndarray, intent: np.ndarray, strategy: np.ndarray) -> None:
        self.sums["sender"] += sender
        self.sums["intent"] += intent
        self.sums["strategy"] += strategy
        self.t += 1

    def mean(self, which: str) -> np.ndarray:
        if self.t < 1:
            raise PreconditionError("average of an empty history")
        return self.sums[which] / self.t


def average_policy(hist: PolicyHistory, which: str) -> PolicyMatrix:
    """Arithmetic mean of pi^0 ... pi^{t-1} for one matrix."""
    if which not in PLAYERS:
        raise KeyError(which)
    return hist.templates[which].replace(hist.mean(which))


@dataclass(frozen=True)
class QValues:
    q_sender: np.ndarray
    q_intent: np.ndarray
    q_strategy: np.ndarray


class _Layout:
    """Index arrays that turn the per-pair sums into matrix products."""

    def __init__(self, prior: SignalPrior, gold_intent: str, gold_strategies: tuple[str, ...]):
        pairs = prior.pairs()
        self.pair_prior = prior.pair_prior()
        self.intent_col = np.array([prior.intents.index(i) for i, _ in pairs], dtype=int)
        self.has_strategy = np.array([s is not None for _, s in pairs])
        self.strategy_col = np.array(
            [gold_strategies.index(s) if s in gold_strategies else -1 for _, s in pairs], dtype=int
        )
        self.onehot = np.zeros((len(pairs), len(prior.intents)))
        self.onehot[np.arange(len(pairs)), self.intent_col] = 1.0
        self.weighted_onehot = self.pair_prior[:, None] * self.onehot
        self.gold_rows = np.array([pairs.index((gold_intent, s)) for s in gold_strategies], dtype=int)
        self.p_gold_strategy = (
            prior.strategy_prior[gold_intent].copy() if gold_strategies else np.zeros(0)
        )
        self.n_pairs = len(pairs)

    @classmethod
    def of(cls, game: GameInstance) -> "_Layout":
        return cls(game.prior, game.gold_pair[0], game.gold_strategies)

    def q_sender(self, avg_i: np.ndarray, avg_s: np.ndarray, w: float) -> np.ndarray:
        hit_i = avg_i[:, self.intent_col].T
        if avg_s.shape[1]:
            cols = np.where(self.strategy_col >= 0, self.strategy_col, 0)
            hit_s = np.where(self.strategy_col[:, None] >= 0, avg_s[:, cols].T, 0.0)
        else:
            hit_s = np.zeros_like(hit_i)
        return np.where(self.has_strategy[:, None], w * hit_i + (1.0 - w) * hit_s, hit_i)

    def q_intent(self, avg_sender: np.ndarray, w: float) -> np.ndarray:
        return w * (avg_sender.T @ self.weighted_onehot)

    def q_strategy(self, avg_sender: np.ndarray, w: float) -> np.ndarray:
        return (1.0 - w) * avg_sender[self.gold_rows].T * self.p_gold_strategy[None, :]


def _recv_s_grid(prior: SignalPrior, recv_s: PolicyMatrix, gold_intent: str) -> tuple[str, ...]:
    expected = prior.strategies[gold_intent]
    if recv_s.cols != expected:
        raise StructuralError("strategy receiver columns must be the strategies of the gold intent")
    return expected


def sender_q(prior: SignalPrior, avg_recv_i: PolicyMatrix, avg_recv_s: PolicyMatrix, w: float, gold_intent: str) -> np.ndarray:
    """Q_S(u | i, s) = w * pbar_Ri(i | u) + (1 - w) * pbar_Rs(s | u), pairs x candidates.

    Strategy-less pairs use the intent term alone.
    """
    if avg_recv_i.cols != prior.intents or avg_recv_i.rows != avg_recv_s.rows:
        raise StructuralError("receiver matrices do not match the prior")
    gold_strats = _recv_s_grid(prior, avg_recv_s, gold_intent)
    return _Layout(prior, gold_intent, gold_strats).q_sender(avg_recv_i.probs, avg_recv_s.probs, w)


def receiver_intent_q(prior: SignalPrior, avg_sender: PolicyMatrix, w: float) -> np.ndarray:
    """Q_Ri(i | u) = w * p(i) * sum_s p(s | i) * pbar_S(u | i, s), candidates x intents."""
    if avg_sender.rows != prior.pairs():
        raise StructuralError("sender rows must cover every (intent, strategy) pair of the prior")
    lay = _Layout(prior, prior.intents[0], ())
    return lay.q_intent(avg_sender.probs, w)


def receiver_strategy_q(prior: SignalPrior, avg_sender: PolicyMatrix, gold_intent: str, w: float) -> np.ndarray:
    """Q_Rs(s | u) = (1 - w) * p(s | i_gt) * pbar_S(u | i_gt, s), candidates x S_{i_gt}."""
    gold_strats = prior.strategies[gold_intent]
    if not gold_strats:
        raise PreconditionError(f"intent {gold_intent!r} has no strategies to infer")
    if avg_sender.rows != prior.pairs():
        raise StructuralError("sender rows must cover every (intent, strategy) pair of the prior")
    return _Layout(prior, gold_intent, gold_strats).q_strategy(avg_sender.probs, w)


def _log_ref(ref: np.ndarray, floor: float) -> np.ndarray:
    ref = np.maximum(np.asarray(ref, dtype=np.float64), floor)
    ref = ref / ref.sum(axis=-1, keepdims=True)
    return np.log(ref)


def _pikl(q: np.ndarray, log_ref: np.ndarray, lam: float, eta: float, t: int) -> np.ndarray:
    z = (q + lam * log_ref) / (eta + lam / t)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def pikl_step(q_row, ref_row, lam: float, eta: float, t: int, floor: float = 1e-12) -> np.ndarray:
    """One KL-anchored update of a policy row (or of every row of a matrix)."""
    q = np.asarray(q_row, dtype=np.float64)
    ref = np.asarray(ref_row, dtype=np.float64)
    if t < 1:
        raise PreconditionError("round index t must be >= 1")
    if q.shape != ref.shape:
        raise StructuralError(f"Q shape {q.shape} does not match reference shape {ref.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(ref)) and np.isfinite(lam) and np.isfinite(eta)):
        raise NumericError("non-finite input to pikl_step")
    return _pikl(q, _log_ref(ref, floor), lam, eta, t)


RoundHook = Callable[[int, np.ndarray, np.ndarray, np.ndarray], None]


def run_equilibrium(game: GameInstance, on_round: RoundHook | None = None) -> GameOutcome:
    """Run the fixed number of rounds and select the winning utterance.

    ``on_round(t, sender, intent, strategy)`` is called with the policies
    produced at the end of round t, if given.
    """
    hp = game.hyper
    lam, eta, w, floor = hp.lam, hp.eta, game.w, hp.prob_floor
    lay = _Layout.of(game)
    s0, i0, r0 = game.sender0.probs, game.recv_intent0.probs, game.recv_strategy0.probs
    log_s0 = _log_ref(s0, floor)
    log_i0 = _log_ref(i0, floor)
    has_strategy_receiver = r0.shape[1] > 0
    log_r0 = _log_ref(r0, floor) if has_strategy_receiver else r0

    hist = PolicyHistory.start(game)
    cur_s, cur_i, cur_r = s0, i0, r0
    for t in range(1, hp.rounds + 1):
        hist.record(cur_s, cur_i, cur_r)
        avg_s, avg_i, avg_r = hist.mean("sender"), hist.mean("intent"), hist.mean("strategy")
        new_s = _pikl(lay.q_sender(avg_i, avg_r, w), log_s0, lam, eta, t)
        new_i = _pikl(lay.q_intent(avg_s, w), log_i0, lam, eta, t)
        new_r = _pikl(lay.q_strategy(avg_s, w), log_r0, lam, eta, t) if has_strategy_receiver else cur_r
        cur_s, cur_i, cur_r = new_s, new_i, new_r
        if on_round is not None:
            on_round(t, cur_s, cur_i, cur_r)

    final = (game.sender0.replace(cur_s), game.recv_intent0.replace(cur_i), game.recv_strategy0.replace(cur_r))
    return select_winner(game, final[0], final, hp.rounds)


# -- best-response oracle --------------------------------------------------


def q_values(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> QValues:
    """Q-values of every player against the given (not averaged) opponent policies."""
    lay = _Layout.of(game)
    w = game.w
    qs = lay.q_sender(recv_i.probs, recv_s.probs, w)
    qi = lay.q_intent(sender.probs, w)
    qr = lay.q_strategy(sender.probs, w) if not recv_s.empty else np.zeros((len(game.candidates), 0))
    return QValues(qs, qi, qr)


def best_response_gains(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> dict[str, float]:
    """Unregularised gain each player gets from switching to a pure best response."""
    q = q_values(game, sender, recv_i, recv_s)
    weights = game.prior.pair_prior()
    gain_s = float(np.sum(weights * (q.q_sender.max(axis=1) - np.sum(q.q_sender * sender.probs, axis=1))))
    gain_r = float(np.sum(q.q_intent.max(axis=1) - np.sum(q.q_intent * recv_i.probs, axis=1)))
    if not recv_s.empty:
        gain_r += float(np.sum(q.q_strategy.max(axis=1) - np.sum(q.q_strategy * recv_s.probs, axis=1)))
    return {"sender": max(gain_s, 0.0), "receiver": max(gain_r, 0.0)}


def exploitability(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> float:
    """Largest unilateral best-response gain in the unregularised game."""
    return max(best_response_gains(game, sender, recv_i, recv_s).values())


def _smoothed_gap(q: np.ndarray, pi: np.ndarray, log_ref: np.ndarray, lam: float, eta: float) -> np.ndarray:
    z = (q + lam * log_ref) / eta
    m = z.max(axis=1)
    best = eta * (m + np.log(np.exp(z - m[:, None]).sum(axis=1)))
    logpi = np.log(np.where(pi > 0, pi, 1.0))
    value = np.sum(q * pi, axis=1) + lam * np.sum(pi * log_ref, axis=1) - eta * np.sum(pi * logpi, axis=1)
    return best - value


def regularised_gap(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> float:
    """Best-response gap in the smoothed game whose fixed point the update approaches.

    As t grows each row maximises ``Q.pi + lam <pi, log pi0> + eta H(pi)``;
    this returns the largest per-player shortfall from that maximum. It is
    zero exactly at the update's fixed point.
    """
    hp = game.hyper
    q = q_values(game, sender, recv_i, recv_s)
    floor = hp.prob_floor
    g_s = _smoothed_gap(q.q_sender, sender.probs, _log_ref(game.sender0.probs, floor), hp.lam, hp.eta)
    g_i = _smoothed_gap(q.q_intent, recv_i.probs, _log_ref(game.recv_intent0.probs, floor), hp.lam, hp.eta)
    gain_r = float(g_i.sum())
    if not recv_s.empty:
        g_r = _smoothed_gap(q.q_strategy, recv_s.probs, _log_ref(game.recv_strategy0.probs, floor), hp.lam, hp.eta)
        gain_r += float(g_r.sum())
    gain_s = float(np.sum(game.prior.pair_prior() * g_s))
    return max(gain_s, gain_r, 0.0)


# -- convergence trace -----------------------------------------------------


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    logs = np.log(np.where(p > 0, p, 1.0))
    return -np.sum(p * logs, axis=1)


def trace_columns(game: GameInstance, with_exploitability: bool = False) -> list[str]:
    cols = ["round"]
    cols += [f"H_sender[{i}/{s if s is not None else '-'}]" for i, s in game.sender0.rows]
    cols += [f"H_intent[u{u}]" for u in game.recv_intent0.rows]
    if not game.recv_strategy0.empty:
        cols += [f"H_strategy[u{u}]" for u in game.recv_strategy0.rows]
    if with_exploitability:
        cols.append("exploitability")
    return cols


def run_with_trace(game: GameInstance, path: str | Path, with_exploitability: bool = False) -> GameOutcome:
    """Run the solver and write one CSV row of per-row entropies per round."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_columns(game, with_exploitability))

        def hook(t, s, i, r):
            row = [t, *_entropy_rows(s), *_entropy_rows(i)]
            if r.shape[1]:
                row += list(_entropy_rows(r))
            if with_exploitability:
                row.append(exploitability(game, game.sender0.replace(s), game.recv_intent0.replace(i), game.recv_strategy0.replace(r)))
            writer.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in row])

        return run_equilibrium(game, on_round=hook)
