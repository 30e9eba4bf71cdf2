"""Shared test utilities: random game construction and a scripted HTTP endpoint."""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from signalgame.game import CandidateSet, GameInstance, HyperParams, PolicyMatrix, SignalPrior

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "src" / "signalgame" / "data"
SCENARIOS = DATA / "scenarios"
GOLDEN = ROOT / "tests" / "golden"

# criterion number -> (passed, title, detail); filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


def random_game(rng: np.random.Generator, n_intents=3, max_strategies=2, n_cands=3, hyper=None, allow_empty=True) -> GameInstance:
    intents = tuple(f"i{k}" for k in range(n_intents))
    lo = 0 if allow_empty else 1
    strategies = {i: tuple(f"{i}s{j}" for j in range(rng.integers(lo, max_strategies + 1))) for i in intents}
    sp = {i: rng.dirichlet(np.ones(len(ss))) for i, ss in strategies.items() if ss}
    prior = SignalPrior(intents, rng.dirichlet(np.ones(n_intents)), strategies, sp)
    gold_i = intents[int(rng.integers(n_intents))]
    gold = (gold_i, strategies[gold_i][int(rng.integers(len(strategies[gold_i])))] if strategies[gold_i] else None)
    labels = tuple(range(n_cands))
    cands = CandidateSet(tuple(f"utterance {k}" for k in labels), gold)
    pairs = prior.pairs()
    return GameInstance(
        prior,
        cands,
        PolicyMatrix(pairs, labels, rng.dirichlet(np.ones(n_cands), size=len(pairs))),
        PolicyMatrix(labels, intents, rng.dirichlet(np.ones(n_intents), size=n_cands)),
        PolicyMatrix(labels, strategies[gold_i], rng.dirichlet(np.ones(len(strategies[gold_i])), size=n_cands) if strategies[gold_i] else np.zeros((n_cands, 0))),
        hyper or HyperParams(),
    )


def random_profile(rng: np.random.Generator, game: GameInstance):
    s = game.sender0.replace(rng.dirichlet(np.ones(len(game.candidates)), size=len(game.sender0.rows)))
    i = game.recv_intent0.replace(rng.dirichlet(np.ones(len(game.prior.intents)), size=len(game.candidates)))
    k = len(game.gold_strategies)
    r = game.recv_strategy0.replace(rng.dirichlet(np.ones(k), size=len(game.candidates)) if k else np.zeros((len(game.candidates), 0)))
    return s, i, r


# -- scripted chat-completions endpoint ------------------------------------

_TOKEN = re.compile(r"<[^>]+>|[^\s<]+|\s+")


def tokenise(text: str) -> list[str]:
    return _TOKEN.findall(text)


def token_logprob(tok: str) -> float:
    """Deterministic per-token log-probability, a function of the token text only."""
    return -0.1 * (1 + sum(map(ord, tok)) % 17)


class StubLLM:
    """Answers like a chat-completions server whose behaviour the test scripts.

    ``index_scores(body)`` returns the top-logprob mapping for one-token
    answers; ``generation`` is the tagged text returned for generation calls;
    ``text_reply(body)`` answers summarise/closure/rerank prompts.
    """

    def __init__(self):
        self.requests: list[tuple[str, dict]] = []
        self.headers: list[dict] = []
        self.index_scores = lambda body: {"1": -0.5, "2": -1.5, "Answer": -2.0}
        self.generation = "<1>Alpha one</1>\n<2>Beta two</2>\n<3>Gamma three</3>"
        self.text_reply = lambda body: "yes"
        self.logprobs = True
        self.echo = True
        self.fail_with: int | None = None

    @staticmethod
    def user_text(body: dict) -> str:
        return body["messages"][-1]["content"]

    def respond(self, route: str, body: dict) -> tuple[int, dict]:
        self.requests.append((route, body))
        if self.fail_with:
            return self.fail_with, {"error": "scripted failure"}
        if route.endswith("/completions") and not route.endswith("/chat/completions"):
            if not self.echo:
                return 404, {"error": "not found"}
            prompt = body["prompt"]
            toks = tokenise(prompt) + ["."]
            offsets, pos = [], 0
            for t in toks:
                offsets.append(pos)
                pos += len(t)
            lps = [None] + [token_logprob(t) for t in toks[1:]]
            return 200, {"choices": [{"text": prompt + ".", "logprobs": {"tokens": toks, "token_logprobs": lps, "text_offset": offsets}}]}
        if body.get("max_tokens") == 1 and body.get("top_logprobs"):
            if not self.logprobs:
                return 200, {"choices": [{"message": {"role": "assistant", "content": "1"}}]}
            tops = [{"token": t, "logprob": lp} for t, lp in self.index_scores(body).items()]
            first = tops[0]["token"] if tops else "1"
            content = [{"token": first, "logprob": tops[0]["logprob"] if tops else 0.0, "top_logprobs": tops}]
            return 200, {"choices": [{"message": {"role": "assistant", "content": first}, "logprobs": {"content": content}}]}
        if body.get("logprobs"):
            text = self.generation
            content = [{"token": t, "logprob": token_logprob(t)} for t in tokenise(text)]
            return 200, {"choices": [{"message": {"role": "assistant", "content": text}, "logprobs": {"content": content}}]}
        return 200, {"choices": [{"message": {"role": "assistant", "content": self.text_reply(body)}}]}


class StubServer:
    def __init__(self, llm: StubLLM | None = None):
        self.llm = llm or StubLLM()
        llm = self.llm

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(n).decode("utf-8"))
                llm.headers.append(dict(self.headers))
                status, payload = llm.respond(self.path, body)
                data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json; charset=utf-8")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def oracle_u(game: GameInstance, sender: PolicyMatrix, recv_i: PolicyMatrix, recv_s: PolicyMatrix) -> float:
    """Shared utility via the pure-python nested-sum reference."""
    from oracles.brute_force import u_shared_literal

    prior = game.prior
    return u_shared_literal(
        list(prior.intents),
        list(map(float, prior.intent_prior)),
        {i: list(ss) for i, ss in prior.strategies.items() if ss},
        {i: list(map(float, p)) for i, p in prior.strategy_prior.items() if len(p)},
        {pair: list(map(float, row)) for pair, row in zip(sender.rows, sender.probs)},
        recv_i.probs.tolist(),
        recv_s.probs.tolist(),
        game.w,
        list(game.gold_strategies),
    )
