"""Policy oracles: a deterministic fixture backend and an HTTP client."""

from .base import PURPOSES, Backend, BackendRequest, Generation, RequestLog, ScoredChoice
from .fixture import FixtureBackend
from .http import HTTPBackend, HTTPConfig
from .ops import (
    assess_closure,
    elicit_signal_prior,
    generate_candidates,
    infer_signal,
    rerank_select,
    restricted_softmax,
    score_candidates,
    summarise_stage,
)
