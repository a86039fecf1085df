"""Python bindings for the datr retrieval library."""

import json

from ._datr import (
    ConfigError,
    Corpus,
    DatrError,
    FormatError,
    Index,
    Model,
    Service,
    generate_corpus,
    stage1_retrieve,
    validate_corpus,
)
from . import _datr

__all__ = [
    "ConfigError",
    "Corpus",
    "DatrError",
    "FormatError",
    "Index",
    "Model",
    "Service",
    "Session",
    "compute_metrics",
    "evaluate",
    "generate_corpus",
    "grouped_split",
    "stage1_retrieve",
    "train_stage1",
    "train_stage2",
    "validate_corpus",
]


def compute_metrics(ranks):
    return json.loads(_datr.compute_metrics(list(ranks)))


def grouped_split(corpus, seed=0, test_fraction=0.2):
    return json.loads(_datr.grouped_split(corpus, seed, test_fraction))


def train_stage1(model, corpus, **kwargs):
    return json.loads(_datr.train_stage1(model, corpus, **kwargs))


def train_stage2(model, corpus, index, **kwargs):
    return json.loads(_datr.train_stage2(model, corpus, index, **kwargs))


def evaluate(corpus, test_videos, model, index, **kwargs):
    return json.loads(_datr.evaluate(corpus, test_videos, model, index, **kwargs))


class Session:
    """One dialogue session against an in-process Service."""

    def __init__(self, service):
        self._service = service
        status, body = service.handle("POST", "/v1/sessions")
        if status != 201:
            raise DatrError(f"cannot create session ({status}): {body}")
        self.id = json.loads(body)["session_id"]

    def turn(self, query, **overrides):
        payload = {"query": query}
        if overrides:
            payload["overrides"] = overrides
        status, body = self._service.handle("POST", f"/v1/sessions/{self.id}/turns", json.dumps(payload))
        if status != 200:
            raise DatrError(f"turn failed ({status}): {body}")
        return json.loads(body)

    def transcript(self):
        status, body = self._service.handle("GET", f"/v1/sessions/{self.id}")
        if status != 200:
            raise DatrError(f"transcript failed ({status}): {body}")
        return json.loads(body)
