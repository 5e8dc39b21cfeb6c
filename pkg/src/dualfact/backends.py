"""Pluggable backend transports shared by extraction, negatives, verification,
and grounding.

Two wire shapes cover every model call the engine makes:

* completion -- request ``{template_id, rendered_prompt, clause_id}``,
  response ``{raw_text}``; used by fact extraction and negative generation;
* verdict    -- request ``{mode, evidence, fact_text, clause_id}``,
  response ``{label_text}``; used by verification and (with mode
  ``grounding``) by the grounding predicate.

Endpoint backends speak these shapes over HTTP POST; the endpoint URL and
timeout come from configuration and the bearer token only from an
environment variable. Mock backends replay lookup files keyed by clause_id
and are deterministic, which is what makes pipeline runs reproducible and
the test suite hermetic. Anything the engine passes to a mock beyond the
wire fields (e.g. the caption for the rule-based extractor) travels in the
request's ``context`` and is never serialized.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Union

import requests

DEFAULT_TIMEOUT_S = 30.0
TOKEN_ENV_VAR = "DUALFACT_API_TOKEN"


class TransportError(Exception):
    """A backend call failed to produce a usable response."""


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    rendered_prompt: str
    clause_id: str
    context: Mapping[str, Any] = field(default_factory=dict)

    def wire_payload(self) -> dict:
        return {
            "template_id": self.template_id,
            "rendered_prompt": self.rendered_prompt,
            "clause_id": self.clause_id,
        }


@dataclass(frozen=True)
class VerdictRequest:
    mode: str
    evidence: Mapping[str, Any]
    fact_text: str
    clause_id: str

    def wire_payload(self) -> dict:
        return {
            "mode": self.mode,
            "evidence": dict(self.evidence),
            "fact_text": self.fact_text,
            "clause_id": self.clause_id,
        }


def _bearer_headers(token_env: str) -> dict:
    token = os.environ.get(token_env, "")
    return {"Authorization": f"Bearer {token}"} if token else {}


def _post(url: str, payload: dict, timeout: float, token_env: str) -> dict:
    try:
        response = requests.post(
            url, json=payload, timeout=timeout, headers=_bearer_headers(token_env)
        )
        response.raise_for_status()
        return response.json()
    except (requests.RequestException, ValueError) as exc:
        raise TransportError(f"backend request to {url} failed: {exc}") from exc


class HTTPCompletionBackend:
    """Completion backend speaking the documented wire contract over HTTP."""

    kind = "endpoint"

    def __init__(
        self,
        name: str,
        url: str,
        timeout: float = DEFAULT_TIMEOUT_S,
        token_env: str = TOKEN_ENV_VAR,
    ):
        self.name = name
        self.url = url
        self.timeout = timeout
        self.token_env = token_env

    def complete(self, rendered_prompt: str, template_id: str, clause_id: str, **context) -> str:
        request = CompletionRequest(template_id, rendered_prompt, clause_id, context)
        body = _post(self.url, request.wire_payload(), self.timeout, self.token_env)
        if "raw_text" not in body:
            raise TransportError(f"response from {self.url} lacks raw_text")
        return str(body["raw_text"])


class MockCompletionBackend:
    """Replays canned responses from a lookup keyed by clause_id.

    A missing clause raises ``TransportError`` so tests exercise the same
    failure paths a real endpoint would produce.
    """

    kind = "mock"

    def __init__(self, name: str, lookup: Union[str, Path, Mapping[str, str]]):
        self.name = name
        if isinstance(lookup, (str, Path)):
            with open(lookup, "r", encoding="utf-8") as fh:
                lookup = json.load(fh)
        self._lookup = dict(lookup)
        self.calls = 0

    def complete(self, rendered_prompt: str, template_id: str, clause_id: str, **context) -> str:
        self.calls += 1
        try:
            return self._lookup[clause_id]
        except KeyError:
            raise TransportError(
                f"mock backend {self.name} has no response for clause {clause_id}"
            ) from None


class HTTPVerdictBackend:
    """Verdict backend (verifier or grounder) over HTTP."""

    kind = "endpoint"

    def __init__(
        self,
        name: str,
        url: str,
        modes: tuple[str, ...] = ("textual", "multimodal"),
        timeout: float = DEFAULT_TIMEOUT_S,
        token_env: str = TOKEN_ENV_VAR,
    ):
        self.name = name
        self.url = url
        self.modes = modes
        self.timeout = timeout
        self.token_env = token_env

    def supports(self, mode: str) -> bool:
        return mode in self.modes

    def judge(self, request: VerdictRequest) -> str:
        body = _post(self.url, request.wire_payload(), self.timeout, self.token_env)
        if "label_text" not in body:
            raise TransportError(f"response from {self.url} lacks label_text")
        return str(body["label_text"])


class MockVerdictBackend:
    """Replays verdicts from ``{clause_id: {fact_text: label_text}}``.

    Unknown (clause, fact) pairs return ``default_response`` so strict label
    parsing downstream turns them into recorded exclusions rather than
    crashes.
    """

    kind = "mock"

    def __init__(
        self,
        name: str,
        lookup: Union[str, Path, Mapping[str, Mapping[str, str]]],
        modes: tuple[str, ...] = ("textual", "multimodal", "grounding"),
        default_response: str = "UNKNOWN",
    ):
        self.name = name
        if isinstance(lookup, (str, Path)):
            with open(lookup, "r", encoding="utf-8") as fh:
                lookup = json.load(fh)
        self._lookup = {k: dict(v) for k, v in dict(lookup).items()}
        self.modes = modes
        self.default_response = default_response
        self.calls = 0

    def supports(self, mode: str) -> bool:
        return mode in self.modes

    def judge(self, request: VerdictRequest) -> str:
        self.calls += 1
        by_fact = self._lookup.get(request.clause_id, {})
        return str(by_fact.get(request.fact_text, self.default_response))
