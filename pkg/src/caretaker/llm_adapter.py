"""HTTP backend for query evaluation and skill scoring.

Speaks a minimal JSON protocol to a generic text-generation endpoint:
POST <base>/generate with {prompt, max_new_tokens, temperature, stop} and a
{"text": ...} reply.  Prompts linearize retrieved graph facts; replies are
parsed as "Yes: x%, No: y%" distributions or 0-100 skill scores.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field
from typing import Sequence

import requests

from .query_eval import BackendUnavailable, QueryBelief, UnparseableResponse
from .seeding import stable_hash
from .tekg import Quadruple

DEFAULT_MAX_NEW_TOKENS = 40
DEFAULT_TEMPERATURE = 0.33
AUTH_TOKEN_ENV = "CARETAKER_API_TOKEN"


class BackendTimeout(BackendUnavailable):
    """The endpoint did not answer within the configured timeout."""


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    stop: tuple[str, ...] = ()

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    timeout: float = 30.0
    retries: int = 2
    backoff_base: float = 0.5
    auth_env: str = AUTH_TOKEN_ENV

    def __post_init__(self):
        if not re.match(r"^https?://", self.base_url):
            raise ValueError(f"malformed base URL {self.base_url!r}")


# ----------------------------------------------------------------------
# prompts
# ----------------------------------------------------------------------
def build_query_prompt(
    query_text: str,
    t: int,
    retrieved: Sequence[Quadruple],
    prior: QueryBelief | None = None,
) -> str:
    """Condition-check prompt: query, clock, linearized facts, prior, format."""
    if not retrieved:
        raise ValueError("retrieved quadruples must be non-empty")
    knowledge = ", ".join(q.linearize() for q in retrieved)
    prior_p = 0.5 if prior is None else prior.p_yes
    yes = round(prior_p * 100)
    lines = [
        f"Query: {query_text[0].upper() + query_text[1:]}",
        f"Timesteps: {t}",
        f"Environmental knowledge: {knowledge}",
        f"Prior: Yes: {yes}%, No: {100 - yes}%",
        'Answer with exactly this format: "Yes: <x>%, No: <y>%"',
    ]
    return "\n".join(lines)


def build_skill_prompt(
    executions: Sequence,
    retrieved: Sequence[Quadruple],
    demos: Sequence,
    skill,
) -> str:
    """Skill-scoring prompt: pending tasks, facts, examples, candidate skill."""
    tasks = "; ".join(e.retrieval_text() for e in executions) or "none"
    knowledge = ", ".join(q.linearize() for q in retrieved) or "none"
    lines = [f"Pending tasks: {tasks}", f"Environmental knowledge: {knowledge}"]
    for i, demo in enumerate(demos):
        plan = ", ".join(s.render() for s in demo.skill_sequence)
        lines.append(f"Example {i + 1}: {plan}")
    lines.append(f"Candidate skill: {skill.render()}")
    lines.append("Rate how useful the candidate skill is right now from 0 to 100.")
    return "\n".join(lines)


def build_exploration_prompt(skill, t: int) -> str:
    lines = [
        "Explore the home.",
        f"Timesteps: {t}",
        f"Candidate skill: {skill.render()}",
        "Rate how much this skill helps exploration from 0 to 100.",
    ]
    return "\n".join(lines)


# ----------------------------------------------------------------------
# response parsing
# ----------------------------------------------------------------------
_YES_RE = re.compile(r"yes\s*:\s*(\d+(?:\.\d+)?)\s*%", re.IGNORECASE)
_NO_RE = re.compile(r"no\s*:\s*(\d+(?:\.\d+)?)\s*%", re.IGNORECASE)
_SCORE_RE = re.compile(r"(\d+(?:\.\d+)?)")


def parse_probability(text: str) -> float:
    """Invert a "Yes: x%, No: y%" answer to the yes-probability.

    Sums near 100 trust the yes figure; other sums are renormalised.
    """
    yes_m = _YES_RE.search(text)
    no_m = _NO_RE.search(text)
    if not yes_m or not no_m:
        raise UnparseableResponse(f"no yes/no percentages in {text!r}")
    yes, no = float(yes_m.group(1)), float(no_m.group(1))
    total = yes + no
    if total <= 0:
        raise UnparseableResponse(f"degenerate percentages in {text!r}")
    if abs(total - 100.0) <= 5.0:
        return min(max(yes / 100.0, 0.0), 1.0)
    return yes / total


def parse_score(text: str) -> float:
    """First number in the reply, scaled from 0-100 into [0, 1]."""
    m = _SCORE_RE.search(text)
    if not m:
        raise UnparseableResponse(f"no numeric score in {text!r}")
    return min(max(float(m.group(1)) / 100.0, 0.0), 1.0)


# ----------------------------------------------------------------------
# transport
# ----------------------------------------------------------------------
def call(endpoint: EndpointConfig, request: GenerationRequest) -> str:
    """POST the request, retrying transport and 5xx failures with backoff."""
    url = endpoint.base_url.rstrip("/") + "/generate"
    headers = {}
    token = os.environ.get(endpoint.auth_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    body = {
        "prompt": request.prompt,
        "max_new_tokens": request.max_new_tokens,
        "temperature": request.temperature,
        "stop": list(request.stop),
    }
    last_error: Exception | None = None
    for attempt in range(endpoint.retries + 1):
        if attempt:
            time.sleep(endpoint.backoff_base * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=endpoint.timeout)
        except requests.Timeout as exc:
            last_error = exc
            continue
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code >= 500:
            last_error = RuntimeError(f"server error {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise BackendUnavailable(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise UnparseableResponse(f"malformed reply body: {resp.text[:200]}") from exc
    if isinstance(last_error, requests.Timeout):
        raise BackendTimeout(str(last_error)) from last_error
    raise BackendUnavailable(str(last_error)) from last_error


@dataclass
class HttpBackend:
    """Evaluator and skill-value backend over the generation endpoint."""

    endpoint: EndpointConfig
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    retrieval_k: int = 12
    calls: int = field(default=0, compare=False)

    def _generate(self, prompt: str) -> str:
        self.calls += 1
        return call(
            self.endpoint,
            GenerationRequest(
                prompt=prompt,
                max_new_tokens=self.max_new_tokens,
                temperature=self.temperature,
            ),
        )

    def assess(self, query, timestep, retrieved, prior) -> float:
        prompt = build_query_prompt(query.retrieval_text(), timestep, retrieved, prior)
        return parse_probability(self._generate(prompt))

    def value_skill(self, active, memory, demos, skill) -> float:
        directives = [e.retrieval_text() for e in active]
        if directives and memory.history:
            seed = stable_hash(("value", tuple(directives)))
            retrieved = memory.retrieve(directives, self.retrieval_k, 1.0, seed)
        else:
            retrieved = []
        prompt = build_skill_prompt(active, retrieved, demos, skill)
        try:
            return parse_score(self._generate(prompt))
        except UnparseableResponse:
            return 0.0

    def score_exploration(self, skill, t: int) -> float:
        try:
            return parse_score(self._generate(build_exploration_prompt(skill, t)))
        except UnparseableResponse:
            return 0.0
