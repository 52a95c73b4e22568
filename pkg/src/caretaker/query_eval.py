"""Memory-augmented query evaluation with entropy-based consistency refinement.

Beliefs are binary yes/no distributions over condition queries.  Priors are
re-estimated from repeated memory retrievals; candidates that got *more*
confident purely from stale memory violate information decay and are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Protocol, Sequence

from .instructions import Execution, InstructionSet, Query
from .seeding import stable_hash
from .tekg import LOCATING_RELATIONS, MemoryGraph, Quadruple, states_conflict

DEFAULT_PRIOR_SAMPLES = 10
DEFAULT_K = 12
DEFAULT_THETA = 0.5
DEFAULT_GAMMA = 0.9
CONSISTENCY_EPSILON = 1e-9


class DomainError(ValueError):
    pass


class BackendUnavailable(Exception):
    """The evaluator backend could not be reached."""


class UnparseableResponse(Exception):
    """The backend answered, but not in the expected yes/no format."""


def binary_entropy(p: float) -> float:
    """Entropy of a yes/no distribution, in bits."""
    if p < 0.0 or p > 1.0:
        raise DomainError(f"probability out of range: {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


@dataclass(frozen=True)
class QueryBelief:
    """P(condition holds | memory) with its entropy and provenance."""

    p_yes: float
    entropy_bits: float
    evaluated_at: int
    source: str  # "prior-carry" | "backend-evaluated" | "fallback-decay"

    def __post_init__(self):
        if abs(self.entropy_bits - binary_entropy(self.p_yes)) > 1e-9:
            raise ValueError("entropy_bits inconsistent with p_yes")

    @classmethod
    def make(cls, p_yes: float, evaluated_at: int, source: str) -> "QueryBelief":
        p = min(max(float(p_yes), 0.0), 1.0)
        return cls(p, binary_entropy(p), evaluated_at, source)

    @classmethod
    def initial(cls) -> "QueryBelief":
        return cls.make(0.5, 0, "prior-carry")


class EvaluatorBackend(Protocol):
    """Estimates P(query | retrieved facts) in [0, 1]."""

    def assess(
        self,
        query: Query,
        timestep: int,
        retrieved: Sequence[Quadruple],
        prior: QueryBelief,
    ) -> float: ...


class ScriptedEvaluatorBackend:
    """Deterministic stand-in for a language-model evaluator.

    The freshest retrieved fact that decides the query sets the belief, pulled
    toward 0.5 by one decay factor per step of fact age; with no deciding fact
    the prior decays one step toward 0.5.
    """

    def __init__(
        self,
        gamma: float = DEFAULT_GAMMA,
        aliases: Mapping[str, tuple[str, ...]] | None = None,
        confirmations: dict[tuple[str, str, str], int] | None = None,
        refutations: dict[tuple[str, str, str], int] | None = None,
        miscalibration: float = 0.0,
    ):
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= miscalibration <= 1.0:
            raise ValueError("miscalibration must be in [0, 1]")
        self.gamma = gamma
        self.aliases = dict(aliases or {})
        # Optional sighting ledgers (fact triple -> last step it was seen to
        # hold / seen to no longer hold).  A fact re-confirmed in view is
        # fresh even if the stored copy carries an old timestep; a fact whose
        # spot was seen empty counts against it from that step on.
        self.confirmations = confirmations if confirmations is not None else {}
        self.refutations = refutations if refutations is not None else {}
        # Language models sometimes answer from stale evidence at full
        # confidence; this rate reproduces that failure so the consistency
        # filter has something real to catch.  Zero keeps the model exact.
        self.miscalibration = miscalibration
        self.calls = 0

    def assess(self, query, timestep, retrieved, prior) -> float:
        self.calls += 1
        retrieved = tuple(retrieved)
        if self.miscalibration > 0.0 and retrieved:
            digest = stable_hash(
                (query.retrieval_text(), timestep, tuple(q.render() for q in retrieved))
            )
            if (digest % 10_000) / 10_000.0 < self.miscalibration:
                atom, flipped = query, False
                while atom.kind == "not":
                    atom, flipped = atom.children[0], not flipped
                if atom.kind != "and":
                    verdict = self._latest_decision(atom, retrieved)
                    if verdict is not None:
                        affirmed = verdict[0] != flipped
                        return 0.95 if affirmed else 0.05
        return self._assess(query, timestep, retrieved, prior.p_yes)

    def _instances(self, token: str) -> tuple[str, ...]:
        return self.aliases.get(token, (token,))

    def _freshness(self, quad: Quadruple) -> int:
        confirmed = self.confirmations.get((quad.source, quad.relation, quad.target))
        if confirmed is None:
            return quad.timestep
        return max(quad.timestep, confirmed)

    def _assess(self, query: Query, t: int, retrieved: tuple[Quadruple, ...], prior_p: float) -> float:
        if query.kind == "not":
            return 1.0 - self._assess(query.children[0], t, retrieved, 1.0 - prior_p)
        if query.kind == "and":
            return min(self._assess(c, t, retrieved, prior_p) for c in query.children)
        verdict = self._latest_decision(query, retrieved)
        if verdict is None:
            return 0.5 + (prior_p - 0.5) * self.gamma
        affirmed, timestep = verdict
        age = max(t - timestep, 0)
        swing = 0.45 * self.gamma**age
        return 0.5 + swing if affirmed else 0.5 - swing

    def _latest_decision(self, query: Query, retrieved: tuple[Quadruple, ...]) -> tuple[bool, int] | None:
        best: tuple[bool, int] | None = None
        for quad in retrieved:
            decided = self._decide(query, quad)
            if decided is None:
                continue
            fresh = self._freshness(quad)
            refuted = self.refutations.get((quad.source, quad.relation, quad.target))
            if refuted is not None and refuted >= fresh:
                # The fact was later seen not to hold any more.  A withdrawn
                # sighting at the query's place refutes the query; withdrawn
                # evidence about some other place says nothing.
                if decided and query.kind == "located":
                    decided, fresh = False, refuted
                elif quad.relation in LOCATING_RELATIONS and query.kind == "located":
                    continue
                elif query.kind in ("state", "exists_state"):
                    continue
            if best is None or fresh > best[1]:
                best = (decided, fresh)
        return best

    def _decide(self, query: Query, quad: Quadruple) -> bool | None:
        entity_ids = self._instances(query.entity)
        if query.kind in ("state", "exists_state"):
            if quad.relation != "is" or quad.source not in entity_ids:
                return None
            if quad.target == query.value:
                return True
            if states_conflict(quad.target, query.value):
                return False
            return None
        if query.kind == "located":
            if quad.relation == "holds" and quad.target in entity_ids:
                return False
            if quad.relation not in LOCATING_RELATIONS or quad.source not in entity_ids:
                return None
            return quad.target == query.value
        if query.kind == "exists_located":
            if quad.relation == "holds" and quad.target in entity_ids:
                return True
            if quad.relation in LOCATING_RELATIONS and quad.source in entity_ids:
                return True
            return None
        raise ValueError(f"unknown query kind {query.kind}")


@dataclass(frozen=True)
class RefinedPrior:
    belief: QueryBelief
    n_kept: int
    n_rejected: int


def refine_prior(
    query: Query,
    t: int,
    memory: MemoryGraph,
    prev: QueryBelief,
    backend: EvaluatorBackend,
    n_samples: int = DEFAULT_PRIOR_SAMPLES,
    rng_seed: int = 0,
    *,
    k: int = DEFAULT_K,
    temperature: float = 1.0,
    gamma: float = DEFAULT_GAMMA,
    consistency: bool = True,
    epsilon: float = CONSISTENCY_EPSILON,
) -> RefinedPrior:
    """Estimate the prior from repeated retrievals, enforcing information decay.

    Candidate responses whose entropy fell below the previous belief's are
    discarded; the survivors' mean is the prior.  With every candidate
    rejected the previous belief decays one step toward 0.5.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    directive = query.retrieval_text()
    kept: list[float] = []
    rejected = 0
    for i in range(n_samples):
        sample = memory.retrieve(
            [directive], k, temperature, rng_seed=stable_hash((rng_seed, "prior", directive, i))
        )
        candidate = backend.assess(query, t, sample, prev)
        if not consistency or binary_entropy(candidate) >= prev.entropy_bits - epsilon:
            kept.append(candidate)
        else:
            rejected += 1
    if kept:
        belief = QueryBelief.make(sum(kept) / len(kept), t, "backend-evaluated")
    else:
        belief = QueryBelief.make(0.5 + (prev.p_yes - 0.5) * gamma, t, "fallback-decay")
    return RefinedPrior(belief, len(kept), rejected)


@dataclass(frozen=True)
class EvaluationResult:
    belief: QueryBelief
    retrieval: tuple[Quadruple, ...]
    refined: RefinedPrior


def evaluate(
    query: Query,
    t: int,
    memory: MemoryGraph,
    prev: QueryBelief,
    backend: EvaluatorBackend,
    rng_seed: int = 0,
    *,
    prev_retrieval: tuple[Quadruple, ...] | None = None,
    n_samples: int = DEFAULT_PRIOR_SAMPLES,
    k: int = DEFAULT_K,
    temperature: float = 1.0,
    gamma: float = DEFAULT_GAMMA,
    consistency: bool = True,
    epsilon: float = CONSISTENCY_EPSILON,
    freshness_of=None,
) -> EvaluationResult:
    """One evaluation step for a query.

    When the freshly retrieved facts are exactly the previous step's (and,
    if a freshness measure is given, none of them was re-confirmed since the
    last evaluation), the refined prior is carried without consulting the
    backend; otherwise the backend re-assesses against the new retrieval.
    """
    refined = refine_prior(
        query,
        t,
        memory,
        prev,
        backend,
        n_samples,
        rng_seed,
        k=k,
        temperature=temperature,
        gamma=gamma,
        consistency=consistency,
        epsilon=epsilon,
    )
    directive = query.retrieval_text()
    retrieval = tuple(
        memory.retrieve(
            [directive], k, temperature, rng_seed=stable_hash((rng_seed, "eval", directive))
        )
    )
    unchanged = prev_retrieval is not None and sorted(retrieval) == sorted(prev_retrieval)
    if unchanged and freshness_of is not None and retrieval:
        unchanged = max(freshness_of(q) for q in retrieval) < prev.evaluated_at
    if unchanged:
        belief = replace(refined.belief, evaluated_at=t, source="prior-carry")
        return EvaluationResult(belief, retrieval, refined)
    try:
        p = backend.assess(query, t, retrieval, refined.belief)
    except UnparseableResponse:
        belief = replace(refined.belief, evaluated_at=t, source="prior-carry")
        return EvaluationResult(belief, retrieval, refined)
    return EvaluationResult(QueryBelief.make(p, t, "backend-evaluated"), retrieval, refined)


def select_executions(
    beliefs: Mapping[Query, QueryBelief],
    instruction_set: InstructionSet,
    theta: float = DEFAULT_THETA,
) -> tuple[Execution, ...]:
    """Executions whose condition belief strictly exceeds the threshold.

    Returned in instruction order for determinism.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must be in [0, 1]")
    active = []
    for query, execution in zip(instruction_set.queries, instruction_set.executions):
        belief = beliefs.get(query)
        if belief is not None and belief.p_yes > theta:
            active.append(execution)
    return tuple(active)
