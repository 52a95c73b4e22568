"""Temporal embodied knowledge graph: timestamped facts with contradiction-
resolving updates, similarity-weighted retrieval, and agent-centric distance
queries over the entity graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .embedding import EmbeddingBackend, HashedTrigramEmbedder
from .seeding import stable_hash

RELATIONS = ("inside", "on", "is", "adjacent", "holds")
LOCATING_RELATIONS = ("inside", "on")

# Mutually exclusive state families.  Two distinct states contradict only when
# they compete on the same axis (a microwave can be both "on" and "open").
STATE_GROUPS = (
    ("on", "off"),
    ("open", "closed"),
    ("clean", "dirty"),
)
_GROUP_OF = {state: i for i, group in enumerate(STATE_GROUPS) for state in group}

DEFAULT_AGENT = "agent"


class EmptyMemory(Exception):
    """Raised when retrieval is attempted against an empty history."""


class InternallyContradictoryObservation(Exception):
    """Raised when an observation set contradicts itself."""


def states_conflict(a: str, b: str) -> bool:
    """True when two state tokens cannot hold for one entity at once."""
    if a == b:
        return False
    ga, gb = _GROUP_OF.get(a), _GROUP_OF.get(b)
    if ga is None and gb is None:
        # Unknown tokens are treated as one implicit exclusive axis.
        return True
    return ga == gb and ga is not None


def opposite_state(state: str) -> str | None:
    group = _GROUP_OF.get(state)
    if group is None:
        return None
    pair = STATE_GROUPS[group]
    return pair[1] if state == pair[0] else pair[0]


@dataclass(frozen=True, order=True)
class Quadruple:
    """One timestamped fact: (source entity, relation, target, timestep)."""

    source: str
    relation: str
    target: str
    timestep: int

    def __post_init__(self):
        if self.timestep < 0:
            raise ValueError(f"timestep must be non-negative, got {self.timestep}")
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.source == self.target:
            raise ValueError(f"source and target must differ, got {self.source!r}")

    def render(self) -> str:
        """Linearisation used as the retrieval key: 'source relation target at t'."""
        return f"{self.source} {self.relation} {self.target} at {self.timestep}"

    def linearize(self) -> str:
        """Prompt-style linearisation: '(source, relation, target, t)'."""
        return f"({self.source}, {self.relation}, {self.target}, {self.timestep})"

    def entities(self) -> tuple[str, str]:
        return (self.source, self.target)


def contradicts(a: Quadruple, b: Quadruple, agent: str = DEFAULT_AGENT) -> bool:
    """Whether two facts cannot coexist in one snapshot.

    Three cases: conflicting states on one entity, one object located in two
    places (``holds`` counts as a place), and agent facts where only the most
    recent observation of a relation is kept.  Symmetric and total.
    """
    if a == b:
        return False
    # Conflicting states.
    if (
        a.source == b.source
        and a.relation == "is"
        and b.relation == "is"
        and states_conflict(a.target, b.target)
    ):
        return True
    # One object, two places.
    if (
        a.source == b.source
        and a.relation in LOCATING_RELATIONS
        and b.relation in LOCATING_RELATIONS
        and (a.relation, a.target) != (b.relation, b.target)
    ):
        return True
    # A held object is located at the agent: a holds-fact displaces any other
    # placement of the same object observed at a different step.
    for held, placed in ((a, b), (b, a)):
        if (
            held.relation == "holds"
            and held.source == agent
            and placed.source == held.target
            and placed.relation in LOCATING_RELATIONS
            and held.timestep != placed.timestep
        ):
            return True
    # Agent facts: latest observation per relation wins.
    if (
        agent in a.entities()
        and agent in b.entities()
        and a.relation == b.relation
        and a.timestep != b.timestep
    ):
        return True
    return False


def _check_internally_consistent(observation: Sequence[Quadruple], agent: str) -> None:
    quads = list(observation)
    for i, qa in enumerate(quads):
        for qb in quads[i + 1 :]:
            if contradicts(qa, qb, agent):
                raise InternallyContradictoryObservation(
                    f"observation contains contradictory pair {qa} / {qb}"
                )


@dataclass(frozen=True)
class MemoryGraph:
    """Immutable snapshot of the accumulated graph memory.

    ``current`` is the latest consistent snapshot; ``history`` is the
    append-only pool of every fact ever held (the retrieval pool).  ``update``
    returns a new value, so snapshots are safe to share across threads.
    """

    current: frozenset[Quadruple]
    history: tuple[Quadruple, ...]
    clock: int
    agent_entity: str = DEFAULT_AGENT
    # Removal log: fact -> step at which it left `current`.
    removed_at: tuple[tuple[Quadruple, int], ...] = ()
    embedder: EmbeddingBackend = field(default_factory=HashedTrigramEmbedder, compare=False)
    # Lazy caches, never part of equality.  The retrieval cache is shared with
    # predicted variants (identical history means identical scores/samples).
    _retrieval_cache: dict = field(default_factory=dict, compare=False, repr=False)
    _local_cache: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def empty(
        cls, agent: str = DEFAULT_AGENT, embedder: EmbeddingBackend | None = None
    ) -> "MemoryGraph":
        # Clock -1 so the first observation lands at timestep 0.
        return cls(
            current=frozenset(),
            history=(),
            clock=-1,
            agent_entity=agent,
            embedder=embedder or HashedTrigramEmbedder(),
        )

    @classmethod
    def from_quads(
        cls,
        quads: Iterable[Quadruple],
        clock: int,
        agent: str = DEFAULT_AGENT,
        embedder: EmbeddingBackend | None = None,
    ) -> "MemoryGraph":
        """Direct construction for tests and fixtures; validates consistency."""
        pool = tuple(sorted(set(quads)))
        _check_internally_consistent(pool, agent)
        return cls(
            current=frozenset(pool),
            history=pool,
            clock=clock,
            agent_entity=agent,
            embedder=embedder or HashedTrigramEmbedder(),
        )

    # ------------------------------------------------------------------
    # update
    # ------------------------------------------------------------------
    def update(self, observation: Iterable[Quadruple]) -> "MemoryGraph":
        """Merge a new observation, dropping every stored fact it contradicts."""
        obs = tuple(sorted(set(observation)))
        for quad in obs:
            if quad.timestep != self.clock + 1:
                raise ValueError(
                    f"observation timestep {quad.timestep} != clock+1 ({self.clock + 1})"
                )
        _check_internally_consistent(obs, self.agent_entity)

        # Contradictions require a shared source, a holds/placement pairing,
        # or two agent facts, so only a few stored quads can clash with each
        # incoming one.
        by_source: dict[str, list[Quadruple]] = {}
        agent_quads: list[Quadruple] = []
        for quad in self.current:
            by_source.setdefault(quad.source, []).append(quad)
            if self.agent_entity in quad.entities():
                agent_quads.append(quad)

        removed: set[Quadruple] = set()
        for new in obs:
            candidates = list(by_source.get(new.source, ()))
            if new.relation == "holds":
                candidates += by_source.get(new.target, ())
            candidates += agent_quads
            for old in candidates:
                if old not in removed and contradicts(old, new, self.agent_entity):
                    removed.add(old)

        new_history = self.history + tuple(q for q in obs if q not in set(self.history))
        # History only appends, so prefix-keyed retrieval caches stay valid
        # and are carried forward.
        return MemoryGraph(
            current=(self.current - removed) | set(obs),
            history=new_history,
            clock=self.clock + 1,
            agent_entity=self.agent_entity,
            removed_at=self.removed_at
            + tuple((q, self.clock + 1) for q in sorted(removed)),
            embedder=self.embedder,
            _retrieval_cache=self._retrieval_cache,
        )

    def removal_step(self, quad: Quadruple) -> int | None:
        for q, step in self.removed_at:
            if q == quad:
                return step
        return None

    def retract(self, quads: Iterable[Quadruple]) -> "MemoryGraph":
        """Drop facts from the snapshot (history is untouched, append-only).

        Used for negative evidence: a fact whose spot was in plain view with
        nothing there no longer belongs in the current picture.
        """
        doomed = {q for q in quads if q in self.current}
        if not doomed:
            return self
        return MemoryGraph(
            current=self.current - doomed,
            history=self.history,
            clock=self.clock,
            agent_entity=self.agent_entity,
            removed_at=self.removed_at
            + tuple((q, max(self.clock, 0)) for q in sorted(doomed)),
            embedder=self.embedder,
            _retrieval_cache=self._retrieval_cache,
        )

    # ------------------------------------------------------------------
    # retrieval
    # ------------------------------------------------------------------
    def _history_matrix(self) -> np.ndarray:
        n = len(self.history)
        cached = self._retrieval_cache.get("matrix")
        have = 0 if cached is None else len(cached)
        if have < n:
            rows = [self.embedder.embed(q.render()) for q in self.history[have:]]
            cached = np.vstack([cached, *rows]) if cached is not None else np.stack(rows)
            self._retrieval_cache["matrix"] = cached
        return cached[:n]

    def retrieval_scores(self, directives: Sequence[str]) -> np.ndarray:
        """Similarity of every history fact to its best-matching directive."""
        n = len(self.history)
        if not n:
            return np.zeros(0)
        canon = tuple(sorted(set(directives)))
        if not canon:
            return np.zeros(n)
        key = ("scores", canon)
        cached = self._retrieval_cache.get(key)
        have = 0 if cached is None else len(cached)
        if have < n:
            directive_vecs = np.stack([self.embedder.embed(d) for d in canon])
            fresh = (self._history_matrix()[have:] @ directive_vecs.T).max(axis=1)
            cached = np.concatenate([cached, fresh]) if cached is not None else fresh
            self._retrieval_cache[key] = cached
        return cached[:n]

    def _sampling_noise(self, rng_seed: int) -> np.ndarray:
        """Per-fact Gumbel noise, stable in the fact and the seed.

        Tying noise to fact identity instead of pool position keeps retrieved
        sets steady while the pool merely grows, so downstream value
        estimates don't flutter; across seeds the draws stay independent.
        """
        key = ("noise", rng_seed)
        noise = self._retrieval_cache.get(key)
        have = 0 if noise is None else len(noise)
        if have < len(self.history):
            extra = np.array(
                [_hash_gumbel(rng_seed, q.render()) for q in self.history[have:]]
            )
            noise = extra if noise is None else np.concatenate([noise, extra])
            self._retrieval_cache[key] = noise
        return noise[: len(self.history)]

    def retrieve(
        self,
        directives: Sequence[str],
        k: int,
        temperature: float = 1.0,
        rng_seed: int = 0,
    ) -> list[Quadruple]:
        """Sample k distinct facts from a softmax over directive similarity.

        Gumbel-top-k: ranking score/temperature plus Gumbel noise draws the
        successive renormalised multinomial exactly, without replacement and
        with no exp underflow, so tiny temperatures degenerate cleanly to
        top-k.  When k exceeds the pool the whole pool is returned.
        Deterministic given ``rng_seed``.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if not self.history:
            raise EmptyMemory("cannot retrieve from an empty memory")
        canon = tuple(sorted(set(directives)))
        key = ("sample", canon, len(self.history), k, temperature, rng_seed)
        cached = self._retrieval_cache.get(key)
        if cached is not None:
            return list(cached)
        scores = self.retrieval_scores(canon)
        keys = scores / temperature + self._sampling_noise(rng_seed)
        order = np.argsort(-keys, kind="stable")
        result = tuple(self.history[int(i)] for i in order[: min(k, len(keys))])
        self._retrieval_cache[key] = result
        return list(result)

    # ------------------------------------------------------------------
    # distance
    # ------------------------------------------------------------------
    def _entity_graph(self) -> dict[str, list[str]]:
        cached = self._local_cache.get("entity_graph")
        if cached is not None:
            return cached
        neighbors: dict[str, set[str]] = {}
        for quad in self.current:
            se, te = quad.entities()
            neighbors.setdefault(se, set()).add(te)
            neighbors.setdefault(te, set()).add(se)
        adjacency = {node: sorted(others) for node, others in sorted(neighbors.items())}
        self._local_cache["entity_graph"] = adjacency
        return adjacency

    def _hops_from_agent(self) -> dict[str, int]:
        cached = self._local_cache.get("hops")
        if cached is not None:
            return cached
        adjacency = self._entity_graph()
        hops = {self.agent_entity: 0}
        frontier = [self.agent_entity]
        while frontier:
            nxt = []
            for node in frontier:
                for other in adjacency.get(node, ()):
                    if other not in hops:
                        hops[other] = hops[node] + 1
                        nxt.append(other)
            frontier = nxt
        self._local_cache["hops"] = hops
        return hops

    def distance(self, quads: Sequence[Quadruple]) -> float:
        """Mean hop count from the agent to the nearer endpoint of each fact.

        Entities absent from the current entity graph (or unreachable) count
        as one more than the node count, keeping ratios finite.
        """
        if not quads:
            raise ValueError("quads must be non-empty")
        hops = self._hops_from_agent()
        sentinel = len(self._entity_graph()) + 1
        total = 0.0
        for quad in quads:
            se, te = quad.entities()
            total += min(hops.get(se, sentinel), hops.get(te, sentinel))
        return total / len(quads)

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------
    def predict_after_skill(self, skill) -> "MemoryGraph":
        """Graph as it would look after a skill, touching only agent facts.

        Predictions share the history (and retrieval caches) of their source
        graph, so retrieval under a common seed returns identical facts and
        distance comparisons isolate the agent's movement.  Infeasible skills
        return the graph unchanged.
        """
        agent = self.agent_entity
        new_current = None
        removed_edges: list[tuple[str, str]] = []
        added_edges: list[tuple[str, str]] = []
        if skill.verb == "walk":
            room = skill.argument
            placement = [q for q in self.current if q.source == agent and q.relation == "inside"]
            if placement:
                here = max(placement, key=lambda q: q.timestep)
                adjacent = any(
                    q.relation == "adjacent" and {q.source, q.target} == {here.target, room}
                    for q in self.current
                )
                if adjacent and room != here.target:
                    moved = Quadruple(agent, "inside", room, here.timestep)
                    new_current = (self.current - {here}) | {moved}
                    removed_edges.append((agent, here.target))
                    added_edges.append((agent, room))
        elif skill.verb == "grab":
            holding = any(q.source == agent and q.relation == "holds" for q in self.current)
            if not holding and skill.argument != agent:
                grabbed = Quadruple(agent, "holds", skill.argument, max(self.clock, 0))
                new_current = self.current | {grabbed}
                added_edges.append((agent, skill.argument))
        elif skill.verb in ("put", "putin"):
            held = [
                q
                for q in self.current
                if q.source == agent and q.relation == "holds" and q.target == skill.argument
            ]
            if held:
                new_current = self.current - set(held)
                removed_edges.append((agent, skill.argument))
        if new_current is None:
            return self
        predicted = MemoryGraph(
            current=frozenset(new_current),
            history=self.history,
            clock=self.clock,
            agent_entity=agent,
            removed_at=self.removed_at,
            embedder=self.embedder,
            _retrieval_cache=self._retrieval_cache,
        )
        if "entity_graph" in self._local_cache:
            predicted._local_cache["entity_graph"] = _patch_entity_graph(
                self._entity_graph(), removed_edges, added_edges
            )
        return predicted

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    def to_lines(self, which: str = "current") -> list[str]:
        """Line-oriented dump, one '(se, re, te, t)' per line."""
        if which == "current":
            pool: Iterable[Quadruple] = sorted(self.current)
        elif which == "history":
            pool = self.history
        else:
            raise ValueError("which must be 'current' or 'history'")
        return [q.linearize() for q in pool]


def _patch_entity_graph(
    base: dict[str, list[str]],
    removed_edges: Sequence[tuple[str, str]],
    added_edges: Sequence[tuple[str, str]],
) -> dict[str, list[str]]:
    """Apply agent-edge deltas without rebuilding from the full fact set.

    Only valid for edges whose supporting quadruple is unique (agent placement
    and holds facts are latest-only, so this holds).
    """
    adjacency = dict(base)

    def _drop(node: str, other: str) -> None:
        row = [n for n in adjacency.get(node, ()) if n != other]
        if row:
            adjacency[node] = row
        else:
            adjacency.pop(node, None)

    def _add(node: str, other: str) -> None:
        row = adjacency.get(node)
        if row is None:
            adjacency[node] = [other]
        elif other not in row:
            adjacency[node] = sorted(row + [other])

    for a, b in removed_edges:
        _drop(a, b)
        _drop(b, a)
    for a, b in added_edges:
        _add(a, b)
        _add(b, a)
    return adjacency


def _hash_gumbel(seed: int, text: str) -> float:
    """Gumbel(0, 1) variate from a stable hash of (seed, text)."""
    u = (stable_hash((seed, text)) + 0.5) / 2.0**64
    return -math.log(-math.log(u))
