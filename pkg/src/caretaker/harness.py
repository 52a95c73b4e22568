"""Episode runner, SR/PS metrics, expert demonstrations, and experiment sweeps.

The per-step loop: refine and evaluate condition beliefs, threshold them into
active executions, value and pick a skill, step the world, fold the new
observation into memory.  Ground-truth condition events are scored from the
simulator oracle, never from the agent's beliefs.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .gridhome import (
    ChangeTarget,
    NonStationaritySchedule,
    Skill,
    World,
    candidate_skills,
    degree_period,
    load_scene,
)
from .instructions import (
    Execution,
    InstructionSet,
    Query,
    SceneLexicon,
    load_instruction_file,
    parse_set,
)
from .llm_adapter import EndpointConfig, HttpBackend
from .planner import (
    BeliefState,
    Demonstration,
    GoalSearch,
    IntegratedPolicy,
    PlanContext,
    PlannerWeights,
    Policy,
    baseline_policy,
    belief_state,
    hash_exploration_score,
)
from .query_eval import (
    BackendUnavailable,
    QueryBelief,
    ScriptedEvaluatorBackend,
    evaluate,
    select_executions,
)
from .seeding import derive_rng, stable_hash
from .tekg import _GROUP_OF, MemoryGraph, Quadruple, opposite_state

POLICY_NAMES = (
    "exrap",
    "exrap-tc",
    "exrap-exp",
    "exrap-llm",
    "instruction-wise",
    "greedy",
    "mif",
    "msf",
)


class ConfigError(Exception):
    pass


class UnsolvableGoal(Exception):
    pass


@dataclass
class EpisodeConfig:
    scene: str | Path | dict
    instructions: str | Path | Sequence[str]
    horizon: int = 200
    ns: str | None = "medium"  # low | medium | high, or None to use `period`
    period: int | None = None
    seed: int = 0
    backend: str = "scripted"  # scripted | http
    endpoint: str | None = None
    policy: str = "exrap"
    theta: float = 0.5
    k: int = 12
    n_prior_samples: int = 10
    w_t: float | None = None
    w_r: float | None = None
    retrieval_temperature: float = 0.05
    gamma: float | None = None  # None ties decay to the change period
    miscalibration: float = 0.25  # stale-overconfidence rate of the scripted evaluator
    n_instructions: int | None = None
    demos: str | Path | Sequence[Demonstration] | None = None
    record_values: bool = True

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.policy not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.backend not in ("scripted", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise ConfigError("http backend requires an endpoint")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must be in [0, 1]")
        if isinstance(self.scene, (str, Path)) and not Path(self.scene).exists():
            raise ConfigError(f"scene file not found: {self.scene}")
        if isinstance(self.instructions, (str, Path)) and not Path(self.instructions).exists():
            raise ConfigError(f"instruction file not found: {self.instructions}")

    def effective_period(self, world: World) -> int:
        if self.period is not None:
            return self.period
        if self.ns is not None:
            return degree_period(self.ns)
        if world.schedule is not None:
            return world.schedule.period
        raise ConfigError("no change period: set ns, period, or a scene schedule")

    def planner_weights(self, n_queries: int = 1) -> PlannerWeights:
        if self.w_t is not None or self.w_r is not None:
            return PlannerWeights(
                self.w_t if self.w_t is not None else 1.0,
                self.w_r if self.w_r is not None else 1.0,
            )
        if self.backend == "http":
            # The 0.01 exploitation weight matches an unnormalised
            # generation-model score scale.
            return PlannerWeights(0.01, 1.0)
        # Scripted values: exploitation lives in [0, 1]; exploration sums an
        # entropy-weighted term per query, so it is scaled below task scale --
        # information steers idle time, tasks win whenever actionable.
        return PlannerWeights(1.0, 0.25 / max(n_queries, 1))


@dataclass
class BeliefRecord:
    query: str
    p_yes: float
    entropy: float
    source: str
    rejected: int


@dataclass
class ValueRecord:
    skill: str
    v_t: float
    v_r: float
    combined: float
    chosen: bool


@dataclass
class StepRecord:
    t: int
    skill: str
    success: bool
    reason: str
    world_digest: str
    active: list[str]
    beliefs: list[BeliefRecord]
    values: list[ValueRecord]
    cond: list[bool]
    done: list[bool]
    change: list | None


@dataclass
class EventRecord:
    """One ground-truth condition activation and how it ended."""

    instruction: int
    t_start: int
    t_end: int
    pending: int
    status: str  # completed | deactivated | unresolved


@dataclass
class Metrics:
    sr: float
    ps: float
    per_instruction_sr: list[float]
    unresolved: int
    zero_active: bool
    zero_events: bool
    fired_changes: int

    def __post_init__(self):
        if not 0.0 <= self.sr <= 1.0:
            raise ValueError("sr out of range")


@dataclass
class EpisodeTrace:
    policy: str
    seed: int
    horizon: int
    period: int
    instructions: list[str]
    records: list[StepRecord]
    events: list[EventRecord]
    metrics: Metrics | None = None
    aborted: bool = False
    initial_digest: str = ""

    def skills(self) -> list[Skill]:
        out = []
        for record in self.records:
            parts = record.skill.split()
            out.append(Skill(parts[0], parts[1], parts[2] if len(parts) > 2 else None))
        return out

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "kind": "episode",
                    "policy": self.policy,
                    "seed": self.seed,
                    "horizon": self.horizon,
                    "period": self.period,
                    "instructions": self.instructions,
                    "initial_digest": self.initial_digest,
                    "aborted": self.aborted,
                },
                sort_keys=True,
            )
        ]
        for r in self.records:
            for b in r.beliefs:
                lines.append(
                    json.dumps(
                        {
                            "kind": "belief",
                            "t": r.t,
                            "query": b.query,
                            "p_yes": b.p_yes,
                            "entropy": b.entropy,
                            "source": b.source,
                            "rejected": b.rejected,
                        },
                        sort_keys=True,
                    )
                )
            for v in r.values:
                lines.append(
                    json.dumps(
                        {
                            "kind": "value",
                            "t": r.t,
                            "skill": v.skill,
                            "v_t": v.v_t,
                            "v_r": v.v_r,
                            "combined": v.combined,
                            "chosen": v.chosen,
                        },
                        sort_keys=True,
                    )
                )
            payload = asdict(r)
            payload.pop("beliefs")
            payload.pop("values")
            payload["kind"] = "step"
            lines.append(json.dumps(payload, sort_keys=True))
        for e in self.events:
            payload = asdict(e)
            payload["kind"] = "event"
            lines.append(json.dumps(payload, sort_keys=True))
        if self.metrics is not None:
            payload = asdict(self.metrics)
            payload["kind"] = "metrics"
            lines.append(json.dumps(payload, sort_keys=True))
        return "\n".join(lines) + "\n"


def commit_observation(
    memory: MemoryGraph,
    quads,
    confirmations: dict[tuple[str, str, str], int] | None = None,
    refutations: dict[tuple[str, str, str], int] | None = None,
) -> MemoryGraph:
    """Fold an observation into memory.

    Agent-side write policy on top of the raw update: facts already held
    (same source, relation, target) are confirmed, not re-written, so the
    pool stays one copy per transition and retrieval always surfaces the
    newest state of an entity; agent facts are always written.  Stale
    location facts whose spot is now in plain view with nothing there are
    retracted (the room was observed exhaustively, so absence is evidence).
    Sightings are recorded in ``confirmations`` for freshness-aware decay.
    """
    known = {(q.source, q.relation, q.target) for q in memory.current}
    kept = []
    for q in quads:
        if confirmations is not None:
            confirmations[(q.source, q.relation, q.target)] = q.timestep
        if q.source == memory.agent_entity or (q.source, q.relation, q.target) not in known:
            kept.append(q)
    updated = memory.update(kept)
    if refutations is not None:
        # Facts displaced by contradicting observations no longer hold.
        for q in memory.current - updated.current:
            refutations[(q.source, q.relation, q.target)] = updated.clock

    agent = updated.agent_entity
    agent_room = None
    seen_objects = set()
    open_now = set()
    for q in quads:
        if q.source == agent:
            if q.relation == "inside":
                agent_room = q.target
        elif q.relation in ("inside", "on", "is"):
            seen_objects.add(q.source)
            if q.relation == "is" and q.target == "open":
                open_now.add(q.source)
    if agent_room is None:
        return updated

    held = {q.target for q in updated.current if q.source == agent and q.relation == "holds"}

    def spot_in_plain_view(fact: Quadruple) -> bool:
        if fact.target == agent_room:
            return True  # room floor, observed exhaustively
        if fact.relation == "on":
            return fact.target in seen_objects  # a surface we just looked at
        return fact.target in open_now  # container contents visible only when open

    stale = [
        q
        for q in updated.current
        if q.relation in ("inside", "on")
        and q.source != agent
        and q.source not in seen_objects
        and q.source not in held
        and q.timestep < updated.clock
        and spot_in_plain_view(q)
    ]
    if refutations is not None:
        for q in stale:
            refutations[(q.source, q.relation, q.target)] = updated.clock
    return updated.retract(stale)


# ----------------------------------------------------------------------
# schedule derivation
# ----------------------------------------------------------------------
def derive_change_targets(
    iset: InstructionSet, world: World
) -> tuple[ChangeTarget, ...]:
    """One change handle per instruction condition.

    State conditions toggle the entity; placement conditions relocate it to a
    random room floor, so every scheduled change disturbs something some
    instruction watches.
    """

    def atom_of(query: Query) -> Query:
        while query.kind in ("not", "and"):
            query = query.children[0]
        return query

    targets: dict[tuple, ChangeTarget] = {}
    for query in iset.queries:
        atom = atom_of(query)
        instances = world.instances(atom.entity)
        if not instances:
            continue
        entity = instances[0]
        if atom.kind in ("state", "exists_state"):
            if atom.value in ("open", "closed") and world.meta[entity].container:
                target = ChangeTarget("open_flip", entity)
            elif world.objects[entity].state is not None:
                target = ChangeTarget("state_flip", entity)
            else:
                continue
        else:
            if not world.meta[entity].portable:
                continue
            places = tuple(("room", room) for room in world.rooms)
            target = ChangeTarget("relocate", entity, places)
        targets[(target.kind, target.entity)] = target
    return tuple(targets[k] for k in sorted(targets))


# ----------------------------------------------------------------------
# episode loop
# ----------------------------------------------------------------------
def _make_policy(cfg: EpisodeConfig) -> tuple[Policy, bool]:
    """Returns (policy, consistency_enabled)."""
    if cfg.policy == "exrap":
        return IntegratedPolicy("information"), True
    if cfg.policy == "exrap-tc":
        return IntegratedPolicy("information"), False
    if cfg.policy == "exrap-exp":
        return IntegratedPolicy("none"), True
    if cfg.policy == "exrap-llm":
        return IntegratedPolicy("backend"), True
    return baseline_policy(cfg.policy), True


def _load_instruction_texts(cfg: EpisodeConfig) -> list[str]:
    if isinstance(cfg.instructions, (str, Path)):
        texts = load_instruction_file(cfg.instructions)
    else:
        texts = list(cfg.instructions)
    if cfg.n_instructions is not None:
        texts = texts[: cfg.n_instructions]
    return texts


def _load_demos(cfg: EpisodeConfig) -> tuple[Demonstration, ...]:
    if cfg.demos is None:
        return ()
    if isinstance(cfg.demos, (str, Path)):
        return tuple(load_demo_file(cfg.demos))
    return tuple(cfg.demos)


def run_episode(cfg: EpisodeConfig) -> EpisodeTrace:
    """Run one seeded episode and score it."""
    cfg.validate()
    world = load_scene(cfg.scene)
    lexicon = SceneLexicon.from_world(world)
    texts = _load_instruction_texts(cfg)
    iset = parse_set(texts, lexicon)
    if not len(iset):
        raise ConfigError("no instructions to follow")

    period = cfg.effective_period(world)
    targets = derive_change_targets(iset, world)
    if not targets and world.schedule is not None:
        targets = world.schedule.targets
    if not targets:
        raise ConfigError("no usable non-stationarity targets")
    world = replace(
        world,
        schedule=NonStationaritySchedule(period=period, rng_seed=cfg.seed, targets=targets),
    )
    # One scheduled change fires per period, aimed at one of the followed
    # instructions, so a given fact flips about once per period * n steps;
    # belief decay is matched to that hazard.
    if cfg.gamma is not None:
        gamma = cfg.gamma
    else:
        gamma = 1.0 - 1.0 / (2.0 * period * max(len(iset), 1))
    weights = cfg.planner_weights(len(iset))

    aliases = {
        token: tuple(lexicon.instances(token))
        for token in {q.entity for q in iset.queries if q.entity}
        | {atom.entity for q in iset.queries for atom in q.children if atom.entity}
    }
    confirmations: dict[tuple[str, str, str], int] = {}
    refutations: dict[tuple[str, str, str], int] = {}
    eval_backend = ScriptedEvaluatorBackend(
        gamma=gamma,
        aliases=aliases,
        confirmations=confirmations,
        refutations=refutations,
        miscalibration=cfg.miscalibration,
    )
    value_backend = None
    exploration_scorer = hash_exploration_score
    if cfg.backend == "http":
        http = HttpBackend(EndpointConfig(cfg.endpoint), retrieval_k=cfg.k)
        eval_backend = http
        value_backend = http
        exploration_scorer = http.score_exploration

    policy, consistency = _make_policy(cfg)
    demos = _load_demos(cfg)

    memory = commit_observation(MemoryGraph.empty(), world.observe().quads, confirmations, refutations)
    beliefs: list[QueryBelief] = [QueryBelief.initial() for _ in iset.queries]
    prev_retrievals: list[tuple[Quadruple, ...] | None] = [None] * len(iset)

    cond = [world.condition_satisfied(q) for q in iset.queries]
    done = [world.execution_complete(e) for e in iset.executions]
    open_events: dict[int, int] = {}
    events: list[EventRecord] = []
    for j, active_now in enumerate(cond):
        if active_now:
            if done[j]:
                events.append(EventRecord(j, 0, 0, 0, "completed"))
            else:
                open_events[j] = 0

    trace = EpisodeTrace(
        policy=cfg.policy,
        seed=cfg.seed,
        horizon=cfg.horizon,
        period=period,
        instructions=[i.raw for i in iset.instructions],
        records=[],
        events=events,
        initial_digest=world.digest(),
    )

    aborted = False
    for t in range(1, cfg.horizon + 1):
        belief_rows: list[BeliefRecord] = []
        try:
            for j, query in enumerate(iset.queries):
                result = evaluate(
                    query,
                    t,
                    memory,
                    beliefs[j],
                    eval_backend,
                    rng_seed=stable_hash((cfg.seed, "belief", j)),
                    prev_retrieval=prev_retrievals[j],
                    n_samples=cfg.n_prior_samples,
                    k=cfg.k,
                    temperature=cfg.retrieval_temperature,
                    gamma=gamma,
                    consistency=consistency,
                    freshness_of=getattr(eval_backend, "_freshness", None),
                )
                beliefs[j] = result.belief
                prev_retrievals[j] = result.retrieval
                belief_rows.append(
                    BeliefRecord(
                        query=query.retrieval_text(),
                        p_yes=result.belief.p_yes,
                        entropy=result.belief.entropy_bits,
                        source=result.belief.source,
                        rejected=result.refined.n_rejected,
                    )
                )

            belief_map = {q: beliefs[j] for j, q in enumerate(iset.queries)}
            active = select_executions(belief_map, iset, cfg.theta)
            believed = belief_state(memory)
            room = believed.agent_room or world.agent_room
            in_room = sorted(
                o
                for o in believed.locations
                if believed.room_of(o) == room and o not in believed.rooms
            )
            states = {o: believed.state_of(o, "on") for o in in_room}
            candidates = candidate_skills(
                believed.adjacent_rooms(room),
                in_room,
                world.meta,
                believed.held,
                believed.open_containers,
                room,
                states,
            )
            if not candidates:
                candidates = [Skill("walk", room_) for room_ in believed.adjacent_rooms(room)]
            ctx = PlanContext(
                memory=memory,
                instruction_set=iset,
                beliefs=belief_map,
                active=active,
                candidates=tuple(candidates),
                meta=world.meta,
                t=t,
                rng_seed=stable_hash((cfg.seed, "plan", t)),
                weights=weights,
                k=cfg.k,
                retrieval_temperature=cfg.retrieval_temperature,
                demos=demos,
                value_backend=value_backend,
                exploration_scorer=exploration_scorer,
            )
            skill, values = policy.choose(ctx)
        except BackendUnavailable:
            aborted = True
            break

        world, observation, outcome = world.step(skill)
        memory = commit_observation(memory, observation.quads, confirmations, refutations)

        cond = [world.condition_satisfied(q) for q in iset.queries]
        done = [world.execution_complete(e) for e in iset.executions]
        for j in range(len(iset)):
            if j in open_events:
                t0 = open_events[j]
                if done[j]:
                    events.append(EventRecord(j, t0, t, t - t0, "completed"))
                    del open_events[j]
                elif not cond[j]:
                    events.append(EventRecord(j, t0, t, t - t0, "deactivated"))
                    del open_events[j]
            elif cond[j]:
                if done[j]:
                    events.append(EventRecord(j, t, t, 0, "completed"))
                else:
                    open_events[j] = t

        value_rows = []
        if cfg.record_values:
            value_rows = [
                ValueRecord(v.skill.render(), v.v_t, v.v_r, v.combined, v.skill == skill)
                for v in sorted(values, key=lambda v: v.skill.key())
            ]
        trace.records.append(
            StepRecord(
                t=t,
                skill=skill.render(),
                success=outcome.success,
                reason=outcome.reason,
                world_digest=world.digest(),
                active=[e.render() for e in active],
                beliefs=belief_rows,
                values=value_rows,
                cond=list(cond),
                done=list(done),
                change=list(world.last_change) if world.last_change else None,
            )
        )

    horizon_end = trace.records[-1].t if trace.records else 0
    for j, t0 in sorted(open_events.items()):
        events.append(EventRecord(j, t0, horizon_end, horizon_end - t0, "unresolved"))
    trace.aborted = aborted
    trace.metrics = compute_metrics(trace)
    return trace


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------
def compute_sr(trace: EpisodeTrace) -> tuple[float, bool, list[float]]:
    """Mean per-step completion ratio over steps with an active condition.

    Returns (sr, zero_active_flag, per-instruction breakdown).
    """
    ratios = []
    n = len(trace.instructions)
    per_hits = [0] * n
    per_steps = [0] * n
    for record in trace.records:
        active = [j for j in range(n) if record.cond[j]]
        if not active:
            continue
        hits = sum(1 for j in active if record.done[j])
        ratios.append(hits / len(active))
        for j in active:
            per_steps[j] += 1
            if record.done[j]:
                per_hits[j] += 1
    per_instruction = [
        per_hits[j] / per_steps[j] if per_steps[j] else 1.0 for j in range(n)
    ]
    if not ratios:
        return 1.0, True, per_instruction
    return sum(ratios) / len(ratios), False, per_instruction


def compute_ps(trace_or_events) -> float:
    """Mean pending steps per condition-activation event.

    Accepts an EpisodeTrace, EventRecords, or plain durations; no events
    means 0.0.
    """
    if isinstance(trace_or_events, EpisodeTrace):
        durations = [e.pending for e in trace_or_events.events]
    else:
        items = list(trace_or_events)
        if items and isinstance(items[0], EventRecord):
            durations = [e.pending for e in items]
        else:
            durations = [float(x) for x in items]
    if not durations:
        return 0.0
    return sum(durations) / len(durations)


def compute_metrics(trace: EpisodeTrace) -> Metrics:
    sr, zero_active, per_instruction = compute_sr(trace)
    ps = compute_ps(trace)
    unresolved = sum(1 for e in trace.events if e.status == "unresolved")
    fired = sum(1 for r in trace.records if r.change is not None)
    return Metrics(
        sr=sr,
        ps=ps,
        per_instruction_sr=per_instruction,
        unresolved=unresolved,
        zero_active=zero_active,
        zero_events=not trace.events,
        fired_changes=fired,
    )


# ----------------------------------------------------------------------
# expert demonstrations
# ----------------------------------------------------------------------
def world_belief(world: World) -> BeliefState:
    """Fully observed belief state, for the omniscient expert."""
    adjacency = frozenset(tuple(sorted(p)) for p in world.adjacency)
    locations = {
        o: st.location for o, st in world.objects.items() if st.location[0] != "agent"
    }
    states: dict[str, dict[object, str]] = {}
    open_containers = set()
    for o, st in world.objects.items():
        if st.state is not None:
            states.setdefault(o, {})[_GROUP_OF.get(st.state, st.state)] = st.state
        if st.container_open is not None:
            states.setdefault(o, {})[_GROUP_OF.get("open")] = (
                "open" if st.container_open else "closed"
            )
            if st.container_open:
                open_containers.add(o)
    return BeliefState(
        rooms=world.rooms,
        adjacency=adjacency,
        agent_room=world.agent_room,
        held=world.inventory,
        locations=locations,
        states=states,
        open_containers=frozenset(open_containers),
    )


def plan_for(world: World, execution: Execution, cap: int = 12) -> list[Skill]:
    """Optimal skill sequence for one goal under full observability."""
    belief = world_belief(world)
    search = GoalSearch(belief, world.meta, execution, cap)
    plan = search.extract_plan()
    if plan is None:
        raise UnsolvableGoal(f"{execution.render()} unreachable within {cap} steps")
    return plan


def _randomize_world(world: World, rng) -> World:
    """Shuffle portable objects and binary states for demo variety."""
    rooms = list(world.rooms)
    for obj in sorted(world.objects):
        meta = world.meta[obj]
        st = world.objects[obj]
        if meta.portable and rng.random() < 0.5:
            world = world._relocate(obj, ("room", rooms[int(rng.integers(len(rooms)))]))
        if st.state is not None and opposite_state(st.state) and rng.random() < 0.5:
            world = world._with_object(obj, replace(st, state=opposite_state(st.state)))
        if st.container_open is not None and rng.random() < 0.5:
            world = world._with_object(obj, replace(st, container_open=not st.container_open))
    start = rooms[int(rng.integers(len(rooms)))]
    return replace(world, agent_room=start, agent_at=None)


def generate_demos(
    scene: str | Path | dict,
    instructions: Sequence[str] | str | Path,
    n_trajectories: int,
    seed: int = 0,
) -> list[Demonstration]:
    """Expert trajectories: randomized starts, optimal plans, replay-verified."""
    base = load_scene(scene)
    lexicon = SceneLexicon.from_world(base)
    if isinstance(instructions, (str, Path)):
        instructions = load_instruction_file(instructions)
    iset = parse_set(instructions, lexicon)
    demos: list[Demonstration] = []
    attempt = 0
    while len(demos) < n_trajectories and attempt < n_trajectories * 30:
        rng = derive_rng(seed, "demo", attempt)
        attempt += 1
        world = _randomize_world(replace(base, schedule=None), rng)
        idx = int(rng.integers(len(iset)))
        query = iset.queries[idx]
        execution = iset.executions[idx]
        if not world.condition_satisfied(query) or world.execution_complete(execution):
            continue
        try:
            plan = plan_for(world, execution)
        except UnsolvableGoal:
            continue
        if not plan:
            continue
        demos.append(
            Demonstration(
                observation=world.observe().quads,
                executions=(execution,),
                skill_sequence=tuple(plan),
            )
        )
    if len(demos) < n_trajectories:
        raise UnsolvableGoal(
            f"only {len(demos)} of {n_trajectories} demonstrations were solvable"
        )
    return demos


def save_demo_file(demos: Sequence[Demonstration], path: str | Path) -> None:
    payload = []
    for demo in demos:
        payload.append(
            {
                "observation": [[q.source, q.relation, q.target, q.timestep] for q in demo.observation],
                "executions": [
                    {"goal": e.goal, "entity": e.entity, "target": e.target}
                    for e in demo.executions
                ],
                "skills": [[s.verb, s.argument, s.secondary] for s in demo.skill_sequence],
            }
        )
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_demo_file(path: str | Path) -> list[Demonstration]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    demos = []
    for item in payload:
        demos.append(
            Demonstration(
                observation=tuple(Quadruple(*q) for q in item["observation"]),
                executions=tuple(
                    Execution(e["goal"], e["entity"], e["target"]) for e in item["executions"]
                ),
                skill_sequence=tuple(Skill(s[0], s[1], s[2]) for s in item["skills"]),
            )
        )
    return demos


# ----------------------------------------------------------------------
# replay and sweeps
# ----------------------------------------------------------------------
def replay_digests(cfg: EpisodeConfig, trace: EpisodeTrace) -> list[str]:
    """Re-simulate a trace's skill sequence; returns the world digests."""
    world = load_scene(cfg.scene)
    lexicon = SceneLexicon.from_world(world)
    iset = parse_set(_load_instruction_texts(cfg), lexicon)
    targets = derive_change_targets(iset, world)
    world = replace(
        world,
        schedule=NonStationaritySchedule(
            period=trace.period, rng_seed=cfg.seed, targets=targets
        ),
    )
    digests = []
    for skill in trace.skills():
        world, _, _ = world.step(skill)
        digests.append(world.digest())
    return digests


def confidence_interval_95(values: Sequence[float]) -> float:
    """Half-width of the normal-approximation 95% confidence interval."""
    if len(values) < 2:
        return 0.0
    return 1.959963984540054 * statistics.stdev(values) / len(values) ** 0.5


@dataclass
class SweepResult:
    rows: list[dict]
    aggregates: list[dict]

    def all_rows(self) -> list[dict]:
        return self.rows + self.aggregates


def sweep(grid: Mapping, out_csv: str | Path | None = None) -> SweepResult:
    """Run a (policy x non-stationarity x seed) grid and aggregate per cell.

    Grid keys: scene, instructions (required); policies, ns, seeds,
    n_instructions, horizon, backend, endpoint, theta, k (optional).
    """
    policies = list(grid.get("policies", ["exrap"]))
    degrees = list(grid.get("ns", ["medium"]))
    seeds = list(grid.get("seeds", [0]))
    if not policies or not degrees or not seeds:
        raise ConfigError("sweep grid must include policies, ns degrees, and seeds")
    rows: list[dict] = []
    aggregates: list[dict] = []
    for policy in policies:
        for ns in degrees:
            cell: list[dict] = []
            for seed in seeds:
                cfg = EpisodeConfig(
                    scene=grid["scene"],
                    instructions=grid["instructions"],
                    horizon=int(grid.get("horizon", 200)),
                    ns=ns,
                    seed=int(seed),
                    backend=grid.get("backend", "scripted"),
                    endpoint=grid.get("endpoint"),
                    policy=policy,
                    theta=float(grid.get("theta", 0.5)),
                    k=int(grid.get("k", 12)),
                    n_prior_samples=int(grid.get("n_prior_samples", 10)),
                    n_instructions=grid.get("n_instructions"),
                    record_values=False,
                )
                start = time.perf_counter()
                try:
                    trace = run_episode(cfg)
                    metrics = trace.metrics
                    row = {
                        "policy": policy,
                        "ns": ns,
                        "n_instructions": len(trace.instructions),
                        "seed": seed,
                        "sr": round(metrics.sr, 6),
                        "ps": round(metrics.ps, 6),
                        "unresolved": metrics.unresolved,
                        "wall_ms": int((time.perf_counter() - start) * 1000),
                        "error": "",
                    }
                except Exception as exc:  # flagged row, sweep continues
                    row = {
                        "policy": policy,
                        "ns": ns,
                        "n_instructions": grid.get("n_instructions", 0),
                        "seed": seed,
                        "sr": "",
                        "ps": "",
                        "unresolved": "",
                        "wall_ms": int((time.perf_counter() - start) * 1000),
                        "error": f"{type(exc).__name__}: {exc}",
                    }
                rows.append(row)
                if not row["error"]:
                    cell.append(row)
            if cell:
                srs = [r["sr"] for r in cell]
                pss = [r["ps"] for r in cell]
                aggregates.append(
                    {
                        "policy": policy,
                        "ns": ns,
                        "n_instructions": cell[0]["n_instructions"],
                        "seed": "aggregate",
                        "sr": round(sum(srs) / len(srs), 6),
                        "ps": round(sum(pss) / len(pss), 6),
                        "unresolved": sum(r["unresolved"] for r in cell),
                        "wall_ms": sum(r["wall_ms"] for r in cell),
                        "error": "",
                        "sr_ci95": round(confidence_interval_95(srs), 6),
                        "ps_ci95": round(confidence_interval_95(pss), 6),
                    }
                )
    result = SweepResult(rows, aggregates)
    if out_csv is not None:
        write_sweep_csv(result, out_csv)
    return result


def write_sweep_csv(result: SweepResult, path: str | Path) -> None:
    fields = [
        "policy",
        "ns",
        "n_instructions",
        "seed",
        "sr",
        "ps",
        "unresolved",
        "wall_ms",
        "error",
        "sr_ci95",
        "ps_ci95",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, restval="")
        writer.writeheader()
        for row in result.all_rows():
            writer.writerow(row)


def sign_test_p(wins: int, losses: int) -> float:
    """One-sided exact sign test: P(at least `wins` successes | fair coin)."""
    import math

    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, i) for i in range(wins, n + 1)) / 2.0**n
