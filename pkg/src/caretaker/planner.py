"""Skill valuation and selection.

Exploitation scores a skill by how close it leaves the agent to finishing an
active execution (shortest feasible plan, breadth-first, over the agent's
believed world).  Exploration scores it by entropy-weighted reduction of graph
distance to query-relevant facts.  Selection takes the weighted argmax.
Baseline heuristics for benchmarking live here too.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Callable, Mapping, Sequence

from .gridhome import ObjectMeta, Skill
from .instructions import Execution, InstructionSet, Query
from .query_eval import QueryBelief
from .seeding import stable_hash
from .tekg import LOCATING_RELATIONS, MemoryGraph, Quadruple, _GROUP_OF, opposite_state

GOAL_SEARCH_CAP = 12
OTHER_ITEM = "<other>"


class EmptyDataset(Exception):
    pass


@dataclass(frozen=True)
class PlannerWeights:
    w_t: float = 1.0
    w_r: float = 1.0

    def __post_init__(self):
        if self.w_t < 0 or self.w_r < 0:
            raise ValueError("weights must be non-negative")
        if self.w_t == 0 and self.w_r == 0:
            raise ValueError("at least one weight must be positive")


@dataclass(frozen=True)
class SkillValue:
    skill: Skill
    v_t: float
    v_r: float
    combined: float

    @classmethod
    def make(cls, skill: Skill, v_t: float, v_r: float, weights: PlannerWeights) -> "SkillValue":
        return cls(skill, v_t, v_r, weights.w_t * v_t + weights.w_r * v_r)


@dataclass(frozen=True)
class Demonstration:
    observation: tuple[Quadruple, ...]
    executions: tuple[Execution, ...]
    skill_sequence: tuple[Skill, ...]

    def __post_init__(self):
        if not self.skill_sequence:
            raise ValueError("skill_sequence must be non-empty")


def select_skill(values: Sequence[SkillValue], weights: PlannerWeights) -> Skill:
    """Argmax of the weighted value; ties resolve to the smallest skill key."""
    if not values:
        raise ValueError("values must be non-empty")
    scored = [(weights.w_t * v.v_t + weights.w_r * v.v_r, v.skill) for v in values]
    best = max(score for score, _ in scored)
    return min((skill for score, skill in scored if score == best), key=lambda s: s.key())


def retrieve_demos(
    dataset: Sequence[Demonstration], observation: Sequence[Quadruple], n: int = 3
) -> list[Demonstration]:
    """Top-n demonstrations by Jaccard overlap of timestep-stripped facts."""
    if not dataset:
        raise EmptyDataset("no demonstrations available")
    if n < 1:
        raise ValueError("n must be >= 1")

    def strip(quads: Sequence[Quadruple]) -> frozenset:
        return frozenset((q.source, q.relation, q.target) for q in quads)

    target = strip(observation)
    scored = []
    for i, demo in enumerate(dataset):
        other = strip(demo.observation)
        union = len(target | other)
        score = len(target & other) / union if union else 0.0
        scored.append((-score, i, demo))
    scored.sort(key=lambda item: (item[0], item[1]))
    return [demo for _, _, demo in scored[:n]]


# ----------------------------------------------------------------------
# the agent's believed world, assembled from memory
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BeliefState:
    rooms: tuple[str, ...]
    adjacency: frozenset[tuple[str, str]]
    agent_room: str | None
    held: str | None
    locations: Mapping[str, tuple]
    states: Mapping[str, Mapping[object, str]]
    open_containers: frozenset[str]
    room_last_seen: Mapping[str, int] = None

    def adjacent_rooms(self, room: str) -> list[str]:
        out = {b for a, b in self.adjacency if a == room}
        out |= {a for a, b in self.adjacency if b == room}
        return sorted(out)

    def room_of(self, entity: str) -> str | None:
        if entity in self.rooms:
            return entity
        seen = set()
        loc = self.locations.get(entity)
        while loc is not None:
            tag, holder = loc
            if tag == "room":
                return holder
            if holder in seen:
                return None
            seen.add(holder)
            if holder in self.rooms:
                return holder
            loc = self.locations.get(holder)
        return None

    def state_of(self, entity: str, axis_token: str) -> str | None:
        axes = self.states.get(entity, {})
        return axes.get(_GROUP_OF.get(axis_token, axis_token))

    def goal_holds(self, execution: Execution) -> bool:
        """Whether the believed world already satisfies an execution goal."""
        if execution.goal == "state":
            axis_probe = "open" if execution.target in ("open", "closed") else execution.target
            return self.state_of(execution.entity, axis_probe) == execution.target
        if self.held == execution.entity:
            return False
        loc = self.locations.get(execution.entity)
        if execution.goal == "on":
            return loc == ("on", execution.target)
        if execution.target in self.rooms:
            return loc is not None and self.room_of(execution.entity) == execution.target
        return loc == ("in", execution.target)


def belief_state(memory: MemoryGraph) -> BeliefState:
    """Extract the agent's current picture of the world from memory."""
    cached = memory._local_cache.get("belief_state")
    if cached is not None:
        return cached
    agent = memory.agent_entity
    adjacency = set()
    rooms = set()
    agent_quad: Quadruple | None = None
    holds_quad: Quadruple | None = None
    latest_loc: dict[str, Quadruple] = {}
    latest_state: dict[tuple[str, object], Quadruple] = {}
    for quad in memory.current:
        if quad.relation == "adjacent":
            pair = tuple(sorted((quad.source, quad.target)))
            adjacency.add(pair)
            rooms.update(pair)
        elif quad.source == agent:
            if quad.relation == "inside":
                if agent_quad is None or quad.timestep > agent_quad.timestep:
                    agent_quad = quad
            elif quad.relation == "holds":
                if holds_quad is None or quad.timestep > holds_quad.timestep:
                    holds_quad = quad
        elif quad.relation in LOCATING_RELATIONS:
            prev = latest_loc.get(quad.source)
            if prev is None or quad.timestep > prev.timestep:
                latest_loc[quad.source] = quad
        elif quad.relation == "is":
            axis = _GROUP_OF.get(quad.target, quad.target)
            key = (quad.source, axis)
            prev = latest_state.get(key)
            if prev is None or quad.timestep > prev.timestep:
                latest_state[key] = quad

    locations = {}
    for obj, quad in latest_loc.items():
        if quad.relation == "on":
            locations[obj] = ("on", quad.target)
        elif quad.target in rooms:
            locations[obj] = ("room", quad.target)
        else:
            locations[obj] = ("in", quad.target)

    states: dict[str, dict[object, str]] = {}
    open_containers = set()
    for (obj, axis), quad in latest_state.items():
        states.setdefault(obj, {})[axis] = quad.target
        if quad.target == "open":
            open_containers.add(obj)

    # A holds-fact older than the agent's latest placement is stale (the
    # object was put down since); placements are re-observed every step.
    held = None
    if holds_quad is not None and agent_quad is not None:
        if holds_quad.timestep >= agent_quad.timestep:
            held = holds_quad.target

    room_last_seen: dict[str, int] = {}
    for quad in memory.history:
        if quad.source == agent and quad.relation == "inside":
            room_last_seen[quad.target] = max(room_last_seen.get(quad.target, -1), quad.timestep)

    result = BeliefState(
        rooms=tuple(sorted(rooms)),
        adjacency=frozenset(adjacency),
        agent_room=agent_quad.target if agent_quad else None,
        held=held,
        locations=locations,
        states=states,
        open_containers=frozenset(open_containers),
        room_last_seen=room_last_seen,
    )
    memory._local_cache["belief_state"] = result
    return result


# ----------------------------------------------------------------------
# goal distances over the believed world
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class _ReducedState:
    agent_room: str
    held: str | None
    place: tuple | None  # goal object's location, None for state goals
    token: str | None  # goal entity's state token, None for move goals
    open_flags: tuple[bool, ...]  # aligned with GoalSearch.relevant


class GoalSearch:
    """Shortest-plan distances for one execution goal in the believed world.

    The state space is reduced to what the goal can touch: the agent's room
    and hands, the goal object's place, the goal entity's state token, and the
    open flags of containers on the route.  The whole (small) space is
    enumerated and distances-to-goal come from one backward breadth-first
    sweep, so the remaining plan length after any candidate skill is a lookup.
    """

    def __init__(
        self,
        belief: BeliefState,
        meta: Mapping[str, ObjectMeta],
        execution: Execution,
        cap: int = GOAL_SEARCH_CAP,
    ):
        self.belief = belief
        self.meta = meta
        self.execution = execution
        self.cap = cap
        ent = execution.entity
        self.is_state_goal = execution.goal == "state"
        self.openable_goal = self.is_state_goal and execution.target in ("open", "closed")
        self.start_loc = belief.locations.get(ent)
        relevant: list[str] = []
        if self.start_loc is not None and self.start_loc[0] == "in" and not self.openable_goal:
            relevant.append(self.start_loc[1])
        if (
            not self.is_state_goal
            and execution.goal == "inside"
            and execution.target not in belief.rooms
        ):
            relevant.append(execution.target)
        self.relevant = tuple(sorted(set(relevant)))
        self._to_goal: dict[_ReducedState, int] | None = None
        self._start: _ReducedState | None = None
        self._prepare()

    # -- construction -----------------------------------------------------
    def _prepare(self) -> None:
        b = self.belief
        ent = self.execution.entity
        if b.agent_room is None:
            return
        start_flags = tuple(c in b.open_containers for c in self.relevant)
        if self.is_state_goal:
            axis_probe = "open" if self.openable_goal else self.execution.target
            token = b.state_of(ent, axis_probe)
            if token is None or b.room_of(ent) is None:
                return
            token_pool = {token, self.execution.target}
            for known in (token, self.execution.target):
                if opposite_state(known):
                    token_pool.add(opposite_state(known))
            tokens = sorted(token_pool)
            places: list[tuple | None] = [None]
            start_place = None
        else:
            if b.held == ent:
                start_place: tuple | None = ("agent",)
            else:
                start_place = b.locations.get(ent)
                if start_place is None or b.room_of(ent) is None:
                    return
            target = self.execution.target
            if target in b.rooms:
                goal_place = ("room", target)
            elif self.execution.goal == "on":
                goal_place = ("on", target)
            else:
                goal_place = ("in", target)
            if target not in b.rooms and b.room_of(target) is None:
                return
            places = sorted({start_place, ("agent",), goal_place}, key=repr)
            tokens = [None]
            token = None

        held_options: list[str | None] = [None, ent]
        if b.held not in (None, ent):
            held_options.append(OTHER_ITEM)
        flag_options = list(product((False, True), repeat=len(self.relevant)))

        states = [
            _ReducedState(room, held, place, tok, flags)
            for room in b.rooms
            for held in held_options
            for place in places
            for tok in tokens
            for flags in flag_options
        ]
        start_held = None
        if b.held is not None:
            start_held = ent if b.held == ent else OTHER_ITEM
        self._start = _ReducedState(b.agent_room, start_held, start_place, token, start_flags)

        # Backward breadth-first sweep from the goal set over reversed edges.
        incoming: dict[_ReducedState, list[_ReducedState]] = {}
        goal_states = []
        for state in states:
            if self.is_goal(state):
                goal_states.append(state)
            for _, nxt in self._neighbors(state):
                incoming.setdefault(nxt, []).append(state)
        to_goal = {g: 0 for g in goal_states}
        frontier = goal_states
        depth = 0
        while frontier and depth < self.cap:
            depth += 1
            nxt = []
            for state in frontier:
                for prev in incoming.get(state, ()):
                    if prev not in to_goal:
                        to_goal[prev] = depth
                        nxt.append(prev)
            frontier = nxt
        self._to_goal = to_goal

    # -- state helpers ---------------------------------------------------
    def _place_room(self, place: tuple, state: _ReducedState) -> str | None:
        tag, *rest = place
        if tag == "agent":
            return state.agent_room
        if tag == "room":
            return rest[0]
        return self.belief.room_of(rest[0])

    def _flag(self, state: _ReducedState, container: str) -> bool:
        if container in self.relevant:
            return state.open_flags[self.relevant.index(container)]
        return container in self.belief.open_containers

    def _set_flag(self, state: _ReducedState, container: str, value: bool) -> tuple[bool, ...]:
        idx = self.relevant.index(container)
        return tuple(
            value if i == idx else flag for i, flag in enumerate(state.open_flags)
        )

    def is_goal(self, state: _ReducedState) -> bool:
        e = self.execution
        if self.is_state_goal:
            return state.token == e.target
        if e.goal == "on":
            return state.place == ("on", e.target)
        if e.target in self.belief.rooms:
            return (
                state.place is not None
                and state.place[0] != "agent"
                and self._place_room(state.place, state) == e.target
            )
        return state.place == ("in", e.target)

    def _neighbors(self, state: _ReducedState):
        """Forward goal-directed transitions as (skill, next state) pairs."""
        ent = self.execution.entity
        for room in self.belief.adjacent_rooms(state.agent_room):
            yield Skill("walk", room), _replace_state(state, agent_room=room)
        if state.held == OTHER_ITEM:
            # Free the hands on the floor right here.
            held_name = self.belief.held if self.belief.held not in (None, ent) else OTHER_ITEM
            yield Skill("put", held_name, state.agent_room), _replace_state(state, held=None)
        if self.is_state_goal:
            if self.belief.room_of(ent) != state.agent_room:
                return
            loc = self.start_loc
            blocked = loc is not None and loc[0] == "in" and not self._flag(state, loc[1])
            if blocked:
                yield Skill("open", loc[1]), _replace_state(
                    state, open_flags=self._set_flag(state, loc[1], True)
                )
                return
            if self.openable_goal:
                verb = "open" if self.execution.target == "open" else "close"
                yield Skill(verb, ent), _replace_state(state, token=self.execution.target)
            elif state.token in ("on", "off"):
                yield Skill("switch", ent), _replace_state(
                    state, token="off" if state.token == "on" else "on"
                )
            return
        place = state.place
        if state.held is None and place is not None and place[0] != "agent":
            obj_room = self._place_room(place, state)
            if obj_room == state.agent_room:
                if place[0] == "in" and not self._flag(state, place[1]):
                    yield Skill("open", place[1]), _replace_state(
                        state, open_flags=self._set_flag(state, place[1], True)
                    )
                else:
                    yield Skill("grab", ent), _replace_state(state, held=ent, place=("agent",))
        if state.held == ent:
            target = self.execution.target
            if self.execution.goal == "on":
                if self.belief.room_of(target) == state.agent_room:
                    yield Skill("put", ent, target), _replace_state(
                        state, held=None, place=("on", target)
                    )
            elif target in self.belief.rooms:
                if state.agent_room == target:
                    yield Skill("put", ent, target), _replace_state(
                        state, held=None, place=("room", target)
                    )
            else:
                if self.belief.room_of(target) == state.agent_room:
                    if self._flag(state, target):
                        yield Skill("putin", ent, target), _replace_state(
                            state, held=None, place=("in", target)
                        )
                    else:
                        yield Skill("open", target), _replace_state(
                            state, open_flags=self._set_flag(state, target, True)
                        )

    # -- public API --------------------------------------------------------
    @property
    def plannable(self) -> bool:
        """False when some involved location has never been observed."""
        return self._start is not None

    def start_distance(self) -> int | None:
        if self._to_goal is None or self._start is None:
            return None
        return self._to_goal.get(self._start)

    def extract_plan(self) -> list[Skill] | None:
        """Shortest plan from the start state, smallest skill key on ties."""
        if self._to_goal is None or self._start is None:
            return None
        state = self._start
        remaining = self._to_goal.get(state)
        if remaining is None:
            return None
        plan: list[Skill] = []
        while remaining > 0:
            step = None
            for skill, nxt in self._neighbors(state):
                if self._to_goal.get(nxt) == remaining - 1:
                    if step is None or skill.key() < step[0].key():
                        step = (skill, nxt)
            if step is None:
                return None
            plan.append(step[0])
            state = step[1]
            remaining -= 1
        return plan

    def distance_after(self, skill: Skill) -> int | None:
        """Remaining plan length once the candidate skill has been taken."""
        if self._to_goal is None or self._start is None:
            return None
        state, extra = self._apply_skill(self._start, skill)
        base = self._to_goal.get(state)
        if base is None:
            return None
        return base + extra

    def _apply_skill(self, state: _ReducedState, skill: Skill) -> tuple[_ReducedState, int]:
        """Project a candidate skill onto the reduced space.

        Goal-irrelevant or infeasible skills leave the state unchanged;
        detours (grabbing something else, stashing the goal object in the
        wrong spot) map back to a searched state plus undo steps.
        """
        b = self.belief
        ent = self.execution.entity
        verb, arg = skill.verb, skill.argument
        if verb == "walk":
            if arg in b.rooms and arg in b.adjacent_rooms(state.agent_room):
                return _replace_state(state, agent_room=arg), 0
            return state, 0
        if self.is_state_goal:
            if arg == ent and b.room_of(ent) == state.agent_room:
                loc = self.start_loc
                blocked = loc is not None and loc[0] == "in" and not self._flag(state, loc[1])
                if verb == "switch" and not self.openable_goal and not blocked:
                    if state.token in ("on", "off"):
                        return (
                            _replace_state(state, token="off" if state.token == "on" else "on"),
                            0,
                        )
                if verb in ("open", "close") and self.openable_goal:
                    return _replace_state(state, token="open" if verb == "open" else "closed"), 0
            if (
                verb in ("open", "close")
                and arg in self.relevant
                and b.room_of(arg) == state.agent_room
            ):
                return _replace_state(state, open_flags=self._set_flag(state, arg, verb == "open")), 0
            return state, 0
        # Move goals.
        if verb == "grab":
            if state.held is not None:
                return state, 0
            if arg == ent:
                place = state.place
                if place is None or place[0] == "agent":
                    return state, 0
                if self._place_room(place, state) != state.agent_room:
                    return state, 0
                if place[0] == "in" and not self._flag(state, place[1]):
                    return state, 0
                return _replace_state(state, held=ent, place=("agent",)), 0
            meta = self.meta.get(arg)
            if meta is not None and meta.portable and b.room_of(arg) == state.agent_room:
                # Picking up something irrelevant costs one step to put back down.
                return state, 1
            return state, 0
        if verb in ("put", "putin"):
            dest = skill.secondary
            if state.held == OTHER_ITEM and arg != ent:
                if self._put_feasible(state, verb, dest):
                    return _replace_state(state, held=None), 0
                return state, 0
            if state.held == ent and arg == ent:
                goal_dest = self.execution.target
                goal_kind = "putin" if self.execution.goal == "inside" and goal_dest not in b.rooms else "put"
                if dest == goal_dest and verb == goal_kind:
                    if verb == "putin":
                        if b.room_of(dest) == state.agent_room and self._flag(state, dest):
                            return _replace_state(state, held=None, place=("in", dest)), 0
                        return state, 0
                    if goal_dest in b.rooms:
                        if state.agent_room == goal_dest:
                            return _replace_state(state, held=None, place=("room", dest)), 0
                        return state, 0
                    if b.room_of(dest) == state.agent_room:
                        return _replace_state(state, held=None, place=("on", dest)), 0
                    return state, 0
                if self._put_feasible(state, verb, dest):
                    # Stashed in the wrong spot: one step to pick it back up.
                    return state, 1
            return state, 0
        if verb in ("open", "close"):
            if arg in self.relevant and b.room_of(arg) == state.agent_room:
                return _replace_state(state, open_flags=self._set_flag(state, arg, verb == "open")), 0
            return state, 0
        return state, 0

    def _put_feasible(self, state: _ReducedState, verb: str, dest: str | None) -> bool:
        if dest is None:
            return False
        b = self.belief
        if dest in b.rooms:
            return verb == "put" and dest == state.agent_room
        if b.room_of(dest) != state.agent_room:
            return False
        meta = self.meta.get(dest)
        if verb == "put":
            return meta is not None and meta.surface
        return meta is not None and meta.container and self._flag(state, dest)


def _replace_state(state: _ReducedState, **kwargs) -> _ReducedState:
    values = {
        "agent_room": state.agent_room,
        "held": state.held,
        "place": state.place,
        "token": state.token,
        "open_flags": state.open_flags,
    }
    values.update(kwargs)
    return _ReducedState(**values)


def _goal_search(
    memory: MemoryGraph, meta: Mapping[str, ObjectMeta], execution: Execution, cap: int
) -> GoalSearch:
    key = ("goal_search", execution, cap)
    cached = memory._local_cache.get(key)
    if cached is None:
        cached = GoalSearch(belief_state(memory), meta, execution, cap)
        memory._local_cache[key] = cached
    return cached


def goal_distance(
    memory: MemoryGraph,
    meta: Mapping[str, ObjectMeta],
    execution: Execution,
    cap: int = GOAL_SEARCH_CAP,
) -> int | None:
    """Believed shortest plan length for an execution, None beyond the cap."""
    return _goal_search(memory, meta, execution, cap).start_distance()


HUNT_SLACK = 3  # nominal steps to finish a task once the missing piece is found


def _room_hops(memory: MemoryGraph, origin: str) -> dict[str, int]:
    key = ("room_hops", origin)
    cached = memory._local_cache.get(key)
    if cached is not None:
        return cached
    belief = belief_state(memory)
    hops = {origin: 0}
    frontier = [origin]
    while frontier:
        nxt = []
        for room in frontier:
            for other in belief.adjacent_rooms(room):
                if other not in hops:
                    hops[other] = hops[room] + 1
                    nxt.append(other)
        frontier = nxt
    memory._local_cache[key] = hops
    return hops


def hunt_value(memory: MemoryGraph, skill: Skill) -> float:
    """Value of a skill for a goal blocked by a location the agent has never
    pinned down: sweep toward the room least recently looked at."""
    belief = belief_state(memory)
    if belief.agent_room is None or not belief.rooms:
        return 0.0
    target = min(belief.rooms, key=lambda r: (belief.room_last_seen.get(r, -1), r))
    if skill.verb == "walk" and skill.argument in belief.adjacent_rooms(belief.agent_room):
        after = skill.argument
    else:
        after = belief.agent_room
    hops = _room_hops(memory, after)
    d_after = hops.get(target)
    if d_after is None:
        return 0.0
    d_now = _room_hops(memory, belief.agent_room).get(target, d_after)
    if after != belief.agent_room and d_after >= d_now:
        return 0.0
    if after == belief.agent_room and d_now > 0:
        return 0.0
    return 1.0 / (1.0 + d_after + HUNT_SLACK)


def exploitation_value(
    memory: MemoryGraph,
    active: Sequence[Execution],
    demos: Sequence[Demonstration],
    skill: Skill,
    backend=None,
    *,
    meta: Mapping[str, ObjectMeta] | None = None,
    cap: int = GOAL_SEARCH_CAP,
) -> float:
    """Usefulness of a skill for the active executions, in [0, 1].

    1.0 when the skill finishes some active execution outright, otherwise the
    best 1/(1 + remaining plan length) after taking the skill; 0 with nothing
    active or nothing reachable.
    """
    if backend is not None:
        return backend.value_skill(active, memory, demos, skill)
    if not active:
        return 0.0
    meta = meta or {}
    best = 0.0
    for execution in active:
        search = _goal_search(memory, meta, execution, cap)
        if not search.plannable:
            # A location is missing from memory; worth sweeping stale rooms.
            best = max(best, hunt_value(memory, skill))
            continue
        d_now = search.start_distance()
        # Executions already believed satisfied give no skill anything to do,
        # and skills that do not shorten a plan earn nothing from it (idling
        # next to a goal is not progress).
        if d_now is None or d_now == 0:
            continue
        d_after = search.distance_after(skill)
        if d_after is None or d_after >= d_now:
            continue
        best = max(best, 1.0 / (1.0 + d_after))
    return best


def exploration_term(entropy_bits: float, d_before: float, d_after: float) -> float:
    """One query's contribution: entropy times relative distance reduction.

    Negative when the skill moves away from the query's region: staying near
    fresh facts is only abandoned once some staler query pulls harder.
    """
    if d_before <= 0:
        return 0.0
    return entropy_bits * (1.0 - d_after / d_before)


def exploration_value(
    memory: MemoryGraph,
    beliefs: Mapping[Query, QueryBelief],
    skill: Skill,
    k: int = 12,
    rng_seed: int = 0,
    temperature: float = 1.0,
) -> float:
    """Entropy-weighted distance reduction toward query-relevant facts.

    Retrieval for the before/after graphs shares one seed per query, so skills
    that leave every agent fact untouched score exactly zero.
    """
    if not beliefs:
        raise ValueError("beliefs must be non-empty")
    predicted = memory.predict_after_skill(skill)
    total = 0.0
    for query, belief in sorted(beliefs.items(), key=lambda kv: kv[0].retrieval_text()):
        if belief.entropy_bits == 0.0:
            continue
        directive = query.retrieval_text()
        seed = stable_hash((rng_seed, "explore", directive))
        quads_before = memory.retrieve([directive], k, temperature, seed)
        d_before = memory.distance(quads_before)
        quads_after = predicted.retrieve([directive], k, temperature, seed)
        d_after = predicted.distance(quads_after)
        total += exploration_term(belief.entropy_bits, d_before, d_after)
    return total


# ----------------------------------------------------------------------
# policies
# ----------------------------------------------------------------------
@dataclass
class PlanContext:
    """Everything a policy may look at when choosing the next skill."""

    memory: MemoryGraph
    instruction_set: InstructionSet
    beliefs: Mapping[Query, QueryBelief]
    active: tuple[Execution, ...]
    candidates: tuple[Skill, ...]
    meta: Mapping[str, ObjectMeta]
    t: int
    rng_seed: int
    weights: PlannerWeights = PlannerWeights()
    k: int = 12
    retrieval_temperature: float = 1.0
    demos: tuple[Demonstration, ...] = ()
    value_backend: object | None = None
    exploration_scorer: Callable[[Skill, int], float] | None = None


class Policy:
    name = "abstract"

    def choose(self, ctx: PlanContext) -> tuple[Skill, list[SkillValue]]:
        raise NotImplementedError


class IntegratedPolicy(Policy):
    """Weighted sum of exploitation and exploration values (the full planner)."""

    name = "integrated"

    def __init__(self, exploration: str = "information"):
        if exploration not in ("information", "none", "backend"):
            raise ValueError(f"unknown exploration mode {exploration}")
        self.exploration = exploration
        self._visits: dict[str, int] = {}

    def choose(self, ctx: PlanContext) -> tuple[Skill, list[SkillValue]]:
        room = belief_state(ctx.memory).agent_room
        if room is not None:
            self._visits[room] = ctx.t
        values = []
        for skill in ctx.candidates:
            v_t = exploitation_value(
                ctx.memory, ctx.active, ctx.demos, skill, ctx.value_backend, meta=ctx.meta
            )
            if self.exploration == "information":
                v_r = exploration_value(
                    ctx.memory,
                    ctx.beliefs,
                    skill,
                    k=ctx.k,
                    rng_seed=ctx.rng_seed,
                    temperature=ctx.retrieval_temperature,
                )
            elif self.exploration == "backend":
                v_r = ctx.exploration_scorer(skill, ctx.t)
            else:
                v_r = 0.0
            values.append(SkillValue.make(skill, v_t, v_r, ctx.weights))
        pool = values
        if max(v.v_t for v in values) <= 0.0:
            # Nothing actionable: explore by moving.  Manipulations would only
            # disturb the world (holding an object makes it "maximally
            # observed", so pure exploration would happily pick things up).
            walk_values = [v for v in values if v.skill.verb == "walk"]
            if walk_values:
                pool = walk_values
        best = max(v.combined for v in pool)
        if best <= 0.0:
            # No information signal either: patrol to the least recently
            # seen room rather than idling on a tie.
            walks = [s for s in ctx.candidates if s.verb == "walk"]
            if walks:
                skill = min(walks, key=lambda s: (self._visits.get(s.argument, -1), s.key()))
                return skill, values
        return select_skill(pool, ctx.weights), values


class _PatrolMixin:
    """Deterministic idle behaviour: walk to the least recently seen room."""

    def __init__(self):
        self._visits: dict[str, int] = {}

    def _note_room(self, ctx: PlanContext) -> None:
        room = belief_state(ctx.memory).agent_room
        if room is not None:
            self._visits[room] = ctx.t

    def _patrol(self, ctx: PlanContext) -> Skill:
        walks = [s for s in ctx.candidates if s.verb == "walk"]
        if not walks:
            return min(ctx.candidates, key=lambda s: s.key())
        return min(walks, key=lambda s: (self._visits.get(s.argument, -1), s.key()))

    def _serve(self, ctx: PlanContext, execution: Execution) -> tuple[Skill, list[SkillValue]]:
        values = []
        for skill in ctx.candidates:
            v_t = exploitation_value(
                ctx.memory, [execution], ctx.demos, skill, ctx.value_backend, meta=ctx.meta
            )
            values.append(SkillValue.make(skill, v_t, 0.0, ctx.weights))
        if max(v.v_t for v in values) <= 0.0:
            return self._patrol(ctx), values
        return select_skill(values, ctx.weights), values


class InstructionWisePolicy(_PatrolMixin, Policy):
    """Serve one instruction to completion before looking at the next."""

    name = "instruction-wise"

    def __init__(self):
        super().__init__()
        self._target: int | None = None

    def choose(self, ctx: PlanContext) -> tuple[Skill, list[SkillValue]]:
        self._note_room(ctx)
        executions = ctx.instruction_set.executions
        believed = belief_state(ctx.memory)
        active_idx = [i for i, e in enumerate(executions) if e in ctx.active]
        if self._target is not None:
            done = believed.goal_holds(executions[self._target])
            if done or self._target not in active_idx:
                self._target = None
        if self._target is None:
            pending = [i for i in active_idx if not believed.goal_holds(executions[i])]
            if pending:
                self._target = pending[0]
        if self._target is None:
            return self._patrol(ctx), []
        return self._serve(ctx, executions[self._target])


class GreedyPolicy(_PatrolMixin, Policy):
    """Serve the single highest-belief active instruction each step."""

    name = "greedy"

    def choose(self, ctx: PlanContext) -> tuple[Skill, list[SkillValue]]:
        self._note_room(ctx)
        believed = belief_state(ctx.memory)
        best_idx = None
        best_p = -1.0
        queries = ctx.instruction_set.queries
        executions = ctx.instruction_set.executions
        for i, execution in enumerate(executions):
            if execution not in ctx.active or believed.goal_holds(execution):
                continue
            belief = ctx.beliefs.get(queries[i])
            if belief is not None and belief.p_yes > best_p:
                best_p = belief.p_yes
                best_idx = i
        if best_idx is None:
            return self._patrol(ctx), []
        return self._serve(ctx, executions[best_idx])


class MultiInstructionFirstPolicy(_PatrolMixin, Policy):
    """Prefer the skill that makes progress on the most active instructions."""

    name = "mif"

    def choose(self, ctx: PlanContext) -> tuple[Skill, list[SkillValue]]:
        self._note_room(ctx)
        if not ctx.active:
            return self._patrol(ctx), []
        searches = []
        for execution in ctx.active:
            search = _goal_search(ctx.memory, ctx.meta, execution, GOAL_SEARCH_CAP)
            d_now = search.start_distance()
            if d_now is not None and d_now > 0:
                searches.append((search, d_now))
        if not searches:
            return self._patrol(ctx), []
        scored = []
        for skill in ctx.candidates:
            count = 0
            for search, d_now in searches:
                d_after = search.distance_after(skill)
                if d_after is not None and d_after < d_now:
                    count += 1
            scored.append(SkillValue.make(skill, float(count), 0.0, ctx.weights))
        if max(v.v_t for v in scored) <= 0.0:
            return self._patrol(ctx), scored
        return select_skill(scored, ctx.weights), scored


class MaxStalenessFirstPolicy(_PatrolMixin, Policy):
    """Explore toward the query with the highest belief entropy."""

    name = "msf"

    def choose(self, ctx: PlanContext) -> tuple[Skill, list[SkillValue]]:
        self._note_room(ctx)
        stalest = None
        for query in ctx.instruction_set.queries:
            belief = ctx.beliefs.get(query)
            if belief is None:
                continue
            if stalest is None or belief.entropy_bits > ctx.beliefs[stalest].entropy_bits:
                stalest = query
        if stalest is None:
            return self._patrol(ctx), []
        # Weight the stale query at full entropy so distance reduction decides.
        focus = {stalest: QueryBelief.make(0.5, ctx.beliefs[stalest].evaluated_at, "prior-carry")}
        values = []
        for skill in ctx.candidates:
            v_r = exploration_value(
                ctx.memory,
                focus,
                skill,
                k=ctx.k,
                rng_seed=ctx.rng_seed,
                temperature=ctx.retrieval_temperature,
            )
            values.append(SkillValue.make(skill, 0.0, v_r, ctx.weights))
        if max(v.v_r for v in values) <= 0.0:
            return self._patrol(ctx), values
        return select_skill(values, ctx.weights), values


def baseline_policy(kind: str) -> Policy:
    """Fresh policy instance for one of the benchmark heuristics."""
    policies = {
        "instruction-wise": InstructionWisePolicy,
        "greedy": GreedyPolicy,
        "mif": MultiInstructionFirstPolicy,
        "msf": MaxStalenessFirstPolicy,
    }
    if kind not in policies:
        raise ValueError(f"unknown baseline policy {kind!r}")
    return policies[kind]()


def hash_exploration_score(skill: Skill, t: int) -> float:
    """Stand-in exploration score when a backend drives exploration."""
    return (stable_hash((skill.key(), t)) % 1000) / 1000.0
