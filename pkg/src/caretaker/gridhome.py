"""Deterministic non-stationary household simulator.

Rooms form an adjacency graph; objects sit on floors, on surfaces, or in
containers; the agent carries at most one object.  Scheduled changes flip
instruction-relevant facts every few steps.  Observations are partial: the
agent sees its own room only, plus the static room map.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .seeding import derive_rng
from .tekg import Quadruple, opposite_state

SKILL_VERBS = ("walk", "grab", "switch", "put", "putin", "open", "close")

# Location tags: ("room", r) floor, ("on", surface), ("in", container), ("agent",)
Location = tuple


class SchemaError(Exception):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownEntity(Exception):
    pass


@dataclass(frozen=True, order=True)
class Skill:
    verb: str
    argument: str
    secondary: str | None = None

    def __post_init__(self):
        if self.verb not in SKILL_VERBS:
            raise ValueError(f"unknown skill verb {self.verb!r}")

    def render(self) -> str:
        if self.secondary:
            return f"{self.verb} {self.argument} {self.secondary}"
        return f"{self.verb} {self.argument}"

    def key(self) -> tuple[str, str, str]:
        return (self.verb, self.argument, self.secondary or "")


@dataclass(frozen=True)
class SkillOutcome:
    success: bool
    reason: str = ""

    @classmethod
    def ok(cls) -> "SkillOutcome":
        return cls(True)

    @classmethod
    def infeasible(cls, reason: str) -> "SkillOutcome":
        return cls(False, reason)


@dataclass(frozen=True)
class ObjectMeta:
    """Static affordances declared by the scene."""

    obj_type: str
    portable: bool = False
    surface: bool = False
    container: bool = False
    has_state: bool = False


@dataclass(frozen=True)
class ObjectState:
    location: Location
    state: str | None = None
    container_open: bool | None = None


@dataclass(frozen=True)
class ChangeTarget:
    kind: str  # "state_flip" | "open_flip" | "relocate"
    entity: str
    places: tuple[Location, ...] = ()


@dataclass(frozen=True)
class NonStationaritySchedule:
    period: int
    rng_seed: int
    targets: tuple[ChangeTarget, ...]

    def event(self, index: int) -> ChangeTarget:
        """Deterministic pick of the change fired at the index-th event."""
        rng = derive_rng(self.rng_seed, "change", index)
        return self.targets[int(rng.integers(len(self.targets)))]


@dataclass(frozen=True)
class Observation:
    quads: tuple[Quadruple, ...]


@dataclass(frozen=True)
class World:
    rooms: tuple[str, ...]
    adjacency: frozenset[frozenset]
    meta: Mapping[str, ObjectMeta]
    objects: Mapping[str, ObjectState]
    agent_room: str
    agent_at: str | None
    inventory: str | None
    clock: int
    schedule: NonStationaritySchedule | None
    fired_changes: int = 0
    last_change: tuple | None = None
    homes: Mapping[str, str] = field(default_factory=dict)

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------
    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.adjacency

    def room_of(self, obj: str) -> str:
        """Room an object resolves to (chasing surfaces and containers)."""
        seen = set()
        loc = self.objects[obj].location
        while True:
            tag = loc[0]
            if tag == "room":
                return loc[1]
            if tag == "agent":
                return self.agent_room
            holder = loc[1]
            if holder in seen:
                raise ValueError(f"containment cycle at {holder}")
            seen.add(holder)
            loc = self.objects[holder].location

    def visible(self, obj: str) -> bool:
        """In the agent's room and not shut inside a closed container."""
        st = self.objects[obj]
        if st.location[0] == "agent":
            return True
        if self.room_of(obj) != self.agent_room:
            return False
        loc = st.location
        while loc[0] in ("on", "in"):
            if loc[0] == "in" and not self.objects[loc[1]].container_open:
                return False
            loc = self.objects[loc[1]].location
        return True

    def instances(self, token: str) -> list[str]:
        """Objects matching a token by id or declared type."""
        if token in self.objects:
            return [token]
        return [o for o in self.objects if self.meta[o].obj_type == token]

    def entity_exists(self, token: str) -> bool:
        return bool(self.instances(token)) or token in self.rooms

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------
    def step(self, skill: Skill) -> tuple["World", Observation, SkillOutcome]:
        """Apply one skill, fire any due scheduled change, advance the clock."""
        world, outcome = self._apply_skill(skill)
        new_clock = self.clock + 1
        world = replace(world, clock=new_clock, last_change=None)
        if world.schedule is not None and new_clock % world.schedule.period == 0:
            world = world._apply_change(new_clock // world.schedule.period, new_clock)
        return world, world.observe(), outcome

    def _apply_skill(self, skill: Skill) -> tuple["World", SkillOutcome]:
        verb, arg = skill.verb, skill.argument
        if verb == "walk":
            if arg in self.rooms:
                if arg == self.agent_room:
                    return self, SkillOutcome.infeasible("already there")
                if not self.adjacent(self.agent_room, arg):
                    return self, SkillOutcome.infeasible("not adjacent")
                return replace(self, agent_room=arg, agent_at=None), SkillOutcome.ok()
            if arg not in self.objects:
                return self, SkillOutcome.infeasible("unknown walk target")
            if not self.visible(arg):
                return self, SkillOutcome.infeasible("object not in this room")
            return replace(self, agent_at=arg), SkillOutcome.ok()

        if arg not in self.objects:
            return self, SkillOutcome.infeasible("unknown object")
        obj = self.objects[arg]

        if verb == "grab":
            if self.inventory is not None:
                return self, SkillOutcome.infeasible("hands full")
            if not self.meta[arg].portable:
                return self, SkillOutcome.infeasible("not portable")
            if not self.visible(arg) or obj.location[0] == "agent":
                return self, SkillOutcome.infeasible("not reachable")
            return (
                self._relocate(arg, ("agent",))._with(inventory=arg),
                SkillOutcome.ok(),
            )
        if verb == "switch":
            if obj.state not in ("on", "off"):
                return self, SkillOutcome.infeasible("nothing to switch")
            if not self.visible(arg) and obj.location[0] != "agent":
                return self, SkillOutcome.infeasible("not reachable")
            flipped = replace(obj, state=opposite_state(obj.state))
            return self._with_object(arg, flipped), SkillOutcome.ok()
        if verb in ("open", "close"):
            if not self.meta[arg].container:
                return self, SkillOutcome.infeasible("not a container")
            if self.room_of(arg) != self.agent_room:
                return self, SkillOutcome.infeasible("not in this room")
            want_open = verb == "open"
            if obj.container_open == want_open:
                return self, SkillOutcome.infeasible(f"already {verb}")
            return (
                self._with_object(arg, replace(obj, container_open=want_open)),
                SkillOutcome.ok(),
            )
        if verb in ("put", "putin"):
            if self.inventory != arg:
                return self, SkillOutcome.infeasible("not holding it")
            dest = skill.secondary
            if dest is None:
                return self, SkillOutcome.infeasible("no destination")
            if dest in self.rooms:
                if verb != "put" or dest != self.agent_room:
                    return self, SkillOutcome.infeasible("bad floor destination")
                return (
                    self._relocate(arg, ("room", dest))._with(inventory=None),
                    SkillOutcome.ok(),
                )
            if dest not in self.objects or self.room_of(dest) != self.agent_room:
                return self, SkillOutcome.infeasible("destination not here")
            if verb == "put":
                if not self.meta[dest].surface:
                    return self, SkillOutcome.infeasible("not a surface")
                return (
                    self._relocate(arg, ("on", dest))._with(inventory=None),
                    SkillOutcome.ok(),
                )
            if not self.meta[dest].container:
                return self, SkillOutcome.infeasible("not a container")
            if not self.objects[dest].container_open:
                return self, SkillOutcome.infeasible("container closed")
            return (
                self._relocate(arg, ("in", dest))._with(inventory=None),
                SkillOutcome.ok(),
            )
        raise AssertionError(f"unhandled verb {verb}")

    def _with(self, **kwargs) -> "World":
        return replace(self, **kwargs)

    def _with_object(self, obj: str, state: ObjectState) -> "World":
        objects = dict(self.objects)
        objects[obj] = state
        return replace(self, objects=objects)

    def _relocate(self, obj: str, location: Location) -> "World":
        return self._with_object(obj, replace(self.objects[obj], location=location))

    def _apply_change(self, event_index: int, at_step: int) -> "World":
        target = self.schedule.event(event_index)
        world = self
        detail = "noop"
        if target.kind == "state_flip":
            st = self.objects[target.entity]
            if st.state is not None and opposite_state(st.state):
                new_state = opposite_state(st.state)
                world = self._with_object(target.entity, replace(st, state=new_state))
                detail = f"state->{new_state}"
        elif target.kind == "open_flip":
            st = self.objects[target.entity]
            if st.container_open is not None:
                world = self._with_object(
                    target.entity, replace(st, container_open=not st.container_open)
                )
                detail = f"open->{not st.container_open}"
        elif target.kind == "relocate":
            st = self.objects[target.entity]
            if st.location[0] != "agent":
                options = [p for p in target.places if p != st.location]
                if options:
                    rng = derive_rng(self.schedule.rng_seed, "place", event_index)
                    place = options[int(rng.integers(len(options)))]
                    world = self._relocate(target.entity, place)
                    detail = f"moved->{place}"
        else:
            raise ValueError(f"unknown change kind {target.kind}")
        return replace(
            world,
            fired_changes=self.fired_changes + 1,
            last_change=(at_step, target.entity, detail),
        )

    # ------------------------------------------------------------------
    # observation
    # ------------------------------------------------------------------
    def observe(self) -> Observation:
        """Facts visible after the latest step, stamped with the current clock."""
        t = self.clock
        quads = [Quadruple("agent", "inside", self.agent_room, t)]
        if self.inventory is not None:
            quads.append(Quadruple("agent", "holds", self.inventory, t))
        for pair in sorted(tuple(sorted(p)) for p in self.adjacency):
            quads.append(Quadruple(pair[0], "adjacent", pair[1], t))
        for obj in sorted(self.objects):
            st = self.objects[obj]
            if st.location[0] == "agent":
                if st.state is not None:
                    quads.append(Quadruple(obj, "is", st.state, t))
                continue
            if not self.visible(obj):
                continue
            tag, holder = st.location
            if tag == "room":
                quads.append(Quadruple(obj, "inside", holder, t))
            elif tag == "on":
                quads.append(Quadruple(obj, "on", holder, t))
            else:
                quads.append(Quadruple(obj, "inside", holder, t))
            if st.state is not None:
                quads.append(Quadruple(obj, "is", st.state, t))
            if st.container_open is not None:
                quads.append(Quadruple(obj, "is", "open" if st.container_open else "closed", t))
        return Observation(tuple(sorted(quads)))

    # ------------------------------------------------------------------
    # ground-truth oracles
    # ------------------------------------------------------------------
    def condition_satisfied(self, query) -> bool:
        """Evaluate a condition against full world state (no partial view)."""
        kind = query.kind
        if kind == "not":
            return not self.condition_satisfied(query.children[0])
        if kind == "and":
            return all(self.condition_satisfied(c) for c in query.children)
        instances = self.instances(query.entity)
        if not instances and query.entity not in self.rooms:
            raise UnknownEntity(query.entity)
        if kind in ("state", "exists_state"):
            matches = [self._state_matches(o, query.value) for o in instances]
            return any(matches) if kind == "exists_state" else bool(matches) and all(matches)
        if kind == "located":
            return bool(instances) and all(self._located_at(o, query.value) for o in instances)
        if kind == "exists_located":
            return bool(instances)
        raise ValueError(f"unknown query kind {kind}")

    def execution_complete(self, execution) -> bool:
        """Whether an execution goal currently holds in ground truth."""
        instances = self.instances(execution.entity)
        if not instances:
            raise UnknownEntity(execution.entity)
        if execution.goal == "state":
            return all(self._state_matches(o, execution.target) for o in instances)
        if execution.goal == "on":
            return all(self.objects[o].location == ("on", execution.target) for o in instances)
        if execution.goal == "inside":
            if execution.target in self.rooms:
                return all(
                    self.objects[o].location[0] != "agent"
                    and self.room_of(o) == execution.target
                    for o in instances
                )
            return all(self.objects[o].location == ("in", execution.target) for o in instances)
        raise ValueError(f"unknown goal {execution.goal}")

    def _state_matches(self, obj: str, token: str) -> bool:
        st = self.objects[obj]
        if token in ("open", "closed") and st.container_open is not None:
            return st.container_open == (token == "open")
        return st.state == token

    def _located_at(self, obj: str, place: str) -> bool:
        st = self.objects[obj]
        if st.location[0] == "agent":
            return False
        if place in self.rooms:
            return self.room_of(obj) == place
        if place not in self.objects:
            raise UnknownEntity(place)
        return st.location in (("on", place), ("in", place))

    # ------------------------------------------------------------------
    # digests
    # ------------------------------------------------------------------
    def snapshot(self) -> tuple:
        """Canonical dynamic state, ignoring clock and schedule."""
        return (
            self.agent_room,
            self.agent_at,
            self.inventory,
            tuple((o, self.objects[o]) for o in sorted(self.objects)),
        )

    def digest(self) -> str:
        raw = repr((self.clock, self.snapshot()))
        return hashlib.sha1(raw.encode("utf-8")).hexdigest()[:16]


# ----------------------------------------------------------------------
# scene loading
# ----------------------------------------------------------------------
def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise SchemaError(path, message)


def load_scene(config: dict | str | Path) -> World:
    """Build a World from a scene document (dict, JSON text, or file path)."""
    if isinstance(config, Path) or (isinstance(config, str) and not config.lstrip().startswith("{")):
        config = json.loads(Path(config).read_text(encoding="utf-8"))
    elif isinstance(config, str):
        config = json.loads(config)

    rooms = config.get("rooms")
    _require(isinstance(rooms, list) and rooms, "rooms", "non-empty room list required")
    _require(len(set(rooms)) == len(rooms), "rooms", "duplicate room ids")

    raw_adj = config.get("adjacency", [])
    directed = set()
    for i, pair in enumerate(raw_adj):
        _require(isinstance(pair, list) and len(pair) == 2, f"adjacency[{i}]", "expected a pair")
        a, b = pair
        _require(a in rooms and b in rooms, f"adjacency[{i}]", "unknown room")
        _require(a != b, f"adjacency[{i}]", "self-adjacency not allowed")
        directed.add((a, b))
    for a, b in sorted(directed):
        _require((b, a) in directed, "adjacency", f"missing symmetric pair [{b}, {a}]")
    adjacency = frozenset(frozenset(p) for p in directed)

    agent_start = config.get("agent_start")
    _require(agent_start in rooms, "agent_start", "must name a room")

    meta: dict[str, ObjectMeta] = {}
    objects: dict[str, ObjectState] = {}
    raw_objects = config.get("objects", [])
    _require(isinstance(raw_objects, list), "objects", "expected a list")
    for i, spec in enumerate(raw_objects):
        path = f"objects[{i}]"
        oid = spec.get("id")
        _require(isinstance(oid, str) and oid, path + ".id", "id required")
        _require(oid not in objects, path + ".id", f"duplicate object id {oid}")
        _require(oid not in rooms, path + ".id", "object id collides with a room")
        room = spec.get("room")
        _require(room in rooms, path + ".room", "must name a room")
        is_container = bool(spec.get("container", False))
        meta[oid] = ObjectMeta(
            obj_type=spec.get("type", oid),
            portable=bool(spec.get("portable", False)),
            surface=bool(spec.get("surface", False)),
            container=is_container,
            has_state="state" in spec,
        )
        location: Location = ("room", room)
        _require(not ("on" in spec and "in" in spec), path, "cannot be both on and in")
        if "on" in spec:
            location = ("on", spec["on"])
        elif "in" in spec:
            location = ("in", spec["in"])
        objects[oid] = ObjectState(
            location=location,
            state=spec.get("state"),
            container_open=bool(spec.get("open", False)) if is_container else None,
        )
    # Second pass: placement references.
    for i, spec in enumerate(raw_objects):
        path = f"objects[{i}]"
        oid = spec["id"]
        tag, *rest = objects[oid].location
        if tag == "on":
            _require(rest[0] in objects, path + ".on", "unknown surface")
            _require(meta[rest[0]].surface, path + ".on", f"{rest[0]} is not a surface")
        elif tag == "in":
            _require(rest[0] in objects, path + ".in", "unknown container")
            _require(meta[rest[0]].container, path + ".in", f"{rest[0]} is not a container")

    homes = dict(config.get("homes", {}))
    for obj, dest in homes.items():
        _require(dest in objects or dest in rooms, f"homes.{obj}", "unknown destination")

    schedule = None
    raw_schedule = config.get("schedule")
    if raw_schedule is not None:
        period = raw_schedule.get("period")
        _require(isinstance(period, int) and period >= 1, "schedule.period", "positive integer required")
        targets = []
        for i, t in enumerate(raw_schedule.get("targets", [])):
            path = f"schedule.targets[{i}]"
            kind = t.get("kind")
            _require(kind in ("state_flip", "open_flip", "relocate"), path + ".kind", "unknown kind")
            entity = t.get("entity")
            _require(entity in objects, path + ".entity", "unknown object")
            places: list[Location] = []
            for j, p in enumerate(t.get("places", [])):
                ppath = f"{path}.places[{j}]"
                if "room" in p:
                    _require(p["room"] in rooms, ppath, "unknown room")
                    places.append(("room", p["room"]))
                elif "on" in p:
                    _require(p["on"] in objects and meta[p["on"]].surface, ppath, "bad surface")
                    places.append(("on", p["on"]))
                elif "in" in p:
                    _require(p["in"] in objects and meta[p["in"]].container, ppath, "bad container")
                    places.append(("in", p["in"]))
                else:
                    raise SchemaError(ppath, "expected room/on/in")
            _require(
                kind != "relocate" or bool(places), path + ".places", "relocate needs places"
            )
            targets.append(ChangeTarget(kind=kind, entity=entity, places=tuple(places)))
        _require(bool(targets), "schedule.targets", "at least one target required")
        schedule = NonStationaritySchedule(
            period=period, rng_seed=int(raw_schedule.get("seed", 0)), targets=tuple(targets)
        )

    return World(
        rooms=tuple(rooms),
        adjacency=adjacency,
        meta=meta,
        objects=objects,
        agent_room=agent_start,
        agent_at=None,
        inventory=None,
        clock=0,
        schedule=schedule,
        homes=homes,
    )


def degree_period(degree: str) -> int:
    """Change cadence for the three named non-stationarity degrees."""
    periods = {"high": 4, "medium": 6, "low": 8}
    if degree not in periods:
        raise ValueError(f"unknown non-stationarity degree {degree!r}")
    return periods[degree]


def candidate_skills(
    rooms_adjacent: Iterable[str],
    in_room_objects: Iterable[str],
    meta: Mapping[str, ObjectMeta],
    held: str | None,
    open_containers: Iterable[str],
    agent_room: str,
    states: Mapping[str, str] | None = None,
) -> list[Skill]:
    """Canonical candidate skill set for planners, sorted for determinism."""
    skills = [Skill("walk", r) for r in rooms_adjacent]
    open_set = set(open_containers)
    states = states or {}
    for obj in in_room_objects:
        m = meta.get(obj)
        if m is None:
            continue
        if m.portable and held is None:
            skills.append(Skill("grab", obj))
        if m.has_state and states.get(obj) in ("on", "off", None):
            skills.append(Skill("switch", obj))
        if m.container:
            skills.append(Skill("close", obj) if obj in open_set else Skill("open", obj))
        if held is not None:
            if m.surface:
                skills.append(Skill("put", held, obj))
            if m.container and obj in open_set:
                skills.append(Skill("putin", held, obj))
    if held is not None:
        skills.append(Skill("put", held, agent_room))
    return sorted(set(skills), key=lambda s: s.key())
