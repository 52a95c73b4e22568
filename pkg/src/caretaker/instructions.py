"""Instruction interpreter: standing household instructions become a condition
query plus an execution goal, linked by a positional condition map.

The scripted path is a deterministic template grammar covering the shipped
instruction corpora; a language-model backend can replace it through the same
entry points.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .gridhome import World


class ParseError(Exception):
    def __init__(self, clause: str, reason: str = "no template matches"):
        super().__init__(f"cannot parse {clause!r}: {reason}")
        self.clause = clause


class ParseSetError(ParseError):
    def __init__(self, errors: list[tuple[int, ParseError]]):
        self.errors = errors
        detail = "; ".join(f"[{i}] {e}" for i, e in errors)
        Exception.__init__(self, f"{len(errors)} instruction(s) failed to parse: {detail}")


@dataclass(frozen=True)
class Query:
    """Condition side of an instruction.

    kinds: state, exists_state, located, exists_located, not, and.
    ``text`` keeps the original clause for retrieval keys; it is not part of
    equality so canonical re-renders compare equal.
    """

    kind: str
    entity: str | None = None
    value: str | None = None
    children: tuple["Query", ...] = ()
    text: str = field(default="", compare=False)

    def render(self) -> str:
        if self.kind == "state":
            return f"the {self.entity} is {self.value}"
        if self.kind == "exists_state":
            return f"some {self.entity} is {self.value}"
        if self.kind == "located":
            return f"the {self.entity} is at the {self.value}"
        if self.kind == "exists_located":
            return f"you have a {self.entity} somewhere"
        if self.kind == "not":
            inner = self.children[0]
            if inner.kind == "state":
                return f"the {inner.entity} is not {inner.value}"
            if inner.kind == "located":
                return f"the {inner.entity} is not at the {inner.value}"
        raise ValueError(f"no canonical rendering for query kind {self.kind}")

    def retrieval_text(self) -> str:
        """Retrieval key: the canonical clause names exactly the entities and
        tokens the relevant facts mention, unlike free-form phrasings."""
        try:
            return self.render()
        except ValueError:
            return self.text


@dataclass(frozen=True)
class Execution:
    """Goal side of an instruction: state(entity, token), on(entity, surface)
    or inside(entity, container-or-room)."""

    goal: str
    entity: str
    target: str
    text: str = field(default="", compare=False)

    def render(self) -> str:
        if self.goal == "state":
            return f"make the {self.entity} {self.target}"
        if self.goal == "on":
            return f"put the {self.entity} on the {self.target}"
        if self.goal == "inside":
            return f"put the {self.entity} in the {self.target}"
        raise ValueError(f"unknown goal {self.goal}")

    def retrieval_text(self) -> str:
        return self.text or self.render()


@dataclass(frozen=True)
class ContinualInstruction:
    raw: str
    query: Query
    execution: Execution

    def render(self) -> str:
        sentence = f"if {self.query.render()}, {self.execution.render()}."
        return sentence[0].upper() + sentence[1:]


class InstructionSet:
    """Parsed instructions with the positional condition map C."""

    def __init__(self, instructions: Iterable[ContinualInstruction]):
        self.instructions = tuple(instructions)
        self.queries = tuple(i.query for i in self.instructions)
        self.executions = tuple(i.execution for i in self.instructions)

    def execution_for(self, query: Query) -> Execution:
        for q, e in zip(self.queries, self.executions):
            if q == query:
                return e
        raise KeyError(query)

    def __len__(self) -> int:
        return len(self.instructions)

    def __iter__(self):
        return iter(self.instructions)


# ----------------------------------------------------------------------
# scene lexicon
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SceneLexicon:
    """What the parser needs to ground tokens: ids, types, affordances, homes."""

    rooms: tuple[str, ...]
    objects: tuple[str, ...]
    types: Mapping[str, str]
    portable: frozenset[str]
    surfaces: frozenset[str]
    containers: frozenset[str]
    stateful: frozenset[str]
    homes: Mapping[str, str]

    @classmethod
    def from_world(cls, world: World) -> "SceneLexicon":
        return cls(
            rooms=world.rooms,
            objects=tuple(world.objects),
            types={o: world.meta[o].obj_type for o in world.objects},
            portable=frozenset(o for o in world.objects if world.meta[o].portable),
            surfaces=frozenset(o for o in world.objects if world.meta[o].surface),
            containers=frozenset(o for o in world.objects if world.meta[o].container),
            stateful=frozenset(o for o in world.objects if world.meta[o].has_state),
            homes=dict(world.homes),
        )

    def instances(self, token: str) -> list[str]:
        if token in self.objects:
            return [token]
        return [o for o in self.objects if self.types[o] == token]

    def ground(self, token: str) -> str:
        """Resolve a (possibly plural) token to a known entity or room name."""
        for candidate in (token, token[:-1] if token.endswith("s") else token):
            if candidate in self.rooms or self.instances(candidate):
                return candidate
        raise ParseError(token, "unknown entity")


# ----------------------------------------------------------------------
# template grammar
# ----------------------------------------------------------------------
_ART = r"(?:the |your |a |an )?"

# Whole-sentence templates for standing ("always") instructions.
_STANDING = [
    (
        re.compile(rf"^{_ART}(\w+) should always be (on|in) the (\w+)$"),
        lambda m: ("keep_at", m.group(1), m.group(3), m.group(2)),
    ),
    (
        re.compile(rf"^always leave {_ART}(\w+) (\w+)$"),
        lambda m: ("keep_state", m.group(1), m.group(2)),
    ),
    (
        re.compile(rf"^{_ART}(\w+) must always be (\w+)(?: to .+)?$"),
        lambda m: ("keep_state", m.group(1), m.group(2)),
    ),
    (
        re.compile(rf"^it is good for \w+ if {_ART}(\w+) is always (\w+)$"),
        lambda m: ("keep_state", m.group(1), m.group(2)),
    ),
    (
        re.compile(rf"^to [\w ]+, place {_ART}(\w+) in the (\w+)(?: as shown)?$"),
        lambda m: ("keep_at", m.group(1), m.group(2), "in"),
    ),
    (
        re.compile(rf"^place all (?:visible )?(\w+) in the (\w+)(?: to .+)?$"),
        lambda m: ("keep_at", m.group(1), m.group(2), "in"),
    ),
    (
        re.compile(rf"^put (\w+) on the floor or anywhere else in the (\w+)$"),
        lambda m: ("gather_in", m.group(1), m.group(2)),
    ),
]

# Condition clause templates; order matters (specific before generic).
_CONDITIONS = [
    (re.compile(rf"^no one is watching {_ART}(\w+)$"), "off_state"),
    (re.compile(rf"^{_ART}(\w+) isn't stored somewhere else$"), "away_from_goal"),
    (re.compile(rf"^someone reads a (\w+) and doesn't tidy it up$"), "away_from_home"),
    (re.compile(rf"^someone uses a (\w+) for [\w ]+ and leaves it somewhere$"), "away_from_goal"),
    (re.compile(rf"^you see {_ART}(\w+) somewhere unorganized$"), "away_from_goal"),
    (re.compile(rf"^you have {_ART}(\w+) somewhere$"), "exists"),
    (re.compile(rf"^you see (\w+)$"), "exists"),
    (re.compile(rf"^some (\w+) is (\w+)$"), "exists_state"),
    (re.compile(rf"^{_ART}(\w+) is not (?:at|on|in) the (\w+)$"), "not_located"),
    (re.compile(rf"^{_ART}(\w+) is (?:at|on|in) the (\w+)$"), "located"),
    (re.compile(rf"^{_ART}(\w+) is not (\w+)$"), "not_state"),
    (re.compile(rf"^{_ART}(\w+) (?:is|stays) (\w+)(?: and [\w ]+| alone)?$"), "state"),
]

# Action clause templates; "it"/"them" bind to the condition subject.
_ACTIONS = [
    (re.compile(rf"^(?:go and )?turn (?:it|{_ART}(\w+)) (\w+)(?: for \w+)?$"), "set_state"),
    (re.compile(rf"^make (?:it|{_ART}(\w+)) (\w+)$"), "set_state"),
    (re.compile(r"^(open|close) it$"), "open_close"),
    (re.compile(rf"^bring (?:it|them|{_ART}(\w+)) to (?:your|the) (\w+)$"), "move_on"),
    (re.compile(rf"^put (?:it|them|{_ART}(\w+)) on the (\w+)$"), "move_on"),
    (re.compile(rf"^put (?:it|them|{_ART}(\w+)) (?:in|into) the (\w+)$"), "move_in"),
    (re.compile(r"^put (?:it|them) back$"), "put_back"),
]


class InstructionParser:
    """Deterministic grammar over the shipped instruction families."""

    def __init__(self, lexicon: SceneLexicon):
        self.lexicon = lexicon

    # -- public API -----------------------------------------------------
    def parse(self, text: str) -> ContinualInstruction:
        sentence = text.strip()
        if not sentence:
            raise ParseError(text, "empty instruction")
        normalized = sentence.lower().rstrip(".").strip()
        if normalized.startswith("if "):
            body = normalized[3:]
            if ", " not in body:
                raise ParseError(sentence, "conditional without action clause")
            condition_clause, action_clause = body.split(", ", 1)
            query, execution = self._parse_conditional(
                sentence, condition_clause.strip(), action_clause.strip()
            )
        else:
            query, execution = self._parse_standing(sentence, normalized)
        self._check_achievable(sentence, execution)
        return ContinualInstruction(raw=sentence, query=query, execution=execution)

    def parse_set(self, texts: Iterable[str]) -> InstructionSet:
        instructions = []
        errors: list[tuple[int, ParseError]] = []
        for i, text in enumerate(texts):
            try:
                instructions.append(self.parse(text))
            except ParseError as exc:
                errors.append((i, exc))
        if errors:
            raise ParseSetError(errors)
        return InstructionSet(instructions)

    # -- internals --------------------------------------------------------
    def _parse_standing(self, raw: str, normalized: str) -> tuple[Query, Execution]:
        for pattern, extract in _STANDING:
            m = pattern.match(normalized)
            if not m:
                continue
            form = extract(m)
            if form[0] == "keep_state":
                entity = self.lexicon.ground(form[1])
                state = form[2]
                query = Query(
                    "not",
                    children=(Query("state", entity, state),),
                    text=f"the {entity} is not {state}",
                )
                return query, Execution("state", entity, state, text=f"make the {entity} {state}")
            if form[0] == "keep_at":
                entity = self.lexicon.ground(form[1])
                dest = self.lexicon.ground(form[2])
                goal = "on" if form[3] == "on" else "inside"
                query = Query(
                    "not",
                    children=(Query("located", entity, dest),),
                    text=f"the {entity} is not at the {dest}",
                )
                return query, Execution(goal, entity, dest)
            if form[0] == "gather_in":
                entity = self.lexicon.ground(form[1])
                dest = self.lexicon.ground(form[2])
                query = Query("exists_located", entity, text=f"you have a {entity} somewhere")
                return query, Execution("inside", entity, dest)
        raise ParseError(raw)

    def _parse_conditional(
        self, raw: str, condition_clause: str, action_clause: str
    ) -> tuple[Query, Execution]:
        cond = self._match_condition(raw, condition_clause)
        subject = cond["entity"]
        execution = self._match_action(raw, action_clause, subject)
        query = self._finish_condition(cond, execution, condition_clause)
        return query, execution

    def _match_condition(self, raw: str, clause: str) -> dict:
        for pattern, kind in _CONDITIONS:
            m = pattern.match(clause)
            if not m:
                continue
            entity = self.lexicon.ground(m.group(1))
            info = {"kind": kind, "entity": entity}
            if kind in ("located", "not_located"):
                info["place"] = self.lexicon.ground(m.group(2))
            elif kind in ("state", "not_state", "exists_state"):
                info["state"] = m.group(2)
            return info
        raise ParseError(clause)

    def _finish_condition(self, cond: dict, execution: Execution, clause: str) -> Query:
        kind, entity = cond["kind"], cond["entity"]
        if kind == "state":
            return Query("state", entity, cond["state"], text=clause)
        if kind == "not_state":
            return Query("not", children=(Query("state", entity, cond["state"]),), text=clause)
        if kind == "exists_state":
            return Query("exists_state", entity, cond["state"], text=clause)
        if kind == "off_state":
            return Query("state", entity, "off", text=clause)
        if kind == "located":
            return Query("located", entity, cond["place"], text=clause)
        if kind == "not_located":
            return Query("not", children=(Query("located", entity, cond["place"]),), text=clause)
        if kind == "exists":
            return Query("exists_located", entity, text=clause)
        if kind in ("away_from_goal", "away_from_home"):
            # "somewhere unorganized" style clauses mean: anywhere but where
            # the action wants it.
            return Query(
                "not", children=(Query("located", entity, execution.target),), text=clause
            )
        raise AssertionError(kind)

    def _match_action(self, raw: str, clause: str, subject: str) -> Execution:
        for pattern, kind in _ACTIONS:
            m = pattern.match(clause)
            if not m:
                continue
            if kind == "set_state":
                entity = self.lexicon.ground(m.group(1)) if m.group(1) else subject
                return Execution("state", entity, m.group(2), text=clause)
            if kind == "open_close":
                state = "open" if m.group(1) == "open" else "closed"
                return Execution("state", subject, state, text=clause)
            if kind in ("move_on", "move_in"):
                entity = self.lexicon.ground(m.group(1)) if m.group(1) else subject
                dest = self.lexicon.ground(m.group(2))
                return Execution("on" if kind == "move_on" else "inside", entity, dest, text=clause)
            if kind == "put_back":
                home = self.lexicon.homes.get(subject)
                if home is None:
                    raise ParseError(clause, f"no home location declared for {subject}")
                goal = "on" if home in self.lexicon.surfaces else "inside"
                return Execution(goal, subject, home, text=clause)
        raise ParseError(clause)

    def _check_achievable(self, raw: str, execution: Execution) -> None:
        lex = self.lexicon
        instances = lex.instances(execution.entity)
        if not instances:
            raise ParseError(raw, f"no instance of {execution.entity}")
        if execution.goal == "state":
            if execution.target in ("open", "closed"):
                bad = [o for o in instances if o not in lex.containers]
                if bad:
                    raise ParseError(raw, f"{bad[0]} cannot be opened or closed")
            else:
                bad = [o for o in instances if o not in lex.stateful]
                if bad:
                    raise ParseError(raw, f"{bad[0]} has no switchable state")
            return
        bad = [o for o in instances if o not in lex.portable]
        if bad:
            raise ParseError(raw, f"{bad[0]} cannot be carried")
        if execution.goal == "on" and execution.target not in lex.surfaces:
            raise ParseError(raw, f"{execution.target} is not a surface")
        if execution.goal == "inside":
            if execution.target not in lex.containers and execution.target not in lex.rooms:
                raise ParseError(raw, f"{execution.target} is not a container")


# ----------------------------------------------------------------------
# module-level conveniences
# ----------------------------------------------------------------------
def parse(text: str, scene: World | SceneLexicon) -> ContinualInstruction:
    lexicon = scene if isinstance(scene, SceneLexicon) else SceneLexicon.from_world(scene)
    return InstructionParser(lexicon).parse(text)


def parse_set(texts: Iterable[str], scene: World | SceneLexicon) -> InstructionSet:
    lexicon = scene if isinstance(scene, SceneLexicon) else SceneLexicon.from_world(scene)
    return InstructionParser(lexicon).parse_set(texts)


def load_instruction_file(path: str | Path) -> list[str]:
    """One instruction per line; blank lines and '#' comments ignored."""
    lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            lines.append(stripped)
    return lines
