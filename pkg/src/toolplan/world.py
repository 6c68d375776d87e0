"""Object-centric symbolic + metric world representation.

A world state is a set of object instances (class, boolean attribute
flags, pose, size), a set of typed relation edges between them, and the
robot posture.  States are immutable value objects; the simulator builds
successor states rather than mutating anything in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from typing import Iterable, Mapping, Optional, Sequence

SCHEMA_VERSION = "v1"

# Relation vocabulary.
ON_TOP = "OnTop"
INSIDE = "Inside"
NEAR = "Near"
CONNECTED_TO = "ConnectedTo"
RELATION_KINDS = (ON_TOP, INSIDE, NEAR, CONNECTED_TO)

# Boolean attribute flags (one per complementary pair), padded with
# reserved slots so the attribute vector has a fixed width of 29.
CORE_ATTRIBUTES = (
    "grabbed",
    "inside",
    "on",
    "open",
    "sticky",
    "dirty",
    "welded",
    "drilled",
    "driven",
    "cut",
    "painted",
)
ATTRIBUTE_VECTOR_WIDTH = 29
ATTRIBUTE_VOCABULARY = CORE_ATTRIBUTES + tuple(
    f"reserved_{i}" for i in range(ATTRIBUTE_VECTOR_WIDTH - len(CORE_ATTRIBUTES))
)

CAPABILITY_TAGS = frozenset(
    {
        "surface",
        "container",
        "openable",
        "operable",
        "climbable",
        "cleaner",
        "applicable-adhesive",
        "fuel",
    }
)

# Objects whose pose z is at or above this height live on elevation
# level 1 and are out of reach for a robot standing on the floor.
ELEVATION_THRESHOLD = 0.75


class WorldError(Exception):
    """Base class for world-model errors."""


class InvariantError(WorldError):
    """A WorldState invariant was violated."""


class ParseError(WorldError):
    """A serialized record could not be decoded."""


class UnknownObjectError(WorldError):
    """An object id could not be resolved in the current state."""


@dataclass(frozen=True)
class ObjectClass:
    token: str
    attribute_schema: frozenset = frozenset()
    is_tool: bool = False
    tags: frozenset = frozenset()

    def __post_init__(self):
        unknown = set(self.attribute_schema) - set(ATTRIBUTE_VOCABULARY)
        if unknown:
            raise InvariantError(f"attributes outside vocabulary: {sorted(unknown)}")
        bad_tags = set(self.tags) - CAPABILITY_TAGS
        if bad_tags:
            raise InvariantError(f"unknown capability tags: {sorted(bad_tags)}")


@dataclass(frozen=True)
class ObjectInstance:
    id: str
    cls: ObjectClass
    attributes: frozenset = frozenset()  # names currently true
    pose: tuple = (0.0, 0.0, 0.0, 0.0)  # x, y, z in meters, yaw in radians
    size: tuple = (0.1, 0.1, 0.1)  # extent along xyz in meters

    def __post_init__(self):
        if any(s <= 0 for s in self.size):
            raise InvariantError(f"{self.id}: size components must be > 0")
        extra = set(self.attributes) - set(self.cls.attribute_schema)
        if extra:
            raise InvariantError(
                f"{self.id}: attributes {sorted(extra)} not in class schema"
            )

    @property
    def class_token(self) -> str:
        return self.cls.token

    def has(self, attribute: str) -> bool:
        return attribute in self.attributes

    def with_attribute(self, attribute: str, value: bool) -> "ObjectInstance":
        attrs = set(self.attributes)
        if value:
            attrs.add(attribute)
        else:
            attrs.discard(attribute)
        return replace(self, attributes=frozenset(attrs))

    def elevation(self) -> int:
        return 1 if self.pose[2] >= ELEVATION_THRESHOLD else 0


@dataclass(frozen=True, order=True)
class RelationEdge:
    kind: str
    src: str
    dst: str

    def __post_init__(self):
        if self.kind not in RELATION_KINDS:
            raise InvariantError(f"unknown relation kind {self.kind!r}")
        if self.src == self.dst:
            raise InvariantError(f"self-loop {self.kind}({self.src})")


@dataclass(frozen=True)
class RobotState:
    position: tuple = (0.0, 0.0)  # base x, y in meters
    level: int = 0  # discrete elevation level, 0 or 1
    grabbed: Optional[str] = None  # id of held object, if any


@dataclass(frozen=True)
class WorldState:
    objects: tuple  # ObjectInstance, sorted by id
    relations: frozenset  # RelationEdge
    robot: RobotState = RobotState()

    @staticmethod
    def build(
        objects: Iterable[ObjectInstance],
        relations: Iterable[RelationEdge] = (),
        robot: RobotState = RobotState(),
    ) -> "WorldState":
        state = WorldState(
            objects=tuple(sorted(objects, key=lambda o: o.id)),
            relations=frozenset(relations),
            robot=robot,
        )
        state.validate()
        return state

    def validate(self) -> None:
        ids = [o.id for o in self.objects]
        if len(ids) != len(set(ids)):
            raise InvariantError("duplicate object ids")
        known = set(ids)
        inside_parent: dict = {}
        for e in self.relations:
            if e.src not in known or e.dst not in known:
                raise InvariantError(
                    f"edge {e.kind}({e.src},{e.dst}) references unknown object"
                )
            if e.kind == NEAR and RelationEdge(NEAR, e.dst, e.src) not in self.relations:
                raise InvariantError(f"Near({e.src},{e.dst}) missing symmetric edge")
            if e.kind == INSIDE:
                if e.src in inside_parent:
                    raise InvariantError(f"{e.src} is Inside more than one container")
                inside_parent[e.src] = e.dst
        self._check_ontop_acyclic()
        if self.robot.grabbed is not None:
            held = self.find(self.robot.grabbed)
            if not held.has("grabbed"):
                raise InvariantError(
                    f"held object {held.id} lacks the grabbed attribute"
                )

    def _check_ontop_acyclic(self) -> None:
        above = {}
        for e in self.relations:
            if e.kind == ON_TOP:
                above.setdefault(e.src, []).append(e.dst)
        seen: dict = {}

        def visit(node, stack):
            if node in stack:
                raise InvariantError("OnTop cycle involving " + node)
            if seen.get(node):
                return
            stack.add(node)
            for nxt in above.get(node, ()):
                visit(nxt, stack)
            stack.discard(node)
            seen[node] = True

        for node in above:
            visit(node, set())

    # -- lookups ---------------------------------------------------------

    def find(self, object_id: str) -> ObjectInstance:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise UnknownObjectError(f"no object with id {object_id!r}")

    def has_object(self, object_id: str) -> bool:
        return any(o.id == object_id for o in self.objects)

    def object_ids(self) -> list:
        return [o.id for o in self.objects]

    def edges_of_kind(self, kind: str) -> list:
        return sorted(e for e in self.relations if e.kind == kind)

    def container_of(self, object_id: str) -> Optional[str]:
        for e in self.relations:
            if e.kind == INSIDE and e.src == object_id:
                return e.dst
        return None

    def supports_of(self, object_id: str) -> list:
        return sorted(e.dst for e in self.relations if e.kind == ON_TOP and e.src == object_id)

    def carried_by(self, object_id: str) -> list:
        """Objects resting OnTop or Inside the given object (direct only)."""
        out = [
            e.src
            for e in self.relations
            if e.kind in (ON_TOP, INSIDE) and e.dst == object_id
        ]
        return sorted(out)

    def contained_in(self, object_id: str, container_id: str) -> bool:
        """Transitive containment: follows OnTop/Inside chains whose final
        hop is an Inside edge (an apple on a tray inside a cupboard is in
        the cupboard)."""
        frontier = [object_id]
        visited = set()
        while frontier:
            cur = frontier.pop()
            if cur in visited:
                continue
            visited.add(cur)
            for e in self.relations:
                if e.src != cur or e.kind not in (ON_TOP, INSIDE):
                    continue
                if e.kind == INSIDE and e.dst == container_id:
                    return True
                frontier.append(e.dst)
        return False


# ---------------------------------------------------------------------------
# Goals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    """A single goal conjunct.

    predicate is either a relation kind (args = (src, dst)) or an
    attribute name (args = (object_id,)); value lets attribute
    constraints demand False (e.g. a closed fridge via open=False).
    """

    predicate: str
    args: tuple
    value: bool = True

    def __post_init__(self):
        if self.predicate in RELATION_KINDS:
            if len(self.args) != 2:
                raise InvariantError(f"relation constraint needs 2 args: {self}")
        elif self.predicate in ATTRIBUTE_VOCABULARY:
            if len(self.args) != 1:
                raise InvariantError(f"attribute constraint needs 1 arg: {self}")
        else:
            raise InvariantError(f"unknown predicate {self.predicate!r}")

    @property
    def is_relation(self) -> bool:
        return self.predicate in RELATION_KINDS


@dataclass(frozen=True)
class Goal:
    constraints: tuple
    text: str

    def __post_init__(self):
        if not self.text:
            raise InvariantError("goal text must be non-empty")

    def referenced_ids(self) -> list:
        ids = []
        for c in self.constraints:
            ids.extend(c.args)
        return sorted(set(ids))

    def relation_tokens(self) -> list:
        """Tokens of the relational / attribute predicates, for embedding."""
        return [c.predicate.lower() for c in self.constraints]

    def object_ids(self) -> list:
        return self.referenced_ids()


def goal_satisfied(state: WorldState, goal: Goal) -> bool:
    for c in goal.constraints:
        for oid in c.args:
            if not state.has_object(oid):
                raise UnknownObjectError(f"goal references unknown object {oid!r}")
        if c.is_relation:
            if c.predicate == INSIDE:
                ok = state.contained_in(c.args[0], c.args[1])
            else:
                ok = RelationEdge(c.predicate, c.args[0], c.args[1]) in state.relations
        else:
            ok = state.find(c.args[0]).has(c.predicate)
        if ok != c.value:
            return False
    return True


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteractionType:
    token: str
    arity: int

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise InvariantError(f"interaction arity must be 1 or 2: {self}")


@dataclass(frozen=True)
class Action:
    interaction: str
    o1: str
    o2: Optional[str] = None

    def signature(self) -> str:
        if self.o2 is None:
            return f"{self.interaction}({self.o1})"
        return f"{self.interaction}({self.o1},{self.o2})"


# ---------------------------------------------------------------------------
# Scene graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneGraph:
    nodes: tuple  # object ids, sorted
    neighbors: Mapping  # relation kind -> {node id -> tuple of neighbor ids}


def build_scene_graph(state: WorldState) -> SceneGraph:
    """Undirected per-relation 1-hop neighbor maps over the object set."""
    state.validate()
    nodes = tuple(sorted(o.id for o in state.objects))
    neighbors = {}
    for kind in RELATION_KINDS:
        nbr = {n: set() for n in nodes}
        for e in state.relations:
            if e.kind != kind:
                continue
            nbr[e.src].add(e.dst)
            nbr[e.dst].add(e.src)
        neighbors[kind] = {n: tuple(sorted(v)) for n, v in nbr.items()}
    return SceneGraph(nodes=nodes, neighbors=neighbors)


def attribute_vector(obj: ObjectInstance, vocabulary: Sequence[str] = ATTRIBUTE_VOCABULARY):
    """Binary flag vector over the fixed attribute vocabulary."""
    return np.array([1.0 if a in obj.attributes else 0.0 for a in vocabulary])


# ---------------------------------------------------------------------------
# Serialization ("v1" canonical records)
# ---------------------------------------------------------------------------


def state_to_dict(state: WorldState) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "objects": [
            {
                "id": o.id,
                "class": o.cls.token,
                "attributes": sorted(o.attributes),
                "pose": list(o.pose),
                "size": list(o.size),
            }
            for o in sorted(state.objects, key=lambda o: o.id)
        ],
        "relations": [
            {"kind": e.kind, "src": e.src, "dst": e.dst}
            for e in sorted(state.relations)
        ],
        "robot": {
            "position": list(state.robot.position),
            "level": state.robot.level,
            "grabbed": state.robot.grabbed,
        },
    }


def serialize_state(state: WorldState) -> str:
    return json.dumps(state_to_dict(state), sort_keys=True, separators=(",", ":"))


def state_from_dict(record: dict, catalog: Mapping) -> WorldState:
    try:
        if record.get("schema") != SCHEMA_VERSION:
            raise ParseError(f"unsupported schema {record.get('schema')!r}")
        objects = []
        for i, rec in enumerate(record["objects"]):
            token = rec["class"]
            if token not in catalog:
                raise ParseError(f"objects[{i}]: unknown class {token!r}")
            objects.append(
                ObjectInstance(
                    id=rec["id"],
                    cls=catalog[token],
                    attributes=frozenset(rec.get("attributes", ())),
                    pose=tuple(rec["pose"]),
                    size=tuple(rec["size"]),
                )
            )
        relations = [
            RelationEdge(r["kind"], r["src"], r["dst"]) for r in record.get("relations", ())
        ]
        robot_rec = record.get("robot", {})
        robot = RobotState(
            position=tuple(robot_rec.get("position", (0.0, 0.0))),
            level=robot_rec.get("level", 0),
            grabbed=robot_rec.get("grabbed"),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed state record: {exc}") from exc
    try:
        return WorldState.build(objects, relations, robot)
    except InvariantError as exc:
        raise ParseError(str(exc)) from exc


def deserialize_state(text: str, catalog: Mapping) -> WorldState:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno} col {exc.colno}") from exc
    return state_from_dict(record, catalog)


def goal_to_dict(goal: Goal) -> dict:
    return {
        "text": goal.text,
        "constraints": [
            {"predicate": c.predicate, "args": list(c.args), "value": c.value}
            for c in goal.constraints
        ],
    }


def goal_from_dict(record: dict) -> Goal:
    try:
        constraints = tuple(
            Constraint(c["predicate"], tuple(c["args"]), c.get("value", True))
            for c in record["constraints"]
        )
        return Goal(constraints=constraints, text=record["text"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed goal record: {exc}") from exc


def action_to_dict(action: Action) -> dict:
    return {"interaction": action.interaction, "o1": action.o1, "o2": action.o2}


def action_from_dict(record: dict) -> Action:
    try:
        return Action(record["interaction"], record["o1"], record.get("o2"))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed action record: {exc}") from exc
