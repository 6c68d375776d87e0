"""Micro-home domain: class catalog, scene builder, and goal catalog.

A 10 m x 10 m room with ~14 objects and five goals that each exercise a
different tool behavior: container transport (tray/box), climbing
(stool) for elevated switches and shelves, and stick reach for objects
under furniture.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .world import (
    Constraint,
    Goal,
    ObjectClass,
    ObjectInstance,
    RelationEdge,
    RobotState,
    WorldState,
    INSIDE,
    ON_TOP,
)

ROOM_SIZE = 10.0
ROOM_HEIGHT = 3.0

_MOVABLE = frozenset({"grabbed", "inside", "dirty", "sticky"})

CLASSES = {
    c.token: c
    for c in [
        ObjectClass("floor", frozenset({"dirty"}), tags=frozenset({"surface"})),
        ObjectClass("wall", frozenset({"sticky"}), tags=frozenset({"surface"})),
        ObjectClass("table", frozenset({"dirty"}), tags=frozenset({"surface"})),
        ObjectClass("counter", frozenset({"dirty"}), tags=frozenset({"surface"})),
        ObjectClass("shelf", frozenset(), tags=frozenset({"surface"})),
        ObjectClass("couch", frozenset({"dirty"}), tags=frozenset({"surface"})),
        ObjectClass(
            "fridge",
            frozenset({"open"}),
            tags=frozenset({"container", "openable"}),
        ),
        ObjectClass(
            "cupboard",
            frozenset({"open"}),
            tags=frozenset({"container", "openable"}),
        ),
        ObjectClass("light", frozenset({"on"}), tags=frozenset({"operable"})),
        ObjectClass("fan", frozenset({"on"}), tags=frozenset({"operable"})),
        ObjectClass("stool", _MOVABLE, is_tool=True, tags=frozenset({"climbable"})),
        ObjectClass("ladder", _MOVABLE, is_tool=True, tags=frozenset({"climbable"})),
        ObjectClass("tray", _MOVABLE, is_tool=True, tags=frozenset({"surface"})),
        ObjectClass("box", _MOVABLE, is_tool=True, tags=frozenset({"container"})),
        ObjectClass("basket", _MOVABLE, is_tool=True, tags=frozenset({"container"})),
        ObjectClass("stick", _MOVABLE, is_tool=True),
        ObjectClass("mop", _MOVABLE, is_tool=True, tags=frozenset({"cleaner"})),
        ObjectClass("vacuum", _MOVABLE, is_tool=True, tags=frozenset({"cleaner"})),
        ObjectClass("tape", _MOVABLE, is_tool=True, tags=frozenset({"applicable-adhesive"})),
        ObjectClass("glue", _MOVABLE, is_tool=True, tags=frozenset({"applicable-adhesive"})),
        ObjectClass("milk", _MOVABLE),
        ObjectClass("cereal", _MOVABLE),
        ObjectClass("apple", _MOVABLE),
        ObjectClass("orange", _MOVABLE),
        ObjectClass("banana", _MOVABLE),
        ObjectClass("toy", _MOVABLE),
        ObjectClass("book", _MOVABLE),
        ObjectClass("cup", _MOVABLE),
        ObjectClass("plate", _MOVABLE),
        ObjectClass("bottle", _MOVABLE),
        ObjectClass("paper", _MOVABLE),
        ObjectClass("nail", _MOVABLE),
        ObjectClass("pillow", _MOVABLE),
        ObjectClass("brick", _MOVABLE),
    ]
}

# Classes excluded from training scenes; generalization strategies draw
# replacements from here.
RESERVE_CLASSES = ("box", "vacuum", "tape")

# Random-replacement pool for the "unrelated object" strategy.
RANDOM_REPLACEMENT_CLASSES = ("book", "pillow", "brick", "plate")


def normalize_pose(pose: tuple) -> tuple:
    return (
        pose[0] / (ROOM_SIZE / 2) - 1.0,
        pose[1] / (ROOM_SIZE / 2) - 1.0,
        pose[2] / (ROOM_HEIGHT / 2) - 1.0,
        pose[3] / math.pi,
    )


def normalize_size(size: tuple) -> tuple:
    return tuple(min(1.0, s / (ROOM_SIZE / 2) * 2.0 - 1.0) for s in size)


def _obj(token: str, index: int, pose, size, attrs=()) -> ObjectInstance:
    return ObjectInstance(
        id=f"{token}_{index}",
        cls=CLASSES[token],
        attributes=frozenset(attrs),
        pose=tuple(pose),
        size=tuple(size),
    )


def micro_home_scene(
    seed: int = 0,
    jitter: float = 0.2,
    include: tuple = (),
    exclude: tuple = (),
) -> WorldState:
    """Base micro-home layout with seeded position jitter.

    include/exclude add or drop class tokens (one instance each) so the
    generalization strategies can rearrange tool availability.
    """
    rng = np.random.default_rng(seed)

    def j(x, y, scale=1.0):
        return (
            float(np.clip(x + rng.uniform(-jitter, jitter) * scale, 0.6, ROOM_SIZE - 0.6)),
            float(np.clip(y + rng.uniform(-jitter, jitter) * scale, 0.6, ROOM_SIZE - 0.6)),
        )

    table_xy = j(5.0, 2.0)
    fridge_xy = j(2.0, 8.0)
    cupboard_xy = j(8.0, 8.0)
    couch_xy = j(7.5, 1.5, 0.5)
    stool_xy = j(8.0, 5.0, 0.5)
    stick_xy = j(1.0, 2.0)
    table_top = 0.5

    def on_table(dx, dy):
        x, y = j(table_xy[0] + dx, table_xy[1] + dy, 0.4)
        return (x, y, table_top, 0.0)

    objects = [
        _obj("floor", 0, (5.0, 5.0, 0.0, 0.0), (ROOM_SIZE, ROOM_SIZE, 0.1)),
        _obj("wall", 0, (5.0, 10.0, 1.5, 0.0), (ROOM_SIZE, 0.2, ROOM_HEIGHT)),
        _obj("table", 0, (*table_xy, 0.25, 0.0), (1.6, 0.9, 0.5)),
        _obj("fridge", 0, (*fridge_xy, 0.0, 0.0), (0.9, 0.9, 1.8)),
        _obj("cupboard", 0, (*cupboard_xy, 0.0, 0.0), (1.0, 0.6, 1.9)),
        _obj("couch", 0, (*couch_xy, 0.25, 0.0), (2.6, 2.6, 0.5)),
        _obj("shelf", 0, (stool_xy[0], stool_xy[1] + 0.7, 1.2, 0.0), (0.9, 0.4, 0.05)),
        _obj("light", 0, (stool_xy[0], stool_xy[1] - 0.7, 1.6, 0.0), (0.15, 0.15, 0.15)),
        _obj("stool", 0, (*stool_xy, 0.0, 0.0), (0.45, 0.45, 0.5)),
        _obj("stick", 0, (*stick_xy, 0.0, 0.0), (0.05, 0.05, 0.05)),
        _obj("milk", 0, on_table(-0.5, 0.0), (0.12, 0.12, 0.25)),
        _obj("cereal", 0, on_table(0.5, 0.2), (0.2, 0.08, 0.3)),
        _obj("apple", 0, on_table(-0.2, 0.2), (0.08, 0.08, 0.08)),
        _obj("orange", 0, on_table(0.1, -0.2), (0.08, 0.08, 0.08)),
        _obj("tray", 0, on_table(0.3, -0.1), (0.45, 0.35, 0.05)),
        _obj("toy", 0, (couch_xy[0], couch_xy[1], 0.0, 0.0), (0.15, 0.15, 0.1)),
    ]
    objects = [o for o in objects if o.class_token not in exclude]
    present = {o.class_token for o in objects}
    for token in include:
        if token in present:
            continue
        x, y = j(4.0, 5.5)
        size = (0.5, 0.4, 0.25) if token in ("box", "basket") else (0.3, 0.3, 0.3)
        objects.append(_obj(token, 0, (x, y, 0.0, 0.0), size))

    relations = []
    table_riders = ("milk_0", "cereal_0", "apple_0", "orange_0", "tray_0")
    for rid in table_riders:
        if any(o.id == rid for o in objects):
            relations.append(RelationEdge(ON_TOP, rid, "table_0"))
    if any(o.id == "toy_0" for o in objects):
        relations.append(RelationEdge(ON_TOP, "toy_0", "floor_0"))
    for oid in ("stool_0", "stick_0"):
        if any(o.id == oid for o in objects):
            relations.append(RelationEdge(ON_TOP, oid, "floor_0"))
    for token in include:
        oid = f"{token}_0"
        if any(o.id == oid and o.pose[2] < 0.1 for o in objects):
            relations.append(RelationEdge(ON_TOP, oid, "floor_0"))

    rx = float(rng.uniform(3.5, 6.5))
    ry = float(rng.uniform(4.0, 6.0))
    return WorldState.build(objects, relations, RobotState(position=(rx, ry)))


# ---------------------------------------------------------------------------
# Goals
# ---------------------------------------------------------------------------


def goal_store_milk() -> Goal:
    return Goal(
        constraints=(
            Constraint(INSIDE, ("milk_0", "fridge_0")),
            Constraint("open", ("fridge_0",), value=False),
        ),
        text="place the milk in the fridge and close it",
    )


def goal_store_fruit() -> Goal:
    return Goal(
        constraints=(
            Constraint(INSIDE, ("apple_0", "cupboard_0")),
            Constraint(INSIDE, ("orange_0", "cupboard_0")),
        ),
        text="put the fruits away in the cupboard",
    )


def goal_light_on() -> Goal:
    return Goal(
        constraints=(Constraint("on", ("light_0",)),),
        text="illuminate the room",
    )


def goal_fetch_toy() -> Goal:
    return Goal(
        constraints=(Constraint(ON_TOP, ("toy_0", "table_0")),),
        text="fetch the toy from under the couch onto the table",
    )


def goal_shelve_cereal() -> Goal:
    return Goal(
        constraints=(Constraint(ON_TOP, ("cereal_0", "shelf_0")),),
        text="put the cereal up on the shelf",
    )


GOALS = {
    "store_milk": goal_store_milk,
    "store_fruit": goal_store_fruit,
    "light_on": goal_light_on,
    "fetch_toy": goal_fetch_toy,
    "shelve_cereal": goal_shelve_cereal,
}

# Goals whose plans route items through a carrier tool; used by the
# generalization strategies and the transfer acceptance check.
TRANSPORT_GOALS = ("store_fruit",)


def make_goal(name: str) -> Goal:
    if name not in GOALS:
        raise KeyError(f"unknown goal {name!r}; known: {sorted(GOALS)}")
    return GOALS[name]()


def scene_for_goal(goal_name: str, seed: int = 0, **kwargs) -> WorldState:
    return micro_home_scene(seed=seed, **kwargs)
