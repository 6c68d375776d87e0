"""Symbolic transition function with a declared stochastic error model.

Action semantics (the grammar table, preconditions and effects) are the
single source of truth for which symbolic interactions exist and what
they do.  `apply` is deterministic given (state, action, config, rng);
with failure probabilities forced to zero it is a pure function of
(state, action).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .world import (
    Action,
    Goal,
    InteractionType,
    InvariantError,
    ObjectInstance,
    RelationEdge,
    RobotState,
    WorldState,
    CONNECTED_TO,
    INSIDE,
    NEAR,
    ON_TOP,
    action_to_dict,
    goal_satisfied,
    goal_to_dict,
    state_to_dict,
)

TRACE_SCHEMA = "trace-v1"

# Grammar table: interaction token -> arity.
INTERACTIONS = (
    InteractionType("MoveTo", 1),
    InteractionType("Pick", 1),
    InteractionType("Drop", 2),
    InteractionType("Open", 1),
    InteractionType("Close", 1),
    InteractionType("SwitchOn", 1),
    InteractionType("SwitchOff", 1),
    InteractionType("ClimbUp", 1),
    InteractionType("ClimbDown", 1),
    InteractionType("Push", 2),
    InteractionType("Clean", 1),
    InteractionType("Apply", 2),
    InteractionType("Stick", 2),
)
INTERACTION_TOKENS = tuple(i.token for i in INTERACTIONS)
ARITY = {i.token: i.arity for i in INTERACTIONS}

GRASPABLE_BOUND = 0.7  # max extent in meters a single gripper can hold
UNGRABBABLE_CLASSES = frozenset({"floor", "wall"})


class SimError(Exception):
    pass


class UnknownInteractionError(SimError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    p_drop: float = 0.02
    p_fail: float = 0.02
    max_steps: int = 50
    reach_radius: float = 1.0
    stick_reach_bonus: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.p_drop <= 1.0 and 0.0 <= self.p_fail <= 1.0):
            raise SimError("failure probabilities must be in [0, 1]")
        if self.max_steps < 1:
            raise SimError("max_steps must be >= 1")

    def deterministic(self) -> "SimConfig":
        return replace(self, p_drop=0.0, p_fail=0.0)


@dataclass(frozen=True)
class TransitionEvent:
    action: Action
    outcome: str  # applied | no-op-failure | drop-perturbation | rejected
    delta: tuple = ()  # human-readable change descriptions
    note: str = ""


@dataclass
class PlanTrace:
    initial: WorldState
    goal: Goal
    events: list = field(default_factory=list)
    final: Optional[WorldState] = None
    success: bool = False

    @property
    def steps(self) -> int:
        return len(self.events)

    def to_dict(self) -> dict:
        return {
            "schema": TRACE_SCHEMA,
            "initial": state_to_dict(self.initial),
            "goal": goal_to_dict(self.goal),
            "events": [
                {
                    "action": action_to_dict(e.action),
                    "outcome": e.outcome,
                    "delta": list(e.delta),
                    "note": e.note,
                }
                for e in self.events
            ],
            "final": state_to_dict(self.final) if self.final is not None else None,
            "success": self.success,
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------


def planar_distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def holds_stick(state: WorldState) -> bool:
    held = state.robot.grabbed
    return held is not None and state.find(held).class_token == "stick"


def reach_limit(state: WorldState, cfg: SimConfig) -> float:
    bonus = cfg.stick_reach_bonus if holds_stick(state) else 0.0
    return cfg.reach_radius + bonus


def reachable(state: WorldState, target_id: str, cfg: SimConfig) -> bool:
    """Planar distance within reach (stick extends it) and the target's
    elevation level not above the robot's."""
    target = state.find(target_id)
    dist = planar_distance(state.robot.position, target.pose)
    if dist > reach_limit(state, cfg):
        return False
    return target.elevation() <= state.robot.level


def blocked_radius(state: WorldState, target_id: str) -> float:
    """How far from the target the robot base must stand.

    If the target lies within another large object's footprint (a toy
    under a couch), the robot has to stand outside that footprint.
    """
    target = state.find(target_id)
    radius = 0.0
    for other in state.objects:
        if other.id == target_id or other.class_token in ("floor", "wall"):
            continue
        half_x, half_y = other.size[0] / 2, other.size[1] / 2
        if max(half_x, half_y) <= GRASPABLE_BOUND:
            continue  # small objects do not block approach
        dx = abs(target.pose[0] - other.pose[0])
        dy = abs(target.pose[1] - other.pose[1])
        if dx <= half_x and dy <= half_y and other.elevation() == target.elevation():
            radius = max(radius, max(half_x, half_y) + 0.1)
    return radius


def approach_point(state: WorldState, target_id: str, cfg: SimConfig) -> tuple:
    """Nearest free standing point: at reach_radius/2 from the target, or
    at the blocking footprint's edge when the target is under something."""
    target = state.find(target_id)
    dist = max(cfg.reach_radius / 2, blocked_radius(state, target_id))
    rx, ry = state.robot.position
    dx, dy = rx - target.pose[0], ry - target.pose[1]
    norm = math.hypot(dx, dy)
    if norm < 1e-9:
        dx, dy, norm = 1.0, 0.0, 1.0
    return (target.pose[0] + dx / norm * dist, target.pose[1] + dy / norm * dist)


# ---------------------------------------------------------------------------
# Preconditions
# ---------------------------------------------------------------------------


def _check_args(state: WorldState, action: Action) -> Optional[str]:
    if action.interaction not in ARITY:
        raise UnknownInteractionError(f"unknown interaction {action.interaction!r}")
    arity = ARITY[action.interaction]
    if (action.o2 is None) != (arity == 1):
        return "arity-mismatch"
    if not state.has_object(action.o1):
        return "unknown-object"
    if action.o2 is not None and not state.has_object(action.o2):
        return "unknown-object"
    if action.o2 == action.o1:
        return "same-object"
    return None


def applicable(state: WorldState, action: Action, cfg: SimConfig):
    """Returns (ok, violated_precondition_name)."""
    bad = _check_args(state, action)
    if bad:
        return False, bad
    tok = action.interaction
    o1 = state.find(action.o1)
    o2 = state.find(action.o2) if action.o2 is not None else None
    held = state.robot.grabbed

    if tok == "MoveTo":
        if state.robot.level != 0:
            return False, "elevated-cannot-move"
        return True, None

    if tok == "Pick":
        if held is not None:
            return False, "hand-occupied"
        if (
            o1.class_token in UNGRABBABLE_CLASSES
            or "grabbed" not in o1.cls.attribute_schema
        ):
            return False, "not-graspable"
        if max(o1.size) > GRASPABLE_BOUND:
            return False, "too-large"
        if not reachable(state, o1.id, cfg):
            return False, "not-reachable"
        container = state.container_of(o1.id)
        if container is not None:
            c = state.find(container)
            if "openable" in c.cls.tags and not c.has("open"):
                return False, "container-closed"
        return True, None

    if tok == "Drop":
        if held != o1.id:
            return False, "not-holding"
        if not reachable(state, o2.id, cfg):
            return False, "not-reachable"
        if "openable" in o2.cls.tags and not o2.has("open"):
            return False, "container-closed"
        if "surface" not in o2.cls.tags and "container" not in o2.cls.tags:
            return False, "not-a-destination"
        return True, None

    if tok in ("Open", "Close"):
        if "openable" not in o1.cls.tags:
            return False, "not-openable"
        if not reachable(state, o1.id, cfg):
            return False, "not-reachable"
        if tok == "Open" and o1.has("open"):
            return False, "already-open"
        if tok == "Close" and not o1.has("open"):
            return False, "already-closed"
        return True, None

    if tok in ("SwitchOn", "SwitchOff"):
        if "operable" not in o1.cls.tags:
            return False, "not-operable"
        if not reachable(state, o1.id, cfg):
            return False, "not-reachable"
        if tok == "SwitchOn" and o1.has("on"):
            return False, "already-on"
        if tok == "SwitchOff" and not o1.has("on"):
            return False, "already-off"
        return True, None

    if tok == "ClimbUp":
        if "climbable" not in o1.cls.tags:
            return False, "not-climbable"
        if state.robot.level != 0:
            return False, "already-elevated"
        if not reachable(state, o1.id, cfg):
            return False, "not-reachable"
        return True, None

    if tok == "ClimbDown":
        if state.robot.level != 1:
            return False, "not-elevated"
        return True, None

    if tok == "Push":
        if o1.class_token in UNGRABBABLE_CLASSES:
            return False, "not-pushable"
        if not reachable(state, o1.id, cfg):
            return False, "not-reachable"
        return True, None

    if tok == "Clean":
        if held is None or "cleaner" not in state.find(held).cls.tags:
            return False, "no-cleaner-held"
        if not o1.has("dirty"):
            return False, "not-dirty"
        if not reachable(state, o1.id, cfg):
            return False, "not-reachable"
        return True, None

    if tok == "Apply":
        if held != o1.id:
            return False, "not-holding"
        if "applicable-adhesive" not in o1.cls.tags:
            return False, "not-adhesive"
        if not reachable(state, o2.id, cfg):
            return False, "not-reachable"
        return True, None

    if tok == "Stick":
        if held != o1.id:
            return False, "not-holding"
        if not o2.has("sticky"):
            return False, "not-sticky"
        if not reachable(state, o2.id, cfg):
            return False, "not-reachable"
        return True, None

    raise UnknownInteractionError(f"unknown interaction {tok!r}")


# ---------------------------------------------------------------------------
# Effects
# ---------------------------------------------------------------------------


def _replace_object(state: WorldState, obj: ObjectInstance) -> WorldState:
    objects = tuple(obj if o.id == obj.id else o for o in state.objects)
    return replace(state, objects=objects)


def _move_object(state: WorldState, oid: str, pose: tuple) -> WorldState:
    obj = state.find(oid)
    delta = (
        pose[0] - obj.pose[0],
        pose[1] - obj.pose[1],
        pose[2] - obj.pose[2],
    )
    state = _replace_object(state, replace(obj, pose=pose))
    # Objects riding on top of / inside the moved object travel with it.
    for rider in state.carried_by(oid):
        r = state.find(rider)
        state = _move_object(
            state,
            rider,
            (r.pose[0] + delta[0], r.pose[1] + delta[1], r.pose[2] + delta[2], r.pose[3]),
        )
    return state


def _drop_edges_for(dest: ObjectInstance) -> str:
    return INSIDE if "container" in dest.cls.tags else ON_TOP


def _remove_placement_edges(state: WorldState, oid: str) -> WorldState:
    keep = frozenset(
        e
        for e in state.relations
        if not (e.kind in (ON_TOP, INSIDE) and e.src == oid)
    )
    return replace(state, relations=keep)


def _effects(state: WorldState, action: Action, cfg: SimConfig):
    """Deterministic effects of an applicable action; returns (state', delta)."""
    tok = action.interaction
    delta = []

    if tok == "MoveTo":
        pos = approach_point(state, action.o1, cfg)
        state = replace(state, robot=replace(state.robot, position=pos))
        delta.append(f"robot at ({pos[0]:.2f},{pos[1]:.2f})")
        held = state.robot.grabbed
        if held is not None:
            h = state.find(held)
            state = _move_object(state, held, (pos[0], pos[1], h.pose[2], h.pose[3]))
        return state, delta

    if tok == "Pick":
        obj = state.find(action.o1)
        state = _remove_placement_edges(state, obj.id)
        obj = state.find(action.o1).with_attribute("grabbed", True)
        obj = obj.with_attribute("inside", False) if "inside" in obj.cls.attribute_schema else obj
        state = _replace_object(state, obj)
        rx, ry = state.robot.position
        state = _move_object(state, obj.id, (rx, ry, obj.pose[2], obj.pose[3]))
        state = replace(state, robot=replace(state.robot, grabbed=obj.id))
        delta.append(f"grabbed {obj.id}")
        return state, delta

    if tok == "Drop":
        held_id, dest_id = action.o1, action.o2
        dest = state.find(dest_id)
        kind = _drop_edges_for(dest)
        obj = state.find(held_id).with_attribute("grabbed", False)
        if kind == INSIDE and "inside" in obj.cls.attribute_schema:
            obj = obj.with_attribute("inside", True)
        # containers hold items near their base; surfaces on their top face
        z = dest.pose[2] + (0.1 if kind == INSIDE else dest.size[2] / 2)
        state = _replace_object(state, obj)
        state = _move_object(state, held_id, (dest.pose[0], dest.pose[1], z, obj.pose[3]))
        edges = set(state.relations)
        edges.add(RelationEdge(kind, held_id, dest_id))
        delta.append(f"{kind}({held_id},{dest_id})")
        if kind == INSIDE:
            # Items riding on the dropped object are now in the container too
            # only via transitive containment; no extra edges needed.
            pass
        state = replace(state, relations=frozenset(edges))
        state = replace(state, robot=replace(state.robot, grabbed=None))
        return state, delta

    if tok in ("Open", "Close"):
        obj = state.find(action.o1).with_attribute("open", tok == "Open")
        state = _replace_object(state, obj)
        delta.append(f"open({obj.id})={tok == 'Open'}")
        return state, delta

    if tok in ("SwitchOn", "SwitchOff"):
        obj = state.find(action.o1).with_attribute("on", tok == "SwitchOn")
        state = _replace_object(state, obj)
        delta.append(f"on({obj.id})={tok == 'SwitchOn'}")
        return state, delta

    if tok == "ClimbUp":
        aid = state.find(action.o1)
        pos = (aid.pose[0], aid.pose[1])
        state = replace(state, robot=replace(state.robot, position=pos, level=1))
        delta.append(f"robot on {aid.id} (level 1)")
        held = state.robot.grabbed
        if held is not None:
            h = state.find(held)
            state = _move_object(state, held, (pos[0], pos[1], h.pose[2], h.pose[3]))
        return state, delta

    if tok == "ClimbDown":
        state = replace(state, robot=replace(state.robot, level=0))
        delta.append("robot on floor (level 0)")
        return state, delta

    if tok == "Push":
        obj = state.find(action.o1)
        dest = state.find(action.o2)
        rx, ry = state.robot.position
        dx, dy = rx - dest.pose[0], ry - dest.pose[1]
        norm = math.hypot(dx, dy)
        if norm < 1e-9:
            dx, dy, norm = 1.0, 0.0, 1.0
        offset = 0.5
        pos = (dest.pose[0] + dx / norm * offset, dest.pose[1] + dy / norm * offset)
        state = _remove_placement_edges(state, obj.id)
        state = _move_object(state, obj.id, (pos[0], pos[1], obj.pose[2], obj.pose[3]))
        delta.append(f"pushed {obj.id} near {dest.id}")
        return state, delta

    if tok == "Clean":
        obj = state.find(action.o1).with_attribute("dirty", False)
        state = _replace_object(state, obj)
        delta.append(f"cleaned {obj.id}")
        return state, delta

    if tok == "Apply":
        target = state.find(action.o2).with_attribute("sticky", True)
        state = _replace_object(state, target)
        delta.append(f"sticky({target.id})=True")
        return state, delta

    if tok == "Stick":
        obj = state.find(action.o1).with_attribute("grabbed", False)
        state = _replace_object(state, obj)
        edges = set(state.relations)
        edges.add(RelationEdge(CONNECTED_TO, action.o1, action.o2))
        state = replace(state, relations=frozenset(edges))
        state = replace(state, robot=replace(state.robot, grabbed=None))
        delta.append(f"ConnectedTo({action.o1},{action.o2})")
        return state, delta

    raise UnknownInteractionError(tok)


def _drop_perturbation(state: WorldState, delta: list) -> WorldState:
    """The held object slips and lands on the floor at the robot's feet."""
    held_id = state.robot.grabbed
    obj = state.find(held_id).with_attribute("grabbed", False)
    rx, ry = state.robot.position
    state = _replace_object(state, obj)
    state = _move_object(state, held_id, (rx, ry, 0.0, obj.pose[3]))
    edges = set(state.relations)
    floor_ids = [o.id for o in state.objects if o.class_token == "floor"]
    if floor_ids:
        edges.add(RelationEdge(ON_TOP, held_id, floor_ids[0]))
    state = replace(state, relations=frozenset(edges))
    state = replace(state, robot=replace(state.robot, grabbed=None))
    delta.append(f"dropped {held_id} on floor")
    return state


def force_drop(state: WorldState) -> WorldState:
    """Deterministically inject the drop perturbation (held object lands
    on the floor at the robot's feet).  No-op when nothing is held."""
    if state.robot.grabbed is None:
        return state
    delta: list = []
    state = _drop_perturbation(state, delta)
    state.validate()
    return state


def apply(state: WorldState, action: Action, cfg: SimConfig, rng: np.random.Generator):
    """One transition.  Returns (next_state, TransitionEvent)."""
    ok, violation = applicable(state, action, cfg)
    if not ok:
        return state, TransitionEvent(action, "rejected", (), violation)

    outcome = "applied"
    delta: list = []
    if cfg.p_fail > 0 and rng.random() < cfg.p_fail:
        outcome = "no-op-failure"
        next_state = state
    else:
        next_state, delta = _effects(state, action, cfg)

    if (
        cfg.p_drop > 0
        and next_state.robot.grabbed is not None
        and rng.random() < cfg.p_drop
    ):
        next_state = _drop_perturbation(next_state, delta)
        outcome = "drop-perturbation"

    next_state.validate()
    return next_state, TransitionEvent(action, outcome, tuple(delta), "")


def run_episode(
    policy: Callable[[WorldState, Goal, list], Action],
    initial: WorldState,
    goal: Goal,
    cfg: SimConfig,
    rng: Optional[np.random.Generator] = None,
) -> PlanTrace:
    """Closed-loop predict/apply until the goal holds or the step cap hits.

    The history handed to the policy is the list of attempted actions so
    far (the executed sequence, including rejected attempts).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    trace = PlanTrace(initial=initial, goal=goal)
    state = initial
    history: list = []
    if goal_satisfied(state, goal):
        trace.final = state
        trace.success = True
        return trace
    for _ in range(cfg.max_steps):
        try:
            action = policy(state, goal, history)
        except Exception as exc:  # malformed policy output aborts the trace
            trace.events.append(
                TransitionEvent(Action("MoveTo", "none"), "rejected", (), str(exc))
            )
            break
        try:
            state, event = apply(state, action, cfg, rng)
        except (UnknownInteractionError, InvariantError) as exc:
            trace.events.append(TransitionEvent(action, "rejected", (), str(exc)))
            break
        trace.events.append(event)
        history.append(action)
        if goal_satisfied(state, goal):
            trace.success = True
            break
    trace.final = state
    return trace
