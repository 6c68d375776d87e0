"""Demonstration corpus: scripted experts, augmentation, splits, and the
five generalization scene samplers.

Every demonstration must be replay-valid: executing its action sequence
from its initial state under the deterministic transition reproduces the
recorded states and ends with the goal satisfied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace as dc_replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import domain
from .embeddings import EmbeddingTable, nearest_class, retrofitted_table
from .sim import (
    ARITY,
    SimConfig,
    applicable,
    apply,
    blocked_radius,
    force_drop,
    reachable,
    run_episode,
)
from .world import (
    Action,
    Goal,
    Constraint,
    ObjectInstance,
    RelationEdge,
    WorldState,
    INSIDE,
    ON_TOP,
    action_from_dict,
    action_to_dict,
    goal_from_dict,
    goal_satisfied,
    goal_to_dict,
    serialize_state,
    state_from_dict,
    state_to_dict,
)

DEMO_SCHEMA = "demo-v1"
DETERMINISTIC = SimConfig(p_drop=0.0, p_fail=0.0)


class CorpusError(Exception):
    pass


class ReplayError(CorpusError):
    pass


@dataclass
class Demonstration:
    scene_id: str
    goal_name: str
    initial: WorldState
    goal: Goal
    steps: list  # (WorldState, Action) pairs
    teacher: str = "scripted-expert"

    def actions(self) -> list:
        return [a for _, a in self.steps]

    def to_dict(self) -> dict:
        return {
            "schema": DEMO_SCHEMA,
            "scene_id": self.scene_id,
            "goal_name": self.goal_name,
            "teacher": self.teacher,
            "initial": state_to_dict(self.initial),
            "goal": goal_to_dict(self.goal),
            "steps": [
                {"state": state_to_dict(s), "action": action_to_dict(a)}
                for s, a in self.steps
            ],
        }

    @staticmethod
    def from_dict(record: dict, catalog=domain.CLASSES) -> "Demonstration":
        if record.get("schema") != DEMO_SCHEMA:
            raise CorpusError(f"unsupported demo schema {record.get('schema')!r}")
        return Demonstration(
            scene_id=record["scene_id"],
            goal_name=record["goal_name"],
            initial=state_from_dict(record["initial"], catalog),
            goal=goal_from_dict(record["goal"]),
            steps=[
                (state_from_dict(s["state"], catalog), action_from_dict(s["action"]))
                for s in record["steps"]
            ],
            teacher=record.get("teacher", "unknown"),
        )


@dataclass
class Corpus:
    demonstrations: list
    domain_tag: str = "home"
    provenance: list = field(default_factory=list)

    def __len__(self):
        return len(self.demonstrations)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for demo in self.demonstrations:
                fh.write(json.dumps(demo.to_dict(), sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    @staticmethod
    def load(path) -> "Corpus":
        demos = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    demos.append(Demonstration.from_dict(json.loads(line)))
        return Corpus(demos)


# ---------------------------------------------------------------------------
# Replay validation
# ---------------------------------------------------------------------------


def replay_demo(demo: Demonstration, strict_states: bool = True) -> None:
    """Raise ReplayError unless the demo replays deterministically to goal."""
    rng = np.random.default_rng(0)
    state = demo.initial
    for idx, (recorded, action) in enumerate(demo.steps):
        if strict_states and serialize_state(state) != serialize_state(recorded):
            raise ReplayError(f"{demo.scene_id}: state mismatch at step {idx}")
        state, event = apply(state, action, DETERMINISTIC, rng)
        if event.outcome != "applied":
            raise ReplayError(
                f"{demo.scene_id}: step {idx} {action.signature()} -> {event.outcome} ({event.note})"
            )
    if not goal_satisfied(state, demo.goal):
        raise ReplayError(f"{demo.scene_id}: goal not satisfied after replay")


def replay_valid(demo: Demonstration, strict_states: bool = True) -> bool:
    try:
        replay_demo(demo, strict_states=strict_states)
        return True
    except (ReplayError, Exception):
        return False


# ---------------------------------------------------------------------------
# Scripted experts (reactive: derive the next action from any state)
# ---------------------------------------------------------------------------


def _ensure_reach(state: WorldState, target: str, cfg: SimConfig) -> Optional[Action]:
    if reachable(state, target, cfg):
        return None
    if state.robot.level != 0:
        return Action("ClimbDown", _climb_aid(state))
    return Action("MoveTo", target)


def _climb_aid(state: WorldState) -> str:
    for o in state.objects:
        if "climbable" in o.cls.tags:
            return o.id
    return state.objects[0].id


def _held(state: WorldState) -> Optional[str]:
    return state.robot.grabbed


def _floor(state: WorldState) -> str:
    for o in state.objects:
        if o.class_token == "floor":
            return o.id
    raise CorpusError("scene has no floor")


def _find_class(state: WorldState, tokens) -> Optional[str]:
    for token in tokens:
        for o in state.objects:
            if o.class_token == token:
                return o.id
    return None


def _stash_held(state: WorldState, cfg: SimConfig) -> Action:
    held = _held(state)
    return _ensure_reach(state, _floor(state), cfg) or Action("Drop", held, _floor(state))


def _expert_store_milk(state: WorldState, goal: Goal, cfg: SimConfig) -> Action:
    milk, fridge = "milk_0", "fridge_0"
    fridge_obj = state.find(fridge)
    if state.contained_in(milk, fridge):
        return _ensure_reach(state, fridge, cfg) or Action("Close", fridge)
    if not fridge_obj.has("open"):
        return _ensure_reach(state, fridge, cfg) or Action("Open", fridge)
    if _held(state) == milk:
        return _ensure_reach(state, fridge, cfg) or Action("Drop", milk, fridge)
    if _held(state) is not None:
        return _stash_held(state, cfg)
    return _ensure_reach(state, milk, cfg) or Action("Pick", milk)


CARRIER_CLASSES = ("tray", "box", "basket")


def _expert_store_fruit(state: WorldState, goal: Goal, cfg: SimConfig) -> Action:
    cupboard = "cupboard_0"
    fruits = [c.args[0] for c in goal.constraints if c.predicate == INSIDE]
    pending = [f for f in fruits if not state.contained_in(f, cupboard)]
    carrier = _find_class(state, CARRIER_CLASSES)
    if not state.find(cupboard).has("open"):
        return _ensure_reach(state, cupboard, cfg) or Action("Open", cupboard)
    if carrier is None:
        # no carrier available: ferry fruits one by one
        held = _held(state)
        if held in pending:
            return _ensure_reach(state, cupboard, cfg) or Action("Drop", held, cupboard)
        if held is not None:
            return _stash_held(state, cfg)
        target = pending[0]
        return _ensure_reach(state, target, cfg) or Action("Pick", target)
    riding = set(state.carried_by(carrier))
    loose = [f for f in pending if f not in riding]
    if _held(state) == carrier:
        return _ensure_reach(state, cupboard, cfg) or Action("Drop", carrier, cupboard)
    if not loose:
        return _ensure_reach(state, carrier, cfg) or Action("Pick", carrier)
    held = _held(state)
    if held in loose:
        return _ensure_reach(state, carrier, cfg) or Action("Drop", held, carrier)
    if held is not None:
        return _stash_held(state, cfg)
    return _ensure_reach(state, loose[0], cfg) or Action("Pick", loose[0])


def _expert_light_on(state: WorldState, goal: Goal, cfg: SimConfig) -> Action:
    light = goal.constraints[0].args[0]
    aid = _climb_aid(state)
    if reachable(state, light, cfg):
        return Action("SwitchOn", light)
    if state.robot.level == 1:
        return Action("ClimbDown", aid)
    return _ensure_reach(state, aid, cfg) or Action("ClimbUp", aid)


def _expert_fetch_toy(state: WorldState, goal: Goal, cfg: SimConfig) -> Action:
    toy, table = goal.constraints[0].args
    held = _held(state)
    if held == toy:
        return _ensure_reach(state, table, cfg) or Action("Drop", toy, table)
    needs_stick = blocked_radius(state, toy) > cfg.reach_radius
    stick = _find_class(state, ("stick", "pole"))
    if needs_stick and stick is not None:
        if held == stick:
            if reachable(state, toy, cfg):
                return Action("Push", toy, _floor(state))
            return Action("MoveTo", toy)
        if held is not None:
            return _stash_held(state, cfg)
        return _ensure_reach(state, stick, cfg) or Action("Pick", stick)
    if held is not None:
        return _stash_held(state, cfg)
    return _ensure_reach(state, toy, cfg) or Action("Pick", toy)


def _expert_shelve_cereal(state: WorldState, goal: Goal, cfg: SimConfig) -> Action:
    cereal, shelf = goal.constraints[0].args
    aid = _climb_aid(state)
    held = _held(state)
    if held == cereal:
        if reachable(state, shelf, cfg):
            return Action("Drop", cereal, shelf)
        if state.robot.level == 0:
            return _ensure_reach(state, aid, cfg) or Action("ClimbUp", aid)
        return Action("ClimbDown", aid)
    if held is not None:
        return _stash_held(state, cfg)
    if state.robot.level == 1:
        return Action("ClimbDown", aid)
    return _ensure_reach(state, cereal, cfg) or Action("Pick", cereal)


EXPERTS = {
    "store_milk": _expert_store_milk,
    "store_fruit": _expert_store_fruit,
    "light_on": _expert_light_on,
    "fetch_toy": _expert_fetch_toy,
    "shelve_cereal": _expert_shelve_cereal,
}


def expert_policy(goal_name: str, cfg: SimConfig = DETERMINISTIC) -> Callable:
    expert = EXPERTS[goal_name]

    def policy(state: WorldState, goal: Goal, history: list) -> Action:
        return expert(state, goal, cfg)

    return policy


def scripted_expert(
    scene: WorldState,
    goal: Goal,
    goal_name: str,
    scene_id: str = "scene",
    cfg: SimConfig = DETERMINISTIC,
) -> Demonstration:
    """Run the reactive expert to the goal and record a demonstration."""
    trace = run_episode(expert_policy(goal_name, cfg), scene, goal, cfg)
    if not trace.success:
        raise CorpusError(f"expert failed to reach goal {goal_name!r} in {scene_id}")
    states = [scene]
    for event in trace.events:
        s, _ = apply(states[-1], event.action, cfg, np.random.default_rng(0))
        states.append(s)
    steps = [(states[i], trace.events[i].action) for i in range(len(trace.events))]
    demo = Demonstration(scene_id, goal_name, scene, goal, steps)
    replay_demo(demo)
    return demo


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------


def generate_corpus(
    scenes_per_goal: int = 12,
    resume_per_goal: int = 4,
    seed: int = 0,
    goals: Sequence[str] = tuple(domain.GOALS),
    scene_kwargs: Optional[dict] = None,
) -> Corpus:
    """Scripted-expert demos plus resume demos (expert re-planning after a
    forced drop mid-task), which teach the policy to recover."""
    scene_kwargs = scene_kwargs or {}
    demos = []
    rng = np.random.default_rng(seed)
    for goal_name in goals:
        base_demos = []
        for k in range(scenes_per_goal):
            scene_seed = int(rng.integers(1 << 31))
            scene = domain.micro_home_scene(seed=scene_seed, **scene_kwargs)
            goal = domain.make_goal(goal_name)
            scene_id = f"home_{goal_name}_{k}"
            try:
                demo = scripted_expert(scene, goal, goal_name, scene_id)
            except CorpusError:
                continue
            base_demos.append(demo)
            demos.append(demo)
        for k in range(resume_per_goal):
            if not base_demos:
                break
            base = base_demos[int(rng.integers(len(base_demos)))]
            cut = int(rng.integers(1, len(base.steps) + 1))
            state = base.steps[cut - 1][0]
            state, _ = apply(
                state, base.steps[cut - 1][1], DETERMINISTIC, np.random.default_rng(0)
            )
            state = force_drop(state)
            if goal_satisfied(state, base.goal):
                continue
            scene_id = f"{base.scene_id}_resume{k}"
            try:
                demo = scripted_expert(state, base.goal, goal_name, scene_id)
            except CorpusError:
                continue
            demo.teacher = "scripted-expert-resume"
            demos.append(demo)
    return Corpus(demos, provenance=[f"generated seed={seed}"])


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def _jitter_state(state: WorldState, rng: np.random.Generator, radius: float) -> WorldState:
    objects = []
    for o in state.objects:
        if max(o.size) > 1.0 or o.class_token in ("floor", "wall", "light", "shelf"):
            objects.append(o)
            continue
        dx = float(rng.uniform(-radius, radius))
        dy = float(rng.uniform(-radius, radius))
        x = float(np.clip(o.pose[0] + dx, 0.3, domain.ROOM_SIZE - 0.3))
        y = float(np.clip(o.pose[1] + dy, 0.3, domain.ROOM_SIZE - 0.3))
        objects.append(dc_replace(o, pose=(x, y, o.pose[2], o.pose[3])))
    return WorldState.build(objects, state.relations, state.robot)


def _swap_class(
    state: WorldState,
    goal: Goal,
    actions: list,
    table: EmbeddingTable,
    rng: np.random.Generator,
):
    """Replace one non-goal movable object's class with an
    embedding-similar class not already in the scene; re-ids actions."""
    goal_ids = set(goal.referenced_ids())
    present = {o.class_token for o in state.objects}
    candidates = [
        o
        for o in state.objects
        if o.id not in goal_ids
        and max(o.size) <= 0.7
        and o.class_token not in ("floor", "wall")
    ]
    if not candidates:
        return None
    target = candidates[int(rng.integers(len(candidates)))]
    pool = [
        t
        for t in domain.CLASSES
        if t not in present
        and t not in domain.RESERVE_CLASSES
        and t not in ("floor", "wall")
    ]
    if not pool:
        return None
    new_token = nearest_class(target.class_token, pool, table)
    new_id = f"{new_token}_0"
    objects = [
        ObjectInstance(new_id, domain.CLASSES[new_token], frozenset(
            a for a in o.attributes if a in domain.CLASSES[new_token].attribute_schema
        ), o.pose, o.size)
        if o.id == target.id
        else o
        for o in state.objects
    ]
    relations = [
        RelationEdge(
            e.kind,
            new_id if e.src == target.id else e.src,
            new_id if e.dst == target.id else e.dst,
        )
        for e in state.relations
    ]
    robot = state.robot
    if robot.grabbed == target.id:
        robot = dc_replace(robot, grabbed=new_id)
    new_state = WorldState.build(objects, relations, robot)
    new_actions = [
        Action(
            a.interaction,
            new_id if a.o1 == target.id else a.o1,
            new_id if a.o2 == target.id else a.o2,
        )
        for a in actions
    ]
    return new_state, new_actions


def _rebuild_demo(
    demo: Demonstration, initial: WorldState, actions: list, scene_id: str, teacher: str
) -> Optional[Demonstration]:
    """Replay actions from a modified initial state; None if infeasible."""
    state = initial
    steps = []
    rng = np.random.default_rng(0)
    for action in actions:
        ok, _ = applicable(state, action, DETERMINISTIC)
        if not ok:
            return None
        steps.append((state, action))
        state, _ = apply(state, action, DETERMINISTIC, rng)
    if not goal_satisfied(state, demo.goal):
        return None
    return Demonstration(scene_id, demo.goal_name, initial, demo.goal, steps, teacher)


def augment(
    corpus: Corpus,
    factor: int = 3,
    seed: int = 0,
    jitter_radius: float = 0.2,
    swap_probability: float = 0.3,
    table: Optional[EmbeddingTable] = None,
) -> Corpus:
    """Pose-jitter and class-swap variants, validated by replay; invalid
    variants are dropped.  Output size <= factor * input size."""
    if factor < 1:
        raise CorpusError("factor must be >= 1")
    if table is None:
        table = retrofitted_table()
    out = list(corpus.demonstrations)
    dropped = 0
    for idx, demo in enumerate(corpus.demonstrations):
        rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
        for v in range(factor - 1):
            initial = _jitter_state(demo.initial, rng, jitter_radius)
            actions = demo.actions()
            if rng.random() < swap_probability:
                swapped = _swap_class(initial, demo.goal, actions, table, rng)
                if swapped is not None:
                    initial, actions = swapped
            variant = _rebuild_demo(
                demo, initial, actions, f"{demo.scene_id}_aug{v}", "augmentation"
            )
            if variant is None:
                dropped += 1
                continue
            out.append(variant)
    provenance = corpus.provenance + [
        f"augment factor={factor} seed={seed} dropped={dropped}"
    ]
    return Corpus(out, corpus.domain_tag, provenance)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def split(corpus: Corpus, seed: int = 0, test_fraction: float = 0.25, val_fraction: float = 0.10):
    """75/25 train/test grouped by (scene_id, goal), then 10% of train as
    validation.  Identical scene-goal pairs never straddle the boundary."""
    if len(corpus) < 10:
        raise CorpusError("corpus too small to split (need >= 10 demos)")
    groups: dict = {}
    for demo in corpus.demonstrations:
        groups.setdefault((demo.scene_id, demo.goal.text), []).append(demo)
    keys = sorted(groups)
    rng = np.random.default_rng(seed)
    rng.shuffle(keys)
    n = len(corpus)
    n_test = round(test_fraction * n)
    test, rest = [], []
    for key in keys:
        bucket = test if len(test) < n_test else rest
        bucket.extend(groups[key])
    n_val = round(val_fraction * len(rest))
    val, train = rest[:n_val], rest[n_val:]
    return (
        Corpus(train, corpus.domain_tag, corpus.provenance + ["split:train"]),
        Corpus(val, corpus.domain_tag, corpus.provenance + ["split:val"]),
        Corpus(test, corpus.domain_tag, corpus.provenance + ["split:test"]),
    )


# ---------------------------------------------------------------------------
# Generalization strategies
# ---------------------------------------------------------------------------

STRATEGIES = ("position", "alternate", "unseen", "random", "goal")


@dataclass
class EvalScene:
    scene: WorldState
    goal: Goal
    goal_name: str
    source_id: str
    note: str = ""


def _tool_usage_by_goal(corpus: Corpus) -> dict:
    """goal_name -> {tool class token: action reference count}."""
    usage: dict = {}
    for demo in corpus.demonstrations:
        counts = usage.setdefault(demo.goal_name, {})
        tools = {
            o.id: o.class_token for o in demo.initial.objects if o.cls.is_tool
        }
        for action in demo.actions():
            for arg in (action.o1, action.o2):
                if arg in tools:
                    counts[tools[arg]] = counts.get(tools[arg], 0) + 1
    return usage


def _replace_instance(state: WorldState, old_id: str, new_token: str) -> tuple:
    """Swap an instance's class in place; returns (state, new_id)."""
    new_id = f"{new_token}_0"
    old = state.find(old_id)
    cls = domain.CLASSES[new_token]
    objects = [
        ObjectInstance(
            new_id,
            cls,
            frozenset(a for a in o.attributes if a in cls.attribute_schema),
            o.pose,
            o.size,
        )
        if o.id == old_id
        else o
        for o in state.objects
    ]
    relations = [
        RelationEdge(
            e.kind,
            new_id if e.src == old_id else e.src,
            new_id if e.dst == old_id else e.dst,
        )
        for e in state.relations
    ]
    robot = state.robot
    if robot.grabbed == old_id:
        robot = dc_replace(robot, grabbed=new_id)
    return WorldState.build(objects, relations, robot), new_id


def _remove_instance(state: WorldState, oid: str) -> WorldState:
    objects = [o for o in state.objects if o.id != oid]
    relations = [e for e in state.relations if oid not in (e.src, e.dst)]
    return WorldState.build(objects, relations, state.robot)


def make_generalization_set(
    corpus: Corpus,
    strategy: str,
    table: Optional[EmbeddingTable] = None,
    seed: int = 0,
    position_radius: float = 0.3,
) -> list:
    """Evaluation (scene, goal) pairs per the named strategy."""
    if strategy not in STRATEGIES:
        raise CorpusError(f"unknown strategy {strategy!r}; known: {STRATEGIES}")
    if table is None:
        table = retrofitted_table()
    usage = _tool_usage_by_goal(corpus)
    rng = np.random.default_rng(seed)
    out = []
    training_classes = {
        o.class_token for d in corpus.demonstrations for o in d.initial.objects
    }
    for demo in corpus.demonstrations:
        state, goal = demo.initial, demo.goal
        note = ""
        if strategy == "position":
            state = _jitter_state(state, rng, position_radius)
            movable = [
                o.id
                for o in state.objects
                if max(o.size) <= 0.7 and o.id not in goal.referenced_ids()
            ]
            if len(movable) >= 2:
                a, b = rng.choice(movable, size=2, replace=False)
                oa, ob = state.find(a), state.find(b)
                objects = []
                for o in state.objects:
                    if o.id == a:
                        objects.append(dc_replace(o, pose=ob.pose))
                    elif o.id == b:
                        objects.append(dc_replace(o, pose=oa.pose))
                    else:
                        objects.append(o)
                state = WorldState.build(objects, state.relations, state.robot)
                note = f"exchanged {a}<->{b}"
        elif strategy in ("alternate", "unseen", "random"):
            counts = usage.get(demo.goal_name, {})
            if not counts:
                continue
            top_tool = max(sorted(counts), key=lambda t: counts[t])
            instances = [o.id for o in state.objects if o.class_token == top_tool]
            if not instances:
                continue
            if strategy == "alternate":
                if not domain.RESERVE_CLASSES:
                    raise CorpusError("empty reserve pool")
                substitute = nearest_class(top_tool, domain.RESERVE_CLASSES, table)
                for oid in instances:
                    state, new_id = _replace_instance(state, oid, substitute)
                note = f"removed {top_tool}, added {substitute}"
            elif strategy == "unseen":
                pool = [t for t in domain.RESERVE_CLASSES if t not in training_classes]
                if not pool:
                    raise CorpusError("empty reserve pool for unseen strategy")
                substitute = nearest_class(top_tool, pool, table)
                state, _ = _replace_instance(state, instances[0], substitute)
                note = f"{top_tool} -> {substitute} (unseen)"
            else:
                substitute = str(
                    rng.choice([t for t in domain.RANDOM_REPLACEMENT_CLASSES])
                )
                state, _ = _replace_instance(state, instances[0], substitute)
                note = f"{top_tool} -> {substitute} (random)"
        elif strategy == "goal":
            pool = [t for t in domain.RESERVE_CLASSES if t not in training_classes]
            if not pool:
                raise CorpusError("empty reserve pool for goal strategy")
            movable_goal_ids = [
                oid
                for oid in goal.referenced_ids()
                if state.has_object(oid) and max(state.find(oid).size) <= 0.7
            ]
            if not movable_goal_ids:
                continue
            target = movable_goal_ids[int(rng.integers(len(movable_goal_ids)))]
            substitute = nearest_class(target.rsplit("_", 1)[0], pool, table)
            state, new_id = _replace_instance(state, target, substitute)
            constraints = tuple(
                Constraint(
                    c.predicate,
                    tuple(new_id if a == target else a for a in c.args),
                    c.value,
                )
                for c in goal.constraints
            )
            goal = Goal(constraints, goal.text + f" (with {substitute})")
            note = f"goal object {target} -> {new_id}"
        out.append(EvalScene(state, goal, demo.goal_name, demo.scene_id, note))
    return out
