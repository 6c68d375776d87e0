"""Simulator: preconditions, effects, stochastic error model, episodes."""

import json

import numpy as np
import pytest

from toolplan import domain, sim
from toolplan.corpus import DETERMINISTIC, expert_policy
from toolplan.sim import (
    ARITY,
    INTERACTIONS,
    SimConfig,
    applicable,
    apply,
    blocked_radius,
    force_drop,
    reachable,
    run_episode,
)
from toolplan.world import Action, goal_satisfied


def scene(seed=0):
    return domain.micro_home_scene(seed=seed)


def find(state, token):
    return next(o.id for o in state.objects if o.class_token == token)


def run_expert(goal_name, seed=0, cfg=DETERMINISTIC):
    s = domain.scene_for_goal(goal_name, seed=seed)
    goal = domain.make_goal(goal_name)
    policy = expert_policy(goal_name, cfg)
    return run_episode(policy, s, goal, cfg, rng=np.random.default_rng(seed))


class TestGrammar:
    def test_thirteen_interactions(self):
        assert len(INTERACTIONS) == 13
        assert set(ARITY.values()) <= {1, 2}

    def test_arity_table(self):
        assert ARITY["MoveTo"] == 1
        assert ARITY["Drop"] == 2
        assert ARITY["Push"] == 2
        assert ARITY["Apply"] == 2
        assert ARITY["Stick"] == 2

    def test_unknown_interaction_rejected(self):
        with pytest.raises(sim.UnknownInteractionError):
            applicable(scene(), Action("Teleport", "milk_0"), DETERMINISTIC)


class TestApplicability:
    def test_moveto_always_applicable_on_floor(self):
        s = scene()
        ok, _ = applicable(s, Action("MoveTo", find(s, "table")), DETERMINISTIC)
        assert ok

    def test_pick_inside_closed_fridge_names_violation(self):
        """Storing first, then trying to pick without opening."""
        trace = run_expert("store_milk")
        final = trace.final
        ok, violation = applicable(
            final, Action("Pick", find(final, "milk")), DETERMINISTIC
        )
        assert not ok
        assert violation == "container-closed"

    def test_pick_out_of_reach(self):
        s = scene()
        milk = find(s, "milk")
        ok, violation = applicable(s, Action("Pick", milk), DETERMINISTIC)
        if not ok:
            assert violation in ("not-reachable", "hand-occupied")

    def test_exhaustive_pick_oracle(self):
        """Applicability of Pick matches a hand-rolled precondition scan."""
        s = scene(seed=9)
        cfg = DETERMINISTIC
        for o in s.objects:
            ok, _ = applicable(s, Action("Pick", o.id), cfg)
            container = next(
                (e.dst for e in s.relations if e.kind == "Inside" and e.src == o.id),
                None,
            )
            closed_in = (
                container is not None
                and "openable" in s.find(container).cls.tags
                and "open" not in s.find(container).attributes
            )
            expected = (
                s.robot.grabbed is None
                and o.class_token not in sim.UNGRABBABLE_CLASSES
                and "grabbed" in o.cls.attribute_schema
                and max(o.size) <= sim.GRASPABLE_BOUND
                and reachable(s, o.id, cfg)
                and not closed_in
            )
            assert ok == expected, o.id


class TestEffects:
    def test_open_fridge(self):
        s = scene()
        fridge = find(s, "fridge")
        s2, _ = apply(s, Action("MoveTo", fridge), DETERMINISTIC, np.random.default_rng(0))
        s3, ev = apply(s2, Action("Open", fridge), DETERMINISTIC, np.random.default_rng(0))
        assert ev.outcome == "applied"
        assert "open" in s3.find(fridge).attributes

    def test_drop_into_open_fridge_adds_inside_edge(self):
        s = scene()
        rng = np.random.default_rng(0)
        fridge, milk = find(s, "fridge"), find(s, "milk")
        for a in (
            Action("MoveTo", fridge),
            Action("Open", fridge),
            Action("MoveTo", milk),
            Action("Pick", milk),
            Action("MoveTo", fridge),
            Action("Drop", milk, fridge),
        ):
            s, ev = apply(s, a, DETERMINISTIC, rng)
            assert ev.outcome == "applied", (a, ev.violation)
        assert any(
            e.kind == "Inside" and e.src == milk and e.dst == fridge
            for e in s.relations
        )
        assert s.robot.grabbed is None

    def test_rejected_leaves_state_unchanged(self):
        s = scene()
        s2, ev = apply(
            s, Action("Pick", find(s, "shelf")), DETERMINISTIC, np.random.default_rng(0)
        )
        assert ev.outcome == "rejected"
        assert s2 == s


class TestStochasticModel:
    def test_forced_drop_probability(self):
        """p_drop=1: every apply while holding ends with the object on the
        floor (100 seeded trials)."""
        cfg = SimConfig(p_drop=1.0, p_fail=0.0)
        base = scene()
        rng0 = np.random.default_rng(0)
        milk = find(base, "milk")
        s, _ = apply(base, Action("MoveTo", milk), cfg, rng0)
        for trial in range(100):
            rng = np.random.default_rng(trial)
            s2, ev = apply(s, Action("Pick", milk), cfg, rng)
            assert ev.outcome == "drop-perturbation"
            assert s2.robot.grabbed is None
            floor = find(s2, "floor")
            assert any(
                e.kind == "OnTop" and e.src == milk and e.dst == floor
                for e in s2.relations
            )

    def test_forced_noop_probability(self):
        cfg = SimConfig(p_fail=1.0, p_drop=0.0)
        s = scene()
        s2, ev = apply(
            s, Action("MoveTo", find(s, "table")), cfg, np.random.default_rng(1)
        )
        assert ev.outcome == "no-op-failure"
        assert s2 == s

    def test_deterministic_replay_byte_identical(self):
        a = run_expert("store_fruit", seed=3, cfg=SimConfig(seed=3))
        b = run_expert("store_fruit", seed=3, cfg=SimConfig(seed=3))
        assert a.to_json() == b.to_json()

    def test_force_drop_noop_when_hand_free(self):
        s = scene()
        assert force_drop(s) == s


class TestReachability:
    def test_zero_distance_reachable(self):
        s = scene()
        robot_xy = s.robot.position
        nearest = min(
            (o for o in s.objects if o.pose[2] < 0.5),
            key=lambda o: (o.pose[0] - robot_xy[0]) ** 2 + (o.pose[1] - robot_xy[1]) ** 2,
        )
        s2, _ = apply(s, Action("MoveTo", nearest.id), DETERMINISTIC, np.random.default_rng(0))
        assert reachable(s2, nearest.id, DETERMINISTIC)

    def test_elevated_target_needs_climb_aid(self):
        s = domain.scene_for_goal("light_on", seed=0)
        light = find(s, "light")
        stool = find(s, "stool")
        rng = np.random.default_rng(0)
        s, _ = apply(s, Action("MoveTo", stool), DETERMINISTIC, rng)
        assert not reachable(s, light, DETERMINISTIC)
        s, ev = apply(s, Action("ClimbUp", stool), DETERMINISTIC, rng)
        assert ev.outcome == "applied"
        assert reachable(s, light, DETERMINISTIC)

    def test_geometry_oracle(self):
        """Reachability equals a brute-force planar-distance check."""
        cfg = DETERMINISTIC
        for seed in range(5):
            s = scene(seed=seed)
            limit = cfg.reach_radius
            rx, ry = s.robot.position
            for o in s.objects:
                d = ((o.pose[0] - rx) ** 2 + (o.pose[1] - ry) ** 2) ** 0.5
                level = 1 if o.pose[2] >= 0.75 else 0
                expected = d <= limit and level <= s.robot.level
                assert reachable(s, o.id, cfg) == expected, o.id


class TestEpisodes:
    def test_expert_reaches_every_goal(self):
        for goal_name in domain.GOALS:
            trace = run_expert(goal_name)
            assert trace.success, goal_name
            assert trace.steps <= 50

    def test_trace_success_implies_goal(self):
        trace = run_expert("fetch_toy")
        assert goal_satisfied(trace.final, trace.goal)

    def test_satisfied_goal_short_circuits(self):
        trace = run_expert("store_milk")
        again = run_episode(
            expert_policy("store_milk"),
            trace.final,
            trace.goal,
            DETERMINISTIC,
            rng=np.random.default_rng(0),
        )
        assert again.success and again.steps == 0

    def test_step_cap_respected(self):
        def stubborn(state, goal, history):
            return Action("MoveTo", find(state, "table"))

        trace = run_episode(
            stubborn,
            scene(),
            domain.make_goal("store_milk"),
            DETERMINISTIC,
            rng=np.random.default_rng(0),
        )
        assert not trace.success
        assert trace.steps == 50

    def test_trace_json_schema(self):
        record = json.loads(run_expert("store_milk").to_json())
        assert record["schema"] == "trace-v1"
        assert record["success"] is True

    def test_stick_extends_reach_for_fetch(self):
        """The toy under the couch is out of bare reach; the expert plan
        must include a Stick-mediated Push."""
        s = domain.scene_for_goal("fetch_toy", seed=0)
        toy = find(s, "toy")
        assert blocked_radius(s, toy) > DETERMINISTIC.reach_radius
        trace = run_expert("fetch_toy")
        assert any(e.action.interaction == "Push" for e in trace.events)
        assert trace.success


class TestInvariantPreservation:
    def test_ten_thousand_random_applicable_actions(self):
        """Property test: applying any applicable action never yields a
        state violating WorldState invariants."""
        rng = np.random.default_rng(1234)
        cfg = SimConfig(seed=77, p_fail=0.05, p_drop=0.05)
        states = [scene(seed=i) for i in range(4)]
        applied = 0
        while applied < 10_000:
            s = states[rng.integers(len(states))]
            ids = s.object_ids()
            interaction = INTERACTIONS[rng.integers(len(INTERACTIONS))].token
            o1 = ids[rng.integers(len(ids))]
            o2 = ids[rng.integers(len(ids))] if ARITY[interaction] == 2 else None
            action = Action(interaction, o1, o2)
            ok, _ = applicable(s, action, cfg)
            if not ok:
                continue
            s2, _ = apply(s, action, cfg, rng)
            s2.validate()  # raises on violation
            states[rng.integers(len(states))] = s2
            applied += 1
        assert applied == 10_000
