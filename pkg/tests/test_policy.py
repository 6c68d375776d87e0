"""Policy network: naive-reference forward equivalence, structural
invariants, ablation flag semantics, persistence."""

import numpy as np
import pytest

from toolplan import domain, nn, sim
from toolplan.policy import (
    PolicyConfig,
    PolicyError,
    EmptySceneError,
    ToolPolicy,
    class_token_of,
    encode_action,
    interaction_onehot,
)
from toolplan.sim import ARITY, INTERACTION_TOKENS
from toolplan.world import (
    Action,
    RELATION_KINDS,
    RelationEdge,
    RobotState,
    WorldState,
    attribute_vector,
    build_scene_graph,
)

CFG = PolicyConfig(hidden=16, lstm_hidden=16, embed_dim=32)


def scene(seed=0):
    return domain.micro_home_scene(seed=seed)


def goal_for(name="store_milk"):
    return domain.make_goal(name)


def make_policy(seed=0, **kw):
    return ToolPolicy(PolicyConfig(hidden=16, lstm_hidden=16, **kw), seed=seed)


# ---------------------------------------------------------------------------
# Naive reference forward pass (pure numpy, per-object loops)
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _prelu(x, slope):
    return np.where(x > 0, x, slope * x)


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _mlp(p, name, n_hidden, x, slope):
    for k in range(n_hidden):
        x = _prelu(x @ p[f"{name}.{k}.W"].data.T + p[f"{name}.{k}.b"].data, slope)
    return x @ p[f"{name}.out.W"].data.T + p[f"{name}.out.b"].data


def naive_forward(policy, state, goal, history):
    """Independent re-derivation of the full forward pass."""
    p = policy.params
    cfg = policy.config
    slope = cfg.prelu_slope
    ids = sorted(o.id for o in state.objects)
    n = len(ids)
    graph = build_scene_graph(state)

    # node encodings, one object at a time
    r = np.zeros((n, cfg.hidden))
    for i, oid in enumerate(ids):
        o = state.find(oid)
        x = np.concatenate(
            [attribute_vector(o), policy.embeddings.embed(class_token_of(oid))]
        )
        r[i] = np.tanh(p["node.W"].data @ x + p["node.b"].data)

    for k in range(cfg.ggcn_steps):
        msg = np.zeros_like(r)
        for i, oid in enumerate(ids):
            for kind in RELATION_KINDS:
                for nbr in graph.neighbors[kind][oid]:
                    j = ids.index(nbr)
                    msg[i] += p[f"ggcn.msg.{k}.{kind}"].data @ r[j]
        nxt = np.zeros_like(r)
        for i in range(n):
            g = lambda key: p["ggcn.gru." + key].data
            z = _sigmoid(g("wz") @ msg[i] + g("bz") + g("uz") @ r[i])
            rr = _sigmoid(g("wr") @ msg[i] + g("br") + g("ur") @ r[i])
            h_t = np.tanh(g("wh") @ msg[i] + g("bh") + g("uh") @ (rr * r[i]))
            nxt[i] = (1 - z) * r[i] + z * h_t
        r = nxt

    m = np.zeros((n, cfg.hidden))
    for i, oid in enumerate(ids):
        o = state.find(oid)
        x = np.array(
            list(domain.normalize_pose(o.pose)) + list(domain.normalize_size(o.size))
        )
        for k in range(cfg.metric_layers):
            x = _prelu(
                p[f"metric.{k}.W"].data @ x + p[f"metric.{k}.b"].data, slope
            )
        m[i] = x
    fused = np.concatenate([r, m], axis=1)

    h = np.zeros(cfg.lstm_hidden)
    c = np.zeros(cfg.lstm_hidden)
    for action in history:
        x = encode_action(action, policy.embeddings)
        g = lambda key: p["hist." + key].data
        i_g = _sigmoid(g("wi") @ x + g("bi") + g("ui") @ h)
        f_g = _sigmoid(g("wf") @ x + g("bf") + g("uf") @ h)
        o_g = _sigmoid(g("wo") @ x + g("bo") + g("uo") @ h)
        c_t = np.tanh(g("wc") @ x + g("bc") + g("uc") @ h)
        c = f_g * c + i_g * c_t
        h = o_g * np.tanh(c)
    eta = h

    rel_tokens = goal.relation_tokens()
    obj_tokens = [class_token_of(oid) for oid in goal.object_ids()]
    q = cfg.embed_dim
    g_rel = (
        np.mean([policy.embeddings.embed(t) for t in rel_tokens], axis=0)
        if rel_tokens
        else np.zeros(q)
    )
    g_obj = (
        np.mean([policy.embeddings.embed(t) for t in obj_tokens], axis=0)
        if obj_tokens
        else np.zeros(q)
    )

    logits = np.array(
        [
            _mlp(p, "attn", 1, np.concatenate([fused[i], g_obj, eta]), slope)[0]
            for i in range(n)
        ]
    )
    eps = _softmax(logits)
    omega = eps @ fused

    ctx = np.concatenate([omega, g_rel, eta])
    probs_I = _softmax(_mlp(p, "head_I", 2, ctx, slope))
    token = INTERACTION_TOKENS[int(np.argmax(probs_I))]
    i_hot = interaction_onehot(token)
    e_rows = np.array(
        [policy.embeddings.embed(class_token_of(oid)) for oid in ids]
    )
    alpha = np.array(
        [
            _sigmoid(
                _mlp(
                    p, "head_o1", 3,
                    np.concatenate([ctx, e_rows[i], i_hot]), slope,
                )[0]
            )
            for i in range(n)
        ]
    )
    beta = np.array(
        [
            _sigmoid(
                _mlp(
                    p, "head_o2", 3,
                    np.concatenate([ctx, e_rows[i], i_hot, alpha[i : i + 1]]),
                    slope,
                )[0]
            )
            for i in range(n)
        ]
    )
    o1 = ids[int(np.argmax(alpha))]
    o2 = ids[int(np.argmax(beta))] if ARITY[token] == 2 else None
    return {
        "eps": eps,
        "omega": omega,
        "probs_I": probs_I,
        "alpha": alpha,
        "beta": beta,
        "action": Action(token, o1, o2),
    }


HISTORIES = [
    [],
    [Action("MoveTo", "fridge_0")],
    [Action("MoveTo", "fridge_0"), Action("Open", "fridge_0")],
    [Action("Pick", "milk_0"), Action("Drop", "milk_0", "fridge_0")],
]


class TestNaiveReferenceEquivalence:
    def test_fifty_random_instances(self):
        """Full pipeline matches the per-object naive reference to 1e-12."""
        goals = sorted(domain.GOALS)
        for trial in range(50):
            policy = make_policy(seed=trial)
            s = scene(seed=trial % 7)
            goal = goal_for(goals[trial % len(goals)])
            history = HISTORIES[trial % len(HISTORIES)]
            ref = naive_forward(policy, s, goal, history)
            enc = policy.encode(s, goal, history)
            dec = policy.decode(enc)
            assert np.allclose(enc["eps"].data, ref["eps"], atol=1e-12)
            assert np.allclose(enc["omega"].data, ref["omega"], atol=1e-12)
            assert np.allclose(dec["probs_I"].data, ref["probs_I"], atol=1e-12)
            assert np.allclose(dec["alpha"].data, ref["alpha"], atol=1e-12)
            assert np.allclose(dec["beta"].data, ref["beta"], atol=1e-12)
            assert policy.predict(s, goal, history) == ref["action"]


class TestStructuralInvariants:
    def test_attention_sums_to_one(self):
        for seed in range(50):
            policy = make_policy(seed=seed % 3)
            enc = policy.encode(scene(seed=seed), goal_for(), [])
            assert abs(enc["eps"].data.sum() - 1.0) <= 1e-9

    def test_outputs_always_grammar_valid(self):
        for seed in range(40):
            policy = make_policy(seed=seed)
            s = scene(seed=seed % 5)
            action = policy.predict(s, goal_for(), [])
            assert action.interaction in ARITY
            assert (action.o2 is None) == (ARITY[action.interaction] == 1)
            assert s.has_object(action.o1)

    def test_permutation_equivariance(self):
        """Relabeling instance indices permutes the prediction identically."""
        for trial in range(20):
            policy = make_policy(seed=trial)
            s = scene(seed=trial)
            mapping = {o.id: f"{o.class_token}_{i + 40}"
                       for i, o in enumerate(reversed(s.objects))}
            relabeled = permute_state(s, mapping)
            goal = goal_for()
            goal2 = permute_goal(goal, mapping)
            a = policy.predict(s, goal, [])
            b = policy.predict(relabeled, goal2, [])
            assert b.interaction == a.interaction
            assert b.o1 == mapping[a.o1]
            assert (b.o2 is None) == (a.o2 is None)
            if a.o2 is not None:
                assert b.o2 == mapping[a.o2]

    def test_empty_scene_rejected(self):
        policy = make_policy()
        empty = WorldState.build(objects=(), robot=RobotState())
        with pytest.raises(EmptySceneError):
            policy.predict(empty, goal_for(), [])


def permute_state(state, mapping):
    from dataclasses import replace

    objects = [replace(o, id=mapping[o.id]) for o in state.objects]
    relations = [
        RelationEdge(e.kind, mapping[e.src], mapping[e.dst])
        for e in state.relations
    ]
    robot = state.robot
    if robot.grabbed is not None:
        robot = RobotState(robot.position, robot.level, mapping[robot.grabbed])
    return WorldState.build(objects=objects, relations=relations, robot=robot)


def permute_goal(goal, mapping):
    from toolplan.world import Constraint, Goal

    constraints = tuple(
        Constraint(
            c.predicate, tuple(mapping.get(a, a) for a in c.args), c.value
        )
        for c in goal.constraints
    )
    return Goal(constraints=constraints, text=goal.text)


class TestFlagSemantics:
    def test_no_history_ignores_history(self):
        policy = make_policy(no_history=True)
        s = scene()
        a = policy.predict(s, goal_for(), [])
        b = policy.predict(s, goal_for(), HISTORIES[2])
        assert a == b

    def test_history_matters_without_flag(self):
        policy = make_policy()
        s = scene()
        enc_a = policy.encode(s, goal_for(), [])
        enc_b = policy.encode(s, goal_for(), HISTORIES[2])
        assert not np.allclose(enc_a["eta"].data, enc_b["eta"].data)

    def test_no_attention_is_uniform_mean(self):
        policy = make_policy(no_attention=True)
        enc = policy.encode(scene(), goal_for(), [])
        n = len(enc["ids"])
        assert np.allclose(enc["eps"].data, np.full(n, 1.0 / n))
        assert np.allclose(enc["omega"].data, enc["fused"].data.mean(axis=0))

    def test_no_ggcn_skips_message_passing(self):
        """Without message passing, encodings ignore relation edges."""
        policy = make_policy(no_ggcn=True)
        s = scene()
        stripped = WorldState.build(
            objects=s.objects, relations=(), robot=s.robot
        )
        a = policy.ggcn_encode(s)[1].data
        b = policy.ggcn_encode(stripped)[1].data
        assert np.array_equal(a, b)
        full = make_policy(no_ggcn=False)
        assert not np.allclose(
            full.ggcn_encode(s)[1].data, full.ggcn_encode(stripped)[1].data
        )

    def test_base_embeddings_flag_changes_table(self):
        a = make_policy(base_embeddings=True)
        b = make_policy()
        assert a.embeddings.provenance == "base"
        assert b.embeddings.provenance == "retrofitted"

    def test_fixed_object_decoder_runs(self):
        policy = make_policy(fixed_object_decoder=True)
        action = policy.predict(scene(), goal_for(), [])
        assert action.interaction in ARITY

    def test_deterministic_prediction(self):
        policy = make_policy()
        s, g = scene(), goal_for()
        assert policy.predict(s, g, []) == policy.predict(s, g, [])


class TestLoss:
    def test_loss_is_finite_scalar(self):
        policy = make_policy()
        s = scene()
        loss = policy.loss(s, goal_for(), [], Action("MoveTo", "fridge_0"))
        assert np.isfinite(loss.item())

    def test_missing_object_rejected(self):
        policy = make_policy()
        with pytest.raises(PolicyError):
            policy.loss(scene(), goal_for(), [], Action("Pick", "ghost_0"))

    def test_end_to_end_gradients(self):
        """Finite differences through the whole network on a tiny scene;
        acceptance bound 1e-4."""
        small = domain.micro_home_scene(seed=0)
        keep = {"milk_0", "fridge_0", "floor_0"}
        objects = [o for o in small.objects if o.id in keep]
        relations = [
            e for e in small.relations if e.src in keep and e.dst in keep
        ]
        s = WorldState.build(objects=objects, relations=relations, robot=small.robot)
        policy = ToolPolicy(
            PolicyConfig(hidden=4, lstm_hidden=4, embed_dim=32), seed=1
        )
        subset = [
            policy.params[k]
            for k in ("node.b", "ggcn.gru.bz", "metric.1.b", "attn.out.b",
                      "head_I.out.b", "head_o1.out.b", "head_o2.out.b")
        ]

        def comp():
            return policy.loss(
                s, goal_for(), HISTORIES[1], Action("Pick", "milk_0")
            )

        assert nn.grad_check(comp, subset) < 1e-4


class TestPersistence:
    def test_checkpoint_round_trip_preserves_predictions(self, tmp_path):
        policy = make_policy(seed=3)
        path = tmp_path / "p.ckpt"
        policy.save(path)
        back = ToolPolicy.load(path)
        s, g = scene(seed=2), goal_for("store_fruit")
        assert back.predict(s, g, []) == policy.predict(s, g, [])
        assert back.config == policy.config

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        make_policy(seed=5).save(a)
        make_policy(seed=5).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_override_embedding_changes_predictions_only_softly(self):
        policy = make_policy(seed=1)
        before = policy.embeddings.embed("box").copy()
        policy.override_embedding("box", np.zeros(32))
        assert not np.array_equal(policy.embeddings.embed("box"), before)


class TestConstrainedPrediction:
    def test_constrained_action_is_always_applicable(self):
        from toolplan.corpus import DETERMINISTIC

        policy = make_policy()
        pol = policy.as_constrained_policy(DETERMINISTIC)
        s = scene()
        action = pol(s, goal_for(), [])
        ok, why = sim.applicable(s, action, DETERMINISTIC)
        assert ok, why

    def test_candidate_with_best_joint_score_wins(self):
        from toolplan.corpus import DETERMINISTIC

        policy = make_policy()
        s = scene()
        candidates = [Action("MoveTo", oid) for oid in s.object_ids()]
        chosen = policy.predict_constrained(s, goal_for(), [], candidates)
        # independent re-score: unary joint log-prob per candidate
        def score(a):
            enc = policy.encode(s, goal_for(), [])
            dec = policy.decode(enc, teacher_interaction=a.interaction,
                                teacher_o1=a.o1)
            i = INTERACTION_TOKENS.index(a.interaction)
            return (np.log(dec["probs_I"].data[i] + 1e-12)
                    + np.log(dec["alpha"].data[dec["ids"].index(a.o1)] + 1e-12))

        best = max(candidates, key=score)
        assert chosen == best

    def test_empty_candidate_pool_rejected(self):
        policy = make_policy()
        with pytest.raises(PolicyError, match="candidate"):
            policy.predict_constrained(scene(), goal_for(), [], [])


class TestActionEncoding:
    def test_layout(self):
        table = make_policy().embeddings
        v = encode_action(Action("Pick", "milk_0"), table)
        n_i = len(INTERACTION_TOKENS)
        assert v.shape == (n_i + 2 * table.dim,)
        assert v[: n_i].sum() == 1.0
        assert not v[n_i + table.dim :].any()  # no o2 -> zero block

    def test_binary_interaction_block(self):
        table = make_policy().embeddings
        v = encode_action(Action("Drop", "milk_0", "fridge_0"), table)
        n_i = len(INTERACTION_TOKENS)
        assert v[INTERACTION_TOKENS.index("Drop")] == 1.0
        assert v[n_i + table.dim :].any()
