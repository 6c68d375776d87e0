"""Goal-conditioned neural policy over symbolic scenes.

Pipeline: gated graph convolution over the scene graph (per-relation
message matrices + a shared GRU node update), a PReLU metric encoder,
an LSTM over the action history, goal-conditioned softmax attention
producing an attended scene vector, and a factored autoregressive
decoder (interaction head, then per-object likelihood heads) with the
grammar constraint dropping the second argument for unary interactions.

Every ablation from the evaluation suite is a configuration flag.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .embeddings import EmbeddingTable, base_table, retrofitted_table
from .sim import ARITY, INTERACTION_TOKENS
from .world import (
    Action,
    Goal,
    WorldState,
    ATTRIBUTE_VOCABULARY,
    RELATION_KINDS,
    attribute_vector,
    build_scene_graph,
)
from .domain import normalize_pose, normalize_size


class PolicyError(Exception):
    pass


class EmptySceneError(PolicyError):
    pass


@dataclass
class PolicyConfig:
    hidden: int = 128
    ggcn_steps: int = 2
    metric_layers: int = 2
    embed_dim: int = 32
    lstm_hidden: int = 128
    max_slots: int = 24
    prelu_slope: float = 0.25
    no_ggcn: bool = False
    no_metric: bool = False
    no_attention: bool = False
    no_history: bool = False
    base_embeddings: bool = False
    fixed_object_decoder: bool = False

    def __post_init__(self):
        for name in ("hidden", "ggcn_steps", "metric_layers", "embed_dim", "lstm_hidden"):
            if getattr(self, name) < 1:
                raise PolicyError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "PolicyConfig":
        return PolicyConfig(**d)

    @property
    def fused_dim(self) -> int:
        return self.hidden + (0 if self.no_metric else self.hidden)


def class_token_of(object_id: str) -> str:
    return object_id.rsplit("_", 1)[0]


def interaction_onehot(token: str) -> np.ndarray:
    vec = np.zeros(len(INTERACTION_TOKENS))
    vec[INTERACTION_TOKENS.index(token)] = 1.0
    return vec


def encode_action(action: Action, table: EmbeddingTable) -> np.ndarray:
    """[interaction one-hot; embedding of o1's class; embedding of o2's
    class or zeros]; independent of the current object set."""
    q = table.dim
    parts = [interaction_onehot(action.interaction)]
    parts.append(table.embed(class_token_of(action.o1)))
    parts.append(table.embed(class_token_of(action.o2)) if action.o2 else np.zeros(q))
    return np.concatenate(parts)


class ToolPolicy:
    """The trainable policy.  Parameters live in a flat name->Tensor dict."""

    def __init__(
        self,
        config: PolicyConfig,
        seed: int = 0,
        embeddings: Optional[EmbeddingTable] = None,
    ):
        self.config = config
        if embeddings is None:
            embeddings = (
                base_table(config.embed_dim)
                if config.base_embeddings
                else retrofitted_table(config.embed_dim)
            )
        if embeddings.dim != config.embed_dim:
            raise PolicyError(
                f"embedding dim {embeddings.dim} != config embed_dim {config.embed_dim}"
            )
        self.embeddings = embeddings
        self.params: dict = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameters ------------------------------------------------------

    def _add(self, rng, name, shape, fan_in=None):
        self.params[name] = nn.make_param(rng, shape, name, fan_in)

    def _add_mlp(self, rng, name, in_dim, hidden_dims, out_dim):
        d = in_dim
        for k, h in enumerate(hidden_dims):
            self._add(rng, f"{name}.{k}.W", (h, d), d)
            self._add(rng, f"{name}.{k}.b", (h,))
            d = h
        self._add(rng, f"{name}.out.W", (out_dim, d), d)
        self._add(rng, f"{name}.out.b", (out_dim,))

    def _mlp(self, x, name, n_hidden):
        """PReLU hidden layers, linear output."""
        for k in range(n_hidden):
            x = nn.linear(
                x, self.params[f"{name}.{k}.W"], self.params[f"{name}.{k}.b"]
            ).prelu(self.config.prelu_slope)
        return nn.linear(
            x, self.params[f"{name}.out.W"], self.params[f"{name}.out.b"]
        )

    def _init_params(self, rng) -> None:
        c = self.config
        H, q, L = c.hidden, c.embed_dim, c.lstm_hidden
        p = len(ATTRIBUTE_VOCABULARY)
        n_inter = len(INTERACTION_TOKENS)
        self._add(rng, "node.W", (H, p + q), p + q)
        self._add(rng, "node.b", (H,))
        for k in range(c.ggcn_steps):
            for kind in RELATION_KINDS:
                self._add(rng, f"ggcn.msg.{k}.{kind}", (H, H), H)
        for gate in ("wz", "wr", "wh"):
            self._add(rng, f"ggcn.gru.{gate}", (H, H), H)
        for gate in ("uz", "ur", "uh"):
            self._add(rng, f"ggcn.gru.{gate}", (H, H), H)
        for gate in ("bz", "br", "bh"):
            self._add(rng, f"ggcn.gru.{gate}", (H,))
        self._add(rng, "metric.0.W", (H, 7), 7)
        self._add(rng, "metric.0.b", (H,))
        for k in range(1, c.metric_layers):
            self._add(rng, f"metric.{k}.W", (H, H), H)
            self._add(rng, f"metric.{k}.b", (H,))
        a_dim = n_inter + 2 * q
        for gate in ("wi", "wf", "wo", "wc"):
            self._add(rng, f"hist.{gate}", (L, a_dim), a_dim)
        for gate in ("ui", "uf", "uo", "uc"):
            self._add(rng, f"hist.{gate}", (L, L), L)
        for gate in ("bi", "bf", "bo", "bc"):
            self._add(rng, f"hist.{gate}", (L,))
        S = c.fused_dim
        self._add_mlp(rng, "attn", S + q + L, (H,), 1)
        ctx = S + q + L
        self._add_mlp(rng, "head_I", ctx, (H, H), n_inter)
        if c.fixed_object_decoder:
            self._add(rng, "head_slot1.W", (c.max_slots, ctx + n_inter), ctx + n_inter)
            self._add(rng, "head_slot1.b", (c.max_slots,))
            self._add(
                rng,
                "head_slot2.W",
                (c.max_slots, ctx + n_inter + c.max_slots),
                ctx + n_inter + c.max_slots,
            )
            self._add(rng, "head_slot2.b", (c.max_slots,))
        else:
            o1_dim = ctx + q + n_inter
            self._add_mlp(rng, "head_o1", o1_dim, (H, H, H), 1)
            self._add_mlp(rng, "head_o2", o1_dim + 1, (H, H, H), 1)

    def parameters(self) -> list:
        return [self.params[k] for k in sorted(self.params)]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def override_embedding(self, token: str, vec: np.ndarray) -> None:
        """Swap one token's embedding (generalization control runs)."""
        self.embeddings = self.embeddings.with_entry(token, vec)

    # -- encoders --------------------------------------------------------

    def node_features(self, state: WorldState):
        ids = sorted(o.id for o in state.objects)
        if not ids:
            raise EmptySceneError("empty scene")
        l_rows = np.array([attribute_vector(state.find(i)) for i in ids])
        e_rows = np.array([self.embeddings.embed(class_token_of(i)) for i in ids])
        return ids, l_rows, e_rows

    def ggcn_encode(self, state: WorldState):
        """Per-object semantic encodings r_o after message passing."""
        ids, l_rows, e_rows = self.node_features(state)
        graph = build_scene_graph(state)
        x0 = nn.constant(np.concatenate([l_rows, e_rows], axis=1))
        r = nn.linear(x0, self.params["node.W"], self.params["node.b"]).tanh()
        if self.config.no_ggcn:
            return ids, r, e_rows
        index = {oid: i for i, oid in enumerate(ids)}
        adj = {}
        for kind in RELATION_KINDS:
            A = np.zeros((len(ids), len(ids)))
            for oid in ids:
                for nbr in graph.neighbors[kind][oid]:
                    A[index[oid], index[nbr]] = 1.0
            adj[kind] = nn.constant(A)
        for k in range(self.config.ggcn_steps):
            msg = None
            for kind in RELATION_KINDS:
                part = adj[kind] @ (r @ self.params[f"ggcn.msg.{k}.{kind}"].transpose())
                msg = part if msg is None else msg + part
            r = nn.gru_step(r, msg, self.params, prefix="ggcn.gru.")
        return ids, r, e_rows

    def metric_encode(self, state: WorldState, ids: Sequence[str]):
        rows = []
        for oid in ids:
            o = state.find(oid)
            rows.append(list(normalize_pose(o.pose)) + list(normalize_size(o.size)))
        m = nn.constant(np.array(rows))
        slope = self.config.prelu_slope
        for k in range(self.config.metric_layers):
            m = nn.linear(m, self.params[f"metric.{k}.W"], self.params[f"metric.{k}.b"]).prelu(slope)
        return m

    def history_encode(self, history: Sequence[Action]):
        L = self.config.lstm_hidden
        h = nn.constant(np.zeros(L))
        if self.config.no_history:
            return h
        c = nn.constant(np.zeros(L))
        for action in history:
            x = nn.constant(encode_action(action, self.embeddings))
            h, c = nn.lstm_step(h, c, x, self.params, prefix="hist.")
        return h

    def goal_encode(self, goal: Goal):
        """Mean embeddings of the goal's predicate tokens and of the goal
        objects' class tokens; empty partitions give zero vectors."""
        q = self.config.embed_dim
        rel_tokens = goal.relation_tokens()
        obj_tokens = [class_token_of(oid) for oid in goal.object_ids()]
        g_rel = (
            np.mean([self.embeddings.embed(t) for t in rel_tokens], axis=0)
            if rel_tokens
            else np.zeros(q)
        )
        g_obj = (
            np.mean([self.embeddings.embed(t) for t in obj_tokens], axis=0)
            if obj_tokens
            else np.zeros(q)
        )
        return nn.constant(g_rel), nn.constant(g_obj)

    def attend(self, fused, g_obj, eta, n_objects: int):
        """Goal-conditioned softmax over objects -> attended scene vector."""
        if n_objects < 1:
            raise EmptySceneError("empty scene")
        if self.config.no_attention:
            eps = nn.constant(np.full(n_objects, 1.0 / n_objects))
            omega = eps @ fused
            return omega, eps
        feats = nn.concat(
            [fused, g_obj.repeat_rows(n_objects), eta.repeat_rows(n_objects)], axis=1
        )
        logits = self._mlp(feats, "attn", 1).flatten()
        eps = logits.softmax()
        omega = eps @ fused
        return omega, eps

    def encode(self, state: WorldState, goal: Goal, history: Sequence[Action]):
        ids, r, e_rows = self.ggcn_encode(state)
        if self.config.no_metric:
            fused = r
        else:
            fused = nn.concat([r, self.metric_encode(state, ids)], axis=1)
        eta = self.history_encode(history)
        g_rel, g_obj = self.goal_encode(goal)
        omega, eps = self.attend(fused, g_obj, eta, len(ids))
        return {
            "ids": ids,
            "fused": fused,
            "e_rows": e_rows,
            "eta": eta,
            "g_rel": g_rel,
            "g_obj": g_obj,
            "omega": omega,
            "eps": eps,
        }

    # -- decoder ---------------------------------------------------------

    def decode(self, enc: dict, teacher_interaction: Optional[str] = None,
               teacher_o1: Optional[str] = None):
        """Autoregressive heads.  With teacher_* given (training), the
        interaction one-hot and o1 indicator fed downstream are the
        demonstrated ones; otherwise the predicted ones."""
        ids = enc["ids"]
        n = len(ids)
        ctx = nn.concat([enc["omega"], enc["g_rel"], enc["eta"]])
        probs_I = self._mlp(ctx, "head_I", 2).softmax()
        pred_idx = int(np.argmax(probs_I.data))
        pred_token = INTERACTION_TOKENS[pred_idx]
        feed_token = teacher_interaction if teacher_interaction is not None else pred_token
        i_hot = nn.constant(interaction_onehot(feed_token))

        if self.config.fixed_object_decoder:
            if n > self.config.max_slots:
                raise PolicyError(
                    f"scene has {n} objects but fixed decoder supports {self.config.max_slots}"
                )
            flat = nn.concat([ctx, i_hot])
            alpha_full = nn.linear(
                flat, self.params["head_slot1.W"], self.params["head_slot1.b"]
            ).sigmoid()
            if teacher_o1 is not None:
                feed = np.zeros(self.config.max_slots)
                feed[ids.index(teacher_o1)] = 1.0
                alpha_feed = nn.constant(feed)
            else:
                alpha_feed = alpha_full
            beta_full = nn.linear(
                nn.concat([ctx, i_hot, alpha_feed]),
                self.params["head_slot2.W"],
                self.params["head_slot2.b"],
            ).sigmoid()
            alpha_scores = alpha_full
            beta_scores = beta_full
            alpha_vec = alpha_full.data[:n]
            beta_vec = beta_full.data[:n]
        else:
            # per-object rows [Omega; g_rel; eta; e_o; I_hot]; shared weights
            e_const = nn.constant(enc["e_rows"])
            rows = nn.concat([ctx.repeat_rows(n), e_const, i_hot.repeat_rows(n)], axis=1)
            alpha_scores = self._mlp(rows, "head_o1", 3).sigmoid().flatten()
            if teacher_o1 is not None:
                feed = np.zeros(n)
                feed[ids.index(teacher_o1)] = 1.0
                alpha_feed = nn.constant(feed)
            else:
                alpha_feed = alpha_scores
            rows2 = nn.concat([rows, alpha_feed.reshape(-1, 1)], axis=1)
            beta_scores = self._mlp(rows2, "head_o2", 3).sigmoid().flatten()
            alpha_vec = alpha_scores.data
            beta_vec = beta_scores.data

        o1 = ids[int(np.argmax(alpha_vec))]
        o2 = ids[int(np.argmax(beta_vec))] if ARITY[pred_token] == 2 else None
        return {
            "probs_I": probs_I,
            "alpha": alpha_scores,
            "beta": beta_scores,
            "pred_interaction": pred_token,
            "pred_o1": o1,
            "pred_o2": o2,
            "ids": ids,
        }

    # -- public API ------------------------------------------------------

    def predict(self, state: WorldState, goal: Goal, history: Sequence[Action]) -> Action:
        enc = self.encode(state, goal, history)
        dec = self.decode(enc)
        return Action(dec["pred_interaction"], dec["pred_o1"], dec["pred_o2"])

    def as_policy(self):
        def policy(state, goal, history):
            return self.predict(state, goal, history)

        return policy

    def predict_constrained(self, state: WorldState, goal: Goal,
                            history: Sequence[Action],
                            candidates: Sequence[Action]) -> Action:
        """Highest-scoring action among the given candidates.

        Scores each candidate by the decoder's joint log-probability,
        teacher-forcing the candidate's interaction and first object so
        the downstream heads are conditioned exactly as during
        training.  Used by executors that restrict the policy to
        precondition-satisfying actions."""
        if not candidates:
            raise PolicyError("no candidate actions to score")
        enc = self.encode(state, goal, history)
        cache: dict = {}
        best = None
        best_score = -np.inf
        for action in candidates:
            key = (action.interaction, action.o1)
            if key not in cache:
                cache[key] = self.decode(
                    enc,
                    teacher_interaction=action.interaction,
                    teacher_o1=action.o1,
                )
            dec = cache[key]
            ids = dec["ids"]
            i_idx = INTERACTION_TOKENS.index(action.interaction)
            score = (
                np.log(dec["probs_I"].data[i_idx] + 1e-12)
                + np.log(dec["alpha"].data[ids.index(action.o1)] + 1e-12)
            )
            if action.o2 is not None:
                score += np.log(dec["beta"].data[ids.index(action.o2)] + 1e-12)
            if score > best_score:
                best = action
                best_score = score
        return best

    def as_constrained_policy(self, sim_cfg=None):
        """Closed-loop executor that only proposes applicable actions.

        The interactive service exposes exactly this action set to
        teachers; the constrained executor mirrors that deployment
        surface instead of emitting free-decoded actions that the
        simulator would bounce."""
        from . import sim as _sim

        cfg = (sim_cfg if sim_cfg is not None
               else _sim.SimConfig(p_drop=0.0, p_fail=0.0))

        def policy(state, goal, history):
            ids = state.object_ids()
            candidates = []
            for token in INTERACTION_TOKENS:
                if ARITY[token] == 1:
                    pool = (Action(token, o1, None) for o1 in ids)
                else:
                    pool = (
                        Action(token, o1, o2) for o1 in ids for o2 in ids
                    )
                for action in pool:
                    if _sim.applicable(state, action, cfg)[0]:
                        candidates.append(action)
            return self.predict_constrained(state, goal, history, candidates)

        return policy

    def loss(self, state: WorldState, goal: Goal, history: Sequence[Action],
             demo_action: Action) -> nn.Tensor:
        """Teacher-forced imitation loss: BCE on the interaction softmax
        plus BCE on each object head, summed; the o2 term is dropped for
        unary demonstrations."""
        enc = self.encode(state, goal, history)
        ids = enc["ids"]
        if demo_action.o1 not in ids or (
            demo_action.o2 is not None and demo_action.o2 not in ids
        ):
            raise PolicyError(f"demonstrated object missing from scene: {demo_action}")
        dec = self.decode(
            enc, teacher_interaction=demo_action.interaction, teacher_o1=demo_action.o1
        )
        n_slots = (
            self.config.max_slots if self.config.fixed_object_decoder else len(ids)
        )
        t_inter = interaction_onehot(demo_action.interaction)
        t_o1 = np.zeros(n_slots)
        t_o1[ids.index(demo_action.o1)] = 1.0
        total = nn.bce_loss(dec["probs_I"], t_inter) + nn.bce_loss(dec["alpha"], t_o1)
        if demo_action.o2 is not None:
            t_o2 = np.zeros(n_slots)
            t_o2[ids.index(demo_action.o2)] = 1.0
            total = total + nn.bce_loss(dec["beta"], t_o2)
        return total

    # -- checkpoints -----------------------------------------------------

    def save(self, path) -> None:
        tensors = {name: p.data for name, p in self.params.items()}
        nn.save_checkpoint(path, tensors, meta={"config": self.config.to_dict()})

    @staticmethod
    def load(path, embeddings: Optional[EmbeddingTable] = None) -> "ToolPolicy":
        tensors, meta = nn.load_checkpoint(path)
        config = PolicyConfig.from_dict(meta["config"])
        model = ToolPolicy(config, seed=0, embeddings=embeddings)
        for name, arr in tensors.items():
            if name not in model.params:
                raise PolicyError(f"checkpoint tensor {name!r} not in model")
            if model.params[name].data.shape != arr.shape:
                raise PolicyError(f"checkpoint shape mismatch for {name!r}")
            model.params[name].data = arr.copy()
        return model
