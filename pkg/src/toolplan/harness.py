"""Training loop, evaluation metrics, and the ablation suite.

Two metrics throughout:

* action prediction accuracy: teacher-forced, per demonstration step,
  an exact match on the interaction token and every argument id;
* plan execution accuracy: closed-loop rollouts under the simulator,
  fraction of episodes that reach the goal within the step cap.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import nn, sim
from .corpus import (
    Corpus,
    DETERMINISTIC,
    Demonstration,
    EvalScene,
    STRATEGIES,
    make_generalization_set,
)
from .policy import PolicyConfig, ToolPolicy
from .world import Action, Goal, WorldState, goal_satisfied


class HarnessError(Exception):
    pass


class DivergenceError(HarnessError):
    """Raised when the training loss goes non-finite."""


@dataclass
class TrainSpec:
    config: PolicyConfig = field(default_factory=PolicyConfig)
    epochs: int = 200
    patience: int = 20
    lr: float = 5e-4
    weight_decay: float = 1e-5
    seed: int = 0
    checkpoint_path: Optional[str] = None
    log: Optional[Callable[[str], None]] = None

    def __post_init__(self):
        if not 1 <= self.epochs <= 200:
            raise ValueError("epochs must be in [1, 200]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainReport:
    epochs_run: int = 0
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    train_loss_curve: list = field(default_factory=list)
    val_accuracy_curve: list = field(default_factory=list)
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "train_loss_curve": self.train_loss_curve,
            "val_accuracy_curve": self.val_accuracy_curve,
            "wall_seconds": self.wall_seconds,
            "config": self.config,
        }


@dataclass
class EvalReport:
    name: str = "full"
    action_prediction_accuracy: float = 0.0
    plan_execution_accuracy: float = 0.0
    generalization: dict = field(default_factory=dict)
    train: Optional[TrainReport] = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "action_prediction_accuracy": self.action_prediction_accuracy,
            "plan_execution_accuracy": self.plan_execution_accuracy,
            "generalization": dict(self.generalization),
            "config": self.config,
        }
        if self.train is not None:
            out["train"] = self.train.to_dict()
        return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _actions_equal(a: Action, b: Action) -> bool:
    return a.interaction == b.interaction and a.o1 == b.o1 and a.o2 == b.o2


def eval_action_accuracy(policy, corpus: Corpus) -> float:
    """Teacher-forced action accuracy over every demonstration step.

    `policy` is anything with predict(state, goal, history) -> Action;
    the history fed at step j is the demonstrated prefix a_0..a_{j-1}.
    """
    hits = 0
    total = 0
    for demo in corpus.demonstrations:
        history: list = []
        for state, action in demo.steps:
            predicted = policy.predict(state, demo.goal, history)
            if _actions_equal(predicted, action):
                hits += 1
            total += 1
            history.append(action)
    return hits / total if total else 0.0


def eval_plan_accuracy(
    policy_fn: Callable[[WorldState, Goal, list], Action],
    pairs: Sequence,
    cfg: sim.SimConfig = DETERMINISTIC,
    episodes_per_pair: int = 1,
    seed: int = 0,
) -> float:
    """Closed-loop success fraction over (initial state, goal) pairs."""
    if not pairs:
        return 0.0
    successes = 0
    total = 0
    for i, (state, goal) in enumerate(pairs):
        for k in range(episodes_per_pair):
            rng = np.random.default_rng((seed, i, k))
            trace = sim.run_episode(policy_fn, state, goal, cfg, rng=rng)
            successes += int(trace.success)
            total += 1
    return successes / total


def eval_recovery_rate(
    policy_fn: Callable[[WorldState, Goal, list], Action],
    pairs: Sequence,
    trials: int = 10,
    cfg: sim.SimConfig = DETERMINISTIC,
    seed: int = 0,
) -> float:
    """Success fraction over episodes that suffered a forced drop.

    Each counted trial runs one (state, goal) pair closed-loop; the
    first time the robot is holding something after an applied step,
    the held object is knocked to the floor.  The policy must still
    reach the goal within the step cap.  Episodes in which the robot
    never holds anything (some goals need no carrying) cannot be
    perturbed and are skipped rather than counted.  Only applied
    actions enter the history: demonstrations contain no rejected
    steps, so feeding rejected attempts back in is out of
    distribution for the history encoder.  When the executor observes
    an exogenous state change (the held object vanished without a Drop
    of its own) it clears its history and re-plans from the current
    state, mirroring how recovery demonstrations are collected (the
    expert restarts from the post-perturbation state).
    """
    successes = 0
    counted = 0
    attempts = 0
    while counted < trials and attempts < 10 * trials:
        state, goal = pairs[attempts % len(pairs)]
        rng = np.random.default_rng((seed, attempts))
        attempts += 1
        history: list = []
        dropped = False
        ok = goal_satisfied(state, goal)
        for _ in range(cfg.max_steps):
            if ok:
                break
            action = policy_fn(state, goal, history)
            state, event = sim.apply(state, action, cfg, rng)
            if event.outcome == "applied":
                history.append(action)
            if not dropped and state.robot.grabbed is not None:
                state = sim.force_drop(state)
                dropped = True
                history = []
            ok = goal_satisfied(state, goal)
        if dropped:
            counted += 1
            successes += int(ok)
    if counted == 0:
        return 0.0
    return successes / counted


def demo_pairs(corpus: Corpus) -> list:
    return [(d.initial, d.goal) for d in corpus.demonstrations]


def eval_scene_pairs(scenes: Sequence[EvalScene]) -> list:
    return [(s.scene, s.goal) for s in scenes]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _train_samples(corpus: Corpus) -> list:
    samples = []
    for demo in corpus.demonstrations:
        history: list = []
        for state, action in demo.steps:
            samples.append((state, demo.goal, tuple(history), action))
            history.append(action)
    return samples


def train(
    spec: TrainSpec,
    train_corpus: Corpus,
    val_corpus: Optional[Corpus] = None,
):
    """Behavior cloning with batch size 1 and Adam.

    Early stopping tracks validation action accuracy; the best model is
    restored (and written to spec.checkpoint_path when given).  With no
    validation corpus the final model is kept and no early stop fires.
    Non-finite loss aborts with a DivergenceError naming the sample.
    """
    if not train_corpus.demonstrations:
        raise HarnessError("empty training corpus")
    log = spec.log or (lambda msg: None)
    policy = ToolPolicy(spec.config, seed=spec.seed)
    opt = nn.Adam(
        policy.params.values(), lr=spec.lr, weight_decay=spec.weight_decay
    )
    samples = _train_samples(train_corpus)
    order_rng = np.random.default_rng((spec.seed, 0xD5))
    report = TrainReport(config=spec.config.to_dict())
    best_params = None
    best_val = -1.0
    since_best = 0
    t0 = time.perf_counter()

    for epoch in range(1, spec.epochs + 1):
        order = order_rng.permutation(len(samples))
        losses = np.empty(len(samples))
        for j, idx in enumerate(order):
            state, goal, history, action = samples[idx]
            opt.zero_grad()
            loss = policy.loss(state, goal, list(history), action)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, sample {idx} "
                    f"({action.interaction} {action.o1})"
                )
            loss.backward()
            opt.step()
            losses[j] = value
        report.train_loss_curve.append(float(losses.mean()))
        report.epochs_run = epoch

        if val_corpus is not None and val_corpus.demonstrations:
            val_acc = eval_action_accuracy(policy, val_corpus)
            report.val_accuracy_curve.append(val_acc)
            improved = val_acc > best_val
            if improved:
                best_val = val_acc
                report.best_epoch = epoch
                report.best_val_accuracy = val_acc
                best_params = {
                    k: p.data.copy() for k, p in policy.params.items()
                }
                since_best = 0
            else:
                since_best += 1
            log(
                f"epoch {epoch:3d}  loss {losses.mean():.4f}  "
                f"val {val_acc:.3f}{' *' if improved else ''}"
            )
            if since_best >= spec.patience:
                log(f"early stop at epoch {epoch} (patience {spec.patience})")
                break
        else:
            report.best_epoch = epoch
            log(f"epoch {epoch:3d}  loss {losses.mean():.4f}")

    if best_params is not None:
        for k, p in policy.params.items():
            p.data[...] = best_params[k]
    report.wall_seconds = time.perf_counter() - t0
    if spec.checkpoint_path:
        policy.save(spec.checkpoint_path)
    return policy, report


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------

ABLATIONS = (
    ("full", {}),
    ("-GGCN", {"no_ggcn": True}),
    ("-Metric", {"no_metric": True}),
    ("-Attn", {"no_attention": True}),
    ("-History", {"no_history": True}),
    ("-KGEmbed", {"base_embeddings": True}),
    ("-Factored", {"fixed_object_decoder": True}),
    ("affordance-only", {"no_ggcn": True, "no_attention": True}),
)


def ablation_suite(
    spec: TrainSpec,
    train_corpus: Corpus,
    val_corpus: Corpus,
    test_corpus: Corpus,
    generalization: Optional[dict] = None,
    episodes_per_pair: int = 1,
    names: Optional[Sequence[str]] = None,
) -> list:
    """One train+eval cycle per model variant, shared seed and corpora.

    `generalization` maps strategy name -> list of EvalScene.  Returns
    EvalReports in table order.
    """
    log = spec.log or (lambda msg: None)
    test_pairs = demo_pairs(test_corpus)
    rows = []
    for name, flags in ABLATIONS:
        if names is not None and name not in names:
            continue
        cfg = replace(spec.config, **flags)
        row_spec = copy.copy(spec)
        row_spec.config = cfg
        row_spec.checkpoint_path = None
        log(f"== variant {name} ==")
        policy, train_report = train(row_spec, train_corpus, val_corpus)
        report = EvalReport(name=name, train=train_report, config=cfg.to_dict())
        report.action_prediction_accuracy = eval_action_accuracy(
            policy, test_corpus
        )
        report.plan_execution_accuracy = eval_plan_accuracy(
            policy.as_policy(), test_pairs,
            episodes_per_pair=episodes_per_pair, seed=spec.seed,
        )
        for strategy, scenes in (generalization or {}).items():
            report.generalization[strategy] = eval_plan_accuracy(
                policy.as_policy(), eval_scene_pairs(scenes),
                episodes_per_pair=episodes_per_pair, seed=spec.seed,
            )
        rows.append(report)
        log(
            f"   action {report.action_prediction_accuracy:.3f}  "
            f"plan {report.plan_execution_accuracy:.3f}"
        )
    return rows


def build_generalization_sets(
    train_corpus: Corpus,
    seed: int = 0,
    strategies: Sequence[str] = STRATEGIES,
) -> dict:
    """Evaluation scene sets for each perturbation strategy."""
    return {
        s: make_generalization_set(train_corpus, s, seed=seed)
        for s in strategies
    }
