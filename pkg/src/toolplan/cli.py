"""Command-line entry point.

Subcommands cover the whole pipeline: simulate an episode, build and
validate corpora, train, evaluate, run the ablation suite with report
rendering, and serve the interactive session API.  TOOLPLAN_SEED in
the environment overrides every --seed default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import domain, sim
from .corpus import (
    Corpus,
    DETERMINISTIC,
    STRATEGIES,
    augment,
    expert_policy,
    generate_corpus,
    make_generalization_set,
    replay_valid,
    split,
)
from .harness import (
    TrainSpec,
    ablation_suite,
    build_generalization_sets,
    demo_pairs,
    eval_action_accuracy,
    eval_plan_accuracy,
    eval_recovery_rate,
    eval_scene_pairs,
    train,
)
from .policy import PolicyConfig, ToolPolicy
from .report import results_text, write_report
from .world import goal_satisfied


def _seed(args) -> int:
    env = os.environ.get("TOOLPLAN_SEED")
    return int(env) if env is not None else args.seed


def _load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _policy_config(cfg: dict) -> PolicyConfig:
    return PolicyConfig.from_dict(cfg.get("model", {}))


def cmd_sim_run(args):
    seed = _seed(args)
    scene = domain.scene_for_goal(args.goal, seed=seed)
    goal = domain.make_goal(args.goal)
    cfg = DETERMINISTIC if args.deterministic else sim.SimConfig(seed=seed)
    if args.ckpt:
        policy = ToolPolicy.load(args.ckpt).as_policy()
    else:
        policy = expert_policy(args.goal, cfg)
    trace = sim.run_episode(
        policy, scene, goal, cfg, rng=np.random.default_rng(seed)
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(trace.to_json())
    for event in trace.events:
        a = event.action
        arg2 = f", {a.o2}" if a.o2 else ""
        print(f"{a.interaction}({a.o1}{arg2}) -> {event.outcome}")
    print(f"success={trace.success} steps={trace.steps}")
    return 0 if trace.success else 1


def cmd_corpus_gen(args):
    corpus = generate_corpus(
        scenes_per_goal=args.scenes_per_goal, seed=_seed(args)
    )
    corpus.save(args.out)
    print(f"wrote {len(corpus)} demonstrations to {args.out}")
    return 0


def cmd_corpus_augment(args):
    corpus = Corpus.load(args.corpus)
    out = augment(corpus, factor=args.factor, seed=_seed(args))
    out.save(args.out)
    print(f"wrote {len(out)} demonstrations to {args.out}")
    return 0


def cmd_corpus_split(args):
    corpus = Corpus.load(args.corpus)
    tr, va, te = split(corpus, seed=_seed(args))
    for part, name in ((tr, "train"), (va, "val"), (te, "test")):
        path = os.path.join(args.out_dir, f"{name}.jsonl")
        os.makedirs(args.out_dir, exist_ok=True)
        part.save(path)
        print(f"{name}: {len(part)} -> {path}")
    return 0


def cmd_corpus_validate(args):
    corpus = Corpus.load(args.corpus)
    bad = [
        i for i, d in enumerate(corpus.demonstrations) if not replay_valid(d)
    ]
    print(f"{len(corpus) - len(bad)}/{len(corpus)} demonstrations replay-valid")
    for i in bad:
        print(f"  invalid: index {i}")
    return 0 if not bad else 1


def cmd_corpus_genset(args):
    corpus = Corpus.load(args.corpus)
    scenes = make_generalization_set(corpus, args.strategy, seed=_seed(args))
    print(f"{args.strategy}: {len(scenes)} evaluation scenes")
    for s in scenes:
        print(f"  {s.source_id} {s.goal_name} {s.note}")
    return 0


def _spec_from_config(cfg: dict, seed: int) -> TrainSpec:
    t = cfg.get("train", {})
    return TrainSpec(
        config=_policy_config(cfg),
        epochs=t.get("epochs", 200),
        patience=t.get("patience", 20),
        lr=t.get("lr", 5e-4),
        weight_decay=t.get("weight_decay", 1e-5),
        seed=seed,
        log=print,
    )


def cmd_train(args):
    cfg = _load_config(args.config)
    spec = _spec_from_config(cfg, _seed(args))
    spec.checkpoint_path = args.ckpt
    train_corpus = Corpus.load(cfg["corpora"]["train"])
    val_corpus = (
        Corpus.load(cfg["corpora"]["val"]) if "val" in cfg["corpora"] else None
    )
    policy, report = train(spec, train_corpus, val_corpus)
    print(
        f"done: {report.epochs_run} epochs, best epoch {report.best_epoch}, "
        f"best val accuracy {report.best_val_accuracy:.3f}, "
        f"{report.wall_seconds:.0f}s"
    )
    print(f"checkpoint: {args.ckpt}")
    return 0


def cmd_eval(args):
    policy = ToolPolicy.load(args.ckpt)
    seed = _seed(args)
    if args.set == "test":
        corpus = Corpus.load(args.corpus)
        action = eval_action_accuracy(policy, corpus)
        plan = eval_plan_accuracy(
            policy.as_policy(), demo_pairs(corpus), seed=seed
        )
        print(f"action prediction accuracy: {action:.3f}")
        print(f"plan execution accuracy:    {plan:.3f}")
    else:
        corpus = Corpus.load(args.corpus)
        scenes = make_generalization_set(corpus, args.set, seed=seed)
        plan = eval_plan_accuracy(
            policy.as_policy(), eval_scene_pairs(scenes), seed=seed
        )
        print(f"{args.set} plan execution accuracy: {plan:.3f}")
    return 0


def cmd_ablate(args):
    cfg = _load_config(args.config)
    seed = _seed(args)
    spec = _spec_from_config(cfg, seed)
    train_corpus = Corpus.load(cfg["corpora"]["train"])
    val_corpus = Corpus.load(cfg["corpora"]["val"])
    test_corpus = Corpus.load(cfg["corpora"]["test"])
    gen = build_generalization_sets(train_corpus, seed=seed)
    rows = ablation_suite(spec, train_corpus, val_corpus, test_corpus, gen)
    print(results_text(rows))
    paths = write_report(rows, args.out_dir)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_recover(args):
    policy = ToolPolicy.load(args.ckpt)
    corpus = Corpus.load(args.corpus)
    rate = eval_recovery_rate(
        policy.as_constrained_policy(), demo_pairs(corpus),
        trials=args.trials, seed=_seed(args),
    )
    print(f"recovery rate: {rate:.2f} over {args.trials} forced-drop trials")
    return 0


def cmd_serve(args):
    from .server import main as serve_main

    serve_main(host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="toolplan",
        description="goal-conditioned tool-interaction planning toolkit",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_seed(sp):
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("sim-run", help="run one closed-loop episode")
    sp.add_argument("--goal", required=True, choices=sorted(domain.GOALS))
    sp.add_argument("--ckpt", help="policy checkpoint (default scripted expert)")
    sp.add_argument("--deterministic", action="store_true")
    sp.add_argument("--out", help="write the trace JSON here")
    add_seed(sp)
    sp.set_defaults(fn=cmd_sim_run)

    corpus = sub.add_parser("corpus", help="corpus pipeline")
    csub = corpus.add_subparsers(dest="subcommand", required=True)

    sp = csub.add_parser("gen", help="generate scripted-expert demonstrations")
    sp.add_argument("--out", required=True)
    sp.add_argument("--scenes-per-goal", type=int, default=12)
    add_seed(sp)
    sp.set_defaults(fn=cmd_corpus_gen)

    sp = csub.add_parser("augment", help="jitter and class-swap augmentation")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--factor", type=int, default=3)
    add_seed(sp)
    sp.set_defaults(fn=cmd_corpus_augment)

    sp = csub.add_parser("split", help="grouped train/val/test split")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out-dir", required=True)
    add_seed(sp)
    sp.set_defaults(fn=cmd_corpus_split)

    sp = csub.add_parser("validate", help="replay-validate a corpus file")
    sp.add_argument("--corpus", required=True)
    sp.set_defaults(fn=cmd_corpus_validate)

    sp = csub.add_parser("genset", help="build a generalization scene set")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--strategy", required=True, choices=STRATEGIES)
    add_seed(sp)
    sp.set_defaults(fn=cmd_corpus_genset)

    sp = sub.add_parser("train", help="behavior cloning from a corpus")
    sp.add_argument("--config", required=True, help="JSON config file")
    sp.add_argument("--ckpt", required=True, help="checkpoint output path")
    add_seed(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument(
        "--set", default="test", choices=("test",) + STRATEGIES
    )
    add_seed(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate all model variants")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out-dir", required=True)
    add_seed(sp)
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("recover", help="forced-drop recovery evaluation")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--trials", type=int, default=10)
    add_seed(sp)
    sp.set_defaults(fn=cmd_recover)

    sp = sub.add_parser("serve", help="run the interactive session server")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8750)
    sp.set_defaults(fn=cmd_serve)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
