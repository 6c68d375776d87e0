"""Training loop, metrics, ablation plumbing, and report rendering."""

import csv

import numpy as np
import pytest

from toolplan import domain
from toolplan.corpus import Corpus, DETERMINISTIC, expert_policy, scripted_expert
from toolplan.harness import (
    ABLATIONS,
    DivergenceError,
    EvalReport,
    HarnessError,
    TrainReport,
    TrainSpec,
    ablation_suite,
    demo_pairs,
    eval_action_accuracy,
    eval_plan_accuracy,
    eval_recovery_rate,
    train,
)
from toolplan.policy import PolicyConfig, ToolPolicy
from toolplan.report import COLUMNS, results_text, write_report
from toolplan.sim import ARITY
from toolplan.world import Action

SMALL = PolicyConfig(hidden=16, lstm_hidden=16)


@pytest.fixture(scope="module")
def milk_demo():
    scene = domain.micro_home_scene(seed=0)
    return scripted_expert(scene, domain.make_goal("store_milk"),
                           "store_milk", scene_id="milk_0")


@pytest.fixture(scope="module")
def tiny_corpus(milk_demo):
    fruit = scripted_expert(
        domain.micro_home_scene(seed=1), domain.make_goal("store_fruit"),
        "store_fruit", scene_id="fruit_1",
    )
    return Corpus([milk_demo, fruit])


class RandomStub:
    """Uniform choice over grammar-shaped actions; no learning."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def predict(self, state, goal, history):
        ids = state.object_ids()
        token = str(self.rng.choice(sorted(ARITY)))
        o1 = str(self.rng.choice(ids))
        o2 = str(self.rng.choice(ids)) if ARITY[token] == 2 else None
        return Action(token, o1, o2)


class TestSpecValidation:
    def test_epoch_bounds(self):
        with pytest.raises(ValueError):
            TrainSpec(epochs=0)
        with pytest.raises(ValueError):
            TrainSpec(epochs=201)

    def test_patience(self):
        with pytest.raises(ValueError):
            TrainSpec(patience=0)

    def test_empty_corpus(self):
        with pytest.raises(HarnessError):
            train(TrainSpec(config=SMALL, epochs=1), Corpus([]))


class TestMetrics:
    def test_expert_scores_one_on_own_demo(self, milk_demo):
        """The reactive expert replayed teacher-forced matches itself."""

        class Wrap:
            def predict(self, state, goal, history):
                return expert_policy("store_milk")(state, goal, history)

        assert eval_action_accuracy(Wrap(), Corpus([milk_demo])) == 1.0

    def test_random_stub_scores_low(self, tiny_corpus):
        acc = eval_action_accuracy(RandomStub(), tiny_corpus)
        assert acc < 0.1

    def test_expert_plan_accuracy_is_one(self, milk_demo):
        pairs = demo_pairs(Corpus([milk_demo]))
        assert eval_plan_accuracy(expert_policy("store_milk"), pairs) == 1.0

    def test_idle_policy_plan_accuracy_zero(self, milk_demo):
        idle = lambda s, g, h: Action("MoveTo", "floor_0")
        pairs = demo_pairs(Corpus([milk_demo]))
        assert eval_plan_accuracy(idle, pairs) == 0.0

    def test_empty_pairs(self):
        assert eval_plan_accuracy(lambda *a: None, []) == 0.0

    def test_expert_recovers_from_forced_drop(self, milk_demo):
        pairs = demo_pairs(Corpus([milk_demo]))
        rate = eval_recovery_rate(expert_policy("store_milk"), pairs, trials=5)
        assert rate == 1.0


class TestTraining:
    def test_overfits_single_demo(self, milk_demo):
        corpus = Corpus([milk_demo])
        cfg = PolicyConfig(hidden=32, lstm_hidden=32)
        spec = TrainSpec(config=cfg, epochs=200, patience=200, lr=1e-3, seed=1)
        policy, report = train(spec, corpus, corpus)
        assert eval_action_accuracy(policy, corpus) == 1.0
        assert report.best_val_accuracy == 1.0
        assert report.train_loss_curve[-1] < report.train_loss_curve[0]

    def test_determinism(self, tiny_corpus, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        for path in (a, b):
            spec = TrainSpec(config=SMALL, epochs=3, lr=1e-3, seed=4,
                             checkpoint_path=str(path))
            train(spec, tiny_corpus, tiny_corpus)
        assert a.read_bytes() == b.read_bytes()

    def test_divergence_aborts(self, milk_demo):
        corpus = Corpus([milk_demo])
        spec = TrainSpec(config=SMALL, epochs=5, lr=1e150, seed=0)
        with np.errstate(all="ignore"), pytest.raises(DivergenceError):
            train(spec, corpus, None)

    def test_best_model_restored(self, tiny_corpus):
        """Post-training weights equal the best-epoch snapshot, not the
        last-epoch weights."""
        spec = TrainSpec(config=SMALL, epochs=4, lr=1e-3, seed=2)
        policy, report = train(spec, tiny_corpus, tiny_corpus)
        assert report.best_epoch >= 1
        assert eval_action_accuracy(policy, tiny_corpus) >= max(
            report.val_accuracy_curve[: report.best_epoch]
        ) - 1e-9

    def test_early_stop(self, milk_demo):
        corpus = Corpus([milk_demo])
        spec = TrainSpec(config=SMALL, epochs=200, patience=1, lr=0.0, seed=0)
        _, report = train(spec, corpus, corpus)
        assert report.epochs_run <= 3


class TestAblationSuite:
    def test_variant_names_and_flags(self):
        names = [n for n, _ in ABLATIONS]
        assert names[0] == "full"
        assert "-History" in names and "-Attn" in names
        for _, flags in ABLATIONS:
            cfg = PolicyConfig(**flags)
            assert isinstance(cfg, PolicyConfig)

    def test_suite_runs_selected_variants(self, milk_demo):
        corpus = Corpus([milk_demo])
        spec = TrainSpec(config=SMALL, epochs=1, seed=0)
        rows = ablation_suite(spec, corpus, corpus, corpus,
                              names=("full", "-History"))
        assert [r.name for r in rows] == ["full", "-History"]
        for r in rows:
            assert 0.0 <= r.action_prediction_accuracy <= 1.0
            assert r.train is not None
            assert r.config["no_history"] == (r.name == "-History")


class TestReportRendering:
    def rows(self):
        tr = TrainReport(epochs_run=2, best_epoch=1, best_val_accuracy=0.5,
                         train_loss_curve=[1.0, 0.5],
                         val_accuracy_curve=[0.4, 0.5])
        return [
            EvalReport(name="full", action_prediction_accuracy=0.9,
                       plan_execution_accuracy=0.8,
                       generalization={"position": 0.7}, train=tr),
            EvalReport(name="-Attn", action_prediction_accuracy=0.5,
                       plan_execution_accuracy=0.4, train=tr),
        ]

    def test_text_table(self):
        text = results_text(self.rows())
        lines = text.strip().split("\n")
        assert lines[0].split()[0] == "Model"
        assert len(lines) == 4
        assert "0.900" in lines[2] and "-Attn" in lines[3]

    def test_write_report_outputs(self, tmp_path):
        paths = write_report(self.rows(), tmp_path)
        with open(paths["csv"], newline="") as fh:
            got = list(csv.reader(fh))
        assert got[0] == ["Model"] + list(COLUMNS)
        assert got[1][0] == "full" and got[1][1] == "0.900"
        assert got[2][3] == "-"  # missing generalization cell
        for key in ("text", "loss_png", "accuracy_png"):
            assert (tmp_path / paths[key].split("/")[-1]).stat().st_size > 0

    def test_png_magic(self, tmp_path):
        paths = write_report(self.rows(), tmp_path)
        for key in ("loss_png", "accuracy_png"):
            with open(paths[key], "rb") as fh:
                assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
