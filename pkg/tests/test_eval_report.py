import json
import math
import os

import pandas as pd
import pytest
import torch

import eval_report
from adapt_engine import TrainLog
from eval_report import (
    AblationArm, AblationPlan, EvaluationError, ExperimentResult, PckResult, builtin_plan, emit_plots,
    evaluate_model, pck, pretrain_signature, render_table, run_ablation, run_experiment, summarize,
    warm_pretrain_cache,
)
from experiment_config import ConfigError, ExperimentConfig, resolve_config
from heatmap_codec import KeypointSet
from model_zoo import build_model
from synthpose_data import PoseDataset, default_skeleton, generate_dataset, generate_splits, shift_preset


GROUPS = list(ExperimentConfig().keypoint_groups)


def _keypoints(values, visibility=None):
    return KeypointSet(coords=torch.tensor(values, dtype=torch.float64), visibility=visibility)


# ---------------------------------------------------------------------------
# PCK
# ---------------------------------------------------------------------------

def test_perfect_predictions_score_one():
    coords = torch.rand(5, 8, 2, dtype=torch.float64) * 64
    result = pck(KeypointSet(coords=coords), KeypointSet(coords=coords.clone()), groups={"all": range(8)})
    assert result.overall == 1.0
    assert result.per_joint == [1.0] * 8
    assert result.per_group == {"all": 1.0}
    assert result.sample_count == 5


def test_threshold_is_inclusive():
    gts = _keypoints([[[0.0, 0.0], [0.0, 0.0]]])
    assert pck(_keypoints([[[12.8, 0.0], [0.0, 12.8]]]), gts, 0.05, 256.0).overall == 1.0
    assert pck(_keypoints([[[12.81, 0.0], [0.0, 12.81]]]), gts, 0.05, 256.0).overall == 0.0


def test_mixed_distances():
    gts = _keypoints([[[0.0, 0.0]] * 4])
    preds = _keypoints([[[0.0, 0.0], [10.0, 0.0], [13.0, 0.0], [20.0, 0.0]]])
    result = pck(preds, gts, threshold_ratio=0.05, norm_size=256.0)
    assert result.overall == 0.5
    assert result.per_joint == [1.0, 1.0, 0.0, 0.0]


def test_pck_is_scale_consistent():
    generator = torch.Generator().manual_seed(0)
    gts = torch.rand(20, 8, 2, generator=generator, dtype=torch.float64) * 64
    preds = gts + torch.randn(20, 8, 2, generator=generator, dtype=torch.float64) * 3
    small = pck(KeypointSet(coords=preds), KeypointSet(coords=gts), 0.05, 64.0)
    large = pck(KeypointSet(coords=preds * 4), KeypointSet(coords=gts * 4), 0.05, 256.0)
    assert small.overall == pytest.approx(large.overall)
    assert small.per_joint == pytest.approx(large.per_joint)


def test_pck_grows_with_threshold():
    generator = torch.Generator().manual_seed(1)
    gts = torch.rand(30, 8, 2, generator=generator, dtype=torch.float64) * 64
    preds = gts + torch.randn(30, 8, 2, generator=generator, dtype=torch.float64) * 4
    scores = [pck(KeypointSet(coords=preds), KeypointSet(coords=gts), ratio).overall
              for ratio in (0.01, 0.05, 0.1, 0.2, 0.5)]
    assert scores == sorted(scores)


def test_invisible_joints_are_excluded():
    visibility = torch.tensor([[True, False, True]])
    gts = _keypoints([[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]], visibility)
    preds = _keypoints([[[0.0, 0.0], [50.0, 50.0], [50.0, 50.0]]])
    result = pck(preds, gts, groups={"first": [0], "middle": [1], "last_two": [1, 2]})
    assert result.overall == 0.5
    assert result.per_joint[0] == 1.0
    assert math.isnan(result.per_joint[1])
    assert result.per_group["first"] == 1.0
    assert math.isnan(result.per_group["middle"])
    assert result.per_group["last_two"] == 0.0
    assert result.to_record("target_") == {"target_overall": 0.5, "target_first": 1.0,
                                           "target_middle": result.per_group["middle"], "target_last_two": 0.0}


def test_pck_errors():
    gts = _keypoints([[[0.0, 0.0], [1.0, 1.0]]])
    with pytest.raises(EvaluationError):
        pck(_keypoints([[[0.0, 0.0]]]), gts)
    with pytest.raises(EvaluationError):
        pck(gts, gts, norm_size=0.0)
    with pytest.raises(EvaluationError):
        pck(gts, KeypointSet(coords=gts.coords, visibility=torch.zeros(1, 2, dtype=torch.bool)))


def test_evaluate_model_is_deterministic(tmp_path, small_cfg):
    generate_dataset(default_skeleton(32), shift_preset("target"), 6, seed=0, out_dir=tmp_path, image_size=32)
    dataset = PoseDataset(tmp_path, small_cfg.codec.heatmap_size)
    model = build_model(small_cfg.backbone, "idf", 8, small_cfg.codec.heatmap_size, seed=0)
    first = evaluate_model(model, dataset, small_cfg)
    second = evaluate_model(model, dataset, small_cfg)
    assert first == second
    assert set(first.per_group) == set(GROUPS)
    assert first.sample_count == 6
    assert 0.0 <= first.overall <= 1.0


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------

def test_builtin_plans():
    relations = builtin_plan("relations")
    assert [arm.name for arm in relations.arms] == [
        "r1", "r2", "r3", "r1 & r2", "r1 & r3", "r2 & r3", "r1 & r2 & r3",
    ]
    assert relations.config_for(relations.arms[3], seed=4).relation_mask == ("r1", "r2")
    assert relations.config_for(relations.arms[3], seed=4).seed == 4

    structures = builtin_plan("structures")
    assert len(structures.arms) == 10
    names = [arm.name for arm in structures.arms]
    assert names[:2] == ["Baseline", "Baseline w/ DL"]
    assert names[-1] == "IDF w/ DL"
    idf_spec = structures.config_for(structures.arms[names.index("IDF w/ Spec")], 0)
    assert (idf_spec.variant, idf_spec.dl_terms) == ("idf", "spec")

    sensitivity = builtin_plan("sensitivity")
    gamma = [arm for arm in sensitivity.arms if arm.sweep == "gamma"]
    assert [arm.value for arm in gamma] == [0.35, 0.45, 0.55, 0.65]
    alpha = sensitivity.config_for(sensitivity.arms[0], 0)
    assert alpha.alpha1 == alpha.alpha2 == 0.3

    baselines = builtin_plan("baselines", seeds=[7])
    assert [arm.mode for arm in baselines.arms] == ["source_only", "adapt", "oracle"]
    assert baselines.seeds == [7]
    for name in ("loss-variants",):
        builtin_plan(name).validate()


def test_plan_validation():
    with pytest.raises(ValueError):
        builtin_plan("everything")
    with pytest.raises(ValueError):
        AblationPlan(name="dup", arms=[AblationArm("a"), AblationArm("a")])
    with pytest.raises(ValueError):
        AblationPlan(name="empty", arms=[AblationArm("a")], seeds=[])
    with pytest.raises(ValueError):
        AblationPlan(name="mode", arms=[AblationArm("a", mode="transductive")])
    with pytest.raises(ConfigError):
        AblationPlan(name="bad", arms=[AblationArm("a", overrides=["kernel.width=3"])]).validate()


def test_pretrain_signature_ignores_adaptation_settings():
    base = resolve_config({})
    adapted = resolve_config({}, ["variant=aidf", "beta=0.3", "relation_mask=[\"r1\"]"])
    assert pretrain_signature(base, "data", "adapt") == pretrain_signature(adapted, "data", "adapt")
    assert pretrain_signature(base, "data", "adapt") != pretrain_signature(base, "data", "oracle")
    assert pretrain_signature(base, "data", "adapt") != pretrain_signature(resolve_config({"seed": 1}), "data", "adapt")


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _fake_result(score):
    result = PckResult(per_joint=[score] * 8, per_group={g: score for g in GROUPS}, overall=score,
                       threshold_ratio=0.05, sample_count=4)
    return ExperimentResult(mode="adapt", scores={"target": result, "unseen": result})


def test_ablation_records_failures_and_takes_medians(tmp_path, monkeypatch):
    def fake_run(cfg, data_dir, out_dir=None, mode="adapt", cache_dir=None, progress=None):
        if cfg.variant == "baseline":
            raise RuntimeError("boom")
        return _fake_result(0.1 * cfg.seed + cfg.gamma)

    monkeypatch.setattr(eval_report, "run_experiment", fake_run)
    monkeypatch.setattr(eval_report, "warm_pretrain_cache", lambda *args, **kwargs: {})
    plan = builtin_plan("structures", seeds=[0, 1, 2])
    summary = run_ablation(plan, tmp_path / "data", tmp_path / "out", workers=1)

    assert list(summary["arm"]) == [arm.name for arm in plan.arms]
    assert list(summary["n_failed"][:2]) == [3, 3]
    assert math.isnan(summary["target_overall"][0])
    assert summary["target_overall"][2:].tolist() == pytest.approx([0.65] * 8)
    assert summary["n_ok"][2:].tolist() == [3] * 8

    results = pd.read_csv(tmp_path / "out" / "results.csv")
    assert len(results) == 30
    assert set(results.loc[results["status"] == "failed", "error"]) == {"RuntimeError: boom"}
    with open(tmp_path / "out" / "summary.json", encoding="utf-8") as f:
        assert json.load(f)["seeds"] == [0, 1, 2]
    table = (tmp_path / "out" / "table.txt").read_text()
    assert "IDF w/ DL" in table and "65.0" in table


def test_pretraining_is_shared_across_arms(tmp_path, small_cfg, monkeypatch):
    from experiment_config import config_to_dict
    calls = []
    monkeypatch.setattr(eval_report, "pretrained_model",
                        lambda cfg, data_dir, mode, cache_dir, progress=None: calls.append((cfg.seed, mode)))
    plan = builtin_plan("baselines", base=config_to_dict(small_cfg), seeds=[0, 1])
    errors = warm_pretrain_cache(plan, tmp_path / "data", str(tmp_path / "cache"))
    assert calls == [(0, "source_only"), (1, "source_only"), (0, "oracle"), (1, "oracle")]
    assert list(errors.values()) == [None] * 4


def test_serial_ablation_restores_thread_count(tmp_path, monkeypatch):
    monkeypatch.setattr(eval_report, "run_experiment", lambda *args, **kwargs: _fake_result(0.5))
    torch.set_num_threads(2)
    run_ablation(builtin_plan("loss-variants", seeds=[0]), tmp_path / "data", workers=1)
    assert torch.get_num_threads() == 2


def test_summarize_keeps_plan_order():
    plan = AblationPlan(name="toy", arms=[AblationArm("b"), AblationArm("a")], seeds=[0, 1])
    results = pd.DataFrame([
        {"arm": "a", "arm_index": 1, "seed": 0, "status": "ok", "target_overall": 0.2},
        {"arm": "a", "arm_index": 1, "seed": 1, "status": "ok", "target_overall": 0.4},
        {"arm": "b", "arm_index": 0, "seed": 0, "status": "ok", "target_overall": 0.9},
        {"arm": "b", "arm_index": 0, "seed": 1, "status": "failed", "target_overall": float("nan")},
    ])
    summary = summarize(results, plan)
    assert list(summary["arm"]) == ["b", "a"]
    assert summary["target_overall"].tolist() == pytest.approx([0.9, 0.3])
    assert summary["n_failed"].tolist() == [1, 0]


def test_render_table_in_percent():
    summary = pd.DataFrame([{"arm": "IDF", "target_Head": 0.5, "target_Ank": 0.25, "target_overall": 0.4,
                             "unseen_overall": 0.125}])
    table = render_table(summary, ["Head", "Ank"])
    header, row = table.strip().splitlines()
    assert header.split() == ["Arm", "Head", "Ank", "Avg", "Unseen"]
    assert row.split() == ["IDF", "50.0", "25.0", "40.0", "12.5"]


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _log():
    log = TrainLog()
    for i in range(4):
        log.append({"stage": "B", "iteration": i, "loss": 1.0 / (i + 1), "inter": 0.1, "spec": 0.2, "dl": 0.3})
        log.append({"stage": "C", "iteration": i, "loss": 0.5, "inter": 0.1 * i, "spec": 0.2, "dl": 0.3 + 0.1 * i})
    return log


def test_emit_plots_writes_figures_and_data(tmp_path):
    summary = summarize(
        pd.DataFrame([{"arm_index": i, "seed": 0, "status": "ok", "target_overall": 0.1 * i} for i in range(14)]),
        builtin_plan("sensitivity"),
    )
    written = emit_plots({"adapt": _log()}, summary, tmp_path)
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["discrepancy.csv", "discrepancy.png", "loss_curves.csv", "loss_curves.png",
                     "sensitivity.csv", "sensitivity.png"]

    losses = pd.read_csv(tmp_path / "loss_curves.csv")
    assert len(losses) == 8
    discrepancy = pd.read_csv(tmp_path / "discrepancy.csv")
    assert discrepancy["dl"].tolist() == pytest.approx([0.3, 0.4, 0.5, 0.6])
    sensitivity = pd.read_csv(tmp_path / "sensitivity.csv")
    assert list(sensitivity.columns) == ["sweep", "value", "target_overall"]
    assert sensitivity.loc[sensitivity["sweep"] == "gamma", "value"].tolist() == [0.35, 0.45, 0.55, 0.65]


def test_emit_plots_needs_inputs(tmp_path):
    with pytest.raises(ValueError):
        emit_plots({}, None, tmp_path, ["loss"])
    with pytest.raises(ValueError):
        emit_plots({"adapt": _log()}, None, tmp_path, ["sensitivity"])
    with pytest.raises(ValueError):
        emit_plots({"adapt": _log()}, None, tmp_path, ["heatmaps"])
    plain = TrainLog()
    plain.append({"stage": "pretrain", "iteration": 0, "loss": 1.0})
    with pytest.raises(ValueError):
        emit_plots({"pretrain": plain}, None, tmp_path, ["discrepancy"])


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

@pytest.fixture
def data_dir(tmp_path, small_cfg):
    path = tmp_path / "data"
    generate_splits(small_cfg, path, seed=0)
    return path


@pytest.mark.parametrize("mode", ["source_only", "adapt", "oracle"])
def test_run_experiment(tmp_path, small_cfg, data_dir, mode):
    out = tmp_path / mode
    result = run_experiment(small_cfg, data_dir, out, mode=mode, progress=False)
    assert set(result.scores) == {"target", "unseen", "source_val"}
    assert {"pretrain"} <= {r["stage"] for r in result.log.records}
    assert any(r["stage"] == "C" for r in result.log.records) == (mode == "adapt")
    for name in ("model.ckpt", "result.json", "train_log.jsonl", "config.resolved.json"):
        assert (out / name).exists()
    assert TrainLog.load(str(out / "train_log.jsonl")).records == result.log.records


def test_pretraining_is_cached(tmp_path, small_cfg, data_dir):
    cache = tmp_path / "cache"
    first = run_experiment(small_cfg, data_dir, mode="source_only", cache_dir=str(cache))
    second = run_experiment(small_cfg, data_dir, mode="source_only", cache_dir=str(cache))
    assert len(os.listdir(cache)) == 1
    assert second.log.records == []
    assert first.scores["target"].overall == second.scores["target"].overall


@pytest.mark.slow
def test_relation_ablation_end_to_end(tmp_path, small_cfg, data_dir):
    from experiment_config import config_to_dict
    plan = builtin_plan("relations", base=config_to_dict(small_cfg), seeds=[0, 1])
    summary = run_ablation(plan, data_dir, tmp_path / "ablate", workers=2)
    assert summary["n_failed"].sum() == 0
    assert summary["target_overall"].between(0, 1).all()
    assert (tmp_path / "ablate" / "table.txt").exists()


# ---------------------------------------------------------------------------
# Toy-scale orderings on the default shift (2,000 source / 2,000 target, three seeds)
# ---------------------------------------------------------------------------

ACCEPTANCE_SEEDS = [0, 1, 2]


@pytest.fixture(scope="module")
def acceptance_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    generate_splits(resolve_config({}), root / "data", seed=0)
    return root


@pytest.fixture(scope="module")
def plan_results(acceptance_dir):
    """Per-run results of a bundled plan on the default config, each plan run once."""
    cache = {}

    def run(name):
        if name not in cache:
            out = acceptance_dir / name
            summary = run_ablation(builtin_plan(name, seeds=ACCEPTANCE_SEEDS), acceptance_dir / "data", out)
            assert summary["n_failed"].sum() == 0, pd.read_csv(out / "results.csv")["error"].dropna().tolist()
            cache[name] = pd.read_csv(out / "results.csv")
        return cache[name]
    return run


def _by_seed(results, arm, metric="target_overall"):
    rows = results[results["arm"] == arm].sort_values("seed")
    return dict(zip(rows["seed"], rows[metric]))


def _median(values):
    return float(pd.Series(list(values)).median())


def _wins(better, worse):
    return sum(better[seed] >= worse[seed] for seed in ACCEPTANCE_SEEDS)


@pytest.mark.slow
def test_source_only_shows_a_domain_gap(plan_results):
    results = plan_results("baselines")
    target = _by_seed(results, "Source-only")
    source_val = _by_seed(results, "Source-only", "source_val_overall")
    for seed in ACCEPTANCE_SEEDS:
        assert target[seed] <= source_val[seed] - 0.10


@pytest.mark.slow
def test_adaptation_beats_source_only(plan_results):
    results = plan_results("baselines")
    source_only = _by_seed(results, "Source-only")
    adapted = _by_seed(results, "IDF w/ DL")
    assert _median(adapted.values()) >= _median(source_only.values()) + 0.05
    assert _wins(adapted, source_only) == len(ACCEPTANCE_SEEDS)


@pytest.mark.slow
def test_oracle_beats_source_only(plan_results):
    results = plan_results("baselines")
    assert _median(_by_seed(results, "Oracle").values()) > _median(_by_seed(results, "Source-only").values())


@pytest.mark.slow
def test_all_relations_rank_first(plan_results):
    results = plan_results("relations")
    full = _by_seed(results, "r1 & r2 & r3")
    for single in ("r1", "r2", "r3"):
        assert _median(full.values()) >= _median(_by_seed(results, single).values()), single
    for pair in ("r1 & r2", "r1 & r3", "r2 & r3"):
        assert _wins(full, _by_seed(results, pair)) >= 2, pair


@pytest.mark.slow
def test_structure_ordering(plan_results):
    results = plan_results("structures")
    idf, aidf, baseline = (_by_seed(results, arm) for arm in ("IDF w/ DL", "AIDF w/ DL", "Baseline w/ DL"))
    assert _median(idf.values()) >= _median(aidf.values()) >= _median(baseline.values())
    assert _wins(idf, aidf) >= 2
    assert _wins(aidf, baseline) >= 2


@pytest.mark.slow
def test_mmd_is_the_best_discrepancy_measure(plan_results):
    results = plan_results("loss-variants")
    mmd = _by_seed(results, "MMD")
    for other in ("MSE", "KL"):
        assert _wins(mmd, _by_seed(results, other)) >= 2, other
