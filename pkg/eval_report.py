"""
Evaluation and Reporting Module

This module handles:
- PCK (percentage of correct keypoints) with per-joint and per-group breakdowns
- Evaluating a model's F(G(x)) predictions on a dataset
- Running one experiment: source-only, adapted or oracle
- Ablation plans (arms x seeds), run in worker processes, aggregated by median
- Result tables (CSV, JSON, rendered text) and figures (PNG + CSV)
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd
import torch
from torch.utils.data import ConcatDataset

from adapt_engine import TrainLog, adapt, pretrain
from checkpoint_module import load_checkpoint, load_parameters_into, save_checkpoint
from experiment_config import ExperimentConfig, config_to_dict, resolve_config, save_config
from heatmap_codec import KeypointSet, argmax_coords, to_image_units
from model_zoo import PoseAdaptNet, build_model
from synthpose_data import PoseDataset, make_loader
from utils import ensure_directory, seed_everything, sha256_bytes, worker_count


logger = logging.getLogger(__name__)

MODES = ("source_only", "adapt", "oracle")
EVAL_SPLITS = (("target", "target_test"), ("unseen", "unseen_test"), ("source_val", "source_val"))


class EvaluationError(ValueError):
    """PCK inputs that cannot be scored."""


@dataclass
class PckResult:
    """
    PCK figures for one evaluation.

    Joints (or groups) without a single visible instance report NaN.
    """
    per_joint: List[float]
    per_group: Dict[str, float]
    overall: float
    threshold_ratio: float
    sample_count: int

    def to_record(self, prefix: str = "") -> Dict[str, float]:
        record = {f"{prefix}overall": self.overall}
        record.update({f"{prefix}{name}": value for name, value in self.per_group.items()})
        return record


def pck(preds: KeypointSet, gts: KeypointSet, threshold_ratio: float = 0.05, norm_size: float = 64.0,
        groups: Optional[Mapping[str, Sequence[int]]] = None) -> PckResult:
    """
    Fraction of visible joint instances within threshold_ratio * norm_size.

    A joint is correct iff ||pred - gt|| <= threshold_ratio * norm_size
    (inclusive). Invisible joints are excluded everywhere.

    Args:
        preds: Predicted keypoints (N, K, 2)
        gts: Ground truth keypoints (N, K, 2) with visibility
        threshold_ratio: Fraction of norm_size
        norm_size: Normalizing length, in the same units as the coordinates
        groups: Optional {group name: joint indices}

    Returns:
        PckResult

    Raises:
        EvaluationError: On shape mismatch, norm_size <= 0 or zero visible instances
    """
    if preds.coords.shape != gts.coords.shape:
        raise EvaluationError(f"prediction shape {tuple(preds.coords.shape)} != ground truth {tuple(gts.coords.shape)}")
    if norm_size <= 0:
        raise EvaluationError(f"norm_size must be > 0, got {norm_size}")
    pred = preds.coords.detach().to(torch.float64).reshape(-1, preds.num_joints, 2)
    gt = gts.coords.detach().to(torch.float64).reshape(-1, gts.num_joints, 2)
    visible = (preds.visibility & gts.visibility).reshape(-1, gts.num_joints)
    if not visible.any():
        raise EvaluationError("no visible joint instances to evaluate")

    distance = ((pred - gt) ** 2).sum(dim=-1).sqrt()
    correct = (distance <= threshold_ratio * norm_size) & visible
    hits = correct.sum(dim=0).to(torch.float64)
    counts = visible.sum(dim=0).to(torch.float64)
    per_joint = [float(h / c) if c > 0 else float("nan") for h, c in zip(hits, counts)]

    per_group = {}
    for name, joints in (groups or {}).items():
        index = list(joints)
        total = counts[index].sum()
        per_group[name] = float(hits[index].sum() / total) if total > 0 else float("nan")

    return PckResult(per_joint=per_joint, per_group=per_group, overall=float(hits.sum() / counts.sum()),
                     threshold_ratio=threshold_ratio, sample_count=pred.shape[0])


def predict_keypoints(model: PoseAdaptNet, dataset, batch_size: int = 64) -> torch.Tensor:
    """Argmax-decoded F(G(x)) coordinates (heatmap units) for every sample, in order."""
    loader = make_loader(dataset, batch_size, seed=0, shuffle=False)
    was_training = model.training
    model.eval()
    coords = []
    with torch.no_grad():
        for batch in loader:
            coords.append(argmax_coords(model.inference(batch["image"])))
    model.train(was_training)
    if not coords:
        raise EvaluationError("dataset is empty")
    return torch.cat(coords)


def evaluate_model(model: PoseAdaptNet, dataset: PoseDataset, cfg: ExperimentConfig) -> PckResult:
    """
    PCK of the inference branch on a dataset, in image pixels.

    Args:
        model: PoseAdaptNet
        dataset: PoseDataset
        cfg: Provides threshold_ratio, keypoint_groups and batch size

    Returns:
        PckResult (normalized by the larger image side)
    """
    heat_pred = predict_keypoints(model, dataset, cfg.batch_size)
    image_size = dataset.image_size
    heatmap_size = dataset.heatmap_size
    preds = KeypointSet(coords=to_image_units(heat_pred.to(torch.float64), image_size, heatmap_size))
    gts = KeypointSet(coords=to_image_units(dataset.keypoints.to(torch.float64), image_size, heatmap_size),
                      visibility=dataset.visible)
    return pck(preds, gts, cfg.threshold_ratio, float(max(image_size)), cfg.keypoint_groups)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

_DATASETS: Dict[Tuple[str, Tuple[int, int]], PoseDataset] = {}


def load_split(data_dir, name: str, heatmap_size) -> PoseDataset:
    """Load a split once per process."""
    key = (os.path.abspath(os.path.join(str(data_dir), name)), tuple(heatmap_size))
    if key not in _DATASETS:
        _DATASETS[key] = PoseDataset(key[0], heatmap_size)
    return _DATASETS[key]


def pretrain_signature(cfg: ExperimentConfig, data_dir, mode: str) -> str:
    """Key shared by every run whose pretrained G/F would come out identical."""
    full = config_to_dict(cfg)
    relevant = {
        "data_dir": os.path.abspath(str(data_dir)),
        "oracle": mode == "oracle",
        "seed": cfg.seed,
        "batch_size": cfg.batch_size,
        "pretrain_epochs": cfg.pretrain_epochs,
        "pretrain_iters_per_epoch": cfg.pretrain_iters_per_epoch,
        "backbone": full["backbone"],
        "codec": full["codec"],
        "oks": full["oks"],
        "data": full["data"],
        "optim": {k: v for k, v in full["optim"].items() if k.startswith("pretrain")},
    }
    return sha256_bytes(json.dumps(relevant, sort_keys=True).encode("utf-8"))[:16]


def training_loader(dataset, cfg: ExperimentConfig, seed: int):
    return make_loader(dataset, cfg.batch_size, seed, shuffle=True, drop_last=len(dataset) >= cfg.batch_size)


def pretrained_model(cfg: ExperimentConfig, data_dir, mode: str = "adapt", cache_dir: Optional[str] = None,
                     log: Optional[TrainLog] = None, progress: Optional[bool] = None) -> PoseAdaptNet:
    """
    Build a model and pretrain G/F, reusing a cached pretraining when available.

    Oracle mode pretrains on source and labeled target together.
    """
    model = build_model(cfg.backbone, cfg.variant, cfg.data.num_joints, cfg.codec.heatmap_size, cfg.seed)
    cache_path = None
    if cache_dir:
        ensure_directory(cache_dir)
        cache_path = os.path.join(cache_dir, f"pretrain_{pretrain_signature(cfg, data_dir, mode)}.ckpt")
        if os.path.exists(cache_path):
            parameters, _ = load_checkpoint(cache_path)
            load_parameters_into(model, parameters, ("G", "F"))
            logger.info("reusing pretrained G/F from %s", cache_path)
            return model

    source = load_split(data_dir, "source", cfg.codec.heatmap_size)
    dataset = source
    if mode == "oracle":
        dataset = ConcatDataset([source, load_split(data_dir, "target", cfg.codec.heatmap_size)])
    pretrain(model, training_loader(dataset, cfg, cfg.seed), cfg, log, progress)
    if cache_path:
        save_checkpoint(model, cfg, cache_path, {"stage": "pretrain", "mode": mode})
    return model


@dataclass
class ExperimentResult:
    mode: str
    scores: Dict[str, PckResult]
    log: TrainLog = field(repr=False, default_factory=TrainLog)

    def to_row(self) -> Dict[str, float]:
        row = {}
        for split, result in self.scores.items():
            row.update(result.to_record(prefix=f"{split}_"))
        return row


def run_experiment(cfg: ExperimentConfig, data_dir, out_dir=None, mode: str = "adapt",
                   cache_dir: Optional[str] = None, progress: Optional[bool] = None) -> ExperimentResult:
    """
    Pretrain, optionally adapt, and evaluate on target, unseen and source validation splits.

    Args:
        cfg: Experiment configuration
        data_dir: Directory produced by synthpose_data.generate_splits
        out_dir: Where logs, checkpoints and result.json go (None = nothing written)
        mode: "source_only", "adapt" or "oracle"
        cache_dir: Pretraining cache directory
        progress: Show tqdm bars (None = only on a TTY)

    Returns:
        ExperimentResult
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    seed_everything(cfg.seed)
    log_path = None
    if out_dir:
        ensure_directory(out_dir)
        save_config(cfg, os.path.join(out_dir, "config.resolved.json"))
        log_path = os.path.join(out_dir, "train_log.jsonl")
        if os.path.exists(log_path):
            os.remove(log_path)
    log = TrainLog(path=log_path)

    model = pretrained_model(cfg, data_dir, mode, cache_dir, log, progress)
    heatmap_size = cfg.codec.heatmap_size
    source_val = load_split(data_dir, "source_val", heatmap_size)

    if mode == "adapt":
        source = load_split(data_dir, "source", heatmap_size)
        target = load_split(data_dir, "target", heatmap_size)
        validate_fn = (lambda m: evaluate_model(m, source_val, cfg).overall) if len(source_val) else None
        checkpoint_dir = os.path.join(out_dir, "checkpoints") if out_dir else None
        adapt(model, training_loader(source, cfg, cfg.seed + 1), training_loader(target, cfg, cfg.seed + 2), cfg, log,
              checkpoint_dir, validate_fn, progress)

    scores = {}
    for label, split in EVAL_SPLITS:
        dataset = load_split(data_dir, split, heatmap_size)
        if len(dataset):
            scores[label] = evaluate_model(model, dataset, cfg)
    result = ExperimentResult(mode=mode, scores=scores, log=log)
    if out_dir:
        save_checkpoint(model, cfg, os.path.join(out_dir, "model.ckpt"), {"stage": mode})
        with open(os.path.join(out_dir, "result.json"), 'w', encoding='utf-8') as f:
            json.dump({"mode": mode, "scores": {k: asdict(v) for k, v in scores.items()}}, f,
                      sort_keys=True, indent=2)
    logger.info("%s run: %s", mode, ", ".join(f"{k}={v.overall:.4f}" for k, v in scores.items()))
    return result


# ---------------------------------------------------------------------------
# Ablation
# ---------------------------------------------------------------------------

@dataclass
class AblationArm:
    """One row of an ablation table: a name plus dotted-key overrides."""
    name: str
    overrides: List[str] = field(default_factory=list)
    mode: str = "adapt"
    sweep: Optional[str] = None
    value: Optional[float] = None


@dataclass
class AblationPlan:
    name: str
    arms: List[AblationArm]
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    base: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        names = [arm.name for arm in self.arms]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"ablation arm names must be unique, repeated: {duplicates}")
        if not self.seeds:
            raise ValueError("an ablation plan needs at least one seed")
        for arm in self.arms:
            if arm.mode not in MODES:
                raise ValueError(f"arm {arm.name!r}: mode must be one of {MODES}, got {arm.mode!r}")

    def config_for(self, arm: AblationArm, seed: int) -> ExperimentConfig:
        return resolve_config(self.base, list(arm.overrides) + [f"seed={seed}"])

    def validate(self):
        """Resolve every arm once so a bad override fails before anything runs."""
        for arm in self.arms:
            self.config_for(arm, self.seeds[0])


def _relation_arms() -> List[AblationArm]:
    combos = [("r1",), ("r2",), ("r3",), ("r1", "r2"), ("r1", "r3"), ("r2", "r3"), ("r1", "r2", "r3")]
    return [AblationArm(name=" & ".join(c), overrides=[f"relation_mask={json.dumps(list(c))}"]) for c in combos]


def _structure_arms() -> List[AblationArm]:
    arms = [
        AblationArm(name="Baseline", overrides=["variant=baseline", "dl_terms=none"]),
        AblationArm(name="Baseline w/ DL", overrides=["variant=baseline", "dl_terms=dl"]),
    ]
    for variant, label in (("aidf", "AIDF"), ("idf", "IDF")):
        arms.append(AblationArm(name=label, overrides=[f"variant={variant}", "dl_terms=none"]))
        for terms, suffix in (("inter", "Inter"), ("spec", "Spec"), ("dl", "DL")):
            arms.append(AblationArm(name=f"{label} w/ {suffix}", overrides=[f"variant={variant}", f"dl_terms={terms}"]))
    return arms


def _loss_variant_arms() -> List[AblationArm]:
    return [AblationArm(name=v.upper(), overrides=[f"dl_variant={v}"]) for v in ("mmd", "mse", "kl")]


SENSITIVITY_SWEEPS = {
    "alpha": (0.3, 0.4, 0.5, 0.6, 0.7),
    "beta": (0.1, 0.15, 0.2, 0.25, 0.3),
    "gamma": (0.35, 0.45, 0.55, 0.65),
}


def _sensitivity_arms() -> List[AblationArm]:
    arms = []
    for param, values in SENSITIVITY_SWEEPS.items():
        for value in values:
            keys = ("alpha1", "alpha2") if param == "alpha" else (param,)
            arms.append(AblationArm(name=f"{param}={value}", overrides=[f"{k}={value}" for k in keys],
                                    sweep=param, value=value))
    return arms


def _baseline_arms() -> List[AblationArm]:
    return [
        AblationArm(name="Source-only", mode="source_only"),
        AblationArm(name="IDF w/ DL", overrides=["variant=idf", "dl_terms=dl"]),
        AblationArm(name="Oracle", mode="oracle"),
    ]


BUILTIN_PLANS = {
    "relations": _relation_arms,
    "structures": _structure_arms,
    "loss-variants": _loss_variant_arms,
    "sensitivity": _sensitivity_arms,
    "baselines": _baseline_arms,
}


def builtin_plan(name: str, base: Optional[Dict[str, Any]] = None, seeds: Sequence[int] = (0, 1, 2)) -> AblationPlan:
    """
    A bundled plan: relations, structures, loss-variants, sensitivity or baselines.

    Raises:
        ValueError: On an unknown plan name
    """
    if name not in BUILTIN_PLANS:
        raise ValueError(f"unknown ablation plan {name!r}, expected one of {sorted(BUILTIN_PLANS)}")
    return AblationPlan(name=name, arms=BUILTIN_PLANS[name](), seeds=list(seeds), base=dict(base or {}))


def _run_task(job) -> Dict[str, Any]:
    plan, arm_index, seed, data_dir, out_dir, cache_dir, progress = job
    arm = plan.arms[arm_index]
    row = {"arm": arm.name, "arm_index": arm_index, "seed": seed, "sweep": arm.sweep, "value": arm.value}
    threads = torch.get_num_threads()
    try:
        torch.set_num_threads(1)
        cfg = plan.config_for(arm, seed)
        run_dir = os.path.join(out_dir, "runs", f"arm{arm_index:02d}_seed{seed}") if out_dir else None
        result = run_experiment(cfg, data_dir, run_dir, arm.mode, cache_dir, progress)
        row.update(status="ok", error="", **result.to_row())
    except Exception as e:
        logger.error("arm %r seed %d failed: %s", arm.name, seed, e)
        row.update(status="failed", error=f"{type(e).__name__}: {str(e)}")
    finally:
        torch.set_num_threads(threads)
    return row


def _pretrain_task(job) -> Optional[str]:
    cfg, data_dir, mode, cache_dir, progress = job
    threads = torch.get_num_threads()
    try:
        torch.set_num_threads(1)
        pretrained_model(cfg, data_dir, mode, cache_dir, progress=progress)
        return None
    except Exception as e:
        logger.error("pretraining for seed %d (%s) failed: %s", cfg.seed, mode, e)
        return f"{type(e).__name__}: {str(e)}"
    finally:
        torch.set_num_threads(threads)


def warm_pretrain_cache(plan: AblationPlan, data_dir, cache_dir: str, workers: int = 1,
                        progress: Optional[bool] = False) -> Dict[str, Optional[str]]:
    """
    Pretrain every distinct G/F the plan needs, once, into cache_dir.

    Runs sharing a pretrain_signature (typically every arm of one seed)
    then load the same checkpoint instead of pretraining concurrently.
    A failed pretraining is left for the arms to retry and report.

    Returns:
        {signature: None on success or the error message}
    """
    pending = {}
    for arm in plan.arms:
        for seed in plan.seeds:
            cfg = plan.config_for(arm, seed)
            signature = pretrain_signature(cfg, data_dir, arm.mode)
            if signature not in pending:
                pending[signature] = (cfg, str(data_dir), arm.mode, cache_dir, progress)
    signatures = list(pending)
    jobs = [pending[s] for s in signatures]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            errors = list(pool.map(_pretrain_task, jobs))
    else:
        errors = [_pretrain_task(job) for job in jobs]
    return dict(zip(signatures, errors))


def summarize(results: pd.DataFrame, plan: AblationPlan) -> pd.DataFrame:
    """Median of every metric over the successful seeds of each arm, in plan order."""
    metrics = [c for c in results.columns if c.split("_")[0] in ("target", "unseen", "source")]
    rows = []
    for index, arm in enumerate(plan.arms):
        runs = results[results["arm_index"] == index]
        ok = runs[runs["status"] == "ok"]
        row = {"arm": arm.name, "sweep": arm.sweep, "value": arm.value,
               "n_ok": int(len(ok)), "n_failed": int(len(runs) - len(ok))}
        for metric in metrics:
            row[metric] = float(ok[metric].median()) if len(ok) else float("nan")
        rows.append(row)
    return pd.DataFrame(rows)


def render_table(summary: pd.DataFrame, groups: Sequence[str]) -> str:
    """Text table in percent: one row per arm, group columns then overall."""
    columns = ["arm"] + [f"target_{g}" for g in groups if f"target_{g}" in summary] + \
        [c for c in ("target_overall", "unseen_overall") if c in summary]
    table = summary[columns].copy()
    for column in columns[1:]:
        table[column] = table[column] * 100.0
    table.columns = ["Arm"] + [c.replace("target_", "").replace("overall", "Avg") for c in columns[1:]]
    if "unseen_Avg" in table.columns:
        table = table.rename(columns={"unseen_Avg": "Unseen"})
    return table.to_string(index=False, float_format=lambda v: f"{v:.1f}", na_rep="-") + "\n"


def run_ablation(plan: AblationPlan, data_dir, out_dir=None, workers: int = 0,
                 progress: Optional[bool] = False) -> pd.DataFrame:
    """
    Run every arm x seed, then aggregate medians across seeds.

    Failed runs are recorded (status "failed") and the rest continue.
    With out_dir, writes results.csv (every run), summary.csv, summary.json
    and table.txt.

    Args:
        plan: AblationPlan
        data_dir: Generated dataset directory
        out_dir: Output directory (None = nothing written)
        workers: Worker processes (0 = POSEADAPT_THREADS or 1)
        progress: Show per-run tqdm bars

    Returns:
        Summary DataFrame (one row per arm, in plan order)
    """
    plan.validate()
    cache_dir = os.path.join(out_dir, "pretrain_cache") if out_dir else None
    if out_dir:
        ensure_directory(out_dir)
    jobs = [(plan, index, seed, str(data_dir), out_dir, cache_dir, progress)
            for index in range(len(plan.arms)) for seed in plan.seeds]
    workers = worker_count(workers)
    logger.info("ablation %s: %d arms x %d seeds on %d worker(s)", plan.name, len(plan.arms), len(plan.seeds), workers)
    if cache_dir:
        warm_pretrain_cache(plan, data_dir, cache_dir, workers, progress)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_task, jobs))
    else:
        rows = [_run_task(job) for job in jobs]

    results = pd.DataFrame(rows).sort_values(["arm_index", "seed"], kind="stable").reset_index(drop=True)
    summary = summarize(results, plan)
    if out_dir:
        base_cfg = resolve_config(plan.base)
        results.to_csv(os.path.join(out_dir, "results.csv"), index=False)
        summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False)
        with open(os.path.join(out_dir, "summary.json"), 'w', encoding='utf-8') as f:
            json.dump({"plan": plan.name, "seeds": plan.seeds,
                       "rows": json.loads(summary.to_json(orient="records"))}, f, sort_keys=True, indent=2)
        with open(os.path.join(out_dir, "table.txt"), 'w', encoding='utf-8') as f:
            f.write(render_table(summary, list(base_cfg.keypoint_groups)))
    return summary


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

PLOT_KINDS = ("loss", "discrepancy", "sensitivity")


def _save(fig, out_dir: str, stem: str, frame: pd.DataFrame) -> List[str]:
    png = os.path.join(out_dir, f"{stem}.png")
    csv = os.path.join(out_dir, f"{stem}.csv")
    fig.tight_layout()
    fig.savefig(png, dpi=120)
    plt.close(fig)
    frame.to_csv(csv, index=False)
    return [png, csv]


def _loss_frame(logs: Mapping[str, TrainLog]) -> pd.DataFrame:
    rows = [{"run": run, "stage": r["stage"], "iteration": r["iteration"], "loss": r["loss"]}
            for run, log in logs.items() for r in log.records if "loss" in r]
    return pd.DataFrame(rows, columns=["run", "stage", "iteration", "loss"])


def _discrepancy_frame(logs: Mapping[str, TrainLog]) -> pd.DataFrame:
    rows = [{"run": run, "stage": r["stage"], "iteration": r["iteration"],
             "inter": r["inter"], "spec": r["spec"], "dl": r["dl"]}
            for run, log in logs.items() for r in log.records if "dl" in r]
    return pd.DataFrame(rows, columns=["run", "stage", "iteration", "inter", "spec", "dl"])


def emit_plots(logs: Optional[Mapping[str, TrainLog]], results: Optional[pd.DataFrame], out_dir,
               kinds: Sequence[str] = PLOT_KINDS) -> List[str]:
    """
    Write one PNG figure and one CSV per requested plot kind.

    loss         stage losses over iterations
    discrepancy  L_inter, L_spec and L_dl over iterations
    sensitivity  target PCK against each swept hyperparameter

    Args:
        logs: {run name: TrainLog}
        results: Ablation summary with sweep/value columns (for "sensitivity")
        out_dir: Output directory
        kinds: Subset of PLOT_KINDS

    Returns:
        List of written file paths

    Raises:
        ValueError: If a kind's inputs are missing or empty
    """
    out_dir = str(out_dir)
    ensure_directory(out_dir)
    written = []
    for kind in kinds:
        if kind not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {kind!r}, expected one of {PLOT_KINDS}")
        if kind in ("loss", "discrepancy"):
            if not logs or not any(log.records for log in logs.values()):
                raise ValueError(f"plot {kind!r} needs training logs")
        if kind == "loss":
            frame = _loss_frame(logs)
            fig, ax = plt.subplots(figsize=(7, 4))
            for (run, stage), part in frame.groupby(["run", "stage"], sort=False):
                label = stage if len(logs) == 1 else f"{run} {stage}"
                ax.plot(part["iteration"], part["loss"], label=label, linewidth=1)
            ax.set_xlabel("iteration")
            ax.set_ylabel("loss")
            ax.legend(fontsize=8)
            written += _save(fig, out_dir, "loss_curves", frame)
        elif kind == "discrepancy":
            frame = _discrepancy_frame(logs)
            if frame.empty:
                raise ValueError("plot 'discrepancy' needs logs with discrepancy terms")
            frame = frame[frame["stage"] == "C"] if (frame["stage"] == "C").any() else frame
            fig, ax = plt.subplots(figsize=(7, 4))
            for run, part in frame.groupby("run", sort=False):
                prefix = "" if len(logs) == 1 else f"{run} "
                for term in ("inter", "spec", "dl"):
                    ax.plot(part["iteration"], part[term], label=f"{prefix}L_{term}", linewidth=1)
            ax.set_xlabel("iteration")
            ax.set_ylabel("discrepancy")
            ax.legend(fontsize=8)
            written += _save(fig, out_dir, "discrepancy", frame)
        else:
            if results is None or "sweep" not in results or results["sweep"].isna().all():
                raise ValueError("plot 'sensitivity' needs ablation results with sweep columns")
            frame = results[results["sweep"].notna()][["sweep", "value", "target_overall"]].reset_index(drop=True)
            sweeps = list(dict.fromkeys(frame["sweep"]))
            fig, axes = plt.subplots(1, len(sweeps), figsize=(3.5 * len(sweeps), 3.2), squeeze=False)
            for ax, sweep in zip(axes[0], sweeps):
                part = frame[frame["sweep"] == sweep]
                ax.plot(part["value"], part["target_overall"] * 100.0, marker="o")
                ax.set_xticks(list(part["value"]))
                ax.set_xlabel(sweep)
                ax.set_ylabel("target PCK (%)")
            written += _save(fig, out_dir, "sensitivity", frame)
    return written


# Example usage and testing
if __name__ == "__main__":
    print("Testing PCK...")
    gts = KeypointSet(coords=torch.zeros(1, 4, 2))
    preds = KeypointSet(coords=torch.tensor([[[0.0, 0.0], [10.0, 0.0], [13.0, 0.0], [20.0, 0.0]]]))
    result = pck(preds, gts, threshold_ratio=0.05, norm_size=256.0)
    print(f"\nOverall PCK: {result.overall} (expected 0.5)")
    if result.overall == 0.5:
        print("\n✅ PCK test PASSED")
    else:
        print("\n❌ PCK test FAILED")

    plan = builtin_plan("relations")
    print(f"\nRelation plan arms: {[arm.name for arm in plan.arms]}")
