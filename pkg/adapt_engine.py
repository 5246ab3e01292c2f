"""
Adaptation Engine Module

This module handles:
- Supervised source pretraining of G and F (heatmap MSE + OKS on soft-argmax)
- The three-stage adversarial adaptation iteration:
    Stage A  warm up F', F_a on labeled source data (updates G, F, F', F_a)
    Stage B  maximize branch discrepancy on target data (updates F_a, F'_a)
    Stage C  confuse the branches through the extractor (updates G)
- Optimizers and learning-rate schedules for each stage
- TrainLog: JSON-lines record of every stage loss and discrepancy term
- Non-finite loss detection with rollback to the last good state

Batches are dicts with "image" (B, C, H, W), "keypoints" (B, K, 2) in
heatmap units and "visible" (B, K) bool, as produced by synthpose_data.
"""

import contextlib
import copy
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional

import pandas as pd
import torch
from torch.optim import SGD, Adam, Optimizer
from torch.optim.lr_scheduler import LambdaLR, MultiStepLR
from tqdm import tqdm

from checkpoint_module import save_checkpoint
from discrepancy import dl_loss, ground_false_loss, mse_heatmap, oks_loss
from experiment_config import ExperimentConfig
from heatmap_codec import KeypointSet, encode, soft_argmax_coords
from model_zoo import PoseAdaptNet, parameters


logger = logging.getLogger(__name__)

STAGE_GROUPS = {
    "pretrain": ("G", "F"),
    "A": ("G", "F", "F_spec", "F_a"),
    "B": ("F_a", "F_a_spec"),
    "C": ("G",),
}


class NonFiniteLossError(RuntimeError):
    """A stage produced a NaN or infinite loss."""

    def __init__(self, stage: str, iteration: int, values: Dict[str, float]):
        self.stage = stage
        self.iteration = iteration
        self.values = values
        shown = ", ".join(f"{k}={v:.6g}" for k, v in values.items())
        super().__init__(f"non-finite loss in stage {stage} at iteration {iteration}: {shown}")


class AdaptationAborted(RuntimeError):
    """Adaptation stopped on a non-finite loss; the model holds the last good state."""

    def __init__(self, message: str, checkpoint_path: Optional[str] = None):
        self.checkpoint_path = checkpoint_path
        super().__init__(message)


# ---------------------------------------------------------------------------
# TrainLog
# ---------------------------------------------------------------------------

@dataclass
class TrainLog:
    """
    Per-iteration training records.

    Each record holds "stage" and "iteration" plus float-valued losses.
    Within a stage iterations never decrease, so pretraining and adaptation
    can share one log. Every float is finite. With `path` set, records are
    appended to that file as JSON lines.
    """
    records: List[Dict[str, Any]] = field(default_factory=list)
    path: Optional[str] = None
    _last: Dict[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def append(self, record: Dict[str, Any]):
        if "iteration" not in record or "stage" not in record:
            raise ValueError("log records need 'stage' and 'iteration'")
        stage, iteration = record["stage"], record["iteration"]
        if stage in self._last and iteration < self._last[stage]:
            raise ValueError(
                f"stage {stage} iteration {iteration} after {self._last[stage]}: log must be monotone"
            )
        for key, value in record.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"log value {key}={value} is not finite")
        self._last[stage] = iteration
        self.records.append(record)
        if self.path:
            with open(self.path, 'a', encoding='utf-8') as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def series(self, key: str, stage: Optional[str] = None) -> List[float]:
        return [r[key] for r in self.records if key in r and (stage is None or r["stage"] == stage)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.records)

    @classmethod
    def load(cls, path) -> "TrainLog":
        log = cls()
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                if line.strip():
                    log.append(json.loads(line))
        log.path = str(path)
        return log


# ---------------------------------------------------------------------------
# Data cycling
# ---------------------------------------------------------------------------

class ForeverIterator:
    """Cycles a loader indefinitely; each pass draws a fresh (seeded) order."""

    def __init__(self, loader: Iterable):
        self.loader = loader
        self.passes = 0
        self._iterator = iter(loader)

    def __iter__(self):
        return self

    def __next__(self):
        try:
            return next(self._iterator)
        except StopIteration:
            self.passes += 1
            self._iterator = iter(self.loader)
            try:
                return next(self._iterator)
            except StopIteration:
                raise ValueError("loader yields no batches")


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def pretrain_optimizer(model: PoseAdaptNet, cfg: ExperimentConfig):
    """Adam over {G, F} with step decay at the configured epochs."""
    optimizer = Adam(parameters(model, STAGE_GROUPS["pretrain"]), lr=cfg.optim.pretrain_lr)
    scheduler = MultiStepLR(optimizer, milestones=list(cfg.optim.pretrain_milestones), gamma=cfg.optim.pretrain_gamma)
    return optimizer, scheduler


def stage_optimizer(model: PoseAdaptNet, stage: str, cfg: ExperimentConfig) -> Optimizer:
    """
    Momentum SGD over the groups a stage updates.

    The extractor uses adapt_lr_backbone and every head adapt_lr_heads.
    Groups absent from the variant are skipped.
    """
    groups = STAGE_GROUPS[stage]
    param_groups = []
    backbone = parameters(model, [g for g in groups if g == "G"])
    heads = parameters(model, [g for g in groups if g != "G"])
    if backbone:
        param_groups.append({"params": backbone, "lr": cfg.optim.adapt_lr_backbone})
    if heads:
        param_groups.append({"params": heads, "lr": cfg.optim.adapt_lr_heads})
    return SGD(param_groups, lr=cfg.optim.adapt_lr_heads, momentum=cfg.optim.momentum,
               weight_decay=cfg.optim.weight_decay)


@dataclass
class AdaptOptimizers:
    stage_a: Optimizer
    stage_b: Optimizer
    stage_c: Optimizer
    schedulers: List[LambdaLR]

    def step_schedulers(self):
        for scheduler in self.schedulers:
            scheduler.step()

    def current_lr(self) -> Dict[str, float]:
        return {
            "lr_backbone": self.stage_c.param_groups[0]["lr"],
            "lr_heads": self.stage_b.param_groups[0]["lr"],
        }


def adapt_optimizers(model: PoseAdaptNet, cfg: ExperimentConfig) -> AdaptOptimizers:
    """One SGD per stage, all on lr_0 * (1 + lr_gamma * t) ** -lr_decay."""
    def decay(t):
        return (1.0 + cfg.optim.lr_gamma * t) ** (-cfg.optim.lr_decay)

    optimizers = [stage_optimizer(model, stage, cfg) for stage in ("A", "B", "C")]
    schedulers = [LambdaLR(opt, lr_lambda=decay) for opt in optimizers]
    return AdaptOptimizers(*optimizers, schedulers=schedulers)


# ---------------------------------------------------------------------------
# Step helpers
# ---------------------------------------------------------------------------

@contextlib.contextmanager
def trainable_only(model: PoseAdaptNet, groups: Iterable[str]):
    """Temporarily disable gradients for every parameter outside `groups`."""
    groups = set(groups)
    saved = {}
    for name, p in model.named_parameters():
        saved[name] = p.requires_grad
        p.requires_grad_(model.group_of(name) in groups)
    try:
        yield
    finally:
        for name, p in model.named_parameters():
            p.requires_grad_(saved[name])


def _target_heatmaps(batch: Dict[str, torch.Tensor], cfg: ExperimentConfig) -> torch.Tensor:
    keypoints = KeypointSet(coords=batch["keypoints"], visibility=batch["visible"])
    return encode(keypoints, cfg.codec).values


def _soft_keypoints(values: torch.Tensor, cfg: ExperimentConfig, visibility=None) -> KeypointSet:
    coords = soft_argmax_coords(values, cfg.codec.soft_argmax_temperature)
    return KeypointSet(coords=coords, visibility=visibility)


def _check_finite(stage: str, iteration: int, terms: Dict[str, torch.Tensor]):
    values = {k: float(v.detach()) for k, v in terms.items()}
    if not all(math.isfinite(v) for v in values.values()):
        raise NonFiniteLossError(stage, iteration, values)
    return values


def _dl_weighted(outputs, cfg: ExperimentConfig, weight: float):
    if weight == 0 or not cfg.dl_enabled:
        return None
    return dl_loss(outputs, cfg.discrepancy_config())


def supervised_losses(heatmaps: torch.Tensor, batch: Dict[str, torch.Tensor], cfg: ExperimentConfig):
    """Heatmap MSE against encoded labels and OKS loss of the soft-argmax decode."""
    visible = batch["visible"]
    target = _target_heatmaps(batch, cfg).to(heatmaps.dtype)
    mse = mse_heatmap(heatmaps, target, visible)
    pred = _soft_keypoints(heatmaps, cfg, visible)
    oks = oks_loss(pred, KeypointSet(coords=batch["keypoints"], visibility=visible), cfg.resolved_oks())
    return mse, oks


def _step(optimizer: Optimizer, loss: torch.Tensor):
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def pretrain_step(model: PoseAdaptNet, source_batch, cfg: ExperimentConfig,
                  optimizer: Optional[Optimizer] = None, iteration: int = 0) -> Dict[str, Any]:
    """
    One supervised step on labeled source data, updating {G, F}.

    loss = MSE(F(G(x)), encode(y)) + OKS_loss(soft_argmax(F(G(x))), y)

    Args:
        model: PoseAdaptNet
        source_batch: Labeled batch dict
        cfg: Experiment configuration
        optimizer: Optimizer over {G, F}; a fresh Adam when omitted
        iteration: Index used in diagnostics

    Returns:
        Record with "mse", "oks" and "loss"

    Raises:
        NonFiniteLossError: If the loss is NaN or infinite
    """
    if optimizer is None:
        optimizer, _ = pretrain_optimizer(model, cfg)
    model.zero_grad(set_to_none=True)
    with trainable_only(model, STAGE_GROUPS["pretrain"]):
        heatmaps = model.inference(source_batch["image"])
        mse, oks = supervised_losses(heatmaps, source_batch, cfg)
        loss = mse + oks
        values = _check_finite("pretrain", iteration, {"mse": mse, "oks": oks, "loss": loss})
        _step(optimizer, loss)
    return {"stage": "pretrain", "iteration": iteration, **values}


def stage_a_step(model: PoseAdaptNet, source_batch, cfg: ExperimentConfig,
                 optimizer: Optional[Optimizer] = None, iteration: int = 0) -> Dict[str, Any]:
    """
    Stage A: warm up the second heads on labeled source data.

    loss = MSE(F, encode(y)) + alpha1 * MSE(F, F') + alpha2 * MSE(F, F_a),
    updating {G, F, F', F_a}; F'_a is left untouched. The alpha1 term is
    skipped for the baseline variant (no F').
    """
    if optimizer is None:
        optimizer = stage_optimizer(model, "A", cfg)
    visible = source_batch["visible"]
    model.zero_grad(set_to_none=True)
    with trainable_only(model, STAGE_GROUPS["A"]):
        outputs = model(source_batch["image"])
        target = _target_heatmaps(source_batch, cfg).to(outputs.inference.dtype)
        sup_mse = mse_heatmap(outputs.inference, target, visible)
        terms = {"sup_mse": sup_mse}
        loss = sup_mse
        if model.variant != "baseline" and cfg.alpha1 > 0:
            terms["spec_mse"] = mse_heatmap(outputs.inference, outputs.inference_specific, visible)
            loss = loss + cfg.alpha1 * terms["spec_mse"]
        if cfg.alpha2 > 0:
            terms["adv_mse"] = mse_heatmap(outputs.inference, outputs.adversarial, visible)
            loss = loss + cfg.alpha2 * terms["adv_mse"]
        terms["loss"] = loss
        values = _check_finite("A", iteration, terms)
        _step(optimizer, loss)
    return {"stage": "A", "iteration": iteration, **values}


def stage_b_step(model: PoseAdaptNet, target_batch, cfg: ExperimentConfig,
                 optimizer: Optional[Optimizer] = None, iteration: int = 0) -> Dict[str, Any]:
    """
    Stage B: the adversarial heads maximize the branch discrepancy on target data.

    ground_false mode: loss = GF(F_a, F) - beta * L_dl
    negation mode:     loss = -MSE(F, F_a) - beta * L_dl

    GF is the squared distance between the spatial probability of F_a and
    the ground-false distribution of F, both at ground_false_temperature.
    Only {F_a, F'_a} are updated; G, F and F' are frozen.
    """
    if optimizer is None:
        optimizer = stage_optimizer(model, "B", cfg)
    model.zero_grad(set_to_none=True)
    with trainable_only(model, STAGE_GROUPS["B"]):
        outputs = model(target_batch["image"])
        branch_mse = mse_heatmap(outputs.inference, outputs.adversarial)
        terms = {"branch_mse": branch_mse}
        if cfg.maximization == "ground_false":
            terms["gf_loss"] = ground_false_loss(outputs.adversarial, outputs.inference, cfg.ground_false_temperature)
            loss = terms["gf_loss"]
        else:
            loss = -branch_mse
        report = _dl_weighted(outputs, cfg, cfg.beta)
        if report is not None:
            loss = loss - cfg.beta * report.dl
        terms["loss"] = loss
        values = _check_finite("B", iteration, terms)
        _step(optimizer, loss)
    record = {"stage": "B", "iteration": iteration, **values}
    if report is not None:
        record.update(report.to_record())
    return record


def stage_c_step(model: PoseAdaptNet, target_batch, cfg: ExperimentConfig,
                 optimizer: Optional[Optimizer] = None, iteration: int = 0) -> Dict[str, Any]:
    """
    Stage C: the extractor confuses the two branches on target data.

    loss = MSE(F, F_a) + OKS_loss(soft_argmax(F_a), soft_argmax(F)) + gamma * L_dl,
    updating {G} only. With stage_c_anchor the inference side of the MSE
    and OKS terms is detached, so G moves F_a onto F's prediction instead
    of dragging F towards F_a.
    """
    if optimizer is None:
        optimizer = stage_optimizer(model, "C", cfg)
    model.zero_grad(set_to_none=True)
    with trainable_only(model, STAGE_GROUPS["C"]):
        outputs = model(target_batch["image"])
        anchor = outputs.inference.detach() if cfg.stage_c_anchor else outputs.inference
        branch_mse = mse_heatmap(anchor, outputs.adversarial)
        oks = oks_loss(_soft_keypoints(outputs.adversarial, cfg), _soft_keypoints(anchor, cfg), cfg.resolved_oks())
        loss = branch_mse + oks
        report = _dl_weighted(outputs, cfg, cfg.gamma)
        if report is not None:
            loss = loss + cfg.gamma * report.dl
        values = _check_finite("C", iteration, {"branch_mse": branch_mse, "oks": oks, "loss": loss})
        _step(optimizer, loss)
    record = {"stage": "C", "iteration": iteration, **values}
    if report is not None:
        record.update(report.to_record())
    return record


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------

def pretrain(model: PoseAdaptNet, loader, cfg: ExperimentConfig, log: Optional[TrainLog] = None,
             progress: Optional[bool] = None):
    """
    Supervised pretraining for cfg.pretrain_epochs.

    Args:
        model: PoseAdaptNet
        loader: Labeled batches (source, or source + target for the oracle)
        cfg: Experiment configuration
        log: TrainLog to append to (a new one when omitted)
        progress: Show a tqdm bar (None = only on a TTY)

    Returns:
        Tuple: (model, TrainLog)
    """
    log = log if log is not None else TrainLog()
    iters_per_epoch = cfg.pretrain_iters_per_epoch or len(loader)
    if iters_per_epoch == 0:
        raise ValueError("pretraining loader yields no batches")
    optimizer, scheduler = pretrain_optimizer(model, cfg)
    batches = ForeverIterator(loader)
    model.train()
    iteration = 0
    total = cfg.pretrain_epochs * iters_per_epoch
    logger.info("pretraining %s for %d epochs x %d iterations", model.variant, cfg.pretrain_epochs, iters_per_epoch)
    with tqdm(total=total, desc="pretrain", disable=None if progress is None else not progress) as bar:
        for epoch in range(cfg.pretrain_epochs):
            for _ in range(iters_per_epoch):
                record = pretrain_step(model, next(batches), cfg, optimizer, iteration)
                record.update(epoch=epoch, lr=optimizer.param_groups[0]["lr"])
                log.append(record)
                iteration += 1
                bar.update(1)
            scheduler.step()
            logger.debug("pretrain epoch %d: loss %.5f", epoch, record["loss"])
    return model, log


def adapt(model: PoseAdaptNet, source_loader, target_loader, cfg: ExperimentConfig,
          log: Optional[TrainLog] = None, checkpoint_dir: Optional[str] = None,
          validate_fn: Optional[Callable[[PoseAdaptNet], float]] = None,
          progress: Optional[bool] = None):
    """
    Run the A -> B -> C adaptation loop.

    Each iteration draws one source batch (Stage A) and one target batch
    (Stages B and C); both loaders are cycled independently.

    Args:
        model: Pretrained PoseAdaptNet
        source_loader: Labeled source batches
        target_loader: Unlabeled target batches (labels are ignored)
        cfg: Experiment configuration
        log: TrainLog to append to (a new one when omitted)
        checkpoint_dir: Where periodic and final checkpoints go (None = keep in memory only)
        validate_fn: Called every cfg.eval_every iterations; returns source validation PCK
        progress: Show a tqdm bar (None = only on a TTY)

    Returns:
        Tuple: (model, TrainLog)

    Raises:
        AdaptationAborted: On a non-finite loss, after restoring the last good state
    """
    log = log if log is not None else TrainLog()
    total = cfg.adapt_epochs * cfg.adapt_iters_per_epoch
    if total == 0:
        return model, log

    torch.manual_seed(cfg.seed)
    optimizers = adapt_optimizers(model, cfg)
    sources = ForeverIterator(source_loader)
    targets = ForeverIterator(target_loader)
    last_good = copy.deepcopy(model.state_dict())
    last_good_iteration = -1
    if checkpoint_dir:
        os.makedirs(checkpoint_dir, exist_ok=True)

    logger.info("adapting %s (%s, terms=%s, relations=%s) for %d iterations", model.variant, cfg.dl_variant,
                cfg.dl_terms, ",".join(cfg.relation_mask), total)
    model.train()
    with tqdm(total=total, desc="adapt", disable=None if progress is None else not progress) as bar:
        for iteration in range(total):
            epoch = iteration // cfg.adapt_iters_per_epoch
            source_batch = next(sources)
            target_batch = next(targets)
            try:
                records = [
                    stage_a_step(model, source_batch, cfg, optimizers.stage_a, iteration),
                    stage_b_step(model, target_batch, cfg, optimizers.stage_b, iteration),
                    stage_c_step(model, target_batch, cfg, optimizers.stage_c, iteration),
                ]
            except NonFiniteLossError as e:
                model.load_state_dict(last_good)
                path = None
                if checkpoint_dir:
                    path = save_checkpoint(model, cfg, os.path.join(checkpoint_dir, "last_good.ckpt"),
                                           {"stage": "adapt", "iteration": last_good_iteration})
                logger.error("%s; restored the state after iteration %d", e, last_good_iteration)
                raise AdaptationAborted(f"adaptation aborted: {str(e)}", path) from e

            lrs = optimizers.current_lr()
            for record in records:
                record.update(epoch=epoch, **lrs)
                log.append(record)
            optimizers.step_schedulers()
            bar.update(1)

            done = iteration + 1
            if cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                last_good = copy.deepcopy(model.state_dict())
                last_good_iteration = iteration
                if checkpoint_dir:
                    save_checkpoint(model, cfg, os.path.join(checkpoint_dir, "adapt_latest.ckpt"),
                                    {"stage": "adapt", "iteration": iteration})
            if validate_fn is not None and cfg.eval_every and done % cfg.eval_every == 0:
                score = float(validate_fn(model))
                model.train()
                log.append({"stage": "val", "iteration": iteration, "epoch": epoch, "source_val_pck": score})
                logger.info("iteration %d: source validation PCK %.4f", done, score)

    if checkpoint_dir:
        save_checkpoint(model, cfg, os.path.join(checkpoint_dir, "adapted.ckpt"),
                        {"stage": "adapt", "iteration": total - 1})
    return model, log
