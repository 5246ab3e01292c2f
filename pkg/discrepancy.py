"""
Discrepancy Loss Module

This module handles every differentiable loss used by pretraining and
adaptation:
- Heatmap mean squared error
- Object keypoint similarity (OKS) and its minimizable loss form
- Per-keypoint multi-kernel Gaussian MMD between minibatch distributions
- The three relation terms (r1 identical keypoints across hypotheses,
  r2 different keypoints within one hypothesis, r3 different keypoints
  across hypotheses) and their composition into L_inter / L_spec
- The composite discrepancy L_dl = L_inter - L_spec, with MSE and KL
  substitutes for the MMD base measure
- Ground-false heatmaps, the constant target that turns Stage B's
  maximization into a minimization

MMD samples: each flattened heatmap channel of one batch element is one
sample, so MMD compares the minibatch distributions of two channels.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import torch
import torch.nn.functional as F

from heatmap_codec import HeatmapStack, KeypointSet


logger = logging.getLogger(__name__)

RELATIONS = ("r1", "r2", "r3")
DL_VARIANTS = ("mmd", "mse", "kl")
DL_TERMS = ("dl", "inter", "spec", "none")
ESTIMATORS = ("biased", "unbiased")

# bandwidth used when every pooled sample is identical
FALLBACK_BANDWIDTH = 1.0


class DiscrepancyError(ValueError):
    """Invalid input to a discrepancy loss."""


@dataclass
class KernelConfig:
    """Multi-kernel Gaussian settings for MMD."""
    kernel_count: int = 5
    bandwidth_multiplier: float = 2.0
    base_bandwidth: Union[str, float] = "median"
    estimator: str = "biased"

    def __post_init__(self):
        if self.kernel_count < 1:
            raise ValueError(f"kernel_count must be >= 1, got {self.kernel_count}")
        if self.kernel_count > 1 and self.bandwidth_multiplier <= 1:
            raise ValueError(
                f"bandwidth_multiplier must be > 1 with several kernels, got {self.bandwidth_multiplier}"
            )
        if isinstance(self.base_bandwidth, str):
            if self.base_bandwidth != "median":
                raise ValueError(f"base_bandwidth must be 'median' or a positive number, got {self.base_bandwidth!r}")
        elif not self.base_bandwidth > 0:
            raise ValueError(f"base_bandwidth must be > 0, got {self.base_bandwidth}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")


@dataclass
class OksConfig:
    """
    OKS settings.

    falloff: per-keypoint constants k_i (a single float applies to every joint)
    area: the scale s; None until resolved against the heatmap size
    squared_distance: use ||d||^2 instead of the unsquared distance
    """
    falloff: Union[float, Tuple[float, ...]] = 0.1
    area: Optional[float] = None
    squared_distance: bool = False

    def __post_init__(self):
        values = self.falloff if isinstance(self.falloff, (tuple, list)) else (self.falloff,)
        if isinstance(self.falloff, list):
            self.falloff = tuple(self.falloff)
        if any(v <= 0 for v in values):
            raise ValueError(f"falloff values must be > 0, got {self.falloff}")
        if self.area is not None and self.area <= 0:
            raise ValueError(f"area must be > 0, got {self.area}")

    def resolve(self, heatmap_size) -> "OksConfig":
        """Copy with `area` defaulted to H' * W'."""
        if self.area is not None:
            return self
        return OksConfig(falloff=self.falloff, area=float(heatmap_size[0] * heatmap_size[1]),
                         squared_distance=self.squared_distance)

    def falloff_tensor(self, num_joints: int, like: torch.Tensor) -> torch.Tensor:
        if isinstance(self.falloff, tuple):
            if len(self.falloff) != num_joints:
                raise DiscrepancyError(f"falloff has {len(self.falloff)} values for {num_joints} joints")
            return torch.tensor(self.falloff, dtype=like.dtype, device=like.device)
        return torch.full((num_joints,), float(self.falloff), dtype=like.dtype, device=like.device)


@dataclass
class DiscrepancyConfig:
    """How L_dl is assembled."""
    kernel: KernelConfig = field(default_factory=KernelConfig)
    variant: str = "mmd"
    relation_mask: Tuple[str, ...] = RELATIONS
    terms: str = "dl"
    symmetric_r2: bool = False

    def __post_init__(self):
        self.relation_mask = tuple(self.relation_mask)
        if self.variant not in DL_VARIANTS:
            raise DiscrepancyError(f"unknown discrepancy variant {self.variant!r}, expected one of {DL_VARIANTS}")
        if self.terms not in DL_TERMS:
            raise DiscrepancyError(f"unknown discrepancy terms {self.terms!r}, expected one of {DL_TERMS}")
        unknown = set(self.relation_mask) - set(RELATIONS)
        if unknown:
            raise DiscrepancyError(f"unknown relations {sorted(unknown)}")
        if self.terms != "none" and not self.relation_mask:
            raise DiscrepancyError("relation_mask must not be empty when the discrepancy loss is enabled")


@dataclass
class DiscrepancyReport:
    """
    One batch's discrepancy terms.

    r1, r2, r3 and inter describe the intermediate representations;
    spec_r1..spec_r3 and spec the specific ones. Masked relations are zero.
    """
    r1: torch.Tensor
    r2: torch.Tensor
    r3: torch.Tensor
    inter: torch.Tensor
    spec: torch.Tensor
    dl: torch.Tensor
    spec_r1: torch.Tensor
    spec_r2: torch.Tensor
    spec_r3: torch.Tensor

    def to_record(self, prefix: str = "") -> dict:
        names = ("r1", "r2", "r3", "inter", "spec", "dl", "spec_r1", "spec_r2", "spec_r3")
        return {f"{prefix}{name}": float(getattr(self, name).detach()) for name in names}


# ---------------------------------------------------------------------------
# Heatmap and coordinate losses
# ---------------------------------------------------------------------------

def mse_heatmap(a: torch.Tensor, b: torch.Tensor, visibility: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Mean squared difference over batch, channel and spatial indices.

    Args:
        a: (..., K, H', W') heatmaps
        b: heatmaps of the same shape
        visibility: optional (..., K) mask; masked channels are excluded

    Returns:
        Scalar tensor

    Raises:
        DiscrepancyError: On shape mismatch or when every channel is masked
    """
    if a.shape != b.shape:
        raise DiscrepancyError(f"heatmap shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if visibility is None:
        return F.mse_loss(a, b)
    weight = visibility.to(a.dtype)[..., None, None]
    count = weight.sum() * a.shape[-1] * a.shape[-2]
    if count.item() == 0:
        raise DiscrepancyError("no visible channels to compare")
    return (weight * (a - b) ** 2).sum() / count


def _safe_norm(squared: torch.Tensor) -> torch.Tensor:
    # sqrt with a zero (sub)gradient at the origin
    positive = squared > 0
    safe = torch.where(positive, squared, torch.ones_like(squared))
    return torch.where(positive, safe.sqrt(), torch.zeros_like(squared))


def oks_similarity(pred: KeypointSet, target: KeypointSet, cfg: OksConfig) -> torch.Tensor:
    """
    Object keypoint similarity: sum over mutually visible joints of
    exp(-||pred_i - target_i|| / (2 s k_i)).

    Args:
        pred: Predicted keypoints (..., K, 2)
        target: Reference keypoints (..., K, 2)
        cfg: OKS configuration with a resolved area

    Returns:
        Tensor with the leading batch shape (0-d for a single set)

    Raises:
        DiscrepancyError: On shape mismatch, unresolved area or no visible joints
    """
    if pred.coords.shape != target.coords.shape:
        raise DiscrepancyError(
            f"keypoint shape mismatch: {tuple(pred.coords.shape)} vs {tuple(target.coords.shape)}"
        )
    if cfg.area is None:
        raise DiscrepancyError("OksConfig.area is unresolved; call resolve(heatmap_size) first")
    visible = pred.visibility & target.visibility
    if (visible.sum(dim=-1) == 0).any():
        raise DiscrepancyError("OKS needs at least one mutually visible joint per sample")

    diff = pred.coords - target.coords.to(pred.coords.dtype)
    squared = (diff ** 2).sum(dim=-1)
    distance = squared if cfg.squared_distance else _safe_norm(squared)
    falloff = cfg.falloff_tensor(pred.num_joints, distance)
    per_joint = torch.exp(-distance / (2.0 * cfg.area * falloff))
    return (per_joint * visible.to(per_joint.dtype)).sum(dim=-1)


def oks_loss(pred: KeypointSet, target: KeypointSet, cfg: OksConfig) -> torch.Tensor:
    """
    1 - similarity / K_visible, averaged over any batch dimensions.

    Returns:
        Scalar tensor, 0 at perfect agreement
    """
    similarity = oks_similarity(pred, target, cfg)
    visible = (pred.visibility & target.visibility).sum(dim=-1).to(similarity.dtype)
    return (1.0 - similarity / visible).mean()


# ---------------------------------------------------------------------------
# MMD
# ---------------------------------------------------------------------------

def _pairwise_sq_distances(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """
    Squared Euclidean distances between rows, batched over leading dims.

    Args:
        x: (..., N, D)
        y: (..., M, D)

    Returns:
        (..., N, M) tensor
    """
    x_sq = (x * x).sum(dim=-1, keepdim=True)
    y_sq = (y * y).sum(dim=-1, keepdim=True)
    xy = x @ y.transpose(-1, -2)
    return (x_sq - 2 * xy + y_sq.transpose(-1, -2)).clamp(min=0.0)


def _bandwidth(d_aa, d_bb, d_ab, cfg: KernelConfig) -> torch.Tensor:
    if cfg.base_bandwidth != "median":
        return d_ab.new_tensor(float(cfg.base_bandwidth))
    lead = torch.broadcast_shapes(d_aa.shape[:-2], d_bb.shape[:-2], d_ab.shape[:-2])
    n, m = d_ab.shape[-2:]
    top = torch.cat([d_aa.expand(*lead, n, n), d_ab.expand(*lead, n, m)], dim=-1)
    bottom = torch.cat([d_ab.transpose(-1, -2).expand(*lead, m, n), d_bb.expand(*lead, m, m)], dim=-1)
    pooled = torch.cat([top, bottom], dim=-2)
    rows, cols = torch.triu_indices(n + m, n + m, offset=1, device=pooled.device)
    median = pooled[..., rows, cols].median(dim=-1).values
    return torch.where(median > 0, median, torch.full_like(median, FALLBACK_BANDWIDTH))


def _kernel_sum(distances: torch.Tensor, bandwidth: torch.Tensor, cfg: KernelConfig) -> torch.Tensor:
    bandwidth = bandwidth[..., None, None]
    total = torch.zeros_like(distances)
    center = (cfg.kernel_count - 1) / 2.0
    for j in range(cfg.kernel_count):
        scale = cfg.bandwidth_multiplier ** (j - center)
        total = total + torch.exp(-distances / (2.0 * bandwidth * scale))
    return total


def _mmd_from_distances(d_aa, d_bb, d_ab, cfg: KernelConfig) -> torch.Tensor:
    """MMD^2 from pairwise squared-distance blocks, batched over leading dims."""
    bandwidth = _bandwidth(d_aa, d_bb, d_ab, cfg)
    k_aa = _kernel_sum(d_aa, bandwidth, cfg)
    k_bb = _kernel_sum(d_bb, bandwidth, cfg)
    k_ab = _kernel_sum(d_ab, bandwidth, cfg)
    if cfg.estimator == "biased":
        return k_aa.mean(dim=(-2, -1)) + k_bb.mean(dim=(-2, -1)) - 2.0 * k_ab.mean(dim=(-2, -1))

    n, m = d_ab.shape[-2:]
    if n < 2 or m < 2:
        raise DiscrepancyError(f"unbiased MMD needs at least 2 samples per batch, got {n} and {m}")
    within_a = (k_aa.sum(dim=(-2, -1)) - k_aa.diagonal(dim1=-2, dim2=-1).sum(-1)) / (n * (n - 1))
    within_b = (k_bb.sum(dim=(-2, -1)) - k_bb.diagonal(dim1=-2, dim2=-1).sum(-1)) / (m * (m - 1))
    return within_a + within_b - 2.0 * k_ab.mean(dim=(-2, -1))


def mmd_keypoint(batch_a: torch.Tensor, batch_b: torch.Tensor, cfg: KernelConfig) -> torch.Tensor:
    """
    Multi-kernel Gaussian MMD^2 between two sets of flattened heatmaps.

    Args:
        batch_a: (N, ...) samples; trailing dims are flattened
        batch_b: (M, ...) samples with the same flattened size
        cfg: Kernel configuration

    Returns:
        Scalar tensor

    Raises:
        DiscrepancyError: On empty batches or feature-size mismatch
    """
    if batch_a.shape[0] == 0 or batch_b.shape[0] == 0:
        raise DiscrepancyError("MMD needs non-empty batches")
    a = batch_a.reshape(batch_a.shape[0], -1)
    b = batch_b.reshape(batch_b.shape[0], -1)
    if a.shape[1] != b.shape[1]:
        raise DiscrepancyError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return _mmd_from_distances(
        _pairwise_sq_distances(a, a),
        _pairwise_sq_distances(b, b),
        _pairwise_sq_distances(a, b),
        cfg,
    )


def pairwise_mmd(set_a: torch.Tensor, set_b: torch.Tensor, cfg: KernelConfig) -> torch.Tensor:
    """
    MMD^2 between every channel of set_a and every channel of set_b.

    Args:
        set_a: (K, N, D) - K channels, N samples each
        set_b: (L, M, D)
        cfg: Kernel configuration

    Returns:
        (K, L) tensor whose [m, n] entry equals mmd_keypoint(set_a[m], set_b[n])
    """
    d_aa = _pairwise_sq_distances(set_a, set_a)[:, None]
    d_bb = _pairwise_sq_distances(set_b, set_b)[None]
    d_ab = _pairwise_sq_distances(set_a[:, None], set_b[None])
    return _mmd_from_distances(d_aa, d_bb, d_ab, cfg)


def pairwise_softmax_measure(set_a: torch.Tensor, set_b: torch.Tensor, variant: str) -> torch.Tensor:
    """
    MSE or KL between spatially softmax-normalized channels, batch-averaged.

    KL direction is KL(softmax(a) || softmax(b)), summed spatially.

    Args:
        set_a: (K, N, D)
        set_b: (L, N, D)
        variant: "mse" or "kl"

    Returns:
        (K, L) tensor
    """
    if set_a.shape[1] != set_b.shape[1]:
        raise DiscrepancyError(f"{variant} measure needs equal batch sizes, got {set_a.shape[1]} and {set_b.shape[1]}")
    log_p = F.log_softmax(set_a, dim=-1)[:, None]
    log_q = F.log_softmax(set_b, dim=-1)[None]
    if variant == "mse":
        return ((log_p.exp() - log_q.exp()) ** 2).mean(dim=(-2, -1))
    if variant == "kl":
        return (log_p.exp() * (log_p - log_q)).sum(dim=-1).mean(dim=-1)
    raise DiscrepancyError(f"unknown softmax measure {variant!r}")


def _channel_sets(outputs: torch.Tensor) -> torch.Tensor:
    # (B, K, H, W) -> (K, B, H*W)
    if outputs.dim() != 4:
        raise DiscrepancyError(f"expected (B, K, H, W) heatmaps, got {tuple(outputs.shape)}")
    return outputs.flatten(-2).transpose(0, 1)


def _pairwise_measure(set_a, set_b, kernel: KernelConfig, variant: str) -> torch.Tensor:
    if variant == "mmd":
        return pairwise_mmd(set_a, set_b, kernel)
    if variant in ("mse", "kl"):
        return pairwise_softmax_measure(set_a, set_b, variant)
    raise DiscrepancyError(f"unknown discrepancy variant {variant!r}, expected one of {DL_VARIANTS}")


def relation_terms(outputs_a: torch.Tensor, outputs_b: torch.Tensor, cfg: KernelConfig,
                   variant: str = "mmd", symmetric_r2: bool = False):
    """
    The three relation terms between two hypotheses.

    r1 = (1/K) sum_m D(a_m, b_m)
    r2 = (1/(K(K-1))) sum_m sum_{n != m} D(a_m, a_n)
    r3 = (1/(K(K-1))) sum_m sum_{n != m} D(a_m, b_n)

    With symmetric_r2, r2 averages the a-side and b-side intra terms.

    Args:
        outputs_a: (B, K, H', W') heatmaps of the first hypothesis
        outputs_b: heatmaps of the second hypothesis, same shape
        cfg: Kernel configuration (used by the MMD measure)
        variant: Base measure D: "mmd", "mse" or "kl"
        symmetric_r2: Include the second hypothesis' intra pairs in r2

    Returns:
        Tuple (r1, r2, r3) of scalar tensors
    """
    if outputs_a.shape != outputs_b.shape:
        raise DiscrepancyError(f"hypothesis shape mismatch: {tuple(outputs_a.shape)} vs {tuple(outputs_b.shape)}")
    set_a = _channel_sets(outputs_a)
    set_b = _channel_sets(outputs_b)
    num_joints = set_a.shape[0]

    cross = _pairwise_measure(set_a, set_b, cfg, variant)
    r1 = cross.diagonal().sum() / num_joints
    if num_joints < 2:
        logger.warning("relation terms r2/r3 need K >= 2; using 0 for K=%d", num_joints)
        zero = r1.new_zeros(())
        return r1, zero, zero

    off_diagonal = ~torch.eye(num_joints, dtype=torch.bool, device=cross.device)
    pairs = num_joints * (num_joints - 1)
    within_a = _pairwise_measure(set_a, set_a, cfg, variant)
    r2 = within_a[off_diagonal].sum() / pairs
    if symmetric_r2:
        within_b = _pairwise_measure(set_b, set_b, cfg, variant)
        r2 = 0.5 * (r2 + within_b[off_diagonal].sum() / pairs)
    r3 = cross[off_diagonal].sum() / pairs
    return r1, r2, r3


def _masked_relations(a, b, cfg: DiscrepancyConfig, variant: str):
    r1, r2, r3 = relation_terms(a, b, cfg.kernel, variant, cfg.symmetric_r2)
    terms = {"r1": r1, "r2": r2, "r3": r3}
    for name in RELATIONS:
        if name not in cfg.relation_mask:
            terms[name] = torch.zeros_like(terms[name])
    return terms["r1"], terms["r2"], terms["r3"]


def inter_discrepancy(inter_a: torch.Tensor, inter_b: torch.Tensor, cfg: DiscrepancyConfig,
                      variant: Optional[str] = None) -> torch.Tensor:
    """
    L_inter = r1 + r2 - r3 between the two intermediate representations.

    Args:
        inter_a: F - F' heatmaps (B, K, H', W')
        inter_b: F_a - F'_a heatmaps
        cfg: Discrepancy configuration (relation mask applies)
        variant: Base measure override

    Returns:
        Scalar tensor
    """
    r1, r2, r3 = _masked_relations(inter_a, inter_b, cfg, variant or cfg.variant)
    return r1 + r2 - r3


def spec_discrepancy(spec_a: torch.Tensor, spec_b: torch.Tensor, cfg: DiscrepancyConfig,
                     variant: Optional[str] = None) -> torch.Tensor:
    """
    L_spec: the same three-relation composition between F' and F'_a outputs.
    """
    r1, r2, r3 = _masked_relations(spec_a, spec_b, cfg, variant or cfg.variant)
    return r1 + r2 - r3


def dl_loss(outputs, cfg: DiscrepancyConfig, variant: Optional[str] = None) -> DiscrepancyReport:
    """
    L_dl = L_inter - L_spec for one batch of head outputs.

    `cfg.terms` selects the structure-ablation variant: "dl" (both terms),
    "inter" (L_spec held at 0), "spec" (L_inter held at 0) or "none".

    Args:
        outputs: HeadOutputs with all four heads and both intermediates
        cfg: Discrepancy configuration
        variant: "mmd", "mse" or "kl" (defaults to cfg.variant)

    Returns:
        DiscrepancyReport

    Raises:
        DiscrepancyError: On an unknown variant or incomplete outputs
    """
    variant = variant or cfg.variant
    if variant not in DL_VARIANTS:
        raise DiscrepancyError(f"unknown discrepancy variant {variant!r}, expected one of {DL_VARIANTS}")
    required = ("inference_specific", "adversarial_specific", "intermediate", "adversarial_intermediate")
    for name in required:
        if getattr(outputs, name, None) is None:
            raise DiscrepancyError(f"head outputs are missing {name!r}")

    zero = outputs.intermediate.new_zeros(())
    if cfg.terms in ("dl", "inter"):
        r1, r2, r3 = _masked_relations(outputs.intermediate, outputs.adversarial_intermediate, cfg, variant)
    else:
        r1 = r2 = r3 = zero
    if cfg.terms in ("dl", "spec"):
        s1, s2, s3 = _masked_relations(outputs.inference_specific, outputs.adversarial_specific, cfg, variant)
    else:
        s1 = s2 = s3 = zero

    inter = r1 + r2 - r3
    spec = s1 + s2 - s3
    dl = inter - spec
    return DiscrepancyReport(r1=r1, r2=r2, r3=r3, inter=inter, spec=spec, dl=dl,
                             spec_r1=s1, spec_r2=s2, spec_r3=s3)


# ---------------------------------------------------------------------------
# Ground-false heatmaps
# ---------------------------------------------------------------------------

def spatial_probability(values: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Softmax of each channel over its H' x W' cells, at the given temperature."""
    if temperature <= 0:
        raise DiscrepancyError(f"temperature must be > 0, got {temperature}")
    probs = F.softmax(values.flatten(-2) / temperature, dim=-1)
    return probs.reshape(values.shape)


def ground_false_values(values: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """
    Normalized complement of each channel's spatial softmax, without gradient.

    Args:
        values: (..., K, H', W') raw heatmaps
        temperature: Softmax temperature; below 1 sharpens the peak first

    Returns:
        Tensor of the same shape; every channel sums to 1
    """
    height, width = values.shape[-2:]
    cells = height * width
    if cells < 2:
        raise DiscrepancyError("ground-false heatmaps need at least 2 cells")
    with torch.no_grad():
        probs = spatial_probability(values.detach(), temperature)
        complement = (1.0 - probs) / (cells - 1)
    return complement


def ground_false_heatmap(p: HeatmapStack, temperature: float = 1.0) -> HeatmapStack:
    """HeatmapStack wrapper around ground_false_values."""
    return HeatmapStack(values=ground_false_values(p.values, temperature), peak_amplitude=p.peak_amplitude)


def ground_false_loss(adversarial: torch.Tensor, inference: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """
    Squared distance between the adversarial spatial probability and the
    ground-false distribution of the inference heatmaps.

    Both sides are per-channel distributions, so the loss is the squared L2
    distance summed over cells, averaged over batch and channels, and lies
    in [0, 2]. Only `adversarial` receives gradient.

    Args:
        adversarial: (B, K, H', W') heatmaps being moved off the prediction
        inference: (B, K, H', W') heatmaps whose peaks are avoided
        temperature: Softmax temperature shared by both sides

    Returns:
        Scalar tensor
    """
    if adversarial.shape != inference.shape:
        raise DiscrepancyError(f"shape mismatch {tuple(adversarial.shape)} vs {tuple(inference.shape)}")
    target = ground_false_values(inference, temperature).to(adversarial.dtype)
    probs = spatial_probability(adversarial, temperature)
    return ((probs - target) ** 2).flatten(-2).sum(-1).mean()


# Example usage and testing
if __name__ == "__main__":
    print("Testing discrepancy losses...")
    torch.manual_seed(0)

    kernel = KernelConfig(kernel_count=1, base_bandwidth=1.0)
    value = mmd_keypoint(torch.zeros(1, 1), torch.ones(1, 1), kernel)
    print(f"\nMMD between [0] and [1] with one unit kernel: {value.item():.5f} (expected 0.78694)")

    a = torch.rand(4, 3, 8, 8)
    b = torch.rand(4, 3, 8, 8)
    r1, r2, r3 = relation_terms(a, b, KernelConfig())
    print(f"Relation terms: r1={r1.item():.5f} r2={r2.item():.5f} r3={r3.item():.5f}")

    same = relation_terms(a, a.clone(), KernelConfig())[0]
    if abs(same.item()) < 1e-6:
        print("\n✅ Identical-hypothesis r1 test PASSED")
    else:
        print(f"\n❌ Identical-hypothesis r1 test FAILED ({same.item()})")

    gf = ground_false_values(a)
    sums = gf.flatten(-2).sum(-1)
    if torch.allclose(sums, torch.ones_like(sums), atol=1e-6):
        print("✅ Ground-false normalization test PASSED")
    else:
        print("❌ Ground-false normalization test FAILED")
