"""Point-sampled cross-entropy training with verified reverse-mode gradients.

The loss supervises the whole refinement sequence: logits are bilinearly
sampled from each correlation volume at random points drawn from the
background, instance interiors, and boundary bands, then compared to the
ground-truth label of the containing cell. Gradients for the parameter
bundle flow through sampling, correlation, the channel maps, and every
refinement step; a central-difference checker validates them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .correlation import BACKGROUND, Click, LabelMask, click_to_feature_coords
from .evaluation import chebyshev_distance_inside, distance_transform_center
from .features import FeatureConfig, handcrafted_base
from .params import TrainableParams
from .tensors import ContinuousPoint, bilinear_sample


class NonFiniteError(RuntimeError):
    """A pipeline stage produced NaN/Inf; names the stage."""


@dataclass
class LossConfig:
    n_background: int = 64
    n_interior: int = 32
    n_boundary: int = 32
    boundary_radius: int = 2
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if min(self.n_background, self.n_interior, self.n_boundary) < 0:
            raise ValueError("sampling counts must be >= 0")
        if self.boundary_radius < 1:
            raise ValueError("boundary_radius must be >= 1")


@dataclass
class SupervisionPoint:
    location: ContinuousPoint
    gt_label: int
    region: str  # background | interior | boundary


def sample_supervision_points(
    gt: LabelMask, cfg: LossConfig, rng: Optional[np.random.Generator] = None
) -> List[SupervisionPoint]:
    """Random continuous points per region; cells are drawn with replacement.

    The boundary band of an instance is its own cells within
    cfg.boundary_radius (Chebyshev) of a label change; interior is the rest.
    A point's gt label is the label of its containing cell. Empty regions
    contribute no points.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    grid = gt.grid
    points: List[SupervisionPoint] = []

    def draw(cells: np.ndarray, count: int, region: str) -> None:
        if len(cells) == 0 or count == 0:
            return
        for _ in range(count):
            row, col = cells[rng.integers(len(cells))]
            x = col - 0.5 + rng.uniform(0.0, 1.0)
            y = row - 0.5 + rng.uniform(0.0, 1.0)
            points.append(
                SupervisionPoint(
                    location=ContinuousPoint(float(x), float(y)),
                    gt_label=int(grid[row, col]),
                    region=region,
                )
            )

    draw(np.argwhere(grid == BACKGROUND), cfg.n_background, "background")
    for label in sorted(set(int(v) for v in np.unique(grid)) - {BACKGROUND}):
        depth = chebyshev_distance_inside(grid == label)
        draw(np.argwhere(depth > cfg.boundary_radius), cfg.n_interior, "interior")
        draw(
            np.argwhere((depth >= 1) & (depth <= cfg.boundary_radius)),
            cfg.n_boundary,
            "boundary",
        )
    return points


def point_ce_loss(volumes, gt: LabelMask, points: Sequence[SupervisionPoint]) -> float:
    """Mean over points of -log p(gt), then mean over volumes."""
    if not volumes:
        raise ValueError("need at least one volume")
    if not points:
        raise ValueError("need at least one supervision point")
    labels = volumes[0].row_labels
    row_of = {lbl: i for i, lbl in enumerate(labels)}
    for p in points:
        if p.gt_label not in row_of:
            raise ValueError(f"gt label {p.gt_label} missing from volume rows {labels}")
    gt_rows = np.array([row_of[p.gt_label] for p in points])
    total = 0.0
    for vol in volumes:
        logits = np.stack(
            [bilinear_sample(vol.scores, p.location) for p in points], axis=0
        ).astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        picked = logp[np.arange(len(points)), gt_rows]
        total += picked.sum() * (-1.0 / len(points))
    return float(total * (1.0 / len(volumes)))


# ---------------------------------------------------------------------------
# Differentiable pipeline
# ---------------------------------------------------------------------------


@dataclass
class PairProblem:
    """One training subproblem: reference clicks -> target-frame supervision."""

    base_ref: np.ndarray  # unscaled feature stack (D, H, W), float64
    base_tgt: np.ndarray
    click_points: List[ContinuousPoint]  # feature coords on the reference frame
    instance_ids: List[int]
    gt: LabelMask  # target-frame labels; ids not in instance_ids already mapped to 0


@dataclass
class ParamGrads:
    background: np.ndarray
    key_weight: np.ndarray
    key_bias: np.ndarray
    value_weight: np.ndarray
    value_bias: np.ndarray
    channel_scales: np.ndarray

    def fields(self) -> Dict[str, np.ndarray]:
        return {
            "background": self.background,
            "key_weight": self.key_weight,
            "key_bias": self.key_bias,
            "value_weight": self.value_weight,
            "value_bias": self.value_bias,
            "channel_scales": self.channel_scales,
        }


@dataclass
class _Leaves:
    background: ad.Var
    key_w: ad.Var
    key_b: ad.Var
    value_w: ad.Var
    value_b: ad.Var
    scales: ad.Var


def _make_leaves(params: TrainableParams) -> _Leaves:
    return _Leaves(
        background=ad.Var(params.background),
        key_w=ad.Var(params.key_map.weight),
        key_b=ad.Var(params.key_map.bias),
        value_w=ad.Var(params.value_map.weight),
        value_b=ad.Var(params.value_map.bias),
        scales=ad.Var(params.channel_scales),
    )


def _check_finite(value: np.ndarray, stage: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values at stage {stage!r}")


def _apply_map(f: ad.Var, w: ad.Var, b: ad.Var, residual: bool) -> ad.Var:
    d = b.value.shape[0]
    mixed = ad.add(ad.channel_contract(w, f), ad.reshape(b, (d, 1, 1)))
    return ad.add(f, mixed) if residual else mixed


def _pair_loss_var(
    leaves: _Leaves,
    problem: PairProblem,
    params: TrainableParams,
    steps: int,
    points: Sequence[SupervisionPoint],
) -> ad.Var:
    d = leaves.background.value.shape[0]
    scales3 = ad.reshape(leaves.scales, (d, 1, 1))
    f_ref = ad.mul(ad.Var(problem.base_ref), scales3)
    f_tgt = ad.mul(ad.Var(problem.base_tgt), scales3)
    _check_finite(f_ref.value, "features")

    rows = [ad.reshape(leaves.background, (1, d))]
    if problem.click_points:
        rows.append(ad.bilinear_gather(f_ref, problem.click_points))
    e = ad.concat0(rows)
    current = ad.channel_contract(e, f_tgt)
    _check_finite(current.value, "correlate")

    # Supervision covers the refined sequence; the initial volume stands in
    # only when refinement is disabled.
    volumes = []
    if steps > 0:
        key = _apply_map(f_tgt, leaves.key_w, leaves.key_b, params.key_map.residual)
        value = _apply_map(f_tgt, leaves.value_w, leaves.value_b, params.value_map.residual)
        for tau in range(steps):
            s = ad.softmax_axis(current, axis=0)
            attention = ad.softmax_axis(ad.pixel_contract(s, key), axis=1)
            current = ad.add(current, ad.channel_contract(attention, value))
            _check_finite(current.value, f"refine step {tau + 1}")
            volumes.append(current)
    else:
        volumes = [current]

    row_labels = [BACKGROUND] + list(problem.instance_ids)
    row_of = {lbl: i for i, lbl in enumerate(row_labels)}
    for p in points:
        if p.gt_label not in row_of:
            raise ValueError(f"gt label {p.gt_label} missing from volume rows {row_labels}")
    onehot = np.zeros((len(points), len(row_labels)))
    for i, p in enumerate(points):
        onehot[i, row_of[p.gt_label]] = 1.0

    pts = [p.location for p in points]
    total: Optional[ad.Var] = None
    for vol in volumes:
        logits = ad.bilinear_gather(vol, pts)
        z = ad.sub(logits, ad.detached_max(logits, axis=1))
        logp = ad.sub(z, ad.log(ad.vsum(ad.exp(z), axis=1, keepdims=True)))
        picked = ad.vsum(ad.mul(logp, onehot))
        vol_loss = ad.mul(picked, -1.0 / len(points))
        total = vol_loss if total is None else ad.add(total, vol_loss)
    loss = ad.mul(total, 1.0 / len(volumes))
    _check_finite(loss.value, "loss")
    return loss


def _total_loss_var(
    problems: Sequence[PairProblem],
    params: TrainableParams,
    steps: int,
    points_per_problem: Sequence[Sequence[SupervisionPoint]],
) -> Tuple[ad.Var, _Leaves]:
    leaves = _make_leaves(params)
    total: Optional[ad.Var] = None
    for problem, points in zip(problems, points_per_problem):
        part = _pair_loss_var(leaves, problem, params, steps, points)
        total = part if total is None else ad.add(total, part)
    return ad.mul(total, 1.0 / len(problems)), leaves


def _sample_all_points(
    problems: Sequence[PairProblem], loss_cfg: LossConfig, rng: np.random.Generator
) -> List[List[SupervisionPoint]]:
    return [sample_supervision_points(p.gt, loss_cfg, rng) for p in problems]


def grad_params(
    problems: Sequence[PairProblem],
    params: TrainableParams,
    steps: int,
    loss_cfg: LossConfig,
    rng: Optional[np.random.Generator] = None,
    points_per_problem: Optional[Sequence[Sequence[SupervisionPoint]]] = None,
) -> Tuple[float, ParamGrads]:
    """Loss and reverse-mode gradients for every trainable field (float64)."""
    if points_per_problem is None:
        rng = rng if rng is not None else np.random.default_rng(loss_cfg.rng_seed)
        points_per_problem = _sample_all_points(problems, loss_cfg, rng)
    loss, leaves = _total_loss_var(problems, params, steps, points_per_problem)
    ad.backward(loss)

    def grad_of(v: ad.Var) -> np.ndarray:
        return v.grad if v.grad is not None else np.zeros_like(v.value)

    grads = ParamGrads(
        background=grad_of(leaves.background),
        key_weight=grad_of(leaves.key_w),
        key_bias=grad_of(leaves.key_b),
        value_weight=grad_of(leaves.value_w),
        value_bias=grad_of(leaves.value_b),
        channel_scales=grad_of(leaves.scales),
    )
    return float(loss.value), grads


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_field: Dict[str, float]
    n_coordinates: int


def _param_fields(params: TrainableParams) -> Dict[str, np.ndarray]:
    return {
        "background": params.background,
        "key_weight": params.key_map.weight,
        "key_bias": params.key_map.bias,
        "value_weight": params.value_map.weight,
        "value_bias": params.value_map.bias,
        "channel_scales": params.channel_scales,
    }


def grad_check(
    params: TrainableParams,
    problems: Sequence[PairProblem],
    steps: int,
    loss_cfg: Optional[LossConfig] = None,
    eps: float = 1e-5,
) -> GradCheckReport:
    """Central-difference verification of grad_params (float64 throughout).

    Step per coordinate is eps * max(1, |theta|); relative error is
    |ga - gn| / max(|ga|, |gn|, 1e-8).
    """
    loss_cfg = loss_cfg or LossConfig(n_background=8, n_interior=4, n_boundary=4)
    rng = np.random.default_rng(loss_cfg.rng_seed)
    points = _sample_all_points(problems, loss_cfg, rng)

    _, analytic = grad_params(problems, params, steps, loss_cfg, points_per_problem=points)

    def loss_at(p: TrainableParams) -> float:
        loss, _ = _total_loss_var(problems, p, steps, points)
        return float(loss.value)

    per_field: Dict[str, float] = {}
    worst = 0.0
    count = 0
    analytic_fields = analytic.fields()
    for name, values in _param_fields(params).items():
        flat = values.reshape(-1)
        g_analytic = analytic_fields[name].reshape(-1)
        field_worst = 0.0
        for k in range(flat.size):
            h = eps * max(1.0, abs(flat[k]))
            orig = flat[k]
            trial = params.copy()
            tf = _param_fields(trial)[name].reshape(-1)
            tf[k] = orig + h
            up = loss_at(trial)
            tf[k] = orig - h
            down = loss_at(trial)
            tf[k] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(g_analytic[k] - numeric) / max(abs(g_analytic[k]), abs(numeric), 1e-8)
            field_worst = max(field_worst, rel)
            count += 1
        per_field[name] = field_worst
        worst = max(worst, field_worst)
    return GradCheckReport(max_rel_error=worst, per_field=per_field, n_coordinates=count)


def random_pair_problem(
    rng: np.random.Generator, dim: int = 6, height: int = 5, width: int = 5, n_instances: int = 2
) -> PairProblem:
    """Small randomized problem for gradient checking.

    Feature and parameter scales are kept moderate so the attention softmax
    stays unsaturated; saturated attention produces gradients below the
    resolution central differences can certify.
    """
    base_ref = rng.normal(scale=0.5, size=(dim, height, width))
    base_tgt = rng.normal(scale=0.5, size=(dim, height, width))
    clicks = [
        ContinuousPoint(float(rng.uniform(0, width - 1)), float(rng.uniform(0, height - 1)))
        for _ in range(n_instances)
    ]
    ids = list(range(1, n_instances + 1))
    gt = LabelMask(rng.integers(0, n_instances + 1, size=(height, width)))
    return PairProblem(
        base_ref=base_ref, base_tgt=base_tgt, click_points=clicks, instance_ids=ids, gt=gt
    )


def random_params(
    rng: np.random.Generator, dim: int, scale: float = 0.15, map_scale: float = 0.08
) -> TrainableParams:
    from .refine import ChannelMap

    return TrainableParams(
        background=rng.normal(scale=scale, size=dim),
        key_map=ChannelMap(rng.normal(scale=map_scale, size=(dim, dim)), rng.normal(scale=map_scale, size=dim), residual=True),
        value_map=ChannelMap(rng.normal(scale=map_scale, size=(dim, dim)), rng.normal(scale=map_scale, size=dim), residual=False),
        channel_scales=1.0 + rng.normal(scale=scale, size=dim),
    )


# ---------------------------------------------------------------------------
# Toy trainer
# ---------------------------------------------------------------------------


def training_init(
    feature_cfg: FeatureConfig, seed: int = 43, sigma: float = 0.02
) -> TrainableParams:
    """Starting point for training runs.

    Inference defaults (identity key, zero value) leave the attention
    softmax saturated and its gradients dead; training instead starts from
    small non-residual channel maps so the refinement branch participates
    from the first step.
    """
    from .refine import ChannelMap

    params = TrainableParams.default(feature_cfg)
    rng = np.random.default_rng(seed)
    d = params.dim
    params.key_map = ChannelMap(
        rng.normal(scale=sigma, size=(d, d)), rng.normal(scale=sigma, size=d), residual=False
    )
    params.value_map = ChannelMap(
        rng.normal(scale=sigma, size=(d, d)), rng.normal(scale=sigma, size=d), residual=False
    )
    return params


def build_pair_problems(sample, feature_cfg: FeatureConfig) -> List[PairProblem]:
    """Per-scene subproblems: a same-frame pair then each consecutive pair.

    Clicks are re-synthesized per pair at the distance-transform center of
    every instance visible in the reference frame; instances that only
    appear later count as background in the target GT (they have no row).
    """
    bases = [handcrafted_base(f, feature_cfg) for f in sample.keyframe_frames()]
    t_count = len(bases)
    pairs = [(0, 0)] + [(t, t + 1) for t in range(t_count - 1)]
    problems = []
    for ref, tgt in pairs:
        ids = sorted(set(int(v) for v in np.unique(sample.gt_full[ref])) - {BACKGROUND})
        if not ids:
            continue
        clicks = []
        for inst in ids:
            row, col = distance_transform_center(sample.gt_full[ref] == inst)
            clicks.append(
                click_to_feature_coords(Click(frame=ref, x=int(col), y=int(row), instance=inst))
            )
        grid = sample.gt_feature[tgt].grid.copy()
        keep = np.isin(grid, ids)
        grid[~keep] = BACKGROUND
        problems.append(
            PairProblem(
                base_ref=bases[ref],
                base_tgt=bases[tgt],
                click_points=clicks,
                instance_ids=ids,
                gt=LabelMask(grid),
            )
        )
    return problems


def train_toy(
    dataset: Sequence,
    params0: TrainableParams,
    steps: int,
    lr: float = 1e-2,
    seed: int = 0,
    feature_cfg: Optional[FeatureConfig] = None,
    refinement_steps: int = 5,
    loss_cfg: Optional[LossConfig] = None,
) -> Tuple[TrainableParams, List[float]]:
    """Plain full-batch gradient descent over all frame-pair subproblems."""
    if not dataset:
        raise ValueError("empty training dataset")
    feature_cfg = feature_cfg or FeatureConfig()
    loss_cfg = loss_cfg or LossConfig()
    problems: List[PairProblem] = []
    for sample in dataset:
        problems.extend(build_pair_problems(sample, feature_cfg))
    params = params0.copy()
    losses: List[float] = []
    for step in range(steps):
        rng = np.random.default_rng([seed, step])
        loss, grads = grad_params(problems, params, refinement_steps, loss_cfg, rng=rng)
        if not math.isfinite(loss):
            raise RuntimeError(f"training diverged at step {step}")
        losses.append(loss)
        params.background -= lr * grads.background
        params.key_map.weight -= lr * grads.key_weight
        params.key_map.bias -= lr * grads.key_bias
        params.value_map.weight -= lr * grads.value_weight
        params.value_map.bias -= lr * grads.value_bias
        params.channel_scales -= lr * grads.channel_scales
    return params, losses
