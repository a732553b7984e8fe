"""Affine-invariant depth metrics and benchmark rank aggregation.

Monocular predictions live in an arbitrary affine frame, so every
prediction is first fitted to ground truth with closed-form least
squares over scale and shift; AbsRel and the delta-threshold accuracy
are then computed on the aligned map. A small rank-table utility loads
published benchmark scores from CSV and reproduces average-rank
leaderboards with configurable tie handling.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "AlignParams",
    "DegenerateFitError",
    "MetricsReport",
    "RankTable",
    "RankingResult",
    "SetMetrics",
    "absrel",
    "affine_align",
    "apply_align",
    "compute_rankings",
    "default_rank_table_path",
    "delta1",
    "evaluate",
    "load_rank_table",
    "render_markdown",
]

DELTA1_THRESHOLD = 1.25
# floor applied to aligned predictions before ratio metrics only
RATIO_FLOOR = 1e-6


class DegenerateFitError(ValueError):
    """Least-squares alignment has no unique solution (constant prediction)."""


@dataclass(frozen=True)
class AlignParams:
    scale: float
    shift: float


def _masked(pred, gt, mask):
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64).ravel()
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and gt sizes differ: {pred.shape} vs {gt.shape}")
    if mask is None:
        m = np.ones_like(gt, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool).ravel()
        if m.shape != gt.shape:
            raise ValueError("mask size must match the maps")
    return pred[m], gt[m]


def affine_align(pred, gt, mask=None) -> AlignParams:
    """Closed-form least squares fit ``gt ~ scale * pred + shift``.

    Needs at least two masked pixels and positive ground truth; raises
    ``DegenerateFitError`` when the prediction is constant under the mask.
    """
    p, t = _masked(pred, gt, mask)
    n = p.size
    if n < 2:
        raise ValueError(f"alignment needs >= 2 pixels, got {n}")
    if np.any(t <= 0):
        raise ValueError("ground truth must be positive under the mask")
    sp = p.sum()
    spp = (p * p).sum()
    st = t.sum()
    spt = (p * t).sum()
    det = n * spp - sp * sp
    if det <= 1e-12 * max(n * spp, 1.0):
        raise DegenerateFitError("prediction is constant under the mask")
    scale = (n * spt - sp * st) / det
    shift = (st - scale * sp) / n
    return AlignParams(scale=float(scale), shift=float(shift))


def apply_align(pred, params: AlignParams) -> np.ndarray:
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    return params.scale * pred + params.shift


def absrel(pred, gt, mask=None) -> float:
    """Mean absolute relative error, in percent."""
    p, t = _masked(pred, gt, mask)
    if p.size == 0:
        raise ValueError("empty mask")
    if np.any(t <= 0):
        raise ValueError("ground truth must be positive under the mask")
    return float(100.0 * np.mean(np.abs(p - t) / t))


def delta1(pred, gt, mask=None) -> float:
    """Share of pixels with max(pred/gt, gt/pred) < 1.25, in percent.

    Aligned predictions may cross zero; they are floored at a tiny
    positive value so the ratio stays defined (such pixels fail the
    threshold anyway).
    """
    p, t = _masked(pred, gt, mask)
    if p.size == 0:
        raise ValueError("empty mask")
    if np.any(t <= 0):
        raise ValueError("ground truth must be positive under the mask")
    p = np.maximum(p, RATIO_FLOOR)
    ratio = np.maximum(p / t, t / p)
    return float(100.0 * np.mean(ratio < DELTA1_THRESHOLD))


@dataclass
class SetMetrics:
    absrel: float
    delta1: float
    count: int
    degenerate_count: int = 0

    def to_dict(self) -> dict:
        return {"absrel": self.absrel, "delta1": self.delta1,
                "count": self.count, "degenerate_count": self.degenerate_count}


@dataclass
class MetricsReport:
    per_set: dict[str, SetMetrics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in self.per_set.items()}


def evaluate(predict_fn, eval_sets) -> MetricsReport:
    """Run ``predict_fn(image_tensor) -> (H, W) array`` over named eval sets.

    Every prediction is affine-aligned to the sample's ground-truth
    disparity before scoring. Samples whose predictions cannot be aligned
    (constant output) are excluded from the averages and counted.
    """
    report = MetricsReport()
    for name, samples in eval_sets.items():
        rels, hits, degenerate = [], [], 0
        for sample in samples:
            pred = np.asarray(predict_fn(sample.image), dtype=np.float64)
            gt = sample.gt_disparity
            if pred.shape != gt.shape:
                raise ValueError(
                    f"prediction shape {pred.shape} does not match gt {gt.shape}")
            try:
                aligned = apply_align(pred, affine_align(pred, gt))
            except DegenerateFitError:
                degenerate += 1
                continue
            rels.append(absrel(aligned, gt))
            hits.append(delta1(aligned, gt))
        scored = len(rels)
        report.per_set[name] = SetMetrics(
            absrel=float(np.mean(rels)) if scored else float("nan"),
            delta1=float(np.mean(hits)) if scored else float("nan"),
            count=scored, degenerate_count=degenerate)
    return report


# -- benchmark rank tables -------------------------------------------------------

@dataclass(frozen=True)
class RankTable:
    """Published benchmark scores: methods x metric columns."""

    methods: tuple[str, ...]
    groups: tuple[str, ...]
    columns: tuple[str, ...]
    directions: tuple[str, ...]
    values: np.ndarray


@dataclass(frozen=True)
class RankingResult:
    methods: tuple[str, ...]
    per_column_ranks: np.ndarray
    all_avg: np.ndarray
    group_avg: np.ndarray
    tie_rule: str


def default_rank_table_path() -> Path:
    return Path(str(resources.files("spectral_pgd").joinpath(
        "data/zero_shot_depth_benchmark.csv")))


def load_rank_table(path=None) -> RankTable:
    """Read a rank-table CSV: method, group, then ``name:direction`` columns."""
    path = Path(path) if path is not None else default_rank_table_path()
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh)
                if row and not row[0].lstrip().startswith("#")]
    header = rows[0]
    if header[:2] != ["method", "group"]:
        raise ValueError("rank table must start with 'method,group' columns")
    columns, directions = [], []
    for cell in header[2:]:
        name, _, direction = cell.partition(":")
        if direction not in ("lower", "higher"):
            raise ValueError(f"column {cell!r} needs a ':lower' or ':higher' suffix")
        columns.append(name)
        directions.append(direction)
    methods, groups, values = [], [], []
    for row in rows[1:]:
        methods.append(row[0])
        groups.append(row[1])
        values.append([float(v) for v in row[2:]])
    if len(set(methods)) != len(methods):
        raise ValueError("duplicate method names in rank table")
    return RankTable(methods=tuple(methods), groups=tuple(groups),
                     columns=tuple(columns), directions=tuple(directions),
                     values=np.asarray(values, dtype=np.float64))


def _rank_column(scores: np.ndarray, direction: str, tie_rule: str) -> np.ndarray:
    keyed = scores if direction == "lower" else -scores
    return rankdata(keyed, method=tie_rule)


def compute_rankings(table: RankTable, tie_rule: str = "average") -> RankingResult:
    """Per-column ranks (1 is best), averaged over all methods and within groups."""
    if tie_rule not in ("average", "min"):
        raise ValueError("tie_rule must be 'average' or 'min'")
    m, k = table.values.shape
    all_ranks = np.zeros((m, k))
    group_ranks = np.zeros((m, k))
    groups = np.asarray(table.groups)
    for j in range(k):
        all_ranks[:, j] = _rank_column(table.values[:, j], table.directions[j], tie_rule)
        for g in set(table.groups):
            idx = np.flatnonzero(groups == g)
            group_ranks[idx, j] = _rank_column(
                table.values[idx, j], table.directions[j], tie_rule)
    return RankingResult(methods=table.methods, per_column_ranks=all_ranks,
                         all_avg=all_ranks.mean(axis=1),
                         group_avg=group_ranks.mean(axis=1), tie_rule=tie_rule)


def render_markdown(table: RankTable, ranking: RankingResult) -> str:
    """Leaderboard sorted by overall average rank."""
    order = np.argsort(ranking.all_avg, kind="stable")
    lines = ["| method | group | " + " | ".join(table.columns)
             + " | avg rank (all) | avg rank (group) |"]
    lines.append("|" + "---|" * (len(table.columns) + 4))
    for i in order:
        cells = [table.methods[i], table.groups[i]]
        cells += [f"{v:g}" for v in table.values[i]]
        cells += [f"{ranking.all_avg[i]:.1f}", f"{ranking.group_avg[i]:.1f}"]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
