"""Bias metrics for scored, group-labelled record pairs.

Rates are computed with the closed threshold convention ``score >= tau``.
Threshold-dependent metrics (DP, EO, EOD) compare the two groups at one
``tau``; the distributional metrics (DSP) integrate the absolute gap of a
rate curve over ``tau`` uniform on [0, 1], and the ranking metrics (AUC,
xAUC) are Mann-Whitney statistics with ties counted one half.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

GROUPS = ("a", "b")
METRICS = ("PR", "TPR", "FPR")


@dataclass(frozen=True)
class ScoreTable:
    """Records of (id, score, group, label); arrays are aligned and read-only."""

    ids: tuple[str, ...]
    scores: np.ndarray
    groups: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        scores = np.array(self.scores, dtype=float).reshape(-1)
        groups = np.array([str(g) for g in self.groups], dtype=object).reshape(-1)
        labels = np.array(self.labels).reshape(-1)
        n = len(ids)
        if not (scores.size == groups.size == labels.size == n):
            raise ValueError("ids, scores, groups and labels must have equal length")
        if n == 0:
            raise ValueError("score table is empty")
        if len(set(ids)) != n:
            raise ValueError("record ids must be unique")
        if not np.all(np.isfinite(scores)) or scores.min() < 0 or scores.max() > 1:
            raise ValueError("scores must lie in [0, 1]")
        bad = sorted(set(groups) - set(GROUPS))
        if bad:
            raise ValueError(f"groups must be 'a' or 'b', got {bad}")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        labels = labels.astype(np.int64)
        for arr in (scores, groups, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_records(cls, records: Iterable[Sequence]) -> "ScoreTable":
        rows = list(records)
        if not rows:
            raise ValueError("score table is empty")
        ids, scores, groups, labels = zip(*rows)
        return cls(ids, scores, groups, labels)

    def __len__(self) -> int:
        return len(self.ids)

    def records(self) -> list[tuple[str, float, str, int]]:
        return [
            (i, float(s), str(g), int(y))
            for i, s, g, y in zip(self.ids, self.scores, self.groups, self.labels)
        ]

    def with_scores(self, scores) -> "ScoreTable":
        return ScoreTable(self.ids, scores, self.groups, self.labels)

    def swap_groups(self) -> "ScoreTable":
        swapped = np.where(self.groups == "a", "b", "a")
        return ScoreTable(self.ids, self.scores, swapped, self.labels)

    def has_group(self, group: str) -> bool:
        return bool(np.any(self.groups == group))

    def select(self, group: str | None = None, metric: str = "PR") -> np.ndarray:
        """Scores of the records that a rate ``metric`` is conditioned on."""
        mask = np.ones(len(self), dtype=bool)
        if group is not None:
            mask &= self.groups == group
        if metric == "TPR":
            mask &= self.labels == 1
        elif metric == "FPR":
            mask &= self.labels == 0
        elif metric != "PR":
            raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
        return self.scores[mask]


@dataclass(frozen=True)
class MetricCurve:
    """Step function ``gamma(tau) = Pr(score >= tau)`` over one population.

    ``values[k]`` is the rate on ``(breakpoints[k-1], breakpoints[k]]``
    (with ``breakpoints[-1]`` read as minus infinity); beyond the last
    breakpoint the rate is 0.
    """

    metric: str
    group: str
    breakpoints: np.ndarray
    values: np.ndarray

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        padded = np.append(self.values, 0.0)
        return padded[np.searchsorted(self.breakpoints, tau, side="left")]


def _rate_curve(scores: np.ndarray, metric: str, group: str) -> MetricCurve:
    points, counts = np.unique(scores, return_counts=True)
    # share of scores >= each distinct point
    at_least = np.cumsum(counts[::-1])[::-1] / scores.size
    return MetricCurve(metric, group, points, at_least)


def metric_curve(t: ScoreTable, metric: str, group: str) -> MetricCurve:
    if group not in GROUPS or not t.has_group(group):
        raise ValueError(f"group {group!r} has no records")
    scores = t.select(group, metric)
    if scores.size == 0:
        kind = "positives" if metric == "TPR" else "negatives"
        raise ValueError(f"group {group!r} has no {kind}; {metric} is undefined")
    return _rate_curve(scores, metric, group)


def curve_gap(a: MetricCurve, b: MetricCurve) -> float:
    """Exact integral of ``|a(tau) - b(tau)|`` over ``tau`` in [0, 1]."""
    cuts = np.concatenate([[0.0, 1.0], a.breakpoints, b.breakpoints])
    cuts = np.unique(np.clip(cuts, 0.0, 1.0))
    # both curves are constant on (cuts[k-1], cuts[k]]; sample the right end
    right = cuts[1:]
    gap = np.abs(a(right) - b(right))
    return float(np.sum(gap * np.diff(cuts)))


def dsp(t: ScoreTable, metric: str = "PR") -> float:
    """Expected absolute rate gap between groups for ``tau ~ U[0, 1]``."""
    return curve_gap(metric_curve(t, metric, "a"), metric_curve(t, metric, "b"))


def threshold_bias(t: ScoreTable, tau: float, kind: str = "DP") -> float:
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")

    def gap(metric):
        a = metric_curve(t, metric, "a")(tau)
        b = metric_curve(t, metric, "b")(tau)
        return abs(float(a) - float(b))

    kind = kind.upper()
    if kind == "DP":
        return gap("PR")
    if kind == "EO":
        return gap("TPR")
    if kind == "EOD":
        return max(gap("TPR"), gap("FPR"))
    raise ValueError(f"unknown bias kind {kind!r}; expected DP, EO or EOD")


def _outrank(pos: np.ndarray, neg: np.ndarray) -> float:
    """P(pos > neg) + P(pos == neg) / 2 over all pairs."""
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative")
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    not_above = np.searchsorted(neg, pos, side="right")
    # twice the Mann-Whitney U is an integer, so the ratio is exact
    twice_u = int(np.sum(below)) + int(np.sum(not_above))
    return twice_u / (2 * pos.size * neg.size)


def auc(t: ScoreTable, group: str | None = None) -> float:
    return _outrank(t.select(group, "TPR"), t.select(group, "FPR"))


def xauc(t: ScoreTable, pos_group: str, neg_group: str) -> float:
    """Chance that a positive of ``pos_group`` outranks a negative of ``neg_group``."""
    return _outrank(t.select(pos_group, "TPR"), t.select(neg_group, "FPR"))


def delta_xauc(t: ScoreTable) -> float:
    return xauc(t, "a", "b") - xauc(t, "b", "a")


def metrics_panel(t: ScoreTable) -> dict[str, float]:
    """Before/after comparison panel.

    DSP-EOD averages the TPR and FPR gaps, so it stays on the same [0, 1]
    scale as the other DSP entries.
    """
    dsp_tpr, dsp_fpr = dsp(t, "TPR"), dsp(t, "FPR")
    ab, ba = xauc(t, "a", "b"), xauc(t, "b", "a")
    return {
        "DSP-DP": dsp(t, "PR"),
        "DSP-EO": dsp_tpr,
        "DSP-EOD": 0.5 * (dsp_tpr + dsp_fpr),
        "AUC": auc(t),
        "xAUC_a^b": ab,
        "xAUC_b^a": ba,
        "ΔxAUC": ab - ba,
    }
