"""Post-processing score calibration toward a common 1-D barycenter.

Each group's scores are transported onto the Wasserstein barycenter of the
two group score distributions (quantile transport), and the calibrated
scores are blended with the originals, ``s_lam = (1 - lam) s + lam s_hat``.
``search_lambda`` scans ``lam`` on a uniform grid that contains 0, so the
chosen blend never increases the targeted bias.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .fairness import METRICS, ScoreTable, dsp, metrics_panel
from .transport import barycenter_1d


@dataclass(frozen=True)
class CalibrationConfig:
    gamma_targets: tuple[str, ...] = ("TPR", "FPR")
    alpha: float | None = None  # None: share of records in group a
    lambda_grid: int = 101
    quantile_grid: int = 1000

    def __post_init__(self):
        targets = tuple(str(g).upper() for g in self.gamma_targets)
        if not targets:
            raise ValueError("gamma_targets must not be empty")
        bad = sorted(set(targets) - set(METRICS))
        if bad:
            raise ValueError(f"unknown calibration targets {bad}; expected {METRICS}")
        object.__setattr__(self, "gamma_targets", tuple(dict.fromkeys(targets)))
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lambda_grid < 2 or self.quantile_grid < 2:
            raise ValueError("lambda_grid and quantile_grid must be at least 2")


@dataclass(frozen=True)
class CalibrationResult:
    lambda_star: float
    calibrated: ScoreTable
    metrics_before: dict
    metrics_after: dict
    objective_before: float
    objective_after: float
    mean_abs_change: float
    lambdas: np.ndarray = field(repr=False)
    objectives: np.ndarray = field(repr=False)


def _group_scores(t: ScoreTable):
    out = []
    for g in ("a", "b"):
        mask = t.groups == g
        if not mask.any():
            raise ValueError(f"group {g!r} has no records; calibration needs both groups")
        out.append(mask)
    return out


def barycenter_map(t: ScoreTable, alpha: float | None = None,
                   quantile_grid: int = 1000) -> ScoreTable:
    """Send every score through its group's quantile map onto the barycenter.

    A record's CDF position is its mid-rank ``(r - 1/2) / n`` inside its
    group, which keeps the top record off the ``F = 1`` boundary; tied
    scores share a position and so stay tied.
    """
    mask_a, mask_b = _group_scores(t)
    if alpha is None:
        alpha = mask_a.sum() / len(t)
    values, _ = barycenter_1d(t.scores[mask_a], t.scores[mask_b], alpha, quantile_grid)
    s_hat = np.empty(len(t))
    for mask in (mask_a, mask_b):
        scores = t.scores[mask]
        position = (rankdata(scores, method="average") - 0.5) / scores.size
        cell = np.minimum((position * quantile_grid).astype(np.int64), quantile_grid - 1)
        s_hat[mask] = values[cell]
    return t.with_scores(np.clip(s_hat, 0.0, 1.0))


def geometric_repair(t: ScoreTable, s_hat: ScoreTable, lam: float) -> ScoreTable:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if s_hat.ids != t.ids:
        raise ValueError("calibrated scores are not aligned with the table's record ids")
    if lam == 0.0:
        return t
    if lam == 1.0:
        return s_hat
    blended = (1.0 - lam) * t.scores + lam * s_hat.scores
    return t.with_scores(np.clip(blended, 0.0, 1.0))


def objective(t: ScoreTable, targets) -> float:
    return float(sum(dsp(t, g) for g in targets))


def search_lambda(t: ScoreTable, cfg: CalibrationConfig | None = None) -> CalibrationResult:
    cfg = cfg or CalibrationConfig()
    s_hat = barycenter_map(t, cfg.alpha, cfg.quantile_grid)
    lambdas = np.linspace(0.0, 1.0, cfg.lambda_grid)
    objectives = np.array([
        objective(geometric_repair(t, s_hat, lam), cfg.gamma_targets) for lam in lambdas
    ])
    # first grid point within rounding of the minimum: smallest lambda on ties
    best = int(np.flatnonzero(objectives <= objectives.min() + 1e-12)[0])
    lam = float(lambdas[best])
    calibrated = geometric_repair(t, s_hat, lam)
    return CalibrationResult(
        lambda_star=lam,
        calibrated=calibrated,
        metrics_before=metrics_panel(t),
        metrics_after=metrics_panel(calibrated),
        objective_before=float(objectives[0]),
        objective_after=float(objectives[best]),
        mean_abs_change=float(np.mean(np.abs(calibrated.scores - t.scores))),
        lambdas=lambdas,
        objectives=objectives,
    )
