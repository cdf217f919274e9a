"""Damage indices, relative variations and per-level detection reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

KINDS = ("ae", "gan")


def damage_index(outputs) -> float:
    """Complement of the mean discriminator output."""
    out = np.asarray(outputs, dtype=float).ravel()
    if out.size == 0:
        raise DomainError("damage index of an empty output list")
    if np.any(out < 0) or np.any(out > 1) or not np.all(np.isfinite(out)):
        raise DomainError("discriminator outputs must lie in [0, 1]")
    return float(min(max(1.0 - out.mean(), 0.0), 1.0))


def relative_variation(level_mean: float, baseline_mean: float, kind: str) -> float:
    """Change of a level statistic relative to the undamaged baseline.

    For ``kind="ae"`` the statistic is the mean reconstruction MAE and the
    variation is ``(m_d - m_0) / m_0``. For ``kind="gan"`` it is the damage
    index and the variation is ``(DI_d - DI_0) / (1 - DI_0)``, the share of
    the remaining headroom that damage consumes.
    """
    if kind == "ae":
        if baseline_mean == 0:
            raise DomainError("baseline mean of zero: relative variation undefined")
        return (level_mean - baseline_mean) / baseline_mean
    if kind == "gan":
        if baseline_mean >= 1:
            raise DomainError("baseline damage index of 1: relative variation undefined")
        return (level_mean - baseline_mean) / (1.0 - baseline_mean)
    raise DomainError(f"unknown kind {kind!r}; expected one of {KINDS}")


def aggregate_dofs(per_dof):
    """Elementwise mean of equally long per-DOF score lists."""
    arrs = [np.asarray(s, dtype=float) for s in per_dof]
    if not arrs:
        raise DomainError("no DOF score lists given")
    if len({a.shape for a in arrs}) != 1:
        raise DomainError(f"mismatched window counts per DOF: {[len(a) for a in arrs]}")
    return np.mean(arrs, axis=0)


def spearman(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    from scipy.stats import spearmanr

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise DomainError("spearman needs two equally long sequences of length >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y).statistic)


@dataclass
class LevelStats:
    level: float
    scores: list
    mean: float
    statistic: float  # mean MAE (ae) or damage index (gan)
    rel_variation: float


@dataclass
class DetectionReport:
    """Scores, trend statistics and relative variations per damage level.

    ``scores`` maps level to a list of ``(window_id, dof, score)`` tuples.
    For the GAN the trend statistic is the damage index; for the AE it is
    the mean MAE.
    """

    kind: str
    levels: list
    stats: list
    scores: dict
    per_dof: dict = field(default_factory=dict)

    @property
    def baseline(self) -> LevelStats:
        return self.stats[0]

    @property
    def means(self):
        return [s.mean for s in self.stats]

    @property
    def damage_indices(self):
        if self.kind != "gan":
            raise DomainError("damage indices only exist for discriminator reports")
        return [s.statistic for s in self.stats]

    @property
    def rel_variations(self):
        return [s.rel_variation for s in self.stats]

    def spearman(self) -> float:
        return spearman(self.levels, [s.statistic for s in self.stats])

    def scatter_rows(self):
        rows = []
        for level in self.levels:
            for wid, dof, score in self.scores[level]:
                rows.append((self.kind, level, wid, dof, score))
        return rows

    def trend_rows(self):
        return [(self.kind, s.level, s.mean, s.rel_variation) for s in self.stats]

    def dof_trend_rows(self):
        rows = []
        for dof in sorted(self.per_dof):
            for s in self.per_dof[dof]:
                rows.append((self.kind, dof, s.level, s.mean, s.rel_variation))
        return rows


def _level_stats(level, values, kind):
    values = [float(v) for v in values]
    mean = float(np.mean(values))
    statistic = damage_index(values) if kind == "gan" else mean
    return LevelStats(level, values, mean, statistic, 0.0)


def _with_variation(stats, kind):
    base = stats[0].statistic
    for s in stats:
        s.rel_variation = 0.0 if s is stats[0] else relative_variation(s.statistic, base, kind)
    return stats


def build_report(scores, kind: str) -> DetectionReport:
    """Assemble a report from ``{level: scores}``.

    Each score entry is either a bare number or a ``(window_id, dof, score)``
    tuple. Scores of several DOFs are aggregated window-wise for the trend;
    per-DOF trends are kept alongside.
    """
    if kind not in KINDS:
        raise DomainError(f"unknown kind {kind!r}; expected one of {KINDS}")
    norm = {}
    for level, entries in scores.items():
        level = float(level)
        rows = []
        for i, e in enumerate(entries):
            rows.append((int(e[0]), int(e[1]), float(e[2])) if isinstance(e, (tuple, list)) else (i, 0, float(e)))
        if not rows:
            raise DomainError(f"no scores for level {level}")
        norm[level] = rows
    levels = sorted(norm)
    if not levels or not math.isclose(levels[0], 0.0, abs_tol=1e-12):
        raise DomainError("the undamaged baseline (level 0) is required")

    stats, per_dof = [], {}
    dofs = sorted({d for rows in norm.values() for _, d, _ in rows})
    for level in levels:
        rows = norm[level]
        if len(dofs) > 1:
            by_dof = {d: [s for _, dd, s in sorted(rows) if dd == d] for d in dofs}
            combined = aggregate_dofs([by_dof[d] for d in dofs])
        else:
            combined = [s for _, _, s in rows]
        stats.append(_level_stats(level, combined, kind))
    _with_variation(stats, kind)
    if len(dofs) > 1:
        for d in dofs:
            dstats = [_level_stats(level, [s for _, dd, s in norm[level] if dd == d], kind) for level in levels]
            per_dof[d] = _with_variation(dstats, kind)
    return DetectionReport(kind, levels, stats, {lv: norm[lv] for lv in levels}, per_dof)
