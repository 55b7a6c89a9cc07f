"""Detection and study statistics: IoU, sensitivity/FP counting, FROC/CPM,
McNemar with Holm-Bonferroni adjustment, and blinded-study scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CPM_FP_RATES = (1 / 8, 1 / 4, 1 / 2, 1, 2, 4, 8)


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# boxes: corner format (lo..hi per axis), 2-D or 3-D

def _volume(box: Sequence[float]) -> float:
    dims = len(box) // 2
    v = 1.0
    for a in range(dims):
        v *= max(0.0, box[dims + a] - box[a])
    return v


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of corner-format boxes (lo..., hi...)."""
    if len(a) != len(b) or len(a) % 2:
        raise MetricError(f"boxes must share corner format, got lengths {len(a)}/{len(b)}")
    va, vb = _volume(a), _volume(b)
    if va == 0.0 or vb == 0.0:
        raise MetricError(f"zero-volume box: {a if va == 0 else b}")
    dims = len(a) // 2
    inter = 1.0
    for ax in range(dims):
        lo = max(a[ax], b[ax])
        hi = min(a[dims + ax], b[dims + ax])
        inter *= max(0.0, hi - lo)
    union = va + vb - inter
    return inter / union


@dataclass
class Detection:
    box: tuple[float, ...]
    score: float


@dataclass
class UnitDetections:
    """Predictions and truth for one evaluation unit (slice or scan)."""

    unit_id: str
    predictions: list[Detection] = field(default_factory=list)
    truths: list[tuple[float, ...]] = field(default_factory=list)


@dataclass
class DetectionSet:
    units: list[UnitDetections]

    def total_truths(self) -> int:
        return sum(len(u.truths) for u in self.units)


def _match_unit(unit: UnitDetections, iou_threshold: float, score_threshold: float,
                ) -> tuple[int, int, list[tuple[float, bool]]]:
    """Greedy highest-score-first matching; one prediction per truth box.

    Returns (hits, false positives, per-prediction (score, is_tp))."""
    preds = sorted((p for p in unit.predictions if p.score >= score_threshold),
                   key=lambda p: -p.score)
    taken = [False] * len(unit.truths)
    hits = 0
    fps = 0
    flags: list[tuple[float, bool]] = []
    for p in preds:
        best, best_iou = -1, iou_threshold
        for t_idx, t in enumerate(unit.truths):
            if taken[t_idx]:
                continue
            v = iou(p.box, t)
            if v >= best_iou:
                best, best_iou = t_idx, v
        if best >= 0:
            taken[best] = True
            hits += 1
            flags.append((p.score, True))
        else:
            fps += 1
            flags.append((p.score, False))
    return hits, fps, flags


def match_and_count(dset: DetectionSet, iou_threshold: float = 0.25,
                    score_threshold: float = 0.0) -> tuple[float, float]:
    """(sensitivity, false positives per unit) under greedy matching."""
    total_truth = dset.total_truths()
    hits = 0
    fps = 0
    for unit in dset.units:
        h, f, _ = _match_unit(unit, iou_threshold, score_threshold)
        hits += h
        fps += f
    sensitivity = hits / total_truth if total_truth else 0.0
    fp_rate = fps / len(dset.units) if dset.units else 0.0
    return sensitivity, fp_rate


@dataclass
class FrocCurve:
    points: list[tuple[float, float]]  # (fp_per_unit, sensitivity), fp ascending

    def sensitivity_at(self, fp_rate: float) -> float:
        """Step interpolation: sensitivity at the largest achieved rate <= target."""
        best = 0.0
        for fp, sens in self.points:
            if fp <= fp_rate:
                best = sens
            else:
                break
        return best


def froc(dset: DetectionSet, iou_threshold: float = 0.25) -> FrocCurve:
    """Sweep score thresholds over all predictions, high to low."""
    if not dset.units or all(not u.predictions for u in dset.units):
        raise MetricError("empty detection set")
    scores = sorted({p.score for u in dset.units for p in u.predictions}, reverse=True)
    points = []
    for thr in scores:
        sens, fp = match_and_count(dset, iou_threshold, score_threshold=thr)
        points.append((fp, sens))
    points.sort(key=lambda p: (p[0], p[1]))
    # enforce the monotone staircase: best sensitivity seen up to each rate
    staircase: list[tuple[float, float]] = []
    best = 0.0
    for fp, sens in points:
        best = max(best, sens)
        staircase.append((fp, best))
    return FrocCurve(staircase)


def cpm(curve: FrocCurve) -> float:
    """Mean sensitivity at 1/8, 1/4, 1/2, 1, 2, 4, 8 false positives per unit."""
    return float(np.mean([curve.sensitivity_at(r) for r in CPM_FP_RATES]))


def cpm_scoreboard(dsets: dict[str, DetectionSet], iou_threshold: float = 0.25) -> dict[str, float]:
    """CPM per named subset (overall plus per size/attenuation groups)."""
    return {name: cpm(froc(d, iou_threshold)) for name, d in dsets.items()}


# ---------------------------------------------------------------------------
# paired significance testing

@dataclass
class PairedOutcomes:
    both_correct: int
    only_a: int
    only_b: int
    both_wrong: int

    def __post_init__(self):
        if min(self.both_correct, self.only_a, self.only_b, self.both_wrong) < 0:
            raise MetricError("paired counts must be non-negative")


def chi2_sf_1df(x: float) -> float:
    """Survival function of chi-square with one degree of freedom."""
    return math.erfc(math.sqrt(x / 2.0))


def mcnemar(pair: PairedOutcomes, exact: bool = False) -> tuple[float, float, bool]:
    """(statistic, p, degenerate) for one paired comparison.

    Chi-square form without continuity correction; ``exact=True`` switches to
    the two-sided binomial test on the discordant counts.
    """
    b, c = pair.only_a, pair.only_b
    n = b + c
    if n == 0:
        return 0.0, 1.0, True
    if exact:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1)) / 2.0 ** n
        return float(min(b, c)), min(1.0, 2.0 * tail), False
    stat = (b - c) ** 2 / n
    return stat, chi2_sf_1df(stat), False


def holm_bonferroni(p_values: Sequence[float]) -> list[float]:
    """Step-down adjustment; monotone in raw-p order and capped at 1."""
    m = len(p_values)
    order = sorted(range(m), key=lambda i: p_values[i])
    adjusted = [0.0] * m
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p_values[idx])
        adjusted[idx] = min(1.0, running)
    return adjusted


def mcnemar_holm(pairs: Sequence[PairedOutcomes], exact: bool = False) -> list[dict]:
    """Per-pair McNemar results with family-wise Holm-adjusted p-values."""
    rows = [mcnemar(p, exact=exact) for p in pairs]
    adjusted = holm_bonferroni([r[1] for r in rows])
    return [{"statistic": stat, "p": p, "p_adjusted": adj, "degenerate": degen}
            for (stat, p, degen), adj in zip(rows, adjusted)]


# ---------------------------------------------------------------------------
# blinded-study scoring

@dataclass
class SessionReport:
    accuracy: float
    cells: dict[str, float]          # percentages of each true class
    counts: dict[str, int]
    question: str = "realness"
    extra: dict = field(default_factory=dict)


def vtt_score(responses: Sequence[dict], true_key: str = "true_label",
              answer_key: str = "answered_label",
              labels: tuple[str, str] = ("real", "synthetic")) -> SessionReport:
    """Confusion cells as percentages of each true class, plus overall accuracy."""
    if not responses:
        raise MetricError("empty response set")
    a, b = labels
    counts = {f"{t}_as_{ans}": 0 for t in labels for ans in labels}
    totals = {t: 0 for t in labels}
    correct = 0
    for r in responses:
        t, ans = r[true_key], r[answer_key]
        if t not in labels or ans not in labels:
            raise MetricError(f"label outside {labels}: {t!r}/{ans!r}")
        counts[f"{t}_as_{ans}"] += 1
        totals[t] += 1
        correct += t == ans
    cells = {}
    for t in labels:
        for ans in labels:
            denom = totals[t]
            cells[f"{t}_as_{ans}"] = 100.0 * counts[f"{t}_as_{ans}"] / denom if denom else 0.0
    accuracy = 100.0 * correct / len(responses)
    return SessionReport(accuracy=accuracy, cells=cells, counts=counts)
