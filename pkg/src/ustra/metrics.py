"""Frame-level AP, Time-to-Accident, the TTA/recall sweep, and MetricsReport."""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, UndefinedMetricError
from .uncertainty import mean_uncertainties, uncertainty_traces

RECALL_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


def frame_labels(video):
    """All ones for a positive video, all zeros otherwise."""
    return np.full(video.T, 1 if video.positive else 0, dtype=np.int64)


def average_precision(scores, labels):
    """Sum over positive hits of (R_k - R_{k-1}) * P_k.

    Frames are ranked by score descending; ties keep input order.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise DimensionError(f"{scores.size} scores vs {labels.size} labels")
    npos = int(labels.sum())
    if npos == 0:
        raise UndefinedMetricError("average precision needs at least one positive label")
    hits = labels[np.argsort(-scores, kind="stable")]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    recall = tp / npos
    prev = np.concatenate([[0.0], recall[:-1]])
    return math.fsum(((recall - prev) * precision)[hits])


def tta(scores, threshold, accident_frame, fps):
    """Seconds between the first frame scoring above ``threshold`` and the
    accident frame (both 1-based); 0 if that crossing is not before it."""
    if accident_frame is None:
        raise ContractError("time-to-accident is defined for positive videos only")
    scores = np.asarray(scores, dtype=np.float64)
    above = np.flatnonzero(scores > threshold)
    if above.size == 0:
        return 0.0
    t_star = int(above[0]) + 1
    if t_star >= accident_frame:
        return 0.0
    return (accident_frame - t_star) / fps


@dataclass
class TTACurve:
    thresholds: np.ndarray
    recall: np.ndarray
    mean_tta: np.ndarray
    mtta: float
    tta_r80: float | None
    tta_r80_reason: str | None = None
    joint_mtta: float = 0.0

    def at_recall(self, level):
        return interpolate_tta(self.recall, self.mean_tta, level)


def sweep_thresholds(scores_per_video):
    """Distinct observed scores, minus the maximum (nothing exceeds it)."""
    values = np.unique(np.concatenate([np.ravel(s) for s in scores_per_video]))
    return values[:-1] if values.size > 1 else values


def interpolate_tta(recall, mean_tta, level):
    """Mean TTA at ``level`` recall, interpolating between neighbours.

    Thresholds ascend, so recall is non-increasing along the arrays.
    Returns (value, reason) with value None when the level is unreachable.
    """
    recall = np.asarray(recall)
    reach = np.flatnonzero(recall >= level)
    if reach.size == 0:
        return None, f"recall {level:g} unreachable (max {recall.max() if recall.size else 0:g})"
    i = int(reach[-1])
    if recall[i] == level or i + 1 >= recall.size:
        return float(mean_tta[i]), None
    r0, r1 = recall[i + 1], recall[i]
    t0, t1 = mean_tta[i + 1], mean_tta[i]
    return float(t0 + (level - r0) * (t1 - t0) / (r1 - r0)), None


def tta_curve(scores_per_video, accident_frames, fps):
    """Recall and mean TTA for every swept threshold over positive videos.

    Recall counts videos with a crossing strictly before the accident frame;
    the mean TTA averages over all positive videos (misses count as 0).
    """
    if len(scores_per_video) == 0:
        raise UndefinedMetricError("TTA curve needs at least one positive video")
    thresholds = sweep_thresholds(scores_per_video)
    n = len(scores_per_video)
    taus = np.zeros((thresholds.size, n))
    detected = np.zeros((thresholds.size, n), dtype=bool)
    for j, (s, y, f) in enumerate(zip(scores_per_video, accident_frames, fps)):
        before = np.asarray(s, dtype=np.float64)[: max(int(y) - 1, 0)]
        if before.size == 0:
            continue
        running = np.maximum.accumulate(before)
        first = np.searchsorted(running, thresholds, side="right")  # 0-based
        hit = first < before.size
        detected[:, j] = hit
        taus[:, j] = np.where(hit, (y - (first + 1)) / f, 0.0)
    recall = detected.mean(axis=1)
    mean_tta = taus.mean(axis=1)
    r80, reason = interpolate_tta(recall, mean_tta, 0.8)
    joint = float(taus[detected].mean()) if detected.any() else 0.0
    return TTACurve(
        thresholds=thresholds,
        recall=recall,
        mean_tta=mean_tta,
        mtta=float(mean_tta.mean()),
        tta_r80=r80,
        tta_r80_reason=reason,
        joint_mtta=joint,
    )


@dataclass
class MetricsReport:
    ap: float
    mtta_s: float
    tta_r80_s: float | None
    mau: float
    meu: float
    tta_vs_recall: list = field(default_factory=list)
    tta_r80_reason: str | None = None

    def to_dict(self):
        d = asdict(self)
        d["tta_vs_recall"] = [list(p) for p in self.tta_vs_recall]
        if d["tta_r80_reason"] is None:
            del d["tta_r80_reason"]
        return d

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        d["tta_vs_recall"] = [tuple(p) for p in d.get("tta_vs_recall", [])]
        return cls(**d)


def evaluate_predictions(
    predictions, videos, mtta_mode="per_threshold", uncertainty_population="all"
):
    """MetricsReport from per-video Monte-Carlo samples (M, T, 2).

    ``mtta_mode`` "joint" averages TTA over (threshold, detected video)
    pairs instead of per-threshold means. ``uncertainty_population``
    "positive" restricts mAU/mEU to positive videos.
    """
    if len(predictions) != len(videos):
        raise DimensionError(f"{len(predictions)} predictions for {len(videos)} videos")
    scores = [np.asarray(p)[:, :, 1].mean(axis=0) for p in predictions]
    labels = [frame_labels(v) for v in videos]
    ap = average_precision(np.concatenate(scores), np.concatenate(labels))
    pos = [i for i, v in enumerate(videos) if v.positive]
    curve = tta_curve(
        [scores[i] for i in pos],
        [videos[i].accident_frame for i in pos],
        [videos[i].fps for i in pos],
    )
    chosen = range(len(videos)) if uncertainty_population == "all" else pos
    alts, epts = [], []
    for i in chosen:
        alt, ept = uncertainty_traces(predictions[i])
        alts.append(alt)
        epts.append(ept)
    mau, meu = mean_uncertainties(alts, epts)
    table = []
    for level in RECALL_GRID:
        value, _ = curve.at_recall(level)
        if value is not None:
            table.append((level, value))
    return MetricsReport(
        ap=ap,
        mtta_s=curve.joint_mtta if mtta_mode == "joint" else curve.mtta,
        tta_r80_s=curve.tta_r80,
        mau=mau,
        meu=meu,
        tta_vs_recall=table,
        tta_r80_reason=curve.tta_r80_reason,
    )
