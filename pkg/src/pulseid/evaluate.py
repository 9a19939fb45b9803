"""One-vs-rest verification metrics, dataset splitting, and report output.

Each subject's score column is treated as a binary detector against all
other subjects' windows; EER and AUC are macro-averaged over subjects.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, ingest
from .errors import EvalError


def roc_eer_auc(pos_scores, neg_scores) -> dict:
    """Equal error rate and area under the ROC curve.

    AUC is the exact rank statistic P(pos > neg) + 0.5 P(pos = neg),
    computed with integer pair counts. EER is read off the
    piecewise-linear ROC where the false positive rate crosses the false
    negative rate.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise EvalError("roc_eer_auc needs at least one score on each side")

    neg_sorted = np.sort(neg)
    n_gt = int(np.searchsorted(neg_sorted, pos, side="left").sum())
    n_ge = int(np.searchsorted(neg_sorted, pos, side="right").sum())
    auc = (n_gt + 0.5 * (n_ge - n_gt)) / (pos.size * neg.size)

    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted = np.sort(pos)
    # vertex k: accept when score >= thresholds[k]
    fpr = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / neg.size
    fnr = np.searchsorted(pos_sorted, thresholds, side="left") / pos.size
    fpr = np.concatenate([[0.0], fpr])
    fnr = np.concatenate([[1.0], fnr])
    diff = fpr - fnr
    # diff starts at -1 and ends >= 0, so a crossing vertex always exists
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        eer = fpr[k]
    else:
        t = -diff[k - 1] / (diff[k] - diff[k - 1])
        eer = fpr[k - 1] + t * (fpr[k] - fpr[k - 1])
    return {"eer": float(eer), "auc": float(auc)}


@dataclass
class ScoreRow:
    """One authentication window: its true subject and per-class scores."""

    true_subject: int
    scores: np.ndarray
    session: str = "session1"


def per_subject_eval(rows: list[ScoreRow], n_subjects: int | None = None) -> dict:
    """One-vs-rest EER/AUC per subject, macro-averaged.

    Subjects with no positive windows are reported as skipped rather than
    failing the whole evaluation.
    """
    if not rows:
        raise EvalError("no score rows to evaluate")
    n = n_subjects or rows[0].scores.size
    per_subject: dict[int, dict] = {}
    skipped: list[int] = []
    for s in range(n):
        pos = [r.scores[s] for r in rows if r.true_subject == s]
        neg = [r.scores[s] for r in rows if r.true_subject != s]
        if not pos or not neg:
            skipped.append(s)
            continue
        per_subject[s] = roc_eer_auc(pos, neg) | {"n_pos": len(pos), "n_neg": len(neg)}
    if not per_subject:
        raise EvalError("every subject was skipped")
    return {
        "per_subject": per_subject,
        "skipped": skipped,
        "mean_eer": float(np.mean([v["eer"] for v in per_subject.values()])),
        "mean_auc": float(np.mean([v["auc"] for v in per_subject.values()])),
    }


def morphology_report(rppg_segments: dict, cppg_segments: dict) -> dict:
    """Pearson correlation between mean periodic segments, per subject.

    Inputs map subject id -> (K, 90) segment arrays. Subjects missing a
    side are skipped and listed.
    """
    per_subject: dict[int, float] = {}
    skipped = []
    for s in sorted(set(rppg_segments) | set(cppg_segments)):
        a = rppg_segments.get(s)
        b = cppg_segments.get(s)
        if a is None or b is None or len(a) == 0 or len(b) == 0:
            skipped.append(s)
            continue
        per_subject[s] = dsp.pearson(np.asarray(a).mean(axis=0), np.asarray(b).mean(axis=0))
    mean = float(np.mean(list(per_subject.values()))) if per_subject else float("nan")
    return {"per_subject": per_subject, "skipped": skipped, "mean": mean}


@dataclass
class SplitSlice:
    record_idx: int
    tag: str  # train | val | test-intra | test-cross
    t0: int  # seconds
    t1: int


def split_dataset(manifest: ingest.Manifest, window_s: float = 10.0) -> list[SplitSlice]:
    """Temporal 60/20/20 split of each session-1 video; session-2 videos
    go wholesale to cross-session testing. Boundaries land on whole
    seconds (floored)."""
    slices = []
    for idx, rec in enumerate(manifest.records):
        t, _, _, _ = ingest.peek_frames_header(rec.video_path)
        duration = t / rec.fps
        if rec.session_tag == "session1":
            if duration < 5.0 * window_s:
                raise EvalError(
                    f"record {idx}: video of {duration:.1f} s is shorter than 5x "
                    f"the {window_s:.0f} s window and cannot be split"
                )
            t1 = int(np.floor(0.6 * duration))
            t2 = int(np.floor(0.8 * duration))
            end = int(np.floor(duration))
            slices.append(SplitSlice(idx, "train", 0, t1))
            slices.append(SplitSlice(idx, "val", t1, t2))
            slices.append(SplitSlice(idx, "test-intra", t2, end))
        else:
            slices.append(SplitSlice(idx, "test-cross", 0, int(np.floor(duration))))
    return slices


def write_scores_csv(path, rows: list[ScoreRow]) -> None:
    """subject, window_idx, session, score_0..score_{N-1}; windows are
    numbered per subject in row order."""
    n = rows[0].scores.size if rows else 0
    counters: dict[int, int] = {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "window_idx", "session"] + [f"score_{i}" for i in range(n)])
        for r in rows:
            idx = counters.get(r.true_subject, 0)
            counters[r.true_subject] = idx + 1
            writer.writerow(
                [r.true_subject, idx, r.session] + [f"{v:.10g}" for v in r.scores]
            )


def write_report_json(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_mean_segment_csv(path, subject: int, rppg_mean, cppg_mean=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["index", "rppg_mean"] + (["cppg_mean"] if cppg_mean is not None else [])
        writer.writerow(header)
        for i, v in enumerate(rppg_mean):
            row = [i, f"{v:.10g}"]
            if cppg_mean is not None:
                row.append(f"{cppg_mean[i]:.10g}")
            writer.writerow(row)
