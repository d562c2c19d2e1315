"""Detector accuracy over labeled pairs: confusion rates, ROC sweeps, calibration.

Rates are per pair. A detector with threshold ``t`` flags a pair similar when
``score > t`` (``inclusive=True``: ``score >= t``); for lower-is-similar scores
the comparisons flip.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .detectors import (CostModel, Thresholds, Verdict, gist_similarity, phash_similarity,
                        pipeline_avg_cost, sift_similarity, stage_decide, stage_counts)


class CalibrationError(ValueError):
    def __init__(self, message, best_rate=None):
        super().__init__(message)
        self.best_rate = best_rate


@dataclass
class PairScoreSet:
    pairs: list            # (item_a, item_b) per row
    scores: np.ndarray
    labels: np.ndarray     # True = similar

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if not (len(self.pairs) == len(self.scores) == len(self.labels)):
            raise ValueError("every scored pair needs exactly one label")

    @classmethod
    def from_scores(cls, scores, labels):
        return cls([(i, i) for i in range(len(scores))], scores, labels)


class RocPoint(NamedTuple):
    threshold: float
    fp_rate: float
    tp_rate: float


@dataclass
class RocCurve:
    points: list[RocPoint]

    def auc(self) -> float:
        fp = np.array([p.fp_rate for p in self.points])
        tp = np.array([p.tp_rate for p in self.points])
        order = np.lexsort((tp, fp))
        return float(np.trapezoid(tp[order], fp[order]))


def _is_similar(v) -> bool:
    if isinstance(v, Verdict):
        if v == Verdict.UNCERTAIN:
            raise ValueError("an Uncertain verdict cannot be scored")
        return v == Verdict.SIMILAR
    return bool(v)


def confusion_rates(decisions: Sequence, labels: Sequence[bool]) -> tuple[float | None, float | None]:
    """(fp_rate, fn_rate); a rate over an empty class is None."""
    if len(decisions) != len(labels):
        raise ValueError("decisions must cover every labeled pair")
    flagged = np.array([_is_similar(d) for d in decisions], dtype=bool)
    truth = np.asarray(labels, dtype=bool)
    n_pos, n_neg = int(truth.sum()), int((~truth).sum())
    fp = float((flagged & ~truth).sum() / n_neg) if n_neg else None
    fn = float((~flagged & truth).sum() / n_pos) if n_pos else None
    return fp, fn


def _oriented(scores: np.ndarray, higher_is_similar: bool) -> np.ndarray:
    return scores if higher_is_similar else -scores


def _rates_at(s: np.ndarray, labels: np.ndarray, thresholds: np.ndarray, inclusive: bool):
    """fp and tp rates for 'flag iff s > t' (or >=) at each threshold, vectorized."""
    pos = np.sort(s[labels])
    neg = np.sort(s[~labels])
    side = "left" if inclusive else "right"
    tp = (len(pos) - np.searchsorted(pos, thresholds, side=side)) / max(len(pos), 1)
    fp = (len(neg) - np.searchsorted(neg, thresholds, side=side)) / max(len(neg), 1)
    return fp, tp


def _candidates(s: np.ndarray, inclusive: bool) -> np.ndarray:
    distinct = np.unique(s[np.isfinite(s)])
    if inclusive:
        return np.concatenate([distinct, [math.inf]])
    return np.concatenate([[-math.inf], distinct])


def roc_sweep(scores: PairScoreSet, higher_is_similar: bool = True, inclusive: bool = False) -> RocCurve:
    labels = scores.labels
    if labels.all() or not labels.any():
        raise ValueError("ROC needs at least one similar and one dissimilar pair")
    s = _oriented(scores.scores, higher_is_similar)
    ts = np.concatenate([[-math.inf], np.unique(s[np.isfinite(s)]), [math.inf]])
    fp, tp = _rates_at(s, labels, ts, inclusive)
    points = []
    for t, f, p in zip(ts, fp, tp):
        if points and points[-1].fp_rate == f and points[-1].tp_rate == p:
            continue
        points.append(RocPoint(float(t if higher_is_similar else -t), float(f), float(p)))
    if not higher_is_similar:
        points.reverse()
    return RocCurve(points)


def calibrate_threshold(scores: PairScoreSet, max_fp: float | None = None, max_fn: float | None = None,
                        higher_is_similar: bool = True, inclusive: bool = False) -> float:
    """Loosest threshold meeting one rate target.

    ``max_fp``: the most permissive threshold with fp_rate <= max_fp.
    ``max_fn``: the strictest threshold with fn_rate <= max_fn.
    """
    if (max_fp is None) == (max_fn is None):
        raise ValueError("give exactly one of max_fp, max_fn")
    labels = scores.labels
    s = _oriented(scores.scores, higher_is_similar)
    ts = _candidates(s, inclusive)
    fp, tp = _rates_at(s, labels, ts, inclusive)
    if max_fp is not None:
        if labels.all():
            raise CalibrationError("fp rate undefined: no dissimilar pairs")
        ok = np.nonzero(fp <= max_fp + 1e-12)[0]
        if len(ok) == 0:
            raise CalibrationError(f"fp target {max_fp} unattainable", best_rate=float(fp.min()))
        t = ts[ok[0]]
    else:
        if not labels.any():
            raise CalibrationError("fn rate undefined: no similar pairs")
        fn = 1.0 - tp
        ok = np.nonzero(fn <= max_fn + 1e-12)[0]
        if len(ok) == 0:
            raise CalibrationError(f"fn target {max_fn} unattainable", best_rate=float(fn.min()))
        t = ts[ok[-1]]
    return float(t if higher_is_similar else -t)


# -- pipeline report ---------------------------------------------------------

@dataclass
class PairScores:
    item_a: object
    item_b: object
    similar: bool
    gist: float | None = None
    phash: float | None = None
    sift: tuple[int, int] | None = None

    @property
    def sift_score(self) -> float:
        if self.sift is None:
            return -math.inf
        s = sift_similarity(*self.sift)
        return -math.inf if s is None else s


class ReportRow(NamedTuple):
    method: str
    fp: float | None
    fn: float | None
    cost: float


def singleton_verdicts(pairs: Sequence[PairScores], th: Thresholds) -> dict[str, list[bool]]:
    return {
        "pHash": [p.phash is not None and p.phash > th.phash for p in pairs],
        "GIST": [p.gist is not None and p.gist > th.gist for p in pairs],
        "SIFT": [p.sift_score > th.sift for p in pairs],
    }


def pipeline_verdicts(pairs: Sequence[PairScores], th: Thresholds, cost: CostModel = CostModel(),
                      use_gist: bool = True):
    return [stage_decide(p.gist, p.phash, p.sift, th, cost, use_gist=use_gist) for p in pairs]


def pipeline_report(pairs: Sequence[PairScores], th: Thresholds, cost: CostModel = CostModel(),
                    use_gist: bool = True, label: str = "Pipeline") -> list[ReportRow]:
    labels = [p.similar for p in pairs]
    rows = []
    single = singleton_verdicts(pairs, th)
    costs = {"pHash": cost.c_phash, "GIST": cost.c_gist, "SIFT": cost.c_sift}
    for name in ("pHash", "GIST", "SIFT"):
        fp, fn = confusion_rates(single[name], labels)
        rows.append(ReportRow(name, fp, fn, costs[name]))
    decisions = pipeline_verdicts(pairs, th, cost, use_gist)
    fp, fn = confusion_rates([d.verdict for d in decisions], labels)
    n1, n2, n3 = stage_counts(decisions)
    if use_gist and n1 == len(pairs):
        avg = pipeline_avg_cost(n1, n2, n3, cost)
    else:
        avg = sum(d.cost_units for d in decisions) / max(len(pairs), 1)
    rows.append(ReportRow(label, fp, fn, avg))
    return rows


def calibrate_pipeline(pairs: Sequence[PairScores], gist_fn: float = 0.30, phash_fp: float = 0.01,
                       sift_fp: float = 0.01) -> Thresholds:
    """Stage thresholds from targets: GIST by FN, pHash and SIFT by FP."""
    labels = [p.similar for p in pairs]
    pick = lambda attr: [(p, getattr(p, attr)) for p in pairs if getattr(p, attr) is not None]

    g = pick("gist")
    # GIST passes a pair on when S >= T, so calibrate the inclusive rule
    t_gist = calibrate_threshold(PairScoreSet([(p.item_a, p.item_b) for p, _ in g], [s for _, s in g],
                                              [p.similar for p, _ in g]), max_fn=gist_fn, inclusive=True)
    h = pick("phash")
    t_ph = calibrate_threshold(PairScoreSet([(p.item_a, p.item_b) for p, _ in h], [s for _, s in h],
                                            [p.similar for p, _ in h]), max_fp=phash_fp)
    t_sift = calibrate_threshold(PairScoreSet([(p.item_a, p.item_b) for p in pairs],
                                              [p.sift_score for p in pairs], labels), max_fp=sift_fp)
    return Thresholds(t_gist, t_ph, t_sift)


def _fmt(v):
    return "undefined" if v is None else f"{v:.4f}"


def report_csv(rows: Iterable[ReportRow], universe: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "fp", "fn", "normalized_cost"])
    for r in rows:
        w.writerow([r.method, _fmt(r.fp), _fmt(r.fn), f"{r.cost:.4f}"])
    if universe:
        w.writerow(["# pair universe", universe, "", ""])
    return buf.getvalue()


def report_text(rows: Iterable[ReportRow]) -> str:
    lines = [f"{'method':<12}{'FP':>10}{'FN':>10}{'cost':>10}"]
    for r in rows:
        lines.append(f"{r.method:<12}{_fmt(r.fp):>10}{_fmt(r.fn):>10}{r.cost:>10.2f}")
    return "\n".join(lines) + "\n"


def build_pair_scores(labels: dict, gist: dict | None = None, phash: dict | None = None,
                      sift: dict | None = None) -> list[PairScores]:
    """Join per-item features and per-pair SIFT counts onto the labeled pairs.

    ``labels`` maps (item_a, item_b) -> bool; ``gist`` maps item -> vector;
    ``phash`` maps item -> 64-bit hash; ``sift`` maps (a, b) -> (m, m').
    """
    out = []
    for (a, b), similar in labels.items():
        g = None
        if gist and a in gist and b in gist:
            g = gist_similarity(gist[a], gist[b])
        ph = None
        if phash and a in phash and b in phash:
            ph = phash_similarity(phash[a], phash[b])
        sc = None
        if sift:
            sc = sift.get((a, b)) or sift.get((b, a))
        out.append(PairScores(a, b, bool(similar), g, ph, sc))
    return out
