"""Segmentation scores: DSC, recall, precision and F1.

Empty-denominator convention: when prediction and truth are both empty
every score is 1; otherwise a ratio with a zero denominator scores 0.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError

METRIC_NAMES = ("dsc", "recall", "precision", "f1")


@dataclass
class CaseScore:
    case_id: str
    tp: int
    fp: int
    fn: int
    tn: int
    dsc: float
    recall: float
    precision: float
    f1: float


@dataclass
class MetricsReport:
    cases: list[CaseScore]
    dsc: float
    recall: float
    precision: float
    f1: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "summary": {name: getattr(self, name) for name in METRIC_NAMES},
            "cases": [asdict(c) for c in self.cases],
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        """Aligned plain-text table, one row per case plus the mean."""
        width = max([len("case"), len("mean")] + [len(c.case_id) for c in self.cases])
        head = f"{'case':<{width}}  {'DSC':>7}  {'Recall':>7}  {'Prec.':>7}  {'F1':>7}"
        rows = [head, "-" * len(head)]
        for c in self.cases:
            rows.append(f"{c.case_id:<{width}}  {c.dsc:7.4f}  {c.recall:7.4f}  "
                        f"{c.precision:7.4f}  {c.f1:7.4f}")
        rows.append("-" * len(head))
        rows.append(f"{'mean':<{width}}  {self.dsc:7.4f}  {self.recall:7.4f}  "
                    f"{self.precision:7.4f}  {self.f1:7.4f}")
        return "\n".join(rows)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(precision: float, recall: float) -> float:
    s = precision + recall
    return 2 * precision * recall / s if s > 0 else 0.0


def score_case(pred, truth, case_id: str = "case") -> CaseScore:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ")
    p = pred.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    if tp + fp + fn == 0:
        return CaseScore(case_id, tp, fp, fn, tn, 1.0, 1.0, 1.0, 1.0)
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    return CaseScore(case_id, tp, fp, fn, tn,
                     dsc=_ratio(2 * tp, 2 * tp + fp + fn),
                     recall=recall, precision=precision, f1=_f1(precision, recall))


def score_split(cases: list[CaseScore]) -> MetricsReport:
    """Unweighted mean over cases.  The split F1 is the harmonic mean of
    the averaged precision and recall."""
    if not cases:
        raise ValueError("cannot score an empty split")
    recall = float(np.mean([c.recall for c in cases]))
    precision = float(np.mean([c.precision for c in cases]))
    return MetricsReport(
        cases=list(cases),
        dsc=float(np.mean([c.dsc for c in cases])),
        recall=recall,
        precision=precision,
        f1=_f1(precision, recall),
    )
