"""PCC / SCC / RMSE with explicit undefined semantics, pooled evaluation and reports.

A correlation over a constant series is undefined rather than an error:
``MetricValue.value`` is ``None`` and ``undefined_reason`` says why. Reports
render such cells as ``-``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError
from .scorekit import ASPECTS, GRANULARITIES, PHONE_RESCALE_FACTOR

ZERO_VAR_GOLD = "zero-variance-gold"
ZERO_VAR_PRED = "zero-variance-pred"
TOO_FEW = "n<2"


@dataclass
class PairedSeries:
    predictions: Sequence[float]
    gold: Sequence[float]
    granularity: str = ""
    aspect: str = ""

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(self.predictions, dtype=float)
        g = np.asarray(self.gold, dtype=float)
        if p.shape != g.shape or p.ndim != 1:
            raise MetricError(f"length mismatch: {p.size} predictions vs {g.size} gold")
        if p.size == 0:
            raise MetricError("empty series")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
            raise MetricError("non-finite value in series")
        return p, g


@dataclass
class MetricValue:
    value: Optional[float]
    n: int
    undefined_reason: Optional[str] = None

    @property
    def defined(self) -> bool:
        return self.undefined_reason is None

    def to_dict(self) -> dict:
        return {"value": self.value, "n": self.n, "undefined_reason": self.undefined_reason}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricValue":
        return cls(d["value"], d["n"], d.get("undefined_reason"))


def _as_series(s, gold=None) -> PairedSeries:
    if isinstance(s, PairedSeries):
        return s
    return PairedSeries(s, gold)


def _pearson(x: np.ndarray, y: np.ndarray) -> MetricValue:
    n = x.size
    if n < 2:
        return MetricValue(None, n, TOO_FEW)
    # all-equal check is exact; a variance threshold would misfire on tiny scales
    if np.all(y == y[0]):
        return MetricValue(None, n, ZERO_VAR_GOLD)
    if np.all(x == x[0]):
        return MetricValue(None, n, ZERO_VAR_PRED)
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(float(np.dot(xc, xc)) * float(np.dot(yc, yc))))
    return MetricValue(min(1.0, max(-1.0, r)), n)


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    return rankdata(np.asarray(values, dtype=float), method="average")


def pcc(s, gold=None) -> MetricValue:
    """Sample Pearson correlation of predictions against gold."""
    p, g = _as_series(s, gold).arrays()
    return _pearson(p, g)


def scc(s, gold=None) -> MetricValue:
    """Spearman correlation: Pearson over average ranks."""
    p, g = _as_series(s, gold).arrays()
    return _pearson(average_ranks(p), average_ranks(g))


def rmse(s, gold=None) -> MetricValue:
    p, g = _as_series(s, gold).arrays()
    d = p - g
    return MetricValue(math.sqrt(float(np.dot(d, d)) / d.size), int(d.size))


# --------------------------------------------------------------------------
# pooled evaluation


@dataclass
class MetricCell:
    granularity: str
    aspect: str
    pcc: MetricValue
    scc: MetricValue
    rmse: MetricValue
    rmse_scale: str = "0-10"

    def to_dict(self) -> dict:
        return {
            "granularity": self.granularity,
            "aspect": self.aspect,
            "pcc": self.pcc.to_dict(),
            "scc": self.scc.to_dict(),
            "rmse": self.rmse.to_dict(),
            "rmse_scale": self.rmse_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricCell":
        return cls(
            d["granularity"], d["aspect"],
            MetricValue.from_dict(d["pcc"]), MetricValue.from_dict(d["scc"]), MetricValue.from_dict(d["rmse"]),
            d.get("rmse_scale", "0-10"),
        )


@dataclass
class MetricReport:
    cells: dict[tuple[str, str], MetricCell]
    n_utterances: int = 0
    n_excluded: int = 0
    exclusions: dict[str, str] = field(default_factory=dict)

    def cell(self, granularity: str, aspect: str) -> MetricCell:
        return self.cells[(granularity, aspect)]

    @property
    def excluded_fraction(self) -> float:
        total = self.n_utterances + self.n_excluded
        return self.n_excluded / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "n_utterances": self.n_utterances,
            "n_excluded": self.n_excluded,
            "exclusions": self.exclusions,
            "cells": [c.to_dict() for c in self.cells.values()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        cells = [MetricCell.from_dict(c) for c in d["cells"]]
        return cls(
            {(c.granularity, c.aspect): c for c in cells},
            d.get("n_utterances", 0), d.get("n_excluded", 0), d.get("exclusions", {}),
        )


def score_cell(granularity: str, aspect: str, pred, gold, phone_rmse_scale: str = "0-2") -> MetricCell:
    s = PairedSeries(pred, gold, granularity, aspect)
    err = rmse(s)
    scale = "0-10"
    if granularity == "phone" and phone_rmse_scale == "0-2":
        err = MetricValue(err.value / PHONE_RESCALE_FACTOR, err.n)
        scale = "0-2"
    return MetricCell(granularity, aspect, pcc(s), scc(s), err, scale)


def evaluate(responses: dict, gold: Iterable, task, phone_rmse_scale: str = "0-2",
             failures: Optional[dict[str, str]] = None) -> MetricReport:
    """Pool predictions against gold annotations and score every TaskSpec cell.

    ``responses`` maps utterance id to a parsed ``AssessmentResponse``;
    ``failures`` maps utterance id to a parse-failure reason. Sentence scores
    pool per utterance; word and phone scores pool across all utterances.
    Utterances that are missing, failed to parse, or do not align with the
    reference are excluded and counted.
    """
    from .respparse import align  # local: respparse imports scorekit only

    failures = dict(failures or {})
    exclusions: dict[str, str] = {}
    series: dict[tuple[str, str], tuple[list, list]] = {
        (g, a): ([], []) for g in task.granularities for a in task.aspects[g]
    }
    used = 0
    for ann in gold:
        uid = ann.utterance_id
        if uid in failures:
            exclusions[uid] = f"parse: {failures[uid]}"
            continue
        resp = responses.get(uid)
        if resp is None:
            exclusions[uid] = "missing response"
            continue
        report = align(resp, ann)
        if not report.ok:
            exclusions[uid] = f"alignment: {report.summary()}"
            continue
        used += 1
        for (gran, aspect), (pred, ref) in series.items():
            if gran == "sentence":
                pred.append(resp.sentence.get(aspect))
                ref.append(ann.sentence.get(aspect))
            elif gran == "word":
                for pw, gw in zip(resp.words, ann.words):
                    pred.append(pw.get(aspect))
                    ref.append(gw.get(aspect))
            else:
                for pg, gg in zip(resp.phones, ann.phones or []):
                    for pp, gp in zip(pg, gg):
                        pred.append(pp.accuracy)
                        ref.append(gp.accuracy)
    if used == 0:
        raise MetricError("no usable utterances to evaluate")
    cells = {}
    for (gran, aspect), (pred, ref) in series.items():
        if not pred:
            raise MetricError(f"no {gran} {aspect} pairs to evaluate")
        cells[(gran, aspect)] = score_cell(gran, aspect, pred, ref, phone_rmse_scale)
    return MetricReport(cells, used, len(exclusions), exclusions)


# --------------------------------------------------------------------------
# rendering

_SHORT = {"accuracy": "Accuracy", "fluency": "Fluency", "prosody": "Prosody",
          "completeness": "Completeness", "stress": "Stress", "total": "Total"}
_GROUP = {"phone": "Phoneme Score", "word": "Word Score (PCC / SCC)", "sentence": "Utterance Score (PCC / SCC)"}


def fmt_value(v: MetricValue) -> str:
    return "-" if v.value is None else f"{v.value:.2f}"


def fmt_pair(cell: MetricCell) -> str:
    return f"{fmt_value(cell.pcc)} / {fmt_value(cell.scc)}"


def _columns(report: MetricReport) -> list[tuple[str, str, str]]:
    """(group, header, text) columns in phone -> word -> sentence order, like the results tables."""
    cols = []
    for gran in ("phone", "word", "sentence"):
        for aspect in ASPECTS[gran]:
            cell = report.cells.get((gran, aspect))
            if cell is None:
                continue
            if gran == "phone":
                cols.append((gran, f"RMSE[{cell.rmse_scale}]", fmt_value(cell.rmse)))
                cols.append((gran, "PCC / SCC", fmt_pair(cell)))
            else:
                cols.append((gran, _SHORT[aspect], fmt_pair(cell)))
    return cols


def render_report(report: MetricReport, fmt: str = "text", label: str = "model") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if fmt == "csv":
        lines = ["granularity,aspect,n,pcc,scc,rmse,rmse_scale,undefined_reason"]
        for c in report.cells.values():
            reason = c.pcc.undefined_reason or c.scc.undefined_reason or ""
            vals = ["" if v.value is None else repr(v.value) for v in (c.pcc, c.scc, c.rmse)]
            lines.append(",".join([c.granularity, c.aspect, str(c.pcc.n), *vals, c.rmse_scale, reason]))
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise MetricError(f"unknown report format {fmt!r}")

    cols = _columns(report)
    widths = [max(len(h), len(t)) for _, h, t in cols]
    label_w = max(len("Model"), len(label))

    # group header spans its columns; widen the last column if the title is longer
    group_cells = []
    for gran in ("phone", "word", "sentence"):
        idx = [i for i, c in enumerate(cols) if c[0] == gran]
        if idx:
            span = sum(widths[i] for i in idx) + 3 * (len(idx) - 1)
            if len(_GROUP[gran]) > span:
                widths[idx[-1]] += len(_GROUP[gran]) - span
                span = len(_GROUP[gran])
            group_cells.append(_GROUP[gran].center(span))
    row1 = " | ".join(["".ljust(label_w)] + group_cells)
    row2 = " | ".join(["Model".ljust(label_w)] + [h.center(w) for (_, h, _), w in zip(cols, widths)])
    row3 = " | ".join([label.ljust(label_w)] + [t.center(w) for (_, _, t), w in zip(cols, widths)])
    rule = "-" * max(len(row1), len(row2), len(row3))
    out = [row1.rstrip(), row2, rule, row3]
    out.append(f"utterances scored: {report.n_utterances}, excluded: {report.n_excluded}")
    undefined = [f"{c.granularity}/{c.aspect}: {c.pcc.undefined_reason}"
                 for c in report.cells.values() if not c.pcc.defined]
    if undefined:
        out.append("undefined: " + "; ".join(undefined))
    return "\n".join(out) + "\n"
