"""Corpus-level statistics over classified posts.

Everything here runs on integer counts (label totals, pairwise co-occurrence,
score histograms), so shards can be summed and reproduce a single pass exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import EMOTIONS, Emotion, EmotionLabelSet, default_weights
from .parser import Classification

ALL = "all"
# Histogram bins cover 0..13 regardless of the weight table in use.
MAX_SCORE = max(13, default_weights().maximum)


class InsufficientData(ValueError):
    pass


class EmptySubset(ValueError):
    pass


@dataclass(frozen=True)
class CorpusRecord:
    post_id: str
    subreddit: str
    created_utc: float
    classification: Classification

    @property
    def labels(self) -> EmotionLabelSet:
        return self.classification.labels

    @property
    def severity(self) -> int:
        return self.classification.severity

    @property
    def month(self) -> str:
        return month_of(self.created_utc)


def month_of(epoch_seconds: float) -> str:
    return datetime.fromtimestamp(epoch_seconds, tz=timezone.utc).strftime("%Y-%m")


def _group_of(record: CorpusRecord, group_key: str) -> str:
    if group_key == ALL:
        return ALL
    if group_key == "subreddit":
        return record.subreddit
    raise ValueError(f"unknown group key {group_key!r}")


def group_records(records: Iterable[CorpusRecord], group_key: str) -> dict[str, list[CorpusRecord]]:
    groups: dict[str, list[CorpusRecord]] = {}
    for r in records:
        groups.setdefault(_group_of(r, group_key), []).append(r)
    return dict(sorted(groups.items()))


# ---------------------------------------------------------------------------
# Detection rates


@dataclass(frozen=True)
class RateRow:
    group: str
    emotion: Emotion
    rate: float
    n: int


def detection_rates(records: Iterable[CorpusRecord], group_key: str = ALL) -> list[RateRow]:
    rows = []
    for group, members in group_records(records, group_key).items():
        n = len(members)
        for emotion in EMOTIONS:
            hits = sum(r.labels[emotion] for r in members)
            rows.append(RateRow(group, emotion, hits / n, n))
    return rows


# ---------------------------------------------------------------------------
# Correlation


@dataclass
class Cooccurrence:
    """Additive sufficient statistics for pairwise correlation of binary labels."""

    n: int = 0
    pair: np.ndarray = field(default_factory=lambda: np.zeros((len(EMOTIONS), len(EMOTIONS)), dtype=np.int64))

    def add(self, labels: EmotionLabelSet) -> None:
        v = np.array(labels.flags, dtype=np.int64)
        self.pair += np.outer(v, v)
        self.n += 1

    def __add__(self, other: "Cooccurrence") -> "Cooccurrence":
        return Cooccurrence(self.n + other.n, self.pair + other.pair)

    @classmethod
    def of(cls, labels: Iterable[EmotionLabelSet]) -> "Cooccurrence":
        acc = cls()
        for lab in labels:
            acc.add(lab)
        return acc


@dataclass(frozen=True)
class CorrelationMatrix:
    """Spearman rho and two-sided p-values; NaN marks undefined entries."""

    rho: np.ndarray
    p_value: np.ndarray
    n: int
    emotions: tuple[Emotion, ...] = EMOTIONS
    method: str = "spearman (average ranks) on binary indicators; p from t with n-2 df"

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.rho)

    def pairs(self) -> list[tuple[Emotion, Emotion, float, float]]:
        out = []
        k = len(self.emotions)
        for i in range(k):
            for j in range(i + 1, k):
                if self.defined[i, j]:
                    out.append((self.emotions[i], self.emotions[j], float(self.rho[i, j]), float(self.p_value[i, j])))
        return out


def _t_pvalue(rho: float, n: int) -> float:
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1 - rho * rho))
    return float(2 * stats.t.sf(abs(t), n - 2))


def correlation_from_counts(acc: Cooccurrence) -> CorrelationMatrix:
    """Phi coefficient per pair from co-occurrence counts.

    For two 0/1 columns with average-rank ties, Spearman's rho is exactly the
    Pearson correlation of the raw indicators, i.e. phi.
    """
    n = acc.n
    if n < 3:
        raise InsufficientData(f"need at least 3 records, got {n}")
    k = len(EMOTIONS)
    ones = np.diag(acc.pair).astype(np.int64)
    rho = np.full((k, k), np.nan)
    pval = np.full((k, k), np.nan)
    for i in range(k):
        if 0 < ones[i] < n:
            rho[i, i] = 1.0
            pval[i, i] = 0.0
        for j in range(i + 1, k):
            if not (0 < ones[i] < n and 0 < ones[j] < n):
                continue
            # Integer numerator and radicand keep this exact up to one division.
            num = n * int(acc.pair[i, j]) - int(ones[i]) * int(ones[j])
            den = int(ones[i]) * (n - int(ones[i])) * int(ones[j]) * (n - int(ones[j]))
            r = num / math.sqrt(den)
            r = max(-1.0, min(1.0, r))
            rho[i, j] = rho[j, i] = r
            pval[i, j] = pval[j, i] = _t_pvalue(r, n)
    return CorrelationMatrix(rho, pval, n)


def spearman_matrix(records: Iterable[CorpusRecord | EmotionLabelSet]) -> CorrelationMatrix:
    labels = (r if isinstance(r, EmotionLabelSet) else r.labels for r in records)
    return correlation_from_counts(Cooccurrence.of(labels))


# ---------------------------------------------------------------------------
# Score distributions


def _histogram(scores: Iterable[int]) -> list[int]:
    hist = [0] * (MAX_SCORE + 1)
    for s in scores:
        if not 0 <= s <= MAX_SCORE:
            raise ValueError(f"score {s} outside 0..{MAX_SCORE}")
        hist[s] += 1
    return hist


@dataclass(frozen=True)
class DistributionSummary:
    group: str
    histogram: tuple[int, ...]
    n: int
    mean: float
    median: float
    q1: float
    q3: float
    minimum: int
    maximum: int
    std: float
    threshold: int
    pct_at_or_above_threshold: float

    def pct_at_or_above(self, threshold: int) -> float:
        if self.n == 0:
            return 0.0
        lo = max(threshold, 0)
        return sum(self.histogram[lo:]) / self.n

    def to_dict(self) -> dict[str, Any]:
        return {
            "group": self.group,
            "n": self.n,
            "mean": self.mean,
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "min": self.minimum,
            "max": self.maximum,
            "std": self.std,
            "threshold": self.threshold,
            "pct_at_or_above": self.pct_at_or_above_threshold,
            "histogram": list(self.histogram),
        }


def summarize_scores(group: str, scores: Sequence[int], threshold: int) -> DistributionSummary:
    if not scores:
        raise ValueError("empty score list")
    # Sorted so float reductions do not depend on input order.
    arr = np.sort(np.asarray(scores, dtype=float))
    hist = _histogram(scores)
    q1, median, q3 = np.percentile(arr, [25, 50, 75])
    return DistributionSummary(
        group=group,
        histogram=tuple(hist),
        n=len(scores),
        mean=float(arr.mean()),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        minimum=int(arr.min()),
        maximum=int(arr.max()),
        std=float(arr.std()),
        threshold=threshold,
        pct_at_or_above_threshold=sum(hist[max(threshold, 0):]) / len(scores),
    )


def score_distribution(
    records: Iterable[CorpusRecord], group_key: str = "subreddit", threshold: int = 7
) -> dict[str, DistributionSummary]:
    return {
        group: summarize_scores(group, [r.severity for r in members], threshold)
        for group, members in group_records(records, group_key).items()
    }


# ---------------------------------------------------------------------------
# High-risk subset


THRESHOLD_RULES: dict[str, tuple[str, Callable[[int, int], bool]]] = {
    "ge": (">=", lambda s, t: s >= t),
    "gt": (">", lambda s, t: s > t),
}


def parse_threshold_rule(rule: str) -> tuple[str, int]:
    """``"ge7"`` -> ("ge", 7)."""
    for op in THRESHOLD_RULES:
        if rule.startswith(op) and rule[len(op):].isdigit():
            return op, int(rule[len(op):])
    raise ValueError(f"bad threshold rule {rule!r}; expected e.g. ge7 or gt7")


def passes(score: int, threshold: int, op: str = "ge") -> bool:
    return THRESHOLD_RULES[op][1](score, threshold)


@dataclass(frozen=True)
class HighRiskRow:
    emotion: Emotion
    rate_all: float
    rate_high_risk: float
    delta: float


def high_risk_comparison(
    records: Sequence[CorpusRecord], threshold: int = 7, op: str = "ge"
) -> list[HighRiskRow]:
    records = list(records)
    subset = [r for r in records if passes(r.severity, threshold, op)]
    if not subset:
        raise EmptySubset(f"no record with severity {THRESHOLD_RULES[op][0]} {threshold}")
    rows = []
    for emotion in EMOTIONS:
        rate_all = sum(r.labels[emotion] for r in records) / len(records)
        rate_high = sum(r.labels[emotion] for r in subset) / len(subset)
        rows.append(HighRiskRow(emotion, rate_all, rate_high, rate_high - rate_all))
    return rows


# ---------------------------------------------------------------------------
# Monthly trends


@dataclass(frozen=True)
class MonthlyPoint:
    month: str
    mean: float
    n: int


@dataclass(frozen=True)
class MonthlySeries:
    group: str
    points: tuple[MonthlyPoint, ...]

    def slope(self) -> float:
        """Least-squares change in mean score per month over the observed months."""
        if len(self.points) < 2:
            return 0.0
        x = np.array([_month_index(p.month) for p in self.points], dtype=float)
        y = np.array([p.mean for p in self.points])
        return float(np.polyfit(x, y, 1)[0])


def _month_index(month: str) -> int:
    year, mon = month.split("-")
    return int(year) * 12 + int(mon) - 1


@dataclass(frozen=True)
class Window:
    """Inclusive month range, e.g. ``Window.parse("2024-01..2025-07")``."""

    start: str | None = None
    end: str | None = None

    @classmethod
    def parse(cls, text: str | None) -> "Window":
        if not text:
            return cls()
        if ".." not in text:
            raise ValueError(f"window must look like FROM..TO, got {text!r}")
        lo, hi = (part.strip() or None for part in text.split("..", 1))
        for part in (lo, hi):
            if part is not None:
                datetime.strptime(part, "%Y-%m")
        if lo and hi and lo > hi:
            raise ValueError(f"window start {lo} is after end {hi}")
        return cls(lo, hi)

    def contains(self, epoch_seconds: float) -> bool:
        m = month_of(epoch_seconds)
        return (self.start is None or m >= self.start) and (self.end is None or m <= self.end)

    def __str__(self) -> str:
        return f"{self.start or ''}..{self.end or ''}"


def apply_window(records: Iterable[CorpusRecord], window: Window | None) -> list[CorpusRecord]:
    if window is None:
        return list(records)
    return [r for r in records if window.contains(r.created_utc)]


def monthly_trend(
    records: Iterable[CorpusRecord], group_key: str = "subreddit", window: Window | None = None
) -> dict[str, MonthlySeries]:
    out = {}
    for group, members in group_records(apply_window(records, window), group_key).items():
        buckets: dict[str, list[int]] = {}
        for r in members:
            buckets.setdefault(r.month, []).append(r.severity)
        points = tuple(
            MonthlyPoint(month, sum(v) / len(v), len(v)) for month, v in sorted(buckets.items())
        )
        out[group] = MonthlySeries(group, points)
    return out


# ---------------------------------------------------------------------------
# Bundle


@dataclass
class AnalyticsBundle:
    n_records: int
    threshold: int
    threshold_op: str
    window: str
    rates: list[RateRow]
    correlation: CorrelationMatrix | None
    distributions: dict[str, DistributionSummary]
    overall: DistributionSummary | None
    high_risk: list[HighRiskRow] | None
    monthly: dict[str, MonthlySeries]
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        corr = None
        if self.correlation is not None:
            corr = {
                "n": self.correlation.n,
                "method": self.correlation.method,
                "emotions": [e.value for e in self.correlation.emotions],
                "rho": _nan_to_none(self.correlation.rho),
                "p_value": _nan_to_none(self.correlation.p_value),
            }
        return {
            "n_records": self.n_records,
            "threshold": self.threshold,
            "threshold_op": self.threshold_op,
            "window": self.window,
            "notes": self.notes,
            "detection_rates": [
                {"group": r.group, "emotion": r.emotion.value, "rate": r.rate, "n": r.n} for r in self.rates
            ],
            "correlation": corr,
            "distributions": {g: d.to_dict() for g, d in self.distributions.items()},
            "overall": self.overall.to_dict() if self.overall else None,
            "high_risk": None
            if self.high_risk is None
            else [
                {"emotion": h.emotion.value, "rate_all": h.rate_all, "rate_high_risk": h.rate_high_risk, "delta": h.delta}
                for h in self.high_risk
            ],
            "monthly": {
                g: [{"month": p.month, "mean": p.mean, "n": p.n} for p in s.points] for g, s in self.monthly.items()
            },
            "trend_slope": {g: s.slope() for g, s in self.monthly.items()},
        }


def _nan_to_none(m: np.ndarray) -> list[list[float | None]]:
    return [[None if math.isnan(v) else float(v) for v in row] for row in m]


def build_bundle(
    records: Sequence[CorpusRecord],
    threshold: int = 7,
    op: str = "ge",
    window: Window | None = None,
    group_key: str = "subreddit",
) -> AnalyticsBundle:
    records = apply_window(records, window)
    notes: list[str] = []
    if not records:
        notes.append("no classified records in the analysis window; all tables are empty")
        return AnalyticsBundle(0, threshold, op, str(window or Window()), [], None, {}, None, None, {}, notes)
    if window is None:
        months = sorted(r.month for r in records)
        window = Window(months[0], months[-1])
    try:
        correlation = spearman_matrix(records)
    except InsufficientData as exc:
        correlation = None
        notes.append(f"correlation: InsufficientData ({exc})")
    try:
        high_risk = high_risk_comparison(records, threshold, op)
    except EmptySubset as exc:
        high_risk = None
        notes.append(f"high_risk: EmptySubset ({exc})")
    overall = summarize_scores(ALL, [r.severity for r in records], threshold)
    return AnalyticsBundle(
        n_records=len(records),
        threshold=threshold,
        threshold_op=op,
        window=str(window),
        rates=detection_rates(records, ALL) + (detection_rates(records, group_key) if group_key != ALL else []),
        correlation=correlation,
        distributions=score_distribution(records, group_key, threshold),
        overall=overall,
        high_risk=high_risk,
        monthly=monthly_trend(records, group_key),
        notes=notes,
    )


def _fmt(v: Any) -> Any:
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return v


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


BUNDLE_FILE = "bundle.json"


def write_bundle(bundle: AnalyticsBundle, out_dir: str | Path) -> list[Path]:
    """Write plot-ready CSVs plus ``bundle.json``; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
        path = out / name
        _write_csv(path, header, rows)
        written.append(path)

    emit("detection_rates.csv", ["group", "emotion", "rate", "n"],
         ([r.group, r.emotion.value, r.rate, r.n] for r in bundle.rates))

    names = [e.value for e in EMOTIONS]
    if bundle.correlation is not None:
        c = bundle.correlation
        emit("correlation_rho.csv", ["emotion", *names], ([names[i], *c.rho[i]] for i in range(len(names))))
        emit("correlation_p.csv", ["emotion", *names], ([names[i], *c.p_value[i]] for i in range(len(names))))
    else:
        emit("correlation_rho.csv", ["emotion", *names], [])
        emit("correlation_p.csv", ["emotion", *names], [])

    dists = dict(bundle.distributions)
    if bundle.overall is not None:
        dists.setdefault(ALL, bundle.overall)
    emit("score_histogram.csv", ["group", "score", "count"],
         ([g, s, c] for g, d in dists.items() for s, c in enumerate(d.histogram)))
    emit("score_summary.csv",
         ["group", "n", "mean", "median", "q1", "q3", "min", "max", "std", "threshold", "pct_at_or_above"],
         ([d.group, d.n, d.mean, d.median, d.q1, d.q3, d.minimum, d.maximum, d.std, d.threshold,
           d.pct_at_or_above_threshold] for d in dists.values()))
    emit("high_risk.csv", ["emotion", "rate_all", "rate_high_risk", "delta"],
         ([h.emotion.value, h.rate_all, h.rate_high_risk, h.delta] for h in bundle.high_risk or []))
    emit("monthly_trend.csv", ["group", "month", "mean", "n"],
         ([g, p.month, p.mean, p.n] for g, s in bundle.monthly.items() for p in s.points))

    path = out / BUNDLE_FILE
    path.write_text(json.dumps(bundle.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written


def load_bundle(path: str | Path) -> Mapping[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
