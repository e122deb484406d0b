"""Markdown digest rendered from an analytics bundle."""

from __future__ import annotations

from typing import Any, Mapping

TOP_PAIRS = 5
FLAT_SLOPE = 0.05  # mean-score change per month below which a trend counts as stable


def threshold_label(op: str, threshold: int) -> str:
    if op == "ge" and threshold == 7:
        return "severe (high alert)"
    symbol = ">=" if op == "ge" else ">"
    return f"high risk (S {symbol} {threshold})"


def fmt(v: float | None, digits: int = 3) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def pct(v: float) -> str:
    return f"{100 * v:.1f}%"


def trend_direction(slope: float) -> str:
    if slope > FLAT_SLOPE:
        return "rising"
    if slope < -FLAT_SLOPE:
        return "falling"
    return "stable"


def render_digest(bundle: Mapping[str, Any]) -> str:
    op, t = bundle["threshold_op"], bundle["threshold"]
    label = threshold_label(op, t)
    symbol = ">=" if op == "ge" else ">"
    lines = ["# Depression risk digest", ""]
    lines.append(f"- records analysed: {bundle['n_records']}")
    lines.append(f"- analysis window: {bundle['window']}")
    lines.append(f"- threshold rule: S {symbol} {t}")
    for note in bundle.get("notes", []):
        lines.append(f"- note: {note}")
    lines.append("")

    dists = bundle.get("distributions") or {}
    if dists:
        lines += ["## Score profile per group", "",
                  "| group | n | mean | median | q1 | q3 |", "|---|---|---|---|---|---|"]
        for g, d in dists.items():
            lines.append(f"| {g} | {d['n']} | {fmt(d['mean'])} | {fmt(d['median'])} | {fmt(d['q1'])} | {fmt(d['q3'])} |")
        lines.append("")

        lines += [f"## Share of posts at {label}", ""]
        for g, d in dists.items():
            lines.append(f"- {g}: {pct(d['pct_at_or_above'])} of {d['n']} posts")
        lines.append("")

        if len(dists) > 1:
            ranked = sorted(dists.items(), key=lambda kv: (-kv[1]["mean"], kv[0]))
            (hi_g, hi), (lo_g, lo) = ranked[0], ranked[-1]
            lines += ["## Cross-group comparison", ""]
            lines.append(f"- highest mean score: {hi_g} ({fmt(hi['mean'])})")
            lines.append(f"- lowest mean score: {lo_g} ({fmt(lo['mean'])})")
            lines.append(f"- gap in mean score: {fmt(hi['mean'] - lo['mean'])}")
            lines.append(f"- gap in {label} share: {pct(hi['pct_at_or_above'] - lo['pct_at_or_above'])}")
            lines.append("")

    corr = bundle.get("correlation")
    if corr:
        names = corr["emotions"]
        pairs = []
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                rho = corr["rho"][i][j]
                if rho is not None:
                    pairs.append((rho, names[i], names[j], corr["p_value"][i][j]))
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
        lines += ["## Top correlated emotion pairs", ""]
        for rho, a, b, p in pairs[:TOP_PAIRS]:
            lines.append(f"- {a} / {b}: rho={fmt(rho)} (p={p:.3g})")
        lines.append("")

    high = bundle.get("high_risk")
    if high:
        lines += [f"## Emotions over-represented at {label}", ""]
        for row in sorted(high, key=lambda r: (-r["delta"], r["emotion"])):
            lines.append(
                f"- {row['emotion']}: {pct(row['rate_high_risk'])} vs {pct(row['rate_all'])} overall "
                f"(delta {fmt(row['delta'])})"
            )
        lines.append("")

    monthly = bundle.get("monthly") or {}
    if monthly:
        lines += ["## Monthly trend", ""]
        slopes = bundle.get("trend_slope", {})
        for g, points in monthly.items():
            if not points:
                continue
            slope = slopes.get(g, 0.0)
            first, last = points[0], points[-1]
            lines.append(
                f"- {g}: {first['month']} {fmt(first['mean'])} -> {last['month']} {fmt(last['mean'])}, "
                f"slope {slope:+.3f}/month ({trend_direction(slope)})"
            )
        lines.append("")
    return "\n".join(lines)
