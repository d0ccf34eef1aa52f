"""Summary tables in the Zero-Shot / RA-ICL / delta layout."""
from __future__ import annotations

from typing import Mapping, Sequence

ROWS = (
    ("Strict F1", "strict_f1"),
    ("Soft F1", "soft_f1"),
    ("Violation Rate (PVR)", "pvr"),
    ("Latent F1 (soft)", "soft_latent_f1"),
    ("Surface F1 (soft)", "soft_surface_f1"),
    ("Gap (latent-surface)", "gap_ls"),
    ("Latent F1* (norm.)", "latent_f1_norm"),
    ("Surface F1* (norm.)", "surface_f1_norm"),
    ("Gap (norm.)", "gap_norm"),
)
_GAPS = (("gap_ls", "soft_surface_f1", "soft_latent_f1"), ("gap_norm", "surface_f1_norm", "latent_f1_norm"))

# condition -> metric -> {"mean": float, "sd": float | None}
Summary = Mapping[str, Mapping[str, Mapping[str, float | None] | None]]


def summaries_from_aggregates(aggregates: Mapping) -> dict:
    out = {}
    for cond, agg in aggregates.items():
        if agg.get("empty"):
            out[cond] = {}
            continue
        out[cond] = {
            name: None if m is None else {"mean": m["mean"], "sd": m["sd"]}
            for name, m in agg["metrics"].items()
        }
    return out


def summary_from_means(means: Mapping[str, float], sds: Mapping[str, float] | None = None) -> dict:
    """Build a condition summary from bare means (e.g. published values)."""
    sds = sds or {}
    return {k: {"mean": float(v), "sd": sds.get(k)} for k, v in means.items()}


def derive_gaps(summary: Mapping) -> dict:
    """Fill missing gap rows as surface mean minus latent mean (mean is linear)."""
    out = dict(summary)
    for gap, surf, lat in _GAPS:
        if out.get(gap) is None and out.get(surf) and out.get(lat):
            out[gap] = {"mean": out[surf]["mean"] - out[lat]["mean"], "sd": None}
    return out


def summary_table(summaries: Mapping[str, Summary], order: Sequence[str] | None = None) -> dict:
    """Structured table; with exactly two conditions a delta (second minus first) is added."""
    conds = list(order or summaries)
    filled = {c: derive_gaps(summaries[c]) for c in conds}
    rows = []
    for label, key in ROWS:
        cells = {c: filled[c].get(key) for c in conds}
        delta = None
        if len(conds) == 2 and all(cells[c] for c in conds):
            delta = cells[conds[1]]["mean"] - cells[conds[0]]["mean"]
        rows.append({"label": label, "metric": key, "cells": cells, "delta": delta})
    return {"conditions": conds, "rows": rows}


def _cell(v) -> str:
    if not v:
        return "n/a"
    sd = v.get("sd")
    return f"{v['mean']:.3f}" + (f" (±{sd:.3f})" if sd is not None else "")


def render_table(table: Mapping) -> str:
    conds = table["conditions"]
    has_delta = len(conds) == 2
    header = ["Metric (Mean ± SD)", *conds] + (["Delta"] if has_delta else [])
    body = []
    for row in table["rows"]:
        line = [row["label"], *(_cell(row["cells"][c]) for c in conds)]
        if has_delta:
            line.append("n/a" if row["delta"] is None else f"{row['delta']:+.3f}")
        body.append(line)
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()  # noqa: E731
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep, *map(fmt, body)]) + "\n"
