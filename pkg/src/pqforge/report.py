"""Summary tables over finished runs: one row per run, markdown or CSV."""

from __future__ import annotations

import csv
import io

GRANULARITY_TAGS = {"per_tensor": "t", "per_channel": "c", "per_weight": "w"}
METHOD_NAMES = {"none": "Unpruned", "activation": "AP", "autosparse": "AutoSparse", "cs": "CS", "dst": "DST",
                "mdmm": "MDMM", "pdp": "PDP", "wanda": "Wanda"}


def granularity_tag(granularity: str | None) -> str:
    return GRANULARITY_TAGS.get(granularity or "", "-")


def summaries(events: list[dict]) -> list[dict]:
    """Terminal summary events of a run log, in file order."""
    return [e for e in events if e.get("type") == "summary"]


def report_rows(records: list[dict]) -> tuple[list[str], list[list]]:
    """Header and rows shared by both renderers."""
    records = summaries(records) or list(records)
    layers: list[str] = []
    for r in records:
        for name in (r.get("layer_sparsity") or {}):
            if name not in layers:
                layers.append(name)
    header = ["run", "method", "gran", "accuracy_pct", "sparsity_pct", "ebops"] + [f"sparsity_{n}_pct" for n in layers]
    rows = []
    for idx, r in enumerate(records):
        method = METHOD_NAMES.get(r.get("method", "none"), str(r.get("method")))
        quantized = r.get("quantized", True)
        acc = r.get("accuracy")
        row = [r.get("run", idx), method, granularity_tag(r.get("granularity")) if quantized else "float",
               _pct(acc), _pct(r.get("sparsity")), _num(r.get("ebops"))]
        per_layer = r.get("layer_sparsity") or {}
        row += [_pct(per_layer.get(n)) for n in layers]
        rows.append(row)
    return header, rows


def _pct(v):
    return "" if v is None else f"{100.0 * float(v):.2f}"


def _num(v):
    return "" if v is None else f"{float(v):.0f}"


def metrics_report(records: list[dict], fmt: str = "markdown") -> str:
    header, rows = report_rows(records)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"
