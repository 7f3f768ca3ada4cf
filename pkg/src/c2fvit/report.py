"""Evaluation tables as aligned text and as delimited rows."""
import csv
import io
import math

import numpy as np

from .metrics import dsc30


def _fmt(v, digits=4):
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{v:.{digits}f}"
    return str(v)


def case_rows(results):
    """One row per case: id, mean DSC, mean HD95, per-structure DSC."""
    rows = []
    for r in results:
        rows.append({
            "case": r.case_id,
            "mean_dsc": float(r.mean_dsc),
            "mean_hd95": float(r.mean_hd95),
            "dsc": " ".join(_fmt(float(d)) for d in r.dsc),
        })
    return rows


def summary(results):
    scores = [r.mean_dsc for r in results]
    hd = [r.mean_hd95 for r in results if not math.isnan(r.mean_hd95)]
    return {
        "cases": len(results),
        "mean_dsc": float(np.mean(scores)),
        "dsc30": float(dsc30(scores)),
        "mean_hd95": float(np.mean(hd)) if hd else float("nan"),
    }


def format_table(rows, columns=None):
    if not rows:
        return ""
    columns = columns or list(rows[0])
    cells = [[_fmt(row[c]) for c in columns] for row in rows]
    widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(r, widths))) for r in cells]
    return "\n".join(lines)


def format_delimited(rows, columns=None, delimiter=","):
    """CSV text with full float precision, for machine consumption."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(row[c])) if isinstance(row[c], (float, np.floating)) else row[c] for c in columns])
    return buf.getvalue()


def parse_delimited(text, delimiter=","):
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    out = []
    for row in reader:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v) if k != "case" and k != "dsc" else v
            except ValueError:
                parsed[k] = v
        out.append(parsed)
    return out
