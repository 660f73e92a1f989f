"""Multi-curve CSV and the per-curve operating-point summary."""
from __future__ import annotations

from pathlib import Path

from .protocol import EvalCurve

SUMMARY_FIELDS = ("at_far_0.01", "at_far_0.05", "auroc")


def summary_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".summary.csv")


def emit_report(curves: list, out) -> tuple:
    """Write ``name,threshold,far,rate`` rows for every (name, EvalCurve) pair
    to ``out`` and a ``name,at_far_0.01,at_far_0.05,auroc`` table beside it.

    Curves are ordered by name; values are written with full repr precision
    so the table re-reads to exactly what ``EvalCurve.summary`` returns.
    Returns the two paths.
    """
    if not curves:
        raise ValueError("report needs at least one curve")
    names = [n for n, _ in curves]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate curve names in {names}")
    ordered = sorted(curves, key=lambda nc: nc[0])
    lines = ["name,threshold,far,rate"]
    table = ["name," + ",".join(SUMMARY_FIELDS)]
    for name, curve in ordered:
        if "," in name:
            raise ValueError(f"curve name {name!r} contains a comma")
        for t, f, r in zip(curve.thresholds.tolist(), curve.far.tolist(), curve.rate.tolist()):
            lines.append(f"{name},{t!r},{f!r},{r!r}")
        s = curve.summary()
        table.append(name + "," + ",".join(repr(float(s[k])) for k in SUMMARY_FIELDS))
    out = Path(out)
    out.write_text("\n".join(lines) + "\n")
    spath = summary_path(out)
    spath.write_text("\n".join(table) + "\n")
    return out, spath


def read_summary(path) -> dict:
    rows = Path(path).read_text().splitlines()
    header = rows[0].split(",")
    return {r.split(",")[0]: dict(zip(header[1:], map(float, r.split(",")[1:]))) for r in rows[1:] if r}


def load_curve(path) -> EvalCurve:
    return EvalCurve.from_csv(Path(path).read_text())
