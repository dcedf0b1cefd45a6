"""Report files: CSV tables, a JSON summary and one SVG plot per ROC curve.

CSV schemas (version 1, header row always present):

``roc.csv``       condition, beta, fpr, tpr
``auc.csv``       condition, auc
``ttd.csv``       condition, beta, fpr, ttd          (ttd empty when nothing detected)
``impact.csv``    condition, mean_reward, stderr, episodes

The first line of each CSV is a comment ``# pgc-report v1 config=<hash> tool=<version>``.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

from . import __version__

SCHEMA_VERSION = 1


class ReportError(OSError):
    pass


def _stamp(cfg_hash) -> str:
    return f"# pgc-report v{SCHEMA_VERSION} config={cfg_hash} tool={__version__}\n"


def _write_csv(path: Path, header, rows, cfg_hash):
    buf = _io.StringIO()
    buf.write(_stamp(cfg_hash))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    path.write_text(buf.getvalue())


def read_csv(path) -> list:
    """Rows of a report CSV as dicts (comment line skipped)."""
    lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def write_report(out_dir, curves: dict, ttd: dict | None = None, impact: dict | None = None,
                 cfg_hash=None, config: dict | None = None, seeds: dict | None = None,
                 extra: dict | None = None, svg: bool = True) -> dict:
    """Write every report file into ``out_dir``; returns the summary dict.

    ``curves`` maps condition name to a ``RocCurve``; ``ttd`` maps condition to
    rows of (beta, fpr, ttd); ``impact`` is the output of ``impact_table``.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create {out}: {e}") from e
    ttd = ttd or {}
    impact = impact or {}
    try:
        _write_csv(out / "roc.csv", ["condition", "beta", "fpr", "tpr"],
                   [(name, b, f, t) for name, c in curves.items() for b, f, t in c.points],
                   cfg_hash)
        _write_csv(out / "auc.csv", ["condition", "auc"],
                   [(name, c.auc) for name, c in curves.items()], cfg_hash)
        _write_csv(out / "ttd.csv", ["condition", "beta", "fpr", "ttd"],
                   [(name, b, f, t) for name, rows in ttd.items() for b, f, t in rows], cfg_hash)
        _write_csv(out / "impact.csv", ["condition", "mean_reward", "stderr", "episodes"],
                   [(name, v["mean"], v["se"], v["n"]) for name, v in impact.items()], cfg_hash)
        summary = {
            "format": "pgc-report",
            "version": SCHEMA_VERSION,
            "tool_version": __version__,
            "config_hash": cfg_hash,
            "config": config or {},
            "seeds": seeds or {},
            "auc": {name: c.auc for name, c in curves.items()},
            "impact": impact,
            **(extra or {}),
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True,
                                                     default=_nan_safe) + "\n")
        if svg:
            for name, c in curves.items():
                (out / f"roc_{name}.svg").write_text(roc_svg(c, name, cfg_hash))
    except OSError as e:
        raise ReportError(str(e)) from e
    return summary


def _nan_safe(x):
    if hasattr(x, "item"):
        return x.item()
    raise TypeError(type(x).__name__)


def roc_svg(curve, title: str = "", cfg_hash=None, size: int = 320) -> str:
    """Minimal standalone SVG of an ROC curve (FPR on x, TPR on y)."""
    pad = 40
    span = size - 2 * pad

    def xy(f, t):
        return pad + f * span, size - pad - t * span

    pts = sorted(zip(curve.fpr(), curve.tpr()))
    pts = [(0.0, 0.0)] + pts + [(1.0, 1.0)]
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(f, t) for f, t in pts))
    x0, y0 = xy(0, 0)
    x1, y1 = xy(1, 1)
    auc = "nan" if math.isnan(curve.auc) else f"{curve.auc:.3f}"
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
        f"<!-- config={cfg_hash} tool={__version__} -->\n"
        f'<rect x="{x0}" y="{y1}" width="{span}" height="{span}" fill="none" stroke="black"/>\n'
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="4"/>\n'
        f'<polyline points="{path}" fill="none" stroke="steelblue" stroke-width="2"/>\n'
        f'<text x="{size / 2}" y="{pad / 2}" text-anchor="middle">{title} (AUC {auc})</text>\n'
        f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle">FPR</text>\n'
        f'<text x="12" y="{size / 2}" text-anchor="middle" '
        f'transform="rotate(-90 12 {size / 2})">TPR</text>\n'
        "</svg>\n"
    )
