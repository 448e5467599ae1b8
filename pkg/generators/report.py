"""
Result rendering for CCC Fiducial.
JSON records for every command and an aligned text table for coverage studies.
"""

import json
from pathlib import Path
from typing import Any, List, Sequence, Union

import numpy as np
from pydantic import BaseModel

from core.models.scenario import CoverageReport

TABLE_COLUMNS = ["CCC (True)", "N", "Method", "Lower", "Upper", "Width", "Coverage", "Coverage CI"]


def _default(obj: Any) -> Any:
    if isinstance(obj, BaseModel):
        return obj.model_dump(mode="json")
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def render_json(payload: Any) -> str:
    """
    Stable JSON text: sorted keys, fixed indentation, no NaN.
    Identical payloads render to identical bytes.
    """
    return json.dumps(payload, default=_default, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _format_row(cells: Sequence[str], widths: Sequence[int]) -> str:
    return "  ".join(c.rjust(w) if i != 2 else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()


def render_table(report: CoverageReport) -> str:
    """Coverage rows aligned in columns, one line per (N, method)."""
    rows: List[List[str]] = []
    for row in sorted(report.rows, key=lambda r: (r.n_subjects, r.method)):
        rows.append([
            f"{report.true_ccc:.3f}",
            str(row.n_subjects),
            row.method,
            f"{row.mean_lower:.3f}",
            f"{row.mean_upper:.3f}",
            f"{row.expected_width:.3f}",
            f"{row.coverage:.3f}",
            f"[{row.coverage_ci[0]:.3f}, {row.coverage_ci[1]:.3f}]",
        ])
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(TABLE_COLUMNS)]
    lines = [
        f"Scenario: {report.scenario}  (replications: {report.n_replications}, seed: {report.seed})",
        _format_row(TABLE_COLUMNS, widths),
        _format_row(["-" * w for w in widths], widths),
    ]
    lines.extend(_format_row(r, widths) for r in rows)
    return "\n".join(lines) + "\n"


def write_report(text: str, filepath: Union[str, Path]) -> Path:
    """Save rendered output and return the path."""
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path
