import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Iterable, List, Optional

from pydantic import BaseModel

REPORT_FIELDS = ("name", "lhs", "rhs", "se_lhs", "se_rhs", "se_diff", "z", "n_outer", "seed", "pass", "wall_time_s")


def _finite(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, list):
        return [_finite(v) for v in value]
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    return value


def report_record(report) -> dict:
    """Report as a JSON-ready dict: identity fields first, non-finite numbers as null."""
    data = report.model_dump(mode="json", by_alias=True) if isinstance(report, BaseModel) else dict(report)
    ordered = {key: data[key] for key in REPORT_FIELDS if key in data}
    ordered.update({key: value for key, value in data.items() if key not in ordered})
    return _finite(ordered)


def to_json(reports: List) -> str:
    records = [report_record(r) for r in reports]
    payload = records[0] if len(records) == 1 else records
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def to_csv(reports: Iterable) -> str:
    records = [report_record(r) for r in reports]
    fieldnames = []
    for record in records:
        fieldnames.extend(key for key in record if key not in fieldnames)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(
            {key: json.dumps(value) if isinstance(value, (list, dict)) else value for key, value in record.items()}
        )
    return buffer.getvalue()


def emit(reports: List, fmt: str = "json", out: Optional[str] = None) -> str:
    """Write reports to `out` (or stdout) and return the text."""
    if fmt == "json":
        text = to_json(reports)
    elif fmt == "csv":
        text = to_csv(reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}")

    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return text
