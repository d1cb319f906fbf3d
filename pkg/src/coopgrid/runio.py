"""Run-directory bookkeeping: manifest, append-only CSV logs, JSON reports.

Every artifact a command writes is registered in ``manifest.json`` inside
the run directory.  CSV logs are append-only (resuming never truncates),
and all numeric formatting goes through ``fmt_num`` so repeated runs emit
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path


def fmt_num(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def manifest_add(run_dir, *relpaths) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "manifest.json"
    entries = []
    if path.exists():
        entries = json.loads(path.read_text(encoding="utf-8"))["files"]
    entries = sorted(set(entries) | {str(p) for p in relpaths})
    path.write_text(
        json.dumps({"files": entries}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def manifest_files(run_dir) -> list[str]:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        return []
    return json.loads(path.read_text(encoding="utf-8"))["files"]


def write_json(path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


class CsvLog:
    """Append-only CSV with a fixed column set."""

    def __init__(self, path, columns: tuple[str, ...]):
        self.path = Path(path)
        self.columns = columns
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            self.path.write_text(",".join(columns) + "\n", encoding="utf-8")

    def append(self, **values) -> None:
        row = ",".join(fmt_num(values.get(c, "")) for c in self.columns)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(row + "\n")
