"""Episode traces as JSON lines: one record per step, the result last."""
from __future__ import annotations

import json
from pathlib import Path

from ..benchmark import EpisodeResult


def write_trace(records: list[dict], result: EpisodeResult, path: str | Path) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    lines.append(json.dumps({"result": result.to_dict()}, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: str | Path) -> tuple[list[dict], EpisodeResult]:
    records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not records or "result" not in records[-1]:
        raise ValueError(f"{path}: trace has no result record")
    return records[:-1], EpisodeResult(**records[-1]["result"])
