"""CSV tables and the run manifest."""
from __future__ import annotations

import hashlib
import io
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy


@dataclass
class Table:
    columns: list
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.columns))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.columns) + "\n")
        if self.rows.size:
            np.savetxt(buf, self.rows, fmt="%.17g", delimiter=",")
        return buf.getvalue()


@dataclass
class RunOutput:
    """Everything a run produces, held in memory until the run succeeds."""
    kind: str
    passed: bool
    tables: dict = field(default_factory=dict)       # name -> Table
    summary: dict = field(default_factory=dict)
    streams: list = field(default_factory=list)

    def numeric_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.tables):
            h.update(name.encode())
            h.update(self.tables[name].to_csv().encode())
        return h.hexdigest()


def versions() -> dict:
    from . import __version__

    return {"nlwlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_run(out_dir: Path, result: RunOutput, config: dict, config_hash: str, seed: int, workers: int,
              wall_time: float) -> Path:
    """Write ``<out>/<table>.csv`` files and ``<out>/manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, table in sorted(result.tables.items()):
        text = table.to_csv()
        path = out_dir / f"{name}.csv"
        path.write_text(text)
        files[path.name] = {"sha256": hashlib.sha256(text.encode()).hexdigest(), "rows": int(table.rows.shape[0]),
                            "columns": list(table.columns)}
    manifest = {
        "kind": result.kind,
        "passed": bool(result.passed),
        "seed": int(seed),
        "config_hash": config_hash,
        "numeric_hash": result.numeric_hash(),
        "stream_ids": [int(s) for s in result.streams],
        "workers": int(workers),
        "versions": versions(),
        "wall_time_s": float(wall_time),
        "outputs": files,
        "summary": _jsonable(result.summary),
        "config": config,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x
