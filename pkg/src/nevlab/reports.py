"""Deterministic JSON/CSV artifacts plus a metadata side-file for everything that varies."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import config_hash


def plain(obj):
    """JSON-safe copy: complex -> [re, im], non-finite floats -> strings, numpy -> python."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [plain(complex(obj).real), plain(complex(obj).imag)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(plain(obj), sort_keys=True, indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header: list, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return v


@dataclass
class Check:
    name: str
    ok: bool
    detail: dict = field(default_factory=dict)


@dataclass
class Report:
    command: str
    config: dict
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def add(self, name: str, ok: bool, **detail) -> Check:
        c = Check(name, bool(ok), detail)
        self.checks.append(c)
        return c

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failing(self) -> list[str]:
        return [c.name for c in self.checks if not c.ok]

    def payload(self) -> dict:
        return {"command": self.command, "config": self.config, "config_hash": config_hash(self.config),
                "seed": self.config["mc"]["seed"], "ok": self.ok,
                "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks],
                "results": self.results}

    def write(self, outdir: Path, stem: str) -> Path:
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / f"{stem}.json"
        write_json(path, self.payload())
        meta = {"written": _dt.datetime.now(_dt.timezone.utc).isoformat(), "python": sys.version.split()[0],
                "platform": platform.platform(), "numpy": np.__version__, "artifact": path.name}
        (outdir / f"{stem}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path
