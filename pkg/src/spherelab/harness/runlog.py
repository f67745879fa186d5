"""Per-iteration training records and their CSV/JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Optional

ITER_COLUMNS = ("iter", "loss", "sec_loss", "norm_mean", "norm_var", "dtheta_mean", "dtheta_var")


@dataclass
class IterRecord:
    iter: int
    loss: float
    # weighted penalty term eta_t * L_reg actually added to the objective
    sec_loss: float
    norm_mean: float
    norm_var: float
    dtheta_mean: float
    dtheta_var: float


@dataclass
class MetricRecord:
    iter: int
    recall: list
    nmi: Optional[float]
    f1: Optional[float]


@dataclass
class SnapshotRecord:
    """Direction variation of every embedding between two snapshot iterations."""

    iter_from: int
    iter_to: int
    dtheta_mean: float
    dtheta_var: float


@dataclass
class RunLog:
    config: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final_norms: list = field(default_factory=list)

    def append(self, rec: IterRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("iterations must be strictly increasing")
        self.records.append(rec)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def metric_at(self, it: int) -> Optional[MetricRecord]:
        for m in self.metrics:
            if m.iter == it:
                return m
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ITER_COLUMNS)
        for r in self.records:
            w.writerow([fmt(getattr(r, c)) for c in ITER_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "records": [asdict(r) for r in self.records],
            "metrics": [asdict(m) for m in self.metrics],
            "snapshots": [asdict(s) for s in self.snapshots],
        }
        return json.dumps(payload, indent=1, sort_keys=True)


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def atomic_write(path, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
