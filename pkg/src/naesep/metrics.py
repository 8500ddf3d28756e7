"""Evaluation: scale-invariant SDR, the raw correlation-per-energy ratio, and
box-plot summary statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform
from .errors import ContractError

__all__ = [
    "sisdr",
    "sdr_ratio",
    "boxplot_stats",
    "BoxStats",
    "SeparationReport",
    "SISDR_CAP_DB",
]

# Zero-residual estimates would give +inf dB; reports cap at +-100 instead.
SISDR_CAP_DB = 100.0


def sisdr(estimate: Waveform, reference: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The reference is scaled by the least-squares factor a = <e,r>/<r,r>, and
    the value is 10*log10(|a r|^2 / |e - a r|^2).  Both signals are
    mean-centered first (a plain DC offset should not count as signal), and
    the result is capped at +-100 dB to keep degenerate cases finite.
    """
    if estimate.sample_rate != reference.sample_rate:
        raise ContractError("estimate and reference sample rates differ")
    if len(estimate) != len(reference):
        raise ContractError(
            f"length mismatch: estimate {len(estimate)}, reference {len(reference)}")
    est = estimate.samples - estimate.samples.mean()
    ref = reference.samples - reference.samples.mean()
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ContractError("reference is silent after mean removal")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    residual = est - target
    target_energy = float(np.dot(target, target))
    residual_energy = float(np.dot(residual, residual))
    if residual_energy < 1e-20 * target_energy:
        return SISDR_CAP_DB
    if target_energy < 1e-20 * residual_energy:
        return -SISDR_CAP_DB
    return 10.0 * math.log10(target_energy / residual_energy)


def sdr_ratio(x: np.ndarray, y: np.ndarray) -> float:
    """Raw (non-log) objective |<x,y>|^2 / <x,x>, for reporting."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {y.shape}")
    ip = float(np.vdot(x, y))
    energy = float(np.vdot(x, x))
    return ip * ip / max(energy, 1e-300)


@dataclass(frozen=True)
class BoxStats:
    median: float
    q25: float
    q75: float
    lo: float
    hi: float
    count: int

    def as_dict(self) -> dict:
        return {"median": self.median, "q25": self.q25, "q75": self.q75,
                "min": self.lo, "max": self.hi, "count": self.count}


def boxplot_stats(values) -> BoxStats:
    """Median and quartiles by linear interpolation between order statistics."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ContractError("boxplot_stats needs at least one value")
    q25, median, q75 = np.percentile(arr, [25.0, 50.0, 75.0])
    return BoxStats(float(median), float(q25), float(q75),
                    float(arr.min()), float(arr.max()), int(arr.size))


@dataclass
class ReportRow:
    condition: str
    example_id: str
    source: str
    sisdr_db: float


@dataclass
class SeparationReport:
    """Per-example, per-source SISDR values plus per-condition summaries."""

    rows: list[ReportRow] = field(default_factory=list)

    def add(self, condition: str, example_id: str, source: str, sisdr_db: float) -> None:
        self.rows.append(ReportRow(condition, example_id, source, float(sisdr_db)))

    def values(self, condition: str | None = None, source: str | None = None) -> list[float]:
        return [r.sisdr_db for r in self.rows
                if (condition is None or r.condition == condition)
                and (source is None or r.source == source)]

    def summaries(self) -> dict[str, BoxStats]:
        out: dict[str, BoxStats] = {}
        for condition in sorted({r.condition for r in self.rows}):
            out[condition] = boxplot_stats(self.values(condition))
        return out

    def as_dict(self) -> dict:
        return {
            "rows": [{"condition": r.condition, "example_id": r.example_id,
                      "source": r.source, "sisdr_db": r.sisdr_db} for r in self.rows],
            "summary": {c: s.as_dict() for c, s in self.summaries().items()},
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["condition", "example_id", "source", "sisdr_db"])
            for r in self.rows:
                out.writerow([r.condition, r.example_id, r.source, f"{r.sisdr_db:.6f}"])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["condition", "median", "q25", "q75", "min", "max", "count"])
            for condition, s in self.summaries().items():
                out.writerow([condition, f"{s.median:.6f}", f"{s.q25:.6f}",
                              f"{s.q75:.6f}", f"{s.lo:.6f}", f"{s.hi:.6f}", s.count])
