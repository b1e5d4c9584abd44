"""
Collective anomaly detection on per-step prediction errors.

A step whose error strictly exceeds the Prediction Error Threshold (PET) is a
candidate; a maximal run of at least Collective Range (CR) candidates is one
anomaly region. PET is calibrated on normal-only validation errors by scanning
a grid; CR comes from the shortest attack duration worth reporting.
"""

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from rich.table import Table

from collectivelstm.predictor import ErrorSeries

DEFAULT_GRID_MIN = 0.05
DEFAULT_GRID_MAX = 1.0
DEFAULT_GRID_STEP = 0.05
DEFAULT_Q = 1.0
ERROR_DECIMALS = 12


def default_grid(
    grid_min: float = DEFAULT_GRID_MIN,
    grid_max: float = DEFAULT_GRID_MAX,
    grid_step: float = DEFAULT_GRID_STEP,
) -> tuple[float, ...]:
    """Evenly spaced PET candidates; the defaults give the 20 values 0.05 ... 1.00."""
    if not 0 < grid_min <= grid_max or not grid_step > 0:
        raise ValueError(f"invalid grid: min={grid_min}, max={grid_max}, step={grid_step}")
    count = int(math.floor((grid_max - grid_min) / grid_step + 1e-9)) + 1
    return tuple(round(grid_min + i * grid_step, 10) for i in range(count))


@dataclass(frozen=True)
class Thresholds:
    """Calibrated PET and CR, with the grid and target fraction that produced PET."""

    pet: float
    cr: int
    grid: tuple[float, ...] = field(default_factory=default_grid)
    q: float = DEFAULT_Q

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(p) for p in self.grid))
        _check_grid(self.grid, self.q)
        if not 0 < self.pet <= 1:
            raise ValueError(f"pet must be in (0, 1], got {self.pet}")
        if self.pet not in self.grid:
            raise ValueError(f"pet {self.pet} is not a member of the grid")
        if self.cr < 1:
            raise ValueError(f"cr must be >= 1, got {self.cr}")

    def to_dict(self) -> dict:
        return {"pet": self.pet, "cr": self.cr, "grid": list(self.grid), "q": self.q}

    @classmethod
    def from_dict(cls, data: dict) -> "Thresholds":
        return cls(pet=float(data["pet"]), cr=int(data["cr"]), grid=tuple(data["grid"]), q=float(data["q"]))


@dataclass(frozen=True, order=True)
class AnomalyRegion:
    """Inclusive step range [start, end]."""

    start: int
    end: int

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def __str__(self) -> str:
        return f"{self.start} - {self.end}"


@dataclass(frozen=True)
class AnomalyReport:
    """Detected regions of one series and the fraction of steps they cover."""

    regions: tuple[AnomalyRegion, ...]
    total_steps: int
    thresholds: Thresholds
    label: str
    per_step_errors_path: str | None = None

    @property
    def covered_steps(self) -> int:
        return sum(r.length for r in self.regions)

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.covered_steps, self.total_steps)

    @property
    def anomaly_ratio(self) -> float:
        return float(self.ratio)

    @property
    def ratio_percent(self) -> str:
        return f"{100 * self.anomaly_ratio:.2f}%"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "total_steps": self.total_steps,
            "pet": self.thresholds.pet,
            "cr": self.thresholds.cr,
            "regions": [{"start": r.start, "end": r.end} for r in self.regions],
            "covered_steps": self.covered_steps,
            "anomaly_ratio_percent": round(100 * self.anomaly_ratio, 2),
            "per_step_errors_path": self.per_step_errors_path,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict, thresholds: Thresholds | None = None) -> "AnomalyReport":
        if thresholds is None:
            thresholds = Thresholds(pet=float(data["pet"]), cr=int(data["cr"]), grid=(float(data["pet"]),))
        return build_report(
            [AnomalyRegion(r["start"], r["end"]) for r in data["regions"]],
            int(data["total_steps"]),
            thresholds,
            data["label"],
            per_step_errors_path=data.get("per_step_errors_path"),
        )


@dataclass(frozen=True)
class PetSweepRow:
    pet: float
    exceeding_steps: int
    covered_steps: int
    n_regions: int


@dataclass(frozen=True)
class RegionScore:
    """Detected regions scored against ground-truth step labels."""

    burst_coverage: tuple[float, ...]  # per labelled burst: best single-region overlap / burst length
    false_positive_steps: int
    total_steps: int

    @property
    def false_positive_fraction(self) -> float:
        return self.false_positive_steps / self.total_steps if self.total_steps else 0.0

    def bursts_detected(self, min_overlap: float = 0.8) -> int:
        return sum(1 for c in self.burst_coverage if c >= min_overlap)

    def to_dict(self) -> dict:
        return {
            "burst_coverage": list(self.burst_coverage),
            "false_positive_steps": self.false_positive_steps,
            "false_positive_fraction": self.false_positive_fraction,
            "total_steps": self.total_steps,
        }


def _check_grid(grid, q: float) -> None:
    if not grid:
        raise ValueError("grid must not be empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")


def _error_values(errors) -> np.ndarray:
    values = np.asarray(errors.errors if isinstance(errors, ErrorSeries) else errors, dtype=float)
    # drops float noise, so an error of 0.1 + 0.2 sits at a 0.3 threshold, not above it
    return np.round(values, ERROR_DECIMALS)


def relative_error(x, x_hat):
    """RE(x, x_hat) = |x - x_hat|, element-wise for arrays."""
    return np.abs(np.subtract(x, x_hat))


def calibrate_pet(validation_errors, grid=None, q: float = DEFAULT_Q) -> float:
    """
    Smallest grid value p with at least a q-fraction of validation steps at error <= p.

    Args:
        validation_errors: ErrorSeries (or plain vector) from normal-only data
        grid: Strictly increasing PET candidates (default 0.05 ... 1.00)
        q: Fraction of validation steps that must be classified normal

    Returns:
        The calibrated PET, a member of the grid
    """
    grid = default_grid() if grid is None else tuple(float(p) for p in grid)
    _check_grid(grid, q)

    errors = _error_values(validation_errors)
    if len(errors) == 0:
        raise ValueError("validation errors are empty")

    for pet in grid:
        if np.count_nonzero(errors <= pet) >= q * len(errors):
            return pet
    raise ValueError("calibration failed: validation errors exceed grid maximum")


def choose_cr(interval_seconds: float, min_attack_duration_seconds: float) -> int:
    """Number of intervals needed to span the shortest attack: ceil(duration / interval)."""
    if not interval_seconds > 0 or not min_attack_duration_seconds > 0:
        raise ValueError("interval and minimum attack duration must both be positive")
    if isinstance(interval_seconds, int) and isinstance(min_attack_duration_seconds, int):
        return -(-min_attack_duration_seconds // interval_seconds)
    return math.ceil(min_attack_duration_seconds / interval_seconds)


def find_runs(mask) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) pairs."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size == 0:
        return []
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def extract_regions(errors, thresholds: Thresholds) -> list[AnomalyRegion]:
    """Every maximal run of steps with error > pet that is at least cr long."""
    exceed = _error_values(errors) > thresholds.pet
    return [AnomalyRegion(s, e) for s, e in find_runs(exceed) if e - s + 1 >= thresholds.cr]


def build_report(
    regions,
    total_steps: int,
    thresholds: Thresholds,
    label: str,
    per_step_errors_path: str | None = None,
) -> AnomalyReport:
    """
    Assemble a report; the anomaly ratio is covered steps / total steps.

    Raises:
        ValueError: regions overlap or fall outside [0, total_steps)
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    regions = tuple(sorted(regions))
    for region in regions:
        if region.start < 0 or region.end >= total_steps or region.end < region.start:
            raise ValueError(f"region {region} lies outside a {total_steps}-step series")
    for prev, nxt in zip(regions, regions[1:]):
        if nxt.start <= prev.end:
            raise ValueError(f"overlapping regions {prev} and {nxt}")
    return AnomalyReport(
        regions=regions,
        total_steps=total_steps,
        thresholds=thresholds,
        label=label,
        per_step_errors_path=per_step_errors_path,
    )


def sweep_pet(errors, grid, cr: int) -> list[PetSweepRow]:
    """Detection outcome at every grid PET for a fixed CR."""
    values = _error_values(errors)
    rows = []
    for pet in grid:
        exceed = values > pet
        regions = [(s, e) for s, e in find_runs(exceed) if e - s + 1 >= cr]
        rows.append(
            PetSweepRow(
                pet=float(pet),
                exceeding_steps=int(np.count_nonzero(exceed)),
                covered_steps=sum(e - s + 1 for s, e in regions),
                n_regions=len(regions),
            )
        )
    return rows


def score_regions(regions, labels) -> RegionScore:
    """
    Compare detected regions with per-step labels (True inside an injected burst).

    Coverage of a burst is the largest overlap any single region has with it,
    as a fraction of the burst length.
    """
    labels = np.asarray(labels, dtype=bool)
    detected = np.zeros(len(labels), dtype=bool)
    for region in regions:
        detected[region.start : region.end + 1] = True

    coverage = []
    for b_start, b_end in find_runs(labels):
        best = 0
        for region in regions:
            overlap = min(region.end, b_end) - max(region.start, b_start) + 1
            best = max(best, overlap)
        coverage.append(best / (b_end - b_start + 1))

    return RegionScore(
        burst_coverage=tuple(coverage),
        false_positive_steps=int(np.count_nonzero(detected & ~labels)),
        total_steps=len(labels),
    )


# --- rendering -----------------------------------------------------------------


def render_report_text(report: AnomalyReport) -> str:
    """Plain-text "Anomaly region / Anomaly ratio" rendering of one report."""
    lines = [
        f"Dataset: {report.label}",
        f"PET: {report.thresholds.pet:g}  CR: {report.thresholds.cr}  Steps: {report.total_steps}",
        "",
        f"{'Anomaly region':<16}Anomaly ratio",
    ]
    region_cells = [str(r) for r in report.regions] or ["-"]
    for k, cell in enumerate(region_cells):
        ratio = report.ratio_percent if k == 0 else ""
        lines.append(f"{cell:<16}{ratio}".rstrip())
    return "\n".join(lines) + "\n"


def render_table(reports: dict[str, dict[int, AnomalyReport]]) -> Table:
    """
    One row block per dataset, one region/ratio column pair per horizon.

    Args:
        reports: dataset label -> horizon -> report
    """
    horizons = sorted({h for by_horizon in reports.values() for h in by_horizon})
    table = Table(title="Collective anomalies")
    table.add_column("Dataset")
    for h in horizons:
        table.add_column(f"{h}-step region")
        table.add_column(f"{h}-step ratio", justify="right")

    for label, by_horizon in reports.items():
        depth = max([len(r.regions) for r in by_horizon.values()] + [1])
        for k in range(depth):
            row = [label if k == 0 else ""]
            for h in horizons:
                report = by_horizon.get(h)
                if report is None:
                    row += ["", ""]
                    continue
                cell = str(report.regions[k]) if k < len(report.regions) else ("-" if k == 0 else "")
                row += [cell, report.ratio_percent if k == 0 else ""]
            table.add_row(*row)
    return table
