"""Outcome reporting: rezoning statistics, attendance matrices, map export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from zonechoice.district import District, DomainError, Zoning
from zonechoice.scenario import AttendanceRealization, ScenarioTable, saa_objective
from zonechoice.synth import RACES

# a student is a persistent opt-out if they opt out in >= this share of scenarios
PERSISTENT_OPTOUT_SHARE = 0.5


@dataclass
class RezoneReport:
    dissimilarity_mean: float
    dissimilarity_se: float
    rezoned_lower_ses: int
    rezoned_lower_ses_pct: float
    rezoned_students: int
    rezoned_students_pct: float
    rezoned_blocks: int
    rezoned_blocks_pct: float
    avg_opt_out_count: float
    avg_opt_out_rate: float
    avg_driving_time_min: float
    enrollment_change: dict[str, float]
    persistent_optout_count: int
    optout_by_race: dict[str, int]
    optout_by_ses: dict[int, int]
    per_block_optout_rate: np.ndarray = field(repr=False, default=None)

    def to_csv(self, path: str | Path, method: str = "", scenarios: int = 0) -> None:
        race_cols = [f"optout_{r}_pct" for r in RACES]
        ses_cols = [f"optout_ses{c}_pct" for c in (0, 1, 2)]
        header = [
            "method", "saa_scenarios", "dissimilarity", "standard_error",
            "rezoned_lower_ses", "rezoned_lower_ses_pct",
            "rezoned_students", "rezoned_students_pct",
            "rezoned_blocks", "rezoned_blocks_pct",
            "avg_students_opting_out", "avg_opt_out_rate_pct",
            "avg_driving_time_min", "persistent_optout_count",
        ] + race_cols + ses_cols
        total = max(self.persistent_optout_count, 1)
        row = [
            method, scenarios,
            f"{self.dissimilarity_mean:.6f}", f"{self.dissimilarity_se:.6g}",
            self.rezoned_lower_ses, f"{self.rezoned_lower_ses_pct:.2f}",
            self.rezoned_students, f"{self.rezoned_students_pct:.2f}",
            self.rezoned_blocks, f"{self.rezoned_blocks_pct:.2f}",
            f"{self.avg_opt_out_count:.2f}", f"{100 * self.avg_opt_out_rate:.2f}",
            f"{self.avg_driving_time_min:.4f}", self.persistent_optout_count,
        ] + [
            f"{100 * self.optout_by_race.get(r, 0) / total:.2f}" for r in RACES
        ] + [
            f"{100 * self.optout_by_ses.get(c, 0) / total:.2f}" for c in (0, 1, 2)
        ]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerow(row)


def rezone_report(
    old: Zoning, new: Zoning, table: ScenarioTable, district: District
) -> RezoneReport:
    """Compare a candidate zoning against a reference under a scenario table."""
    z_old = old.as_array(district)
    z_new = new.as_array(district)
    N, S = district.num_students, district.num_schools
    I = table.num_scenarios

    rezoned_block_mask = z_new != z_old
    student_blocks = district.student_block
    rezoned_students_mask = rezoned_block_mask[student_blocks]
    rezoned_lower = rezoned_students_mask & district.lower_ses_mask

    saa = saa_objective(new, table, district)

    zoned = z_new[student_blocks]
    attended = table.choices[:, np.arange(N), zoned]  # (I, N)
    optout = attended != zoned[None, :]
    optout_counts = optout.sum(axis=1)

    drive = district.travel[student_blocks[None, :].repeat(I, axis=0), attended]
    avg_drive = float(drive.mean()) if N else 0.0

    mean_attendance = np.zeros(S)
    for i in range(I):
        mean_attendance += np.bincount(attended[i], minlength=S)
    mean_attendance /= I
    enrollment_change = {
        district.school_ids[s]: float(mean_attendance[s] - district.current_enrollment[s])
        for s in range(S)
    }

    persistent = optout.mean(axis=0) >= PERSISTENT_OPTOUT_SHARE
    by_race: dict[str, int] = {}
    by_ses: dict[int, int] = {}
    for n in np.flatnonzero(persistent):
        st = district.students[int(n)]
        by_race[st.race] = by_race.get(st.race, 0) + 1
        by_ses[st.ses_category] = by_ses.get(st.ses_category, 0) + 1

    per_block_rate = np.zeros(district.num_blocks)
    block_students = np.bincount(student_blocks, minlength=district.num_blocks)
    optout_by_block = np.zeros(district.num_blocks)
    np.add.at(optout_by_block, student_blocks, optout.mean(axis=0))
    nonzero = block_students > 0
    per_block_rate[nonzero] = optout_by_block[nonzero] / block_students[nonzero]

    g = max(district.g_total, 1)
    return RezoneReport(
        dissimilarity_mean=saa.mean,
        dissimilarity_se=saa.std_error,
        rezoned_lower_ses=int(rezoned_lower.sum()),
        rezoned_lower_ses_pct=100.0 * rezoned_lower.sum() / g,
        rezoned_students=int(rezoned_students_mask.sum()),
        rezoned_students_pct=100.0 * rezoned_students_mask.sum() / max(N, 1),
        rezoned_blocks=int(rezoned_block_mask.sum()),
        rezoned_blocks_pct=100.0 * rezoned_block_mask.sum() / district.num_blocks,
        avg_opt_out_count=float(optout_counts.mean()),
        avg_opt_out_rate=float(optout_counts.mean() / max(N, 1)),
        avg_driving_time_min=avg_drive,
        enrollment_change=enrollment_change,
        persistent_optout_count=int(persistent.sum()),
        optout_by_race=by_race,
        optout_by_ses=by_ses,
        per_block_optout_rate=per_block_rate,
    )


def attendance_matrix(
    district: District,
    zoning: Zoning,
    realization: AttendanceRealization,
    shares: bool = False,
) -> np.ndarray:
    """matrix[zoned school, attended school] = student count (or row share)."""
    S = district.num_schools
    zoned = zoning.as_array(district)[district.student_block]
    m = np.zeros((S, S))
    np.add.at(m, (zoned, realization.attended), 1.0)
    if shares:
        rows = m.sum(axis=1, keepdims=True)
        rows[rows == 0] = 1.0
        m = m / rows
    return m


def save_matrix_csv(matrix: np.ndarray, district: District, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["zoned\\attended"] + list(district.school_ids))
        for s, row in enumerate(matrix):
            w.writerow([district.school_ids[s]] + [f"{v:.6g}" for v in row])


def export_geojson(
    district: District,
    zoning: Zoning,
    overlay: str = "none",
    table: ScenarioTable | None = None,
    old: Zoning | None = None,
) -> dict:
    """FeatureCollection with one square cell per block.

    The serialization format carries centroids only, so cells are squares
    of the generator's grid pitch (estimated from nearest-neighbor
    spacing) centered on each centroid.

    overlay: 'none', 'ses', or 'opt-out-rate' (requires a scenario table;
    rates are the per-block averages the rezone report computes).
    """
    if overlay not in ("none", "ses", "opt-out-rate"):
        raise DomainError(f"unknown overlay {overlay!r}")
    z = zoning.as_array(district)

    rate = None
    if overlay == "opt-out-rate":
        if table is None:
            raise DomainError("opt-out-rate overlay requires a scenario table")
        rep = rezone_report(old or zoning, zoning, table, district)
        rate = rep.per_block_optout_rate

    half = 0.5 * _grid_pitch(district.centroids)
    features = []
    for b in range(district.num_blocks):
        x, y = district.centroids[b]
        props = {
            "block_id": district.block_ids[b],
            "school_id": district.school_ids[z[b]],
        }
        if overlay == "ses":
            props["ses_index"] = round(float(district.blocks[b].ses_index), 6)
        elif overlay == "opt-out-rate":
            props["opt_out_rate"] = round(float(rate[b]), 6)
        features.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [x - half, y - half],
                        [x + half, y - half],
                        [x + half, y + half],
                        [x - half, y + half],
                        [x - half, y - half],
                    ]],
                },
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


def save_geojson(collection: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(collection, sort_keys=True))


def _grid_pitch(centroids: np.ndarray) -> float:
    if len(centroids) < 2:
        return 1.0
    # median nearest-neighbor distance approximates the grid cell size
    d = np.linalg.norm(centroids[:, None, :] - centroids[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    return float(np.median(d.min(axis=1)))
