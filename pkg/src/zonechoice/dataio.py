"""Flat-file serialization for districts and zonings.

A district directory holds four CSV files, all with a header row:

  blocks.csv    id, x_km, y_km, status_quo_school, ses_index,
                tt_<school id> ... (one travel-time column per school, minutes)
  schools.csv   id, campus_block, is_magnet, current_enrollment,
                rating_overall, rating_test, rating_progress, rating_equity,
                choice_zones ('|'-separated zone indices)
  students.csv  id, block, ses_category, race, grade, actual_school,
                prior_school (may be empty), then one 0/1 column per
                history flag
  adjacency.csv block_a, block_b (each undirected edge listed once)

Block residents are derived from students.csv. Zonings serialize as
two-column (block_id, school_id) CSV files.
"""

from __future__ import annotations

import csv
from pathlib import Path

from zonechoice.district import (
    HISTORY_FLAGS,
    Block,
    District,
    DomainError,
    School,
    Student,
    Zoning,
)


def save_district(district: District, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / "schools.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["id", "campus_block", "is_magnet", "current_enrollment"]
            + [f"rating_{t}" for t in ("overall", "test", "progress", "equity")]
            + ["choice_zones"]
        )
        for s in district.schools:
            w.writerow(
                [s.id, s.campus_block, int(s.is_magnet), s.current_enrollment]
                + [repr(float(r)) for r in s.ratings]
                + ["|".join(map(str, sorted(s.choice_zones)))]
            )

    with open(directory / "blocks.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["id", "x_km", "y_km", "status_quo_school", "ses_index"]
            + [f"tt_{sid}" for sid in district.school_ids]
        )
        for b in district.blocks:
            w.writerow(
                # repr round-trips floats exactly, keeping fingerprints
                # identical before and after a save/load cycle
                [b.id, repr(float(b.centroid[0])), repr(float(b.centroid[1])),
                 b.status_quo_school, repr(float(b.ses_index))]
                + [repr(float(t)) for t in b.travel_time]
            )

    with open(directory / "adjacency.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["block_a", "block_b"])
        for b in district.blocks:
            for n in sorted(b.neighbors):
                if b.id < n:
                    w.writerow([b.id, n])

    with open(directory / "students.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["id", "block", "ses_category", "race", "grade", "actual_school",
             "prior_school"]
            + list(HISTORY_FLAGS)
        )
        for n in district.students:
            w.writerow(
                [n.id, n.block, n.ses_category, n.race, n.grade, n.actual_school,
                 n.prior_school or ""]
                + [int(n.flag(fl)) for fl in HISTORY_FLAGS]
            )

    with open(directory / "meta.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["choice_zone_count"])
        w.writerow([district.choice_zone_count])


def load_district(directory: str | Path) -> District:
    directory = Path(directory)
    for name in ("schools.csv", "blocks.csv", "adjacency.csv", "students.csv"):
        if not (directory / name).exists():
            raise DomainError(f"district directory missing {name}: {directory}")

    schools = []
    with open(directory / "schools.csv", newline="") as f:
        for row in csv.DictReader(f):
            schools.append(
                School(
                    id=row["id"],
                    campus_block=row["campus_block"],
                    is_magnet=bool(int(row["is_magnet"])),
                    current_enrollment=int(row["current_enrollment"]),
                    ratings=tuple(
                        float(row[f"rating_{t}"])
                        for t in ("overall", "test", "progress", "equity")
                    ),
                    choice_zones=frozenset(
                        int(z) for z in row["choice_zones"].split("|") if z != ""
                    ),
                )
            )
    school_ids = [s.id for s in schools]

    neighbors: dict[str, set[str]] = {}
    with open(directory / "adjacency.csv", newline="") as f:
        for row in csv.DictReader(f):
            a, b = row["block_a"], row["block_b"]
            neighbors.setdefault(a, set()).add(b)
            neighbors.setdefault(b, set()).add(a)

    students = []
    residents: dict[str, list[str]] = {}
    with open(directory / "students.csv", newline="") as f:
        for row in csv.DictReader(f):
            students.append(
                Student(
                    id=row["id"],
                    block=row["block"],
                    ses_category=int(row["ses_category"]),
                    race=row["race"],
                    grade=int(row["grade"]),
                    actual_school=row["actual_school"],
                    history={fl: bool(int(row[fl])) for fl in HISTORY_FLAGS},
                    prior_school=row.get("prior_school") or None,
                )
            )
            residents.setdefault(row["block"], []).append(row["id"])

    blocks = []
    with open(directory / "blocks.csv", newline="") as f:
        for row in csv.DictReader(f):
            bid = row["id"]
            blocks.append(
                Block(
                    id=bid,
                    centroid=(float(row["x_km"]), float(row["y_km"])),
                    neighbors=frozenset(neighbors.get(bid, set())),
                    status_quo_school=row["status_quo_school"],
                    travel_time=tuple(float(row[f"tt_{sid}"]) for sid in school_ids),
                    resident_students=tuple(residents.get(bid, ())),
                    ses_index=float(row["ses_index"]),
                )
            )

    choice_zone_count = max(
        (max(s.choice_zones) for s in schools if s.choice_zones), default=-1
    ) + 1
    meta = directory / "meta.csv"
    if meta.exists():
        with open(meta, newline="") as f:
            rows = list(csv.DictReader(f))
        if rows:
            choice_zone_count = int(rows[0]["choice_zone_count"])

    return District(blocks, schools, students, choice_zone_count)


def save_zoning(zoning: Zoning, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["block_id", "school_id"])
        for bid in sorted(zoning.assignment):
            w.writerow([bid, zoning.assignment[bid]])


def load_zoning(path: str | Path) -> Zoning:
    assignment = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            assignment[row["block_id"]] = row["school_id"]
    if not assignment:
        raise DomainError(f"empty zoning file: {path}")
    return Zoning(assignment)
