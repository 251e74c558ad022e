"""Shared fixtures and a hand-built-district helper for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from zonechoice.district import Block, District, School, Student
from zonechoice.scenario import ScenarioTable
from zonechoice.synth import GenParams, generate_district


def build_district(
    campuses,
    status_quo,
    students,
    *,
    travel=None,
    magnets=None,
    enrollments=None,
    ratings=None,
    choice_zones=None,
    zone_count=None,
    grid_cols=None,
):
    """Construct a small district by hand.

    Blocks sit on a line (or a grid of ``grid_cols`` columns) with unit
    spacing and rook adjacency. ``campuses`` lists the campus block of
    each school; ``status_quo`` the zoned school index per block;
    ``students`` a list of (block, ses_category[, actual_school_index])
    tuples, where the actual school defaults to the zoned one.
    """
    B = len(status_quo)
    S = len(campuses)
    cols = grid_cols or B

    def xy(i):
        r, c = divmod(i, cols)
        return float(c), float(r)

    neighbors = [set() for _ in range(B)]
    for i in range(B):
        r, c = divmod(i, cols)
        if c + 1 < cols and i + 1 < B:
            neighbors[i].add(i + 1)
            neighbors[i + 1].add(i)
        if i + cols < B:
            neighbors[i].add(i + cols)
            neighbors[i + cols].add(i)

    block_ids = [f"b{i}" for i in range(B)]
    school_ids = [f"s{j}" for j in range(S)]

    if travel is None:
        centroids = np.array([xy(i) for i in range(B)])
        travel = (
            np.linalg.norm(
                centroids[:, None, :] - centroids[None, list(campuses), :], axis=2
            )
            + 1.0
        )
    travel = np.asarray(travel, dtype=float)

    student_objs = []
    actual_idx = []
    for k, entry in enumerate(students):
        block, ses = entry[0], entry[1]
        actual = entry[2] if len(entry) > 2 else status_quo[block]
        actual_idx.append(actual)
        student_objs.append(
            Student(
                id=f"n{k}",
                block=block_ids[block],
                ses_category=ses,
                race="white",
                grade=3,
                actual_school=school_ids[actual],
            )
        )

    if enrollments is None:
        enrollments = np.bincount(actual_idx, minlength=S)
    if magnets is None:
        magnets = [False] * S
    if ratings is None:
        ratings = [(5.0, 5.0, 5.0, 5.0)] * S
    if choice_zones is None:
        choice_zones = [{0}] * S
    if zone_count is None:
        zone_count = max(max(z) for z in choice_zones) + 1

    blocks = [
        Block(
            id=block_ids[i],
            centroid=xy(i),
            neighbors=frozenset(block_ids[n] for n in neighbors[i]),
            status_quo_school=school_ids[status_quo[i]],
            travel_time=tuple(travel[i]),
            resident_students=tuple(
                n.id for n in student_objs if n.block == block_ids[i]
            ),
            ses_index=0.0,
        )
        for i in range(B)
    ]
    schools = [
        School(
            id=school_ids[j],
            campus_block=block_ids[campuses[j]],
            is_magnet=bool(magnets[j]),
            current_enrollment=int(enrollments[j]),
            ratings=tuple(ratings[j]),
            choice_zones=frozenset(choice_zones[j]),
        )
        for j in range(S)
    ]
    return District(blocks, schools, student_objs, zone_count)


def manual_table(district, choices, seed=0):
    """Wrap a raw (I, N, S) choices array as a scenario table."""
    return ScenarioTable(
        choices=np.asarray(choices, dtype=np.int16),
        seed=seed,
        model_fingerprint="manual",
        district_fingerprint=district.fingerprint(),
    )


ACCEPTANCE_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    """Collect acceptance pass/fail lines for the end-of-run summary."""
    ACCEPTANCE_VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_district():
    """A quick-to-generate district shared by read-only tests."""
    return generate_district(
        GenParams(
            n_blocks=64,
            n_schools=4,
            n_magnets=1,
            n_students=600,
            n_choice_zones=2,
            seed=1,
        )
    )


@pytest.fixture(scope="session")
def default_district():
    """The full-size default district used by the acceptance suite."""
    return generate_district(GenParams(seed=0))
