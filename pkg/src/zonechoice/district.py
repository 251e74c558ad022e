"""World model: blocks, schools, students, zonings, and feasibility checks.

Everything here is immutable after construction and pure, so districts and
zonings can be shared freely across workers.
"""

from __future__ import annotations

import hashlib
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an input violates a domain invariant."""


HISTORY_FLAGS = (
    "new_to_system",
    "has_sibling",
    "attended_same_school_as_sibling",
    "opted_out_before",
    "opted_out_to_magnet_before",
    "attended_multiple_schools",
)

RATING_TYPES = ("overall", "test", "progress", "equity")


@dataclass(frozen=True)
class Block:
    id: str
    centroid: tuple[float, float]  # planar km
    neighbors: frozenset[str]
    status_quo_school: str
    travel_time: tuple[float, ...]  # minutes, district school order
    resident_students: tuple[str, ...]
    ses_index: float


@dataclass(frozen=True)
class School:
    id: str
    campus_block: str
    is_magnet: bool
    current_enrollment: int
    ratings: tuple[float, float, float, float]  # overall, test, progress, equity
    choice_zones: frozenset[int]


@dataclass(frozen=True)
class Student:
    id: str
    block: str
    ses_category: int  # 0 = lower, 1 = medium, 2 = higher
    race: str
    grade: int
    actual_school: str
    history: Mapping[str, bool] = field(default_factory=dict)
    prior_school: str | None = None  # school attended last year, if any

    def flag(self, name: str) -> bool:
        return bool(self.history.get(name, False))


@dataclass(frozen=True)
class FeasibilityParams:
    """Hard-constraint parameters: population drift ratio and travel slack."""

    alpha: float = 0.15
    tau: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise DomainError(f"alpha must be in [0, 1], got {self.alpha}")
        if not (0.0 <= self.tau <= 1.0):
            raise DomainError(f"tau must be in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class SchoolCounts:
    """Per-school student totals and lower-SES totals."""

    total: tuple[int, ...]
    lower_ses: tuple[int, ...]

    def __post_init__(self):
        if len(self.total) != len(self.lower_ses):
            raise DomainError("total and lower_ses must have equal length")
        for t, g in zip(self.total, self.lower_ses):
            if not (0 <= g <= t):
                raise DomainError(f"invalid counts: lower_ses={g}, total={t}")


class District:
    """Immutable container tying blocks, schools, and students together.

    Builds index maps and numpy views used throughout the pipeline.
    School order (and hence travel-time column order) is the order of
    ``schools`` as given, which serializers keep stable.
    """

    def __init__(
        self,
        blocks: Sequence[Block],
        schools: Sequence[School],
        students: Sequence[Student],
        choice_zone_count: int,
        validate: bool = True,
    ):
        self.blocks = tuple(blocks)
        self.schools = tuple(schools)
        self.students = tuple(students)
        self.choice_zone_count = int(choice_zone_count)

        self.block_ids = tuple(b.id for b in self.blocks)
        self.school_ids = tuple(s.id for s in self.schools)
        self.student_ids = tuple(s.id for s in self.students)
        self.block_index = {bid: i for i, bid in enumerate(self.block_ids)}
        self.school_index = {sid: i for i, sid in enumerate(self.school_ids)}
        self.student_index = {nid: i for i, nid in enumerate(self.student_ids)}

        B, S, N = len(self.blocks), len(self.schools), len(self.students)
        self.num_blocks, self.num_schools, self.num_students = B, S, N

        self.travel = np.array([b.travel_time for b in self.blocks], dtype=float)
        self.centroids = np.array([b.centroid for b in self.blocks], dtype=float)
        self.adjacency: list[list[int]] = [
            sorted(self.block_index[n] for n in b.neighbors) for b in self.blocks
        ]
        self.status_quo_assignment = np.array(
            [self.school_index[b.status_quo_school] for b in self.blocks], dtype=int
        )
        self.campus_block = np.array(
            [self.block_index[s.campus_block] for s in self.schools], dtype=int
        )
        self.current_enrollment = np.array(
            [s.current_enrollment for s in self.schools], dtype=int
        )
        self.magnet_mask = np.array([s.is_magnet for s in self.schools], dtype=bool)

        self.student_block = np.array(
            [self.block_index[n.block] for n in self.students], dtype=int
        )
        self.student_ses = np.array([n.ses_category for n in self.students], dtype=int)
        self.student_actual = np.array(
            [self.school_index[n.actual_school] for n in self.students], dtype=int
        )
        self.student_prior = np.array(
            [
                self.school_index.get(n.prior_school, -1)
                if n.prior_school is not None
                else -1
                for n in self.students
            ],
            dtype=int,
        )
        self.lower_ses_mask = self.student_ses == 0
        self.g_total = int(self.lower_ses_mask.sum())

        if validate:
            self._validate()

    # -- invariants -----------------------------------------------------

    def _validate(self) -> None:
        for b in self.blocks:
            if b.id in b.neighbors:
                raise DomainError(f"block {b.id} is adjacent to itself")
            for n in b.neighbors:
                if n not in self.block_index:
                    raise DomainError(f"block {b.id} has unknown neighbor {n}")
                if b.id not in self.blocks[self.block_index[n]].neighbors:
                    raise DomainError(f"adjacency not symmetric: {b.id} / {n}")
            if len(b.travel_time) != self.num_schools:
                raise DomainError(f"block {b.id}: travel_time length mismatch")
            for t in b.travel_time:
                if not (math.isfinite(t) and t > 0):
                    raise DomainError(f"block {b.id}: non-positive travel time")
            if b.status_quo_school not in self.school_index:
                raise DomainError(f"block {b.id}: unknown status-quo school")
        for s in self.schools:
            if s.current_enrollment < 0:
                raise DomainError(f"school {s.id}: negative enrollment")
            if not s.choice_zones:
                raise DomainError(f"school {s.id}: empty choice_zones")
            campus = self.blocks[self.block_index[s.campus_block]]
            if campus.status_quo_school != s.id:
                raise DomainError(
                    f"school {s.id}: campus block zoned to {campus.status_quo_school}"
                )
        for n in self.students:
            if n.ses_category not in (0, 1, 2):
                raise DomainError(f"student {n.id}: bad ses_category")
            if n.actual_school not in self.school_index:
                raise DomainError(f"student {n.id}: unknown actual_school")
            if n.prior_school is not None and n.prior_school not in self.school_index:
                raise DomainError(f"student {n.id}: unknown prior_school")
        if self.num_students and not (0 < self.g_total < self.num_students):
            raise DomainError("lower-SES group must be a strict subset of students")
        result = check_contiguity(self.status_quo_zoning(), self)
        if not result.ok:
            raise DomainError(
                f"status-quo zoning not contiguous: {result.violations}"
            )

    # -- derived views --------------------------------------------------

    def status_quo_zoning(self) -> "Zoning":
        return Zoning(
            {bid: self.school_ids[s] for bid, s in zip(self.block_ids, self.status_quo_assignment)}
        )

    def students_in_block(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_blocks)]
        for i, b in enumerate(self.student_block):
            out[b].append(i)
        return out

    def fingerprint(self) -> str:
        """Content hash, stable across processes for identical districts."""
        h = hashlib.sha256()
        for b in self.blocks:
            h.update(
                f"{b.id}|{b.centroid[0]:.12g},{b.centroid[1]:.12g}|"
                f"{','.join(sorted(b.neighbors))}|{b.status_quo_school}|"
                f"{','.join(f'{t:.12g}' for t in b.travel_time)}|{b.ses_index:.12g}\n".encode()
            )
        for s in self.schools:
            h.update(
                f"{s.id}|{s.campus_block}|{int(s.is_magnet)}|{s.current_enrollment}|"
                f"{','.join(f'{r:.12g}' for r in s.ratings)}|"
                f"{','.join(map(str, sorted(s.choice_zones)))}\n".encode()
            )
        for n in self.students:
            flags = ",".join(str(int(n.flag(f))) for f in HISTORY_FLAGS)
            h.update(
                f"{n.id}|{n.block}|{n.ses_category}|{n.race}|{n.grade}|"
                f"{n.actual_school}|{n.prior_school or ''}|{flags}\n".encode()
            )
        h.update(str(self.choice_zone_count).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class Zoning:
    """A total assignment of blocks to schools (one school per block)."""

    assignment: Mapping[str, str]

    def school_of(self, block_id: str) -> str:
        return self.assignment[block_id]

    def as_array(self, district: District) -> np.ndarray:
        if set(self.assignment) != set(district.block_ids):
            raise DomainError("zoning must assign exactly the district's blocks")
        return np.array(
            [district.school_index[self.assignment[b]] for b in district.block_ids],
            dtype=int,
        )

    @staticmethod
    def from_array(arr: Sequence[int], district: District) -> "Zoning":
        return Zoning(
            {bid: district.school_ids[int(s)] for bid, s in zip(district.block_ids, arr)}
        )


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    violations: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


# -- dissimilarity index ------------------------------------------------


def dissimilarity(counts: SchoolCounts, g_total: int, n_total: int) -> float:
    """SES dissimilarity index in [0, 1].

    0 means every school mirrors the district-wide lower-SES share; 1 means
    total segregation. Computed in exact rational arithmetic, so equal
    inputs give bit-equal outputs.
    """
    if g_total <= 0 or g_total >= n_total:
        raise DomainError(
            f"g_total must satisfy 0 < g_total < n_total, got {g_total}/{n_total}"
        )
    acc = Fraction(0)
    for t, g in zip(counts.total, counts.lower_ses):
        acc += abs(Fraction(g, g_total) - Fraction(t - g, n_total - g_total))
    return float(acc / 2)


def dissimilarity_from_arrays(
    total: np.ndarray, lower: np.ndarray, g_total: int, n_total: int
) -> np.ndarray:
    """Vectorized float variant; last axis is schools."""
    total = np.asarray(total, dtype=float)
    lower = np.asarray(lower, dtype=float)
    return 0.5 * np.abs(
        lower / g_total - (total - lower) / (n_total - g_total)
    ).sum(axis=-1)


def counts_under_attendance(
    district: District, attended: Mapping[str, str] | np.ndarray
) -> SchoolCounts:
    """Tally per-school totals from a total student -> school map."""
    S = district.num_schools
    if isinstance(attended, Mapping):
        arr = np.empty(district.num_students, dtype=int)
        for nid, i in district.student_index.items():
            sid = attended[nid]
            if sid not in district.school_index:
                raise DomainError(f"unknown school {sid!r} in attendance map")
            arr[i] = district.school_index[sid]
    else:
        arr = np.asarray(attended, dtype=int)
        if arr.shape != (district.num_students,):
            raise DomainError("attendance array must have one entry per student")
        if arr.size and (arr.min() < 0 or arr.max() >= S):
            raise DomainError("attendance array contains an unknown school index")
    total = np.bincount(arr, minlength=S)
    lower = np.bincount(arr[district.lower_ses_mask], minlength=S)
    return SchoolCounts(tuple(int(x) for x in total), tuple(int(x) for x in lower))


# -- feasibility predicates ----------------------------------------------


def population_bounds(district: District, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive integer bounds ceil(c*(1-a)) and floor(c*(1+a)).

    alpha is interpreted via its shortest decimal representation, so e.g.
    0.15 means exactly 3/20 and 100*(1+0.15) = 115 is attainable.
    """
    a = Fraction(str(alpha))
    lo = np.array(
        [math.ceil(c * (1 - a)) for c in district.current_enrollment], dtype=int
    )
    hi = np.array(
        [math.floor(c * (1 + a)) for c in district.current_enrollment], dtype=int
    )
    return lo, hi


def check_population_bounds(
    counts: SchoolCounts, district: District, params: FeasibilityParams
) -> CheckResult:
    lo, hi = population_bounds(district, params.alpha)
    violations = []
    for s, (t, l, h) in enumerate(zip(counts.total, lo, hi)):
        if not (l <= t <= h):
            violations.append(
                f"school {district.school_ids[s]}: count {t} outside [{l}, {h}]"
            )
    return CheckResult(not violations, tuple(violations))


# Travel times come out of the generator as floats; allow a hair of slack
# on the inclusive bound.
_TRAVEL_RTOL = 1e-9


def check_travel_time(
    zoning: Zoning, district: District, params: FeasibilityParams
) -> CheckResult:
    z = zoning.as_array(district)
    assigned_t = district.travel[np.arange(district.num_blocks), z]
    baseline_t = district.travel[
        np.arange(district.num_blocks), district.status_quo_assignment
    ]
    bound = (1.0 + params.tau) * baseline_t
    bad = assigned_t > bound * (1.0 + _TRAVEL_RTOL)
    violations = tuple(
        f"block {district.block_ids[b]}: {assigned_t[b]:.4f} min > bound {bound[b]:.4f}"
        for b in np.flatnonzero(bad)
    )
    return CheckResult(not violations, violations)


def travel_allowed_mask(district: District, params: FeasibilityParams) -> np.ndarray:
    """Boolean (blocks, schools) mask of assignments within the travel bound."""
    baseline = district.travel[
        np.arange(district.num_blocks), district.status_quo_assignment
    ]
    bound = (1.0 + params.tau) * baseline * (1.0 + _TRAVEL_RTOL)
    return district.travel <= bound[:, None]


def check_contiguity(zoning: Zoning, district: District) -> CheckResult:
    """Each school's zone must induce a connected subgraph containing its campus."""
    z = zoning.as_array(district)
    violations = []
    for s in range(district.num_schools):
        members = np.flatnonzero(z == s)
        campus = district.campus_block[s]
        if campus not in members:
            violations.append(
                f"school {district.school_ids[s]}: campus block not in its zone"
            )
            continue
        member_set = set(members.tolist())
        seen = {int(campus)}
        queue = deque([int(campus)])
        while queue:
            b = queue.popleft()
            for nb in district.adjacency[b]:
                if nb in member_set and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        if len(seen) != len(member_set):
            violations.append(
                f"school {district.school_ids[s]}: zone has "
                f"{len(member_set) - len(seen)} disconnected block(s)"
            )
    return CheckResult(not violations, tuple(violations))


def is_feasible(
    zoning: Zoning,
    district: District,
    params: FeasibilityParams,
    scenarios,
) -> CheckResult:
    """Conjunction of all hard constraints.

    Population bounds are checked under every scenario's realized attendance.
    ``scenarios`` is a scenario table (see zonechoice.scenario); only its
    ``choices`` array is touched here to keep this module self-contained.
    """
    z = zoning.as_array(district)  # raises if not one-school-per-block

    tt = check_travel_time(zoning, district, params)
    if not tt.ok:
        return tt
    cg = check_contiguity(zoning, district)
    if not cg.ok:
        return cg

    zoned = z[district.student_block]
    lo, hi = population_bounds(district, params.alpha)
    choices = scenarios.choices  # (I, N, S)
    for i in range(choices.shape[0]):
        attended = choices[i, np.arange(district.num_students), zoned]
        total = np.bincount(attended, minlength=district.num_schools)
        if (total < lo).any() or (total > hi).any():
            bad = np.flatnonzero((total < lo) | (total > hi))
            return CheckResult(
                False,
                tuple(
                    f"scenario {i}: school {district.school_ids[s]} count "
                    f"{total[s]} outside [{lo[s]}, {hi[s]}]"
                    for s in bad
                ),
            )
    return CheckResult(True)
