"""Synthetic district generator.

Produces a jittered-grid district with spatially correlated SES, a
contiguous capacity-balanced status-quo zoning, overlapping choice zones,
and simulated historical school-choice labels drawn from a latent-utility
ground truth (so a learner has a recoverable but noisy signal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from zonechoice.district import (
    HISTORY_FLAGS,
    Block,
    District,
    School,
    Student,
)

RACES = ("white", "black", "hispanic", "asian", "other")

# Travel-time proxy: straight-line distance at 30 km/h plus a constant.
_SPEED_KMH = 30.0
_BASE_MINUTES = 2.0


class ConfigError(ValueError):
    """Raised for unusable generation or run parameters."""


@dataclass(frozen=True)
class GenParams:
    n_blocks: int = 400
    n_schools: int = 8
    n_magnets: int = 2
    n_students: int = 3000
    n_choice_zones: int = 3
    ses_correlation_length: float = 2.0  # km
    follow_rate_target: float = 0.65
    seed: int = 0
    # Expected share of students opting out to a magnet school. The
    # default mirrors the frequency rule's magnet mass so rule-implied
    # enrollments stay close to the generated ones.
    magnet_optout_target: float = 0.20
    new_student_rate: float = 0.12
    sibling_rate: float = 0.40
    taste_scale: float = 0.3  # persistent per-(student, school) preference

    def validate(self) -> None:
        if self.n_schools > self.n_blocks:
            raise ConfigError("more schools than blocks")
        if self.n_magnets > self.n_schools:
            raise ConfigError("more magnets than schools")
        if not (0 < self.follow_rate_target < 1):
            raise ConfigError("follow_rate_target must be in (0, 1)")
        if not (1 <= self.n_choice_zones <= self.n_schools):
            raise ConfigError("n_choice_zones must be in [1, n_schools]")
        if self.n_blocks < 1 or self.n_students < 2:
            raise ConfigError("need at least 1 block and 2 students")


def generate_district(params: GenParams) -> District:
    """Build a fully labeled district. Deterministic given params.seed."""
    params.validate()
    ss = np.random.SeedSequence(params.seed)
    rng_blocks, rng_schools, rng_students = (
        np.random.default_rng(s) for s in ss.spawn(3)
    )

    centroids, edges, cell = _grid_layout(params, rng_blocks)
    ses_index = _ses_field(centroids, params.ses_correlation_length, rng_blocks)

    per_block = _allocate_students(params, rng_students)
    campus, magnet_mask, ratings = _place_schools(
        params, centroids, ses_index, per_block, rng_schools
    )
    travel = _travel_matrix(centroids, campus)
    zones = _choice_zones(params, centroids, campus)
    status_quo = _grow_status_quo(params, centroids, edges, per_block, campus)

    ses_cat = _ses_terciles(ses_index, per_block)

    B, S = params.n_blocks, params.n_schools
    school_ids = [f"s{j:02d}" for j in range(S)]
    block_ids = [f"b{i:04d}" for i in range(B)]

    neighbor_sets: list[set[str]] = [set() for _ in range(B)]
    for a, b in edges:
        neighbor_sets[a].add(block_ids[b])
        neighbor_sets[b].add(block_ids[a])

    students = []
    k = 0
    race_p = _race_profiles()
    for i in range(B):
        for _ in range(per_block[i]):
            race = RACES[rng_students.choice(len(RACES), p=race_p[ses_cat[i]])]
            grade = int(rng_students.integers(0, 6))
            students.append(
                Student(
                    id=f"n{k:05d}",
                    block=block_ids[i],
                    ses_category=int(ses_cat[i]),
                    race=race,
                    grade=grade,
                    # placeholder label; simulate_history overwrites it
                    actual_school=school_ids[status_quo[i]],
                    history={},
                )
            )
            k += 1

    blocks = [
        Block(
            id=block_ids[i],
            centroid=(float(centroids[i, 0]), float(centroids[i, 1])),
            neighbors=frozenset(neighbor_sets[i]),
            status_quo_school=school_ids[status_quo[i]],
            travel_time=tuple(float(t) for t in travel[i]),
            resident_students=tuple(
                n.id for n in students if n.block == block_ids[i]
            ),
            ses_index=float(ses_index[i]),
        )
        for i in range(B)
    ]
    schools = [
        School(
            id=school_ids[j],
            campus_block=block_ids[campus[j]],
            is_magnet=bool(magnet_mask[j]),
            current_enrollment=0,  # set by simulate_history
            ratings=tuple(float(r) for r in ratings[j]),
            choice_zones=frozenset(zones[j]),
        )
        for j in range(S)
    ]

    draft = District(blocks, schools, students, params.n_choice_zones, validate=False)
    return simulate_history(draft, params)


def simulate_history(district: District, params: GenParams) -> District:
    """Draw actual-school labels and history flags; refresh enrollments.

    Ground truth: per-student latent utility over schools (travel time,
    magnet pull, shared choice zone, rating ratio, a zoned-school bonus)
    plus a persistent taste component reused across years, plus fresh
    Gumbel noise per year. Returning students also get a loyalty bonus on
    last year's school, so opt-outs persist across years. The zoned bonus
    and magnet pull are calibrated by bisection so the expected follow
    rate and magnet opt-out share hit their targets.
    """
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, 104729]))
    N, S = district.num_students, district.num_schools
    rows = np.arange(N)

    base = _base_utilities(district)
    taste = rng.gumbel(0.0, params.taste_scale, size=(N, S))
    taste -= taste.mean(axis=1, keepdims=True)
    zoned = district.status_quo_assignment[district.student_block]
    new_to_system = rng.random(N) < params.new_student_rate
    returning = ~new_to_system

    magnet = district.magnet_mask
    want_magnet = magnet.any() and not magnet.all()

    # the calibrated magnet offset models opt-in appeal, so like the SES
    # and grade gradients it never applies to a student's own zoned school
    mag_off = np.broadcast_to(magnet.astype(float), (N, S)).copy()
    mag_off[rows, zoned] = 0.0

    loyal = math.exp(_LOYALTY)

    def label_probs(bm: float, b5: float) -> np.ndarray:
        """Exact label distribution under the two-year loyalty chain."""
        u = base + taste + bm * mag_off
        u[rows, zoned] += b5
        u -= u.max(axis=1, keepdims=True)
        e = np.exp(u)
        denom = e.sum(axis=1, keepdims=True)
        p1 = e / denom
        # step(p): next-year distribution when last year's school k gets
        # its odds multiplied by exp(loyalty); marginalized over k
        def step(p):
            w = p / (denom + (loyal - 1.0) * e)
            return e * (w.sum(axis=1, keepdims=True) + (loyal - 1.0) * w)
        p3 = step(step(p1))
        return np.where(returning[:, None], p3, p1)

    def rates(bm: float, b5: float) -> tuple[float, float]:
        p = label_probs(bm, b5)
        follow = float(p[rows, zoned].mean())
        pm = p[:, magnet].sum(axis=1) - np.where(magnet[zoned], p[rows, zoned], 0.0)
        return follow, float(pm.mean())

    def calibrate_b5(bm: float) -> float:
        lo, hi = -25.0, 40.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if rates(bm, mid)[0] < params.follow_rate_target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    if want_magnet:
        lo, hi = -10.0, 15.0
        for _ in range(40):
            bm = 0.5 * (lo + hi)
            if rates(bm, calibrate_b5(bm))[1] < params.magnet_optout_target:
                lo = bm
            else:
                hi = bm
        bm = 0.5 * (lo + hi)
    else:
        bm = 0.0
    b5 = calibrate_b5(bm)

    u = base + taste + bm * mag_off
    u[rows, zoned] += b5

    def draw_year(last: np.ndarray | None) -> np.ndarray:
        bonus = np.zeros((N, S))
        if last is not None:
            bonus[returning, last[returning]] = _LOYALTY
        return np.argmax(u + bonus + rng.gumbel(0.0, 1.0, size=(N, S)), axis=1)

    prior1 = draw_year(None)
    prior2 = draw_year(prior1)
    labels = draw_year(prior2)

    has_sibling = rng.random(N) < params.sibling_rate
    same_as_sibling = has_sibling & (rng.random(N) < 0.7)

    students = []
    for n, st in enumerate(district.students):
        if new_to_system[n]:
            hist = {fl: False for fl in HISTORY_FLAGS}
            hist["new_to_system"] = True
            hist["has_sibling"] = bool(has_sibling[n])
            hist["attended_same_school_as_sibling"] = bool(same_as_sibling[n])
            prior = None
        else:
            priors = (int(prior1[n]), int(prior2[n]))
            hist = {
                "new_to_system": False,
                "has_sibling": bool(has_sibling[n]),
                "attended_same_school_as_sibling": bool(same_as_sibling[n]),
                "opted_out_before": any(p != zoned[n] for p in priors),
                "opted_out_to_magnet_before": any(
                    p != zoned[n] and magnet[p] for p in priors
                ),
                "attended_multiple_schools": priors[0] != priors[1],
            }
            prior = district.school_ids[int(prior2[n])]
        students.append(
            replace(
                st,
                actual_school=district.school_ids[int(labels[n])],
                history=hist,
                prior_school=prior,
            )
        )

    enrollment = np.bincount(labels, minlength=S)
    schools = [
        replace(s, current_enrollment=int(enrollment[j]))
        for j, s in enumerate(district.schools)
    ]
    return District(district.blocks, schools, students, district.choice_zone_count)


# -- ground-truth utility weights ----------------------------------------

_BETA_TRAVEL = 0.08  # per minute
_BETA_SAME_ZONE = 0.25
_BETA_RATING = 0.25
_BETA_MAGNET_SES = 1.0  # magnet pull grows with SES tercile
_BETA_MAGNET_GRADE = 2.0  # and with grade level
_LOYALTY = 1.6  # returning students favor last year's school


def _base_utilities(district: District) -> np.ndarray:
    """Systematic utility components shared by history and label years.

    Every term lies in the span of the learner's feature set (per-school
    travel time, rating ratio, shared choice zone, and school-specific
    coefficients on SES/grade), so the signal is recoverable in principle.
    """
    N, S = district.num_students, district.num_schools
    travel = district.travel[district.student_block]  # (N, S)
    zoned = district.status_quo_assignment[district.student_block]

    overall = np.array([s.ratings[0] for s in district.schools])
    rating_ratio = overall[None, :] / overall[zoned, None]

    zone_sets = [s.choice_zones for s in district.schools]
    share = np.array(
        [[bool(zone_sets[a] & zone_sets[b]) for b in range(S)] for a in range(S)],
        dtype=float,
    )
    same_zone = share[zoned]

    magnet = district.magnet_mask.astype(float)
    ses = district.student_ses.astype(float)
    grade = np.array([n.grade for n in district.students], dtype=float)
    magnet_pull = (
        _BETA_MAGNET_SES * (ses - 1.0) + _BETA_MAGNET_GRADE * (grade - 2.5)
    )[:, None] * magnet[None, :]
    # magnets run districtwide transportation, so distance does not deter
    # opting in to one
    magnet_pull += _BETA_TRAVEL * travel * magnet[None, :]
    # opt-in appeal only: students already zoned to a magnet are not pulled
    magnet_pull[magnet[zoned].astype(bool)] = 0.0

    return (
        -_BETA_TRAVEL * travel
        + _BETA_SAME_ZONE * same_zone
        + _BETA_RATING * rating_ratio
        + magnet_pull
    )


# -- geometry and structure ----------------------------------------------


def _grid_layout(params: GenParams, rng: np.random.Generator):
    """Jittered partial grid, rook adjacency, row-major block order."""
    B = params.n_blocks
    rows = max(1, int(math.floor(math.sqrt(B))))
    cols = int(math.ceil(B / rows))
    cell = 0.5  # km
    centroids = np.empty((B, 2))
    edges = []
    for i in range(B):
        r, c = divmod(i, cols)
        jitter = rng.uniform(-0.15 * cell, 0.15 * cell, size=2)
        centroids[i] = (c * cell + jitter[0], r * cell + jitter[1])
        if c > 0:
            edges.append((i - 1, i))
        if r > 0 and i - cols >= 0:
            edges.append((i - cols, i))
    return centroids, edges, cell


def _ses_field(centroids: np.ndarray, corr_km: float, rng: np.random.Generator):
    """Gaussian-blurred white noise: clustered, smoothly varying SES."""
    B = len(centroids)
    noise = rng.normal(size=B)
    d2 = ((centroids[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    w = np.exp(-d2 / (2.0 * max(corr_km, 1e-6) ** 2))
    field = w @ noise / w.sum(axis=1)
    sd = field.std()
    return field / sd if sd > 0 else field


def _allocate_students(params: GenParams, rng: np.random.Generator) -> np.ndarray:
    B = params.n_blocks
    weights = rng.gamma(2.0, 1.0, size=B)
    # leave ~10% of blocks unpopulated (rivers, parks)
    empty = rng.random(B) < 0.10
    if empty.all():
        empty[:] = False
    weights[empty] = 0.0
    return rng.multinomial(params.n_students, weights / weights.sum())


def _ses_terciles(ses_index: np.ndarray, per_block: np.ndarray) -> np.ndarray:
    """Student-weighted tercile categories per block (0 = lower SES)."""
    order = np.argsort(ses_index, kind="stable")
    cum = np.cumsum(per_block[order])
    total = cum[-1]
    cat = np.empty(len(ses_index), dtype=int)
    prev = 0
    for b, c in zip(order, cum):
        mid = (prev + c) / 2.0  # classify a block by its middle student
        cat[b] = 0 if mid <= total / 3.0 else (1 if mid <= 2.0 * total / 3.0 else 2)
        prev = c
    # guarantee a non-degenerate target group
    populated = np.flatnonzero(per_block > 0)
    if len(populated) >= 2:
        if not (cat[populated] == 0).any():
            cat[populated[np.argmin(ses_index[populated])]] = 0
        if (cat[populated] == 0).all():
            cat[populated[np.argmax(ses_index[populated])]] = 2
    return cat


def _place_schools(params, centroids, ses_index, per_block, rng):
    """Farthest-point campus placement; magnets drawn at random."""
    B, S = params.n_blocks, params.n_schools
    first = int(rng.integers(0, B))
    campus = [first]
    dist = np.linalg.norm(centroids - centroids[first], axis=1)
    for _ in range(S - 1):
        nxt = int(np.argmax(dist))
        campus.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(centroids - centroids[nxt], axis=1))
    campus = np.array(campus)

    magnet_mask = np.zeros(S, dtype=bool)
    if params.n_magnets:
        magnet_mask[rng.choice(S, size=params.n_magnets, replace=False)] = True

    z = (ses_index - ses_index.mean())
    ratings = np.empty((S, 4))
    for j in range(S):
        # magnet programs are uniformly flagship; neighborhood school
        # ratings track local SES loosely
        base = 8.5 if magnet_mask[j] else 6.0 + 0.5 * z[campus[j]]
        ratings[j] = np.clip(base + rng.normal(0, 0.5, size=4), 2.0, 10.0)
    return campus, magnet_mask, ratings


def _travel_matrix(centroids: np.ndarray, campus: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(centroids[:, None, :] - centroids[None, campus, :], axis=2)
    return d / _SPEED_KMH * 60.0 + _BASE_MINUTES


def _choice_zones(params, centroids, campus) -> list[set[int]]:
    """Proximity clusters of schools; each zone annexes its nearest outsider
    so some schools sit in two zones."""
    S, K = params.n_schools, params.n_choice_zones
    pts = centroids[campus]
    centers = pts[:K].copy()
    assign = np.zeros(S, dtype=int)
    for _ in range(8):
        d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
        assign = d.argmin(axis=1)
        for k in range(K):
            members = pts[assign == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    # fix empty clusters by stealing the farthest member of the largest one
    for k in range(K):
        if not (assign == k).any():
            big = np.bincount(assign, minlength=K).argmax()
            members = np.flatnonzero(assign == big)
            far = members[np.argmax(np.linalg.norm(pts[members] - centers[big], axis=1))]
            assign[far] = k

    zones: list[set[int]] = [set() for _ in range(S)]
    for j in range(S):
        zones[j].add(int(assign[j]))
    if K > 1:
        for k in range(K):
            outside = np.flatnonzero(assign != k)
            if len(outside):
                center = pts[assign == k].mean(axis=0)
                nearest = outside[np.argmin(np.linalg.norm(pts[outside] - center, axis=1))]
                zones[int(nearest)].add(k)
    return zones


def _grow_status_quo(params, centroids, edges, per_block, campus) -> np.ndarray:
    """Capacity-balanced greedy region growing from campus blocks.

    Contiguous by construction: a block joins a zone only via an already
    assigned neighbor.
    """
    B, S = params.n_blocks, params.n_schools
    adj: list[list[int]] = [[] for _ in range(B)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)

    assign = np.full(B, -1, dtype=int)
    target = params.n_students / S
    load = np.zeros(S)
    frontier: list[set[int]] = [set() for _ in range(S)]
    for j, cb in enumerate(campus):
        assign[cb] = j
        load[j] += per_block[cb]
    for j, cb in enumerate(campus):
        frontier[j] = {n for n in adj[cb] if assign[n] < 0}

    remaining = B - S
    while remaining > 0:
        order = sorted(range(S), key=lambda j: (load[j] - target, j))
        for j in order:
            frontier[j] = {n for n in frontier[j] if assign[n] < 0}
            if frontier[j]:
                cands = sorted(frontier[j])
                d = np.linalg.norm(
                    centroids[cands] - centroids[campus[j]], axis=1
                )
                pick = cands[int(np.argmin(d))]
                assign[pick] = j
                load[j] += per_block[pick]
                frontier[j].update(n for n in adj[pick] if assign[n] < 0)
                remaining -= 1
                break
        else:  # pragma: no cover - grid graphs are connected
            raise ConfigError("block graph is disconnected; cannot grow zones")
    return assign


def _race_profiles() -> dict[int, np.ndarray]:
    # race mix varies mildly with SES tercile so race features carry signal
    return {
        0: np.array([0.18, 0.34, 0.34, 0.04, 0.10]),
        1: np.array([0.34, 0.28, 0.26, 0.05, 0.07]),
        2: np.array([0.52, 0.18, 0.16, 0.08, 0.06]),
    }
