"""Zoning search: exact enumeration at tiny scale, simulated annealing
beyond it.

Both methods optimize the scenario-averaged dissimilarity over the same
feasible set (one school per block, travel-time bound, contiguity, and
per-scenario population bounds). Feasibility is hard: the annealer only
ever proposes moves that keep every constraint satisfied, so all visited
zonings are feasible.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, NamedTuple

import numpy as np

from zonechoice.district import (
    CheckResult,
    District,
    DomainError,
    FeasibilityParams,
    Zoning,
    check_contiguity,
    dissimilarity_from_arrays,
    is_feasible,
    population_bounds,
    travel_allowed_mask,
)
from zonechoice.scenario import ScenarioTable, saa_objective

BRUTE_FORCE_GUARD = 10_000_000


class Move(NamedTuple):
    block: int
    from_school: int
    to_school: int


@dataclass(frozen=True)
class SolverConfig:
    params: FeasibilityParams = field(default_factory=FeasibilityParams)
    time_limit: float = 600.0
    restarts: int = 3
    initial_temperature: float = 0.02
    cooling: float = 0.95
    moves_per_temperature: int = 1500
    min_temperature: float = 1e-4
    max_steps: int | None = None  # 0 means "return the status quo"
    seed: int = 0
    method: str = "RWC"  # R / FR / RWC tag, informational

    def __post_init__(self):
        if self.time_limit <= 0:
            raise DomainError("time_limit must be positive")
        if not (0.0 < self.cooling < 1.0):
            raise DomainError("cooling factor must be in (0, 1)")


@dataclass
class SolveResult:
    zoning: Zoning
    objective: float
    per_scenario: np.ndarray
    std_error: float
    wall_time: float
    stats: dict
    certificate: CheckResult
    alpha_used: float
    incumbent_trace: list[np.ndarray] = field(default_factory=list)


class IncrementalEvaluator:
    """Cached per-block attendance tensors for O(I*S) move evaluation.

    For block b and candidate zoned school s, ``totals[b, s]`` is the
    (scenarios, schools) attendance count contributed by b's residents;
    summing over blocks under any zoning gives the scenario count matrix.
    """

    def __init__(self, district: District, table: ScenarioTable,
                 params: FeasibilityParams, widen_alpha: bool = False):
        if table.district_fingerprint != district.fingerprint():
            raise DomainError("scenario table was built for a different district")
        self.district = district
        self.table = table
        self.params = params
        I, N, S = table.choices.shape
        B = district.num_blocks

        self.totals = np.zeros((B, S, I, S), dtype=np.int32)
        self.lowers = np.zeros((B, S, I, S), dtype=np.int32)
        by_block = district.students_in_block()
        i_idx = np.arange(I)[:, None, None]
        s_idx = np.arange(S)[None, None, :]
        for b, members in enumerate(by_block):
            if not members:
                continue
            arr = table.choices[:, members, :]  # (I, k, S): attended given zoned
            np.add.at(self.totals[b].transpose(1, 0, 2), (i_idx, s_idx, arr), 1)
            low = [n for n in members if district.lower_ses_mask[n]]
            if low:
                arr_l = table.choices[:, low, :]
                np.add.at(self.lowers[b].transpose(1, 0, 2), (i_idx, s_idx, arr_l), 1)
        self.students_per_block = np.array([len(m) for m in by_block])

        self.alpha_used = params.alpha
        if widen_alpha:
            self.alpha_used = self._minimal_alpha(params.alpha)
        self.lo, self.hi = population_bounds_for(district, self.alpha_used)

    def _minimal_alpha(self, alpha: float) -> float:
        """Smallest alpha (>= requested) keeping the status quo feasible
        under every scenario; rounded up to 1e-6."""
        total, _ = self.counts(self.district.status_quo_assignment)
        needed = Fraction(str(alpha))
        for s, c in enumerate(self.district.current_enrollment):
            col = total[:, s]
            if c == 0:
                if col.max() > 0:
                    raise DomainError(
                        f"school {self.district.school_ids[s]} has zero current "
                        "enrollment but receives students in some scenario"
                    )
                continue
            needed = max(needed, Fraction(int(c - col.min()), int(c)))
            needed = max(needed, Fraction(int(col.max() - c), int(c)))
        if needed > 1:
            raise DomainError(
                "status quo infeasible at any alpha <= 1; scenario drift exceeds "
                "current enrollments"
            )
        return math.ceil(needed * 10 ** 6) / 10 ** 6

    def counts(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(scenarios, schools) total and lower-SES counts for a zoning array."""
        blocks = np.arange(self.district.num_blocks)
        return (
            self.totals[blocks, z].sum(axis=0),
            self.lowers[blocks, z].sum(axis=0),
        )

    def objective(self, total: np.ndarray, lower: np.ndarray) -> np.ndarray:
        return dissimilarity_from_arrays(
            total, lower, self.district.g_total, self.district.num_students
        )

    def move_deltas(self, move: Move) -> tuple[np.ndarray, np.ndarray]:
        b, s_old, s_new = move
        return (
            self.totals[b, s_new] - self.totals[b, s_old],
            self.lowers[b, s_new] - self.lowers[b, s_old],
        )

    def bounds_ok(self, total: np.ndarray) -> bool:
        return bool((total >= self.lo).all() and (total <= self.hi).all())


def population_bounds_for(district: District, alpha: float):
    """Like district.population_bounds but clamps the lower bound at zero,
    which widened alpha values close to 1 can otherwise push negative."""
    a = Fraction(str(alpha))
    lo = np.array(
        [max(0, math.ceil(c * (1 - a))) for c in district.current_enrollment],
        dtype=int,
    )
    hi = np.array(
        [math.floor(c * (1 + a)) for c in district.current_enrollment], dtype=int
    )
    return lo, hi


def donor_zone_stays_connected(
    z: np.ndarray, block: int, district: District
) -> bool:
    """Check the donor zone minus ``block`` is still connected and keeps
    its campus. O(zone size) search seeded at the campus block."""
    s = z[block]
    campus = int(district.campus_block[s])
    if campus == block:
        return False
    members = set(np.flatnonzero(z == s).tolist())
    members.discard(block)
    if not members:
        return False
    seen = {campus}
    queue = deque([campus])
    while queue:
        cur = queue.popleft()
        for nb in district.adjacency[cur]:
            if nb in members and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(members)


def boundary_moves(
    zoning: Zoning | np.ndarray,
    district: District,
    params: FeasibilityParams | None = None,
) -> Iterator[Move]:
    """All single-block reassignments preserving contiguity (both zones)
    and, when params is given, the travel-time bound for the moved block.
    Population bounds are the caller's responsibility."""
    z = zoning if isinstance(zoning, np.ndarray) else zoning.as_array(district)
    allowed = (
        travel_allowed_mask(district, params) if params is not None else None
    )
    for b in range(district.num_blocks):
        s = int(z[b])
        targets = sorted({int(z[nb]) for nb in district.adjacency[b]} - {s})
        if not targets:
            continue
        if allowed is not None:
            targets = [t for t in targets if allowed[b, t]]
        if not targets:
            continue
        if not donor_zone_stays_connected(z, b, district):
            continue
        for t in targets:
            yield Move(b, s, t)


def objective_delta(
    zoning: Zoning,
    move: Move,
    table: ScenarioTable,
    district: District,
    evaluator: IncrementalEvaluator | None = None,
) -> float:
    """Change in mean dissimilarity if ``move`` is applied to ``zoning``."""
    ev = evaluator or IncrementalEvaluator(
        district, table, FeasibilityParams(), widen_alpha=False
    )
    z = zoning.as_array(district)
    if z[move.block] != move.from_school:
        raise DomainError("move does not match the zoning")
    total, lower = ev.counts(z)
    before = ev.objective(total, lower).mean()
    d_total, d_lower = ev.move_deltas(move)
    after = ev.objective(total + d_total, lower + d_lower).mean()
    return float(after - before)


# -- exact oracle ---------------------------------------------------------


def brute_force_optimize(
    district: District, table: ScenarioTable, params: FeasibilityParams
) -> SolveResult:
    """Global minimum over all feasible zonings by enumeration.

    Campus blocks are pinned to their own school (any other choice breaks
    contiguity), travel-infeasible assignments are pruned up front, and
    the remaining product is enumerated. Ties break toward the
    lexicographically smallest zoning array.
    """
    t_start = time.perf_counter()
    allowed = travel_allowed_mask(district, params)
    options: list[list[int]] = []
    campus_of = {int(district.campus_block[s]): s for s in range(district.num_schools)}
    for b in range(district.num_blocks):
        if b in campus_of:
            options.append([campus_of[b]])
        else:
            opts = [s for s in range(district.num_schools) if allowed[b, s]]
            if not opts:
                raise DomainError(
                    f"block {district.block_ids[b]} has no travel-feasible school"
                )
            options.append(opts)

    size = math.prod(len(o) for o in options)
    if size > BRUTE_FORCE_GUARD:
        raise DomainError(
            f"instance too large for enumeration: {size} candidate zonings "
            f"exceed the guard of {BRUTE_FORCE_GUARD}"
        )

    ev = IncrementalEvaluator(district, table, params, widen_alpha=False)
    best: tuple[float, tuple[int, ...]] | None = None
    examined = feasible = 0
    for combo in itertools.product(*options):
        examined += 1
        z = np.array(combo, dtype=int)
        if not check_contiguity(Zoning.from_array(z, district), district).ok:
            continue
        total, lower = ev.counts(z)
        if not ev.bounds_ok(total):
            continue
        feasible += 1
        obj = float(ev.objective(total, lower).mean())
        key = (obj, combo)
        if best is None or obj < best[0] - 1e-12 or (
            abs(obj - best[0]) <= 1e-12 and combo < best[1]
        ):
            best = key
    if best is None:
        raise DomainError("no feasible zoning found (population bounds too tight)")

    zoning = Zoning.from_array(np.array(best[1]), district)
    saa = saa_objective(zoning, table, district)
    return SolveResult(
        zoning=zoning,
        objective=saa.mean,
        per_scenario=saa.per_scenario,
        std_error=saa.std_error,
        wall_time=time.perf_counter() - t_start,
        stats={"examined": examined, "feasible": feasible, "method": "brute-force"},
        certificate=is_feasible(zoning, district, params, table),
        alpha_used=params.alpha,
    )


# -- simulated annealing ----------------------------------------------------


def local_search_optimize(
    district: District, table: ScenarioTable, config: SolverConfig
) -> SolveResult:
    """Feasibility-preserving simulated annealing over boundary moves.

    Starts each restart from the status quo, accepts improving moves
    always and worsening moves with probability exp(-delta/T). If the
    status quo breaches a population bound under some scenario (opt-outs
    shift enrollment), alpha is widened to the minimal feasible value and
    reported in the result.

    Deterministic given the seed whenever the annealing schedule or
    ``max_steps`` terminates the run rather than the wall clock.
    """
    t_start = time.perf_counter()
    ev = IncrementalEvaluator(district, table, config.params, widen_alpha=True)
    params_used = FeasibilityParams(alpha=ev.alpha_used, tau=config.params.tau)
    allowed = travel_allowed_mask(district, params_used)

    z0 = district.status_quo_assignment.copy()
    total0, lower0 = ev.counts(z0)
    if not ev.bounds_ok(total0):  # pragma: no cover - widening guarantees this
        raise DomainError("status quo infeasible after alpha widening")
    obj0 = float(ev.objective(total0, lower0).mean())

    campus_of_school = district.campus_block
    spb = ev.students_per_block

    best_z = z0.copy()
    best_obj = obj0
    best_rezoned = 0
    trace: list[np.ndarray] = [z0.copy()]
    steps = attempts = accepts = 0
    budget = config.max_steps
    out_of_budget = budget is not None and budget <= 0

    def rezoned_students(z: np.ndarray) -> int:
        return int(spb[z != z0].sum())

    def time_up() -> bool:
        return time.perf_counter() - t_start >= config.time_limit

    for restart in range(max(1, config.restarts)):
        if out_of_budget or time_up():
            break
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, restart]))
        z = z0.copy()
        total, lower = total0.copy(), lower0.copy()
        obj = obj0
        T = config.initial_temperature
        while T >= config.min_temperature:
            if out_of_budget or time_up():
                break
            for _ in range(config.moves_per_temperature):
                if budget is not None and steps >= budget:
                    out_of_budget = True
                    break
                steps += 1
                b = int(rng.integers(0, district.num_blocks))
                s = int(z[b])
                if campus_of_school[s] == b:
                    continue
                targets = sorted(
                    {int(z[nb]) for nb in district.adjacency[b]} - {s}
                )
                targets = [t for t in targets if allowed[b, t]]
                if not targets:
                    continue
                t_new = targets[int(rng.integers(0, len(targets)))]
                if not donor_zone_stays_connected(z, b, district):
                    continue
                attempts += 1
                d_total = ev.totals[b, t_new] - ev.totals[b, s]
                d_lower = ev.lowers[b, t_new] - ev.lowers[b, s]
                cand_total = total + d_total
                if not ev.bounds_ok(cand_total):
                    continue
                cand_lower = lower + d_lower
                cand_obj = float(ev.objective(cand_total, cand_lower).mean())
                delta = cand_obj - obj
                if delta <= 0 or rng.random() < math.exp(-delta / T):
                    accepts += 1
                    z[b] = t_new
                    total, lower, obj = cand_total, cand_lower, cand_obj
                    if obj < best_obj - 1e-12:
                        best_obj, best_z = obj, z.copy()
                        best_rezoned = rezoned_students(z)
                        trace.append(z.copy())
                    elif abs(obj - best_obj) <= 1e-12:
                        rz = rezoned_students(z)
                        if rz < best_rezoned or (
                            rz == best_rezoned and tuple(z) < tuple(best_z)
                        ):
                            best_z = z.copy()
                            best_rezoned = rz
                            trace.append(z.copy())
            T *= config.cooling

    zoning = Zoning.from_array(best_z, district)
    saa = saa_objective(zoning, table, district)
    return SolveResult(
        zoning=zoning,
        objective=saa.mean,
        per_scenario=saa.per_scenario,
        std_error=saa.std_error,
        wall_time=time.perf_counter() - t_start,
        stats={
            "method": config.method,
            "steps": steps,
            "move_attempts": attempts,
            "accepted": accepts,
            "restarts": max(1, config.restarts),
            "status_quo_objective": obj0,
            "rezoned_students": int(spb[best_z != z0].sum()),
            "alpha_widened": ev.alpha_used != config.params.alpha,
        },
        certificate=is_feasible(zoning, district, params_used, table),
        alpha_used=ev.alpha_used,
        incumbent_trace=trace,
    )
