"""SAA scenario tables and the sampled-average objective.

One uniform variate is drawn per (student, scenario) and shared across
every candidate zoned school (common random numbers), so the realized
choice table is a deterministic function of the zoning and the objective
varies smoothly between neighboring zonings. Inverse-CDF sampling uses
the district's school-identifier order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from zonechoice.choice import ChoiceModel
from zonechoice.district import (
    District,
    DomainError,
    Zoning,
    dissimilarity_from_arrays,
)


@dataclass(frozen=True)
class ScenarioTable:
    """choices[i, n, s] = school attended by student n in scenario i when
    zoned to school s."""

    choices: np.ndarray  # (I, N, S) small ints
    seed: int
    model_fingerprint: str
    district_fingerprint: str

    @property
    def num_scenarios(self) -> int:
        return self.choices.shape[0]

    @property
    def num_students(self) -> int:
        return self.choices.shape[1]

    @property
    def num_schools(self) -> int:
        return self.choices.shape[2]


@dataclass(frozen=True)
class AttendanceRealization:
    attended: np.ndarray  # (N,) school indices
    follow_count: int


@dataclass(frozen=True)
class SaaObjective:
    mean: float
    per_scenario: np.ndarray
    std_error: float


def sample_scenarios(
    model: ChoiceModel, district: District, I: int, seed: int
) -> ScenarioTable:
    """Draw I choice scenarios from a model. Deterministic given seed.

    Scenario i uses an independent substream derived from (seed, i), so
    tables are identical no matter how construction is scheduled.
    """
    if I < 1:
        raise DomainError("need at least one scenario")
    N, S = district.num_students, district.num_schools
    probs = model.choice_tensor()  # (N, S, S)
    cum = np.cumsum(probs, axis=2)

    dtype = np.int16 if S < 2 ** 15 else np.int32
    choices = np.empty((I, N, S), dtype=dtype)
    for i in range(I):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        u = rng.random(N)  # one variate per (student, scenario), CRN
        # smallest k with cum[k] > u
        choices[i] = np.minimum((cum <= u[:, None, None]).sum(axis=2), S - 1)
    return ScenarioTable(
        choices=choices,
        seed=seed,
        model_fingerprint=model.fingerprint(),
        district_fingerprint=district.fingerprint(),
    )


def realize(
    zoning: Zoning, table: ScenarioTable, i: int, district: District
) -> AttendanceRealization:
    """Pure lookup of scenario i's attendance under a zoning."""
    if not (0 <= i < table.num_scenarios):
        raise DomainError(f"scenario index {i} out of range")
    z = zoning.as_array(district)
    zoned = z[district.student_block]
    attended = table.choices[i, np.arange(district.num_students), zoned]
    return AttendanceRealization(
        attended=attended.astype(int),
        follow_count=int((attended == zoned).sum()),
    )


def saa_objective(
    zoning: Zoning, table: ScenarioTable, district: District
) -> SaaObjective:
    """Mean per-scenario dissimilarity (sum over scenarios divided by I,
    so values stay comparable across I), with the per-scenario vector and
    its standard error."""
    z = zoning.as_array(district)
    zoned = z[district.student_block]
    N, S = district.num_students, district.num_schools
    I = table.num_scenarios

    attended = table.choices[:, np.arange(N), zoned]  # (I, N)
    total = np.zeros((I, S))
    lower = np.zeros((I, S))
    ones = np.ones(N)
    lower_mask = district.lower_ses_mask.astype(float)
    for i in range(I):
        total[i] = np.bincount(attended[i], weights=ones, minlength=S)
        lower[i] = np.bincount(attended[i], weights=lower_mask, minlength=S)

    d = dissimilarity_from_arrays(total, lower, district.g_total, N)
    se = float(d.std(ddof=1) / np.sqrt(I)) if I > 1 else 0.0
    return SaaObjective(mean=float(d.mean()), per_scenario=d, std_error=se)


# -- persistence ----------------------------------------------------------


def save_table(table: ScenarioTable, path: str | Path) -> None:
    np.savez_compressed(
        path,
        choices=table.choices,
        seed=np.int64(table.seed),
        model_fingerprint=table.model_fingerprint,
        district_fingerprint=table.district_fingerprint,
    )


def load_table(path: str | Path) -> ScenarioTable:
    path = Path(path)
    if not path.exists() and path.with_suffix(path.suffix + ".npz").exists():
        path = path.with_suffix(path.suffix + ".npz")
    with np.load(path) as data:
        return ScenarioTable(
            choices=data["choices"],
            seed=int(data["seed"]),
            model_fingerprint=str(data["model_fingerprint"].item()),
            district_fingerprint=str(data["district_fingerprint"].item()),
        )
