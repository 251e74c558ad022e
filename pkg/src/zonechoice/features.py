"""Featurization for school-choice learning.

The feature vector x_n = (static part, dynamic part). Static features come
from the student, their block, and fixed school attributes; the dynamic
part is a pure function of the candidate zoned school, so changing the
zoning changes predictions only through it. Only pre-attendance
information is used (no feature looks at post-rezoning outcomes).
"""

from __future__ import annotations

import numpy as np

from zonechoice.district import District, HISTORY_FLAGS, RATING_TYPES, Student
from zonechoice.synth import RACES

GRADES = 6  # K-5


def nearest_schools(student: Student, district: District, r: int) -> list[str]:
    """The r schools with smallest travel time from the student's block.

    Ties break toward the school earlier in district order.
    """
    if r > district.num_schools:
        raise ValueError(f"r={r} exceeds number of schools")
    b = district.block_index[student.block]
    order = np.argsort(district.travel[b], kind="stable")
    return [district.school_ids[j] for j in order[:r]]


def nearest_school_indices(district: District, r: int) -> np.ndarray:
    """(blocks, r) nearest-school indices, ties toward lower school index."""
    return np.argsort(district.travel, axis=1, kind="stable")[:, :r]


class ChoiceFeaturizer:
    """Builds feature vectors/matrices for (student, candidate zoned school).

    Feature order is fixed at construction and exported with trained
    models so saved weights stay aligned.
    """

    def __init__(self, district: District):
        self.district = district
        self._static = self._build_static()
        self._dynamic = self._build_dynamic()
        self.feature_names = self._static_names + self._dynamic_names

    @property
    def n_features(self) -> int:
        return self._static.shape[1] + self._dynamic.shape[1]

    def vector(self, student_idx: int, zoned_idx: int) -> np.ndarray:
        return np.concatenate([self._static[student_idx], self._dynamic[zoned_idx]])

    def matrix(self, student_idx: np.ndarray, zoned_idx: np.ndarray) -> np.ndarray:
        return np.hstack([self._static[student_idx], self._dynamic[zoned_idx]])

    # -- static part ------------------------------------------------------

    def _build_static(self) -> np.ndarray:
        d = self.district
        N, S, B = d.num_students, d.num_schools, d.num_blocks

        block_count = np.bincount(d.student_block, minlength=B).astype(float)
        race_idx = np.array(
            [RACES.index(n.race) if n.race in RACES else len(RACES) - 1
             for n in d.students]
        )
        block_race = np.zeros((B, len(RACES)))
        np.add.at(block_race, (d.student_block, race_idx), 1.0)
        race_totals = block_race.sum(axis=0)
        race_totals[race_totals == 0] = 1.0

        cols = []
        names = []

        cols.append(d.student_ses.astype(float)[:, None])
        names.append("ses_category")
        cols.append(np.array([n.grade for n in d.students], dtype=float)[:, None])
        names.append("grade")

        race_onehot = np.zeros((N, len(RACES)))
        race_onehot[np.arange(N), race_idx] = 1.0
        cols.append(race_onehot)
        names += [f"race={r}" for r in RACES]

        nb = d.student_block
        cols.append(block_count[nb][:, None])
        names.append("block_students")
        cols.append((block_count[nb] / max(N, 1))[:, None])
        names.append("block_students_share")
        cols.append(block_race[nb])
        names += [f"block_{r}_count" for r in RACES]
        cols.append(block_race[nb] / race_totals[None, :])
        names += [f"block_{r}_share" for r in RACES]

        travel = d.travel[nb]  # minutes
        cols.append(travel)
        names += [f"travel_time_{sid}" for sid in d.school_ids]
        campus_xy = d.centroids[d.campus_block]
        dist = np.linalg.norm(
            d.centroids[nb][:, None, :] - campus_xy[None, :, :], axis=2
        )
        cols.append(dist)
        names += [f"travel_dist_{sid}" for sid in d.school_ids]

        cols.append(np.broadcast_to(d.magnet_mask.astype(float), (N, S)).copy())
        names += [f"is_magnet_{sid}" for sid in d.school_ids]

        flags = np.array(
            [[float(n.flag(f)) for f in HISTORY_FLAGS] for n in d.students]
        )
        cols.append(flags)
        names += list(HISTORY_FLAGS)

        prior = np.zeros((N, S))
        has_prior = d.student_prior >= 0
        prior[np.flatnonzero(has_prior), d.student_prior[has_prior]] = 1.0
        cols.append(prior)
        names += [f"prior_school_{sid}" for sid in d.school_ids]

        self._static_names = names
        return np.hstack(cols)

    # -- dynamic part (depends on the candidate zoned school only) --------

    def _build_dynamic(self) -> np.ndarray:
        d = self.district
        S, Z = d.num_schools, d.choice_zone_count

        zone_member = np.zeros((S, Z))
        for j, s in enumerate(d.schools):
            for z in s.choice_zones:
                zone_member[j, z] = 1.0
        same_zone = (zone_member @ zone_member.T > 0).astype(float)

        ratings = np.array([s.ratings for s in d.schools])  # (S, 4)
        # ratio[zoned, type, s] = rating of school s / rating of zoned school
        ratio = ratings.T[None, :, :] / ratings[:, :, None]

        blocks = []
        names = []

        blocks.append(np.eye(S))
        names += [f"zoned={sid}" for sid in d.school_ids]
        blocks.append(zone_member)
        names += [f"zoned_in_zone_{z}" for z in range(Z)]
        blocks.append(same_zone)
        names += [f"same_zone_{sid}" for sid in d.school_ids]

        ratio_flat = ratio.reshape(S, 4 * S)
        blocks.append(ratio_flat)
        names += [
            f"rating_ratio_{t}_{sid}"
            for t in RATING_TYPES
            for sid in d.school_ids
        ]

        self._dynamic_names = names
        return np.hstack(blocks)
