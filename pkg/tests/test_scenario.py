"""Scenario-table sampling and the sampled-average objective."""

import numpy as np
import pytest

from zonechoice.choice import FollowModel, FrequencyModel
from zonechoice.district import DomainError, counts_under_attendance, dissimilarity
from zonechoice.scenario import (
    load_table,
    realize,
    saa_objective,
    sample_scenarios,
    save_table,
)

from conftest import build_district, manual_table


def test_follow_table_is_identity(small_district):
    d = small_district
    table = sample_scenarios(FollowModel(d), d, I=3, seed=0)
    S = d.num_schools
    for s in range(S):
        assert (table.choices[:, :, s] == s).all()


def test_sampling_is_deterministic(small_district):
    m = FrequencyModel(small_district)
    a = sample_scenarios(m, small_district, I=4, seed=11)
    b = sample_scenarios(m, small_district, I=4, seed=11)
    c = sample_scenarios(m, small_district, I=4, seed=12)
    assert np.array_equal(a.choices, b.choices)
    assert not np.array_equal(a.choices, c.choices)


def test_scenario_substreams_are_schedule_independent(small_district):
    # the first scenarios of a longer table equal a shorter table's
    m = FrequencyModel(small_district)
    short = sample_scenarios(m, small_district, I=2, seed=11)
    long = sample_scenarios(m, small_district, I=5, seed=11)
    assert np.array_equal(short.choices, long.choices[:2])


def test_sampling_matches_inverse_cdf_oracle(small_district):
    """Re-derive the table with an independent searchsorted inverse CDF."""
    d = small_district
    m = FrequencyModel(d)
    I, seed = 3, 21
    table = sample_scenarios(m, d, I=I, seed=seed)
    probs = m.choice_tensor()
    N, S = d.num_students, d.num_schools
    for i in range(I):
        u = np.random.default_rng(np.random.SeedSequence([seed, i])).random(N)
        for n in range(0, N, 37):  # spot-check a spread of students
            for s in range(S):
                cum = np.cumsum(probs[n, s])
                k = min(int(np.searchsorted(cum, u[n], side="right")), S - 1)
                assert table.choices[i, n, s] == k


def test_common_random_numbers_shared_across_candidates(small_district):
    # one uniform per (student, scenario): a model whose distribution does
    # not depend on the candidate must realize the same school everywhere
    d = small_district

    class UniformModel(FollowModel):
        name = "uniform"

        def choice_tensor(self):
            N, S = d.num_students, d.num_schools
            return np.full((N, S, S), 1.0 / S)

    table = sample_scenarios(UniformModel(d), d, I=3, seed=3)
    first = table.choices[:, :, :1]
    assert (table.choices == first).all()


def test_saa_objective_matches_exact_per_scenario(small_district):
    d = small_district
    table = sample_scenarios(FrequencyModel(d), d, I=5, seed=2)
    z = d.status_quo_zoning()
    saa = saa_objective(z, table, d)
    for i in range(5):
        attended = realize(z, table, i, d).attended
        exact = dissimilarity(
            counts_under_attendance(d, attended), d.g_total, d.num_students
        )
        assert saa.per_scenario[i] == pytest.approx(exact, abs=1e-9)
    assert saa.mean == pytest.approx(float(saa.per_scenario.mean()))
    assert saa.std_error == pytest.approx(
        float(saa.per_scenario.std(ddof=1) / np.sqrt(5))
    )


def test_saa_mean_of_two_scenarios():
    d = build_district(
        campuses=[0, 3],
        status_quo=[0, 0, 1, 1],
        students=[(0, 0), (1, 0), (2, 1), (3, 1)],
    )
    # scenario 0: everyone follows (d = 1); scenario 1: perfectly mixed (d = 0)
    follow = np.broadcast_to(np.arange(2)[None, :], (4, 2))
    mixed = np.array([[0, 0], [1, 1], [0, 0], [1, 1]])
    table = manual_table(d, np.stack([follow, mixed]))
    saa = saa_objective(d.status_quo_zoning(), table, d)
    assert list(saa.per_scenario) == [1.0, 0.0]
    assert saa.mean == 0.5


def test_empirical_follow_share_matches_model(small_district):
    d = small_district
    m = FrequencyModel(d)
    table = sample_scenarios(m, d, I=40, seed=5)
    zoned = d.status_quo_assignment[d.student_block]
    realized = table.choices[:, np.arange(d.num_students), zoned]
    empirical = float((realized == zoned[None, :]).mean())
    probs = m.choice_tensor()
    expected = float(probs[np.arange(d.num_students), zoned, zoned].mean())
    assert empirical == pytest.approx(expected, abs=0.01)


def test_realize_follow_count(small_district):
    d = small_district
    table = sample_scenarios(FollowModel(d), d, I=1, seed=0)
    real = realize(d.status_quo_zoning(), table, 0, d)
    assert real.follow_count == d.num_students
    with pytest.raises(DomainError):
        realize(d.status_quo_zoning(), table, 1, d)


def test_table_roundtrip(small_district, tmp_path):
    d = small_district
    table = sample_scenarios(FrequencyModel(d), d, I=2, seed=8)
    save_table(table, tmp_path / "t.npz")
    loaded = load_table(tmp_path / "t.npz")
    assert np.array_equal(loaded.choices, table.choices)
    assert loaded.seed == table.seed
    assert loaded.model_fingerprint == table.model_fingerprint
    assert loaded.district_fingerprint == table.district_fingerprint
    # numpy appends .npz to bare paths; loading tolerates either name
    save_table(table, tmp_path / "bare")
    assert np.array_equal(load_table(tmp_path / "bare").choices, table.choices)


def test_at_least_one_scenario_required(small_district):
    with pytest.raises(DomainError):
        sample_scenarios(FollowModel(small_district), small_district, I=0, seed=0)
