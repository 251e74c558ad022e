"""Acceptance suite: ten end-to-end checks, one printed verdict line each.

The checks are property-based (oracle equivalence, normalization,
gradient correctness, unbiasedness, optimality on enumerable instances,
feasibility preservation, determinism) plus structural reproductions of
the pipeline's qualitative behavior on the default synthetic district.
"""

import itertools
import time

import numpy as np
import pytest

from zonechoice.choice import (
    FollowModel,
    FrequencyModel,
    LogitChoiceModel,
    MultinomialLogit,
)
from zonechoice.cli import entrypoint
from zonechoice.district import (
    FeasibilityParams,
    SchoolCounts,
    Zoning,
    dissimilarity,
    is_feasible,
)
from zonechoice.evaluation import evaluate
from zonechoice.optimizer import (
    SolverConfig,
    brute_force_optimize,
    local_search_optimize,
)
from zonechoice.scenario import sample_scenarios, saa_objective

from conftest import build_district, record_verdict
from test_district import oracle_dissimilarity
from test_optimizer import LOOSE, random_instance, tiny_config
from test_cli import tree_bytes

PARAMS = FeasibilityParams(alpha=0.15, tau=0.5)


def verdict(num: int, title: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    record_verdict(f"[{status}] criterion {num} ({title}): {detail}")
    assert ok, f"criterion {num} failed: {detail}"


@pytest.fixture(scope="module")
def logit_model(default_district):
    return LogitChoiceModel(default_district).fit()


@pytest.fixture(scope="module")
def rwc_solution(default_district, logit_model):
    """One full-schedule learned-model run, reused by criteria 7 and 8b."""
    table = sample_scenarios(logit_model, default_district, I=30, seed=7)
    config = SolverConfig(params=PARAMS, restarts=2, seed=11, method="RWC")
    return table, local_search_optimize(default_district, table, config)


def test_criterion_1_dissimilarity_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        S = int(rng.integers(2, 10))
        total = [int(t) for t in rng.integers(1, 80, size=S)]
        lower = [int(rng.integers(0, t + 1)) for t in total]
        g, n = sum(lower), sum(total)
        if not (0 < g < n):
            continue
        got = dissimilarity(SchoolCounts(tuple(total), tuple(lower)), g, n)
        if got != oracle_dissimilarity(total, lower, g, n):
            mismatches += 1
    zero = dissimilarity(SchoolCounts((20, 40), (10, 20)), 30, 60)
    one = dissimilarity(SchoolCounts((3, 5), (3, 0)), 3, 8)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and zero == 0.0 and one == 1.0 and elapsed < 1.0
    verdict(1, "dissimilarity oracle", ok,
            f"{mismatches} mismatches in 1000 draws, degenerate values "
            f"{zero}/{one}, {elapsed:.2f}s")


def test_criterion_2_normalization(default_district, logit_model):
    t0 = time.perf_counter()
    d = default_district
    rng = np.random.default_rng(1)
    n_idx = rng.integers(0, d.num_students, size=10_000)
    s_idx = rng.integers(0, d.num_schools, size=10_000)
    worst = 0.0
    negatives = 0
    for model in (FollowModel(d), FrequencyModel(d), logit_model):
        tensor = model.choice_tensor()
        rows = tensor[n_idx, s_idx]
        negatives += int((rows < 0).sum())
        worst = max(worst, float(np.abs(rows.sum(axis=1) - 1.0).max()))
    elapsed = time.perf_counter() - t0
    ok = negatives == 0 and worst < 1e-9 and elapsed < 10.0
    verdict(2, "choice normalization", ok,
            f"10^4 pairs x 3 models, max |sum-1| = {worst:.2e}, "
            f"{negatives} negative entries, {elapsed:.1f}s")


def test_criterion_3_gradient_check():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    Xn = np.hstack([rng.normal(size=(5, 3)), np.ones((5, 1))])
    Y = np.zeros((5, 3))
    Y[np.arange(5), rng.integers(0, 3, 5)] = 1.0
    W = rng.normal(scale=0.5, size=(3, 4))
    l2 = 1e-3
    _, grad = MultinomialLogit._loss_and_grad(W, Xn, Y, l2)
    h = 1e-5
    fd = np.zeros_like(W)
    for i in range(W.shape[0]):
        for j in range(W.shape[1]):
            Wp, Wm = W.copy(), W.copy()
            Wp[i, j] += h
            Wm[i, j] -= h
            fd[i, j] = (
                MultinomialLogit._loss_and_grad(Wp, Xn, Y, l2)[0]
                - MultinomialLogit._loss_and_grad(Wm, Xn, Y, l2)[0]
            ) / (2 * h)
    rel = float((np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8)).max())
    elapsed = time.perf_counter() - t0
    ok = rel < 1e-4 and elapsed < 1.0
    verdict(3, "logit gradient", ok,
            f"max relative error {rel:.2e} on 5x3 instance, {elapsed:.2f}s")


def test_criterion_4_learner_beats_follow_baseline(default_district):
    t0 = time.perf_counter()
    d = default_district
    follow = evaluate(FollowModel(d), d, folds=10, seed=0)
    logit = evaluate(LogitChoiceModel(d), d, folds=10, seed=0)
    monotone = all(
        f["accuracy"] <= f["top3_accuracy"] + 1e-12
        and f["top3_accuracy"] <= f["top5_accuracy"] + 1e-12
        for f in logit.per_fold
    )
    elapsed = time.perf_counter() - t0
    ok = logit.accuracy > follow.accuracy and monotone and elapsed < 300.0
    verdict(4, "learner sanity ordering", ok,
            f"10-fold CV logit {logit.accuracy:.4f} > follow "
            f"{follow.accuracy:.4f}, top1<=top3<=top5 per fold = {monotone}, "
            f"{elapsed:.0f}s")


def test_criterion_5_saa_unbiasedness():
    t0 = time.perf_counter()
    d = build_district(
        campuses=[0, 2, 4],
        status_quo=[0, 0, 1, 1, 2, 2],
        students=[(0, 0), (1, 0), (1, 1), (2, 1), (3, 2), (4, 1), (5, 2)],
        magnets=[False, False, True],
    )
    model = FrequencyModel(d)
    probs = model.choice_tensor()
    zoned = d.status_quo_assignment[d.student_block]
    p = probs[np.arange(d.num_students), zoned]  # (N, S) under status quo

    # exact expectation over every joint choice outcome
    exact = 0.0
    N, S = d.num_students, d.num_schools
    for outcome in itertools.product(range(S), repeat=N):
        weight = float(np.prod(p[np.arange(N), outcome]))
        if weight == 0.0:
            continue
        total = np.bincount(outcome, minlength=S)
        lower = np.bincount(
            np.asarray(outcome)[d.lower_ses_mask], minlength=S
        )
        exact += weight * dissimilarity(
            SchoolCounts(tuple(int(x) for x in total), tuple(int(x) for x in lower)),
            d.g_total, N,
        )

    z = d.status_quo_zoning()
    means = np.array([
        saa_objective(z, sample_scenarios(model, d, I=30, seed=s), d).mean
        for s in range(200)
    ])
    se = float(means.std(ddof=1) / np.sqrt(len(means)))
    gap = abs(float(means.mean()) - exact)
    elapsed = time.perf_counter() - t0
    ok = gap <= 3 * se and elapsed < 60.0
    verdict(5, "SAA unbiasedness", ok,
            f"|mean {means.mean():.6f} - exact {exact:.6f}| = {gap:.2e} "
            f"<= 3*SE {3 * se:.2e}, {elapsed:.0f}s")


def test_criterion_6_local_search_matches_enumeration():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    hits = infeasible = 0
    n_instances = 50
    for k in range(n_instances):
        d, table = random_instance(rng)
        oracle = brute_force_optimize(d, table, LOOSE)
        result = local_search_optimize(d, table, tiny_config(k))
        if not result.certificate.ok:
            infeasible += 1
        if result.objective <= oracle.objective + 1e-9:
            hits += 1
    elapsed = time.perf_counter() - t0
    ok = hits >= 45 and infeasible == 0 and elapsed < 300.0
    verdict(6, "oracle optimality", ok,
            f"optimum attained {hits}/{n_instances}, "
            f"{infeasible} infeasible returns, {elapsed:.0f}s")


def test_criterion_7_feasibility_preserved_along_trace(default_district, rwc_solution):
    table, result = rwc_solution
    params = FeasibilityParams(alpha=result.alpha_used, tau=PARAMS.tau)
    bad = 0
    for z in result.incumbent_trace:
        zoning = Zoning.from_array(z, default_district)
        if not is_feasible(zoning, default_district, params, table).ok:
            bad += 1
    ok = bad == 0 and result.certificate.ok
    verdict(7, "feasibility preservation", ok,
            f"{len(result.incumbent_trace)} incumbents audited, "
            f"{bad} infeasible, alpha_used={result.alpha_used}")


def test_criterion_8a_follow_model_reduction(default_district):
    d = default_district
    table = sample_scenarios(FollowModel(d), d, I=1, seed=7)
    config = SolverConfig(params=PARAMS, restarts=2, seed=11, method="R")
    result = local_search_optimize(d, table, config)
    sq = result.stats["status_quo_objective"]
    reduction = (sq - result.objective) / sq
    ok = reduction >= 0.15 and result.certificate.ok
    verdict(8, "8a deterministic reduction", ok,
            f"R: {sq:.4f} -> {result.objective:.4f} "
            f"({100 * reduction:.1f}% >= 15%)")


def test_criterion_8b_learned_model_reduction(rwc_solution):
    table, result = rwc_solution
    sq = result.stats["status_quo_objective"]
    reduction = (sq - result.objective) / sq
    ok = reduction >= 0.10 and result.certificate.ok
    verdict(8, "8b expected reduction", ok,
            f"RWC: {sq:.4f} -> {result.objective:.4f} "
            f"({100 * reduction:.1f}% >= 10%), I=30")


def test_criterion_8c_learned_model_rezones_more(default_district, logit_model):
    d = default_district
    freq = FrequencyModel(d)
    wins = 0
    pairs = []
    for s in range(10):
        fr_table = sample_scenarios(freq, d, I=30, seed=100 + s)
        rwc_table = sample_scenarios(logit_model, d, I=30, seed=100 + s)
        fr = local_search_optimize(
            d, fr_table,
            SolverConfig(params=PARAMS, restarts=1, seed=200 + s, method="FR"),
        )
        rwc = local_search_optimize(
            d, rwc_table,
            SolverConfig(params=PARAMS, restarts=1, seed=200 + s, method="RWC"),
        )
        a, b = rwc.stats["rezoned_students"], fr.stats["rezoned_students"]
        pairs.append((a, b))
        wins += a >= b
    ok = wins >= 7
    verdict(8, "8c rezoned-student ordering", ok,
            f"RWC >= FR in {wins}/10 seeded runs (rwc, fr pairs: {pairs})")


def test_criterion_9_stability_protocol(default_district, logit_model):
    d = default_district
    objectives = []
    for s in range(20):
        table = sample_scenarios(logit_model, d, I=30, seed=300 + s)
        result = local_search_optimize(
            d, table,
            SolverConfig(params=PARAMS, restarts=1, seed=400 + s, method="RWC"),
        )
        objectives.append(result.objective)
    objectives = np.array(objectives)
    se = float(objectives.std(ddof=1) / np.sqrt(len(objectives)))
    ok = bool(np.isfinite(se)) and bool(np.isfinite(objectives.mean()))
    verdict(9, "stability protocol", ok,
            f"20 runs at I=30: mean objective {objectives.mean():.4f}, "
            f"standard error {se:.5f}")


def test_criterion_10_pipeline_determinism(tmp_path):
    t0 = time.perf_counter()
    gen = ["--blocks", "36", "--schools", "3", "--magnets", "1",
           "--students", "250", "--seed", "2"]
    for tag in ("one", "two"):
        root = tmp_path / tag
        district = root / "district"
        assert entrypoint(["generate", "--out", str(district)] + gen) == 0
        assert entrypoint(["train", "--district", str(district),
                           "--out", str(root / "model.json")]) == 0
        assert entrypoint(["evaluate", "--district", str(district),
                           "--model", "follow", "--folds", "4", "--seed", "0",
                           "--out", str(root / "metrics.csv")]) == 0
        assert entrypoint(["scenarios", "--district", str(district),
                           "--model", "logit",
                           "--model-file", str(root / "model.json"),
                           "-I", "5", "--seed", "3",
                           "--out", str(root / "table.npz")]) == 0
        assert entrypoint(["optimize", "--district", str(district),
                           "--method", "RWC", "--table", str(root / "table.npz"),
                           "--seed", "5", "--restarts", "1",
                           "--max-steps", "3000",
                           "--out", str(root / "solution")]) == 0
        assert entrypoint(["report", "--district", str(district),
                           "--table", str(root / "table.npz"),
                           "--zoning", str(root / "solution" / "zoning.csv"),
                           "--method", "RWC", "--out", str(root / "report")]) == 0
        assert entrypoint(["export-map", "--district", str(district),
                           "--zoning", str(root / "solution" / "zoning.csv"),
                           "--overlay", "ses",
                           "--out", str(root / "map.geojson")]) == 0
    identical = tree_bytes(tmp_path / "one") == tree_bytes(tmp_path / "two")
    elapsed = time.perf_counter() - t0
    ok = identical and elapsed < 900.0
    verdict(10, "pipeline determinism", ok,
            f"two full runs byte-identical (manifests excluded) = {identical}, "
            f"{elapsed:.0f}s")
