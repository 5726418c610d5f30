import itertools

import numpy as np
import pytest

from groupmatch.criteria import CriteriaEvaluator, MatchConfig, compute_r
from groupmatch.dataset import Dataset
from groupmatch.errors import BudgetExceededError, ValidationError
from groupmatch.search import (
    count_configurations,
    estimate_exhaustive,
    exhaustive_search,
    format_duration,
    greedy_search,
    lookahead_search,
    random_search,
)

from conftest import build_two_group_dataset, welch_only_criteria


def base_config(**overrides):
    kwargs = dict(criteria=welch_only_criteria(), seed=7)
    kwargs.update(overrides)
    return MatchConfig(**kwargs)


def assert_solution_recomputes(dataset, result, config):
    """Every successful solution must stand up to a fresh evaluation."""
    for state in result.solutions:
        assert compute_r(dataset, state, config.criteria) >= 1.0


class TestAlreadyMatched:
    @pytest.mark.parametrize(
        "runner",
        [
            greedy_search,
            lambda d, c: lookahead_search(d, c, "h3", lookahead=1),
            lambda d, c: lookahead_search(d, c, "h4", lookahead=2),
            exhaustive_search,
            lambda d, c: random_search(d, c, iterations=3),
        ],
        ids=["greedy", "h3", "h4_L2", "exhaustive", "random"],
    )
    def test_full_set_returned(self, toy_matched_dataset, runner):
        cfg = base_config()
        result = runner(toy_matched_dataset, cfg)
        assert result.success
        assert result.rank.preserved == toy_matched_dataset.n_subjects
        assert result.best.n_kept == toy_matched_dataset.n_subjects


class TestGreedy:
    def test_removes_unique_outlier(self):
        # group A carries one gross high outlier on top of a small baseline
        # offset; brute force over single removals confirms dropping the
        # outlier is the only way to match in one step
        rng = np.random.default_rng(30)
        a = np.concatenate([rng.normal(0.25, 0.3, 4), [2.8]])
        b = rng.normal(0.0, 0.3, 5)
        d = Dataset(
            [f"s{i}" for i in range(10)],
            ["A"] * 5 + ["B"] * 5,
            np.concatenate([a, b])[:, None],
            ["x"],
        )
        cfg = base_config(criteria=welch_only_criteria(alpha=0.4))
        ev = CriteriaEvaluator(d, cfg.criteria)
        assert ev.evaluate(np.ones(10, bool))[0] < 1.0
        singles = {}
        for i in range(10):
            keep = np.ones(10, bool)
            keep[i] = False
            singles[i] = ev.evaluate(keep)[0]
        winners = [i for i, r in singles.items() if r >= 1.0]
        assert winners == [4]
        result = greedy_search(d, cfg)
        assert result.success
        assert result.best.removed_ids(d) == ["s4"]

    def test_per_step_dominance_replayed(self):
        d = build_two_group_dataset(12, 1.2, seed=21)
        cfg = base_config()
        result = greedy_search(d, cfg)
        assert result.success
        ev = CriteriaEvaluator(d, cfg.criteria)
        keep = np.ones(d.n_subjects, dtype=bool)
        for step in result.trace:
            chosen = d.row_of(step.removed_id)
            tentative = keep.copy()
            tentative[chosen] = False
            chosen_r = ev.evaluate(tentative)[0]
            for row in np.flatnonzero(keep):
                alt = keep.copy()
                alt[row] = False
                counts = np.bincount(d.group_codes[alt], minlength=2)
                if counts.min() < cfg.min_group_size:
                    continue
                alt_r = ev.evaluate(alt)[0]
                assert alt_r <= chosen_r * (1 + 1e-9)
            keep[chosen] = False

    def test_trace_records_removals(self):
        d = build_two_group_dataset(10, 1.5, seed=3)
        result = greedy_search(d, base_config())
        assert result.success
        assert len(result.trace) == result.excluded_count(d)
        assert result.trace[-1].r_after is not None
        assert result.trace[-1].r_after >= 1.0
        steps = [t.step for t in result.trace]
        assert steps == list(range(1, len(steps) + 1))

    def test_determinism(self):
        d = build_two_group_dataset(12, 1.0, seed=5)
        cfg = base_config(seed=123)
        r1 = greedy_search(d, cfg)
        r2 = greedy_search(d, cfg)
        assert r1.best == r2.best
        assert [t.removed_id for t in r1.trace] == [t.removed_id for t in r2.trace]
        assert r1.evaluations == r2.evaluations

    def test_thread_count_does_not_change_result(self):
        d = build_two_group_dataset(30, 0.9, seed=17)
        serial = greedy_search(d, base_config(seed=9, threads=1))
        parallel = greedy_search(d, base_config(seed=9, threads=4))
        assert serial.best == parallel.best
        assert [t.removed_id for t in serial.trace] == [
            t.removed_id for t in parallel.trace
        ]
        assert serial.rank == parallel.rank

    def test_respects_locked_groups(self):
        d = build_two_group_dataset(8, 2.0, seed=30)
        cfg = base_config(locked_groups=frozenset({"B"}))
        result = greedy_search(d, cfg)
        kept = result.best.kept_per_group(d)
        assert kept[list(d.group_labels).index("B")] == 8

    def test_respects_total_bound(self):
        d = build_two_group_dataset(10, 3.0, seed=31)
        cfg = base_config(max_removed_total=2)
        result = greedy_search(d, cfg)
        assert d.n_subjects - result.rank.preserved <= 2

    def test_respects_group_floor(self):
        d = build_two_group_dataset(4, 5.0, seed=32)
        result = greedy_search(d, base_config())
        assert result.best.kept_per_group(d).min() >= 2


class TestLookahead:
    def test_l1_variants_match_greedy(self):
        for seed in (1, 2, 3):
            d = build_two_group_dataset(12, 1.1, seed=seed)
            cfg = base_config(seed=seed)
            g = greedy_search(d, cfg)
            h3 = lookahead_search(d, cfg, "h3", lookahead=1)
            h4 = lookahead_search(d, cfg, "h4", lookahead=1)
            assert [t.removed_id for t in g.trace] == [t.removed_id for t in h3.trace]
            assert [t.removed_id for t in g.trace] == [t.removed_id for t in h4.trace]

    def test_variants_validate(self):
        d = build_two_group_dataset(6, 0.5, seed=1)
        with pytest.raises(ValidationError):
            lookahead_search(d, base_config(), "h5")

    def test_lookahead_two_succeeds(self):
        d = build_two_group_dataset(10, 1.4, seed=8)
        result = lookahead_search(d, base_config(), "h3", lookahead=2)
        assert result.success
        assert_solution_recomputes(d, result, base_config())

    def test_batching_reduces_recomputations(self):
        cfg = base_config()
        d2 = build_two_group_dataset(120, 1.1, seed=40, n_shifted=45)
        plain = lookahead_search(d2, cfg, "h3", lookahead=1, batch_size=1)
        batched = lookahead_search(d2, cfg, "h3", lookahead=1, batch_size=5)
        assert plain.success and batched.success
        assert batched.evaluations < plain.evaluations
        # batched removals carry stale r markers except at recompute points
        stale = [t for t in batched.trace if t.r_after is None]
        assert stale
        assert d2.n_subjects - batched.rank.preserved >= (
            d2.n_subjects - plain.rank.preserved
        )

    def test_low_reversion_threshold_disables_batching(self):
        d = build_two_group_dataset(60, 1.0, seed=41, n_shifted=20)
        cfg = base_config(reversion_threshold=1e-12)
        batched = lookahead_search(d, cfg, "h3", lookahead=1, batch_size=50)
        plain = lookahead_search(d, cfg, "h3", lookahead=1, batch_size=1)
        assert [t.removed_id for t in batched.trace] == [
            t.removed_id for t in plain.trace
        ]


class TestRandom:
    def test_deterministic_under_seed(self):
        d = build_two_group_dataset(20, 1.0, seed=2)
        cfg = base_config(seed=99)
        r1 = random_search(d, cfg, iterations=50)
        r2 = random_search(d, cfg, iterations=50)
        assert r1.best == r2.best
        assert r1.rank == r2.rank

    def test_solutions_are_feasible_and_equivalent(self):
        d = build_two_group_dataset(20, 0.8, seed=4)
        cfg = base_config(seed=5)
        result = random_search(d, cfg, iterations=300)
        for state in result.solutions:
            assert state.kept_per_group(d).min() >= cfg.min_group_size
        if result.success:
            assert_solution_recomputes(d, result, cfg)

    def test_locked_groups_survive_draws(self):
        d = build_two_group_dataset(10, 0.5, seed=6)
        cfg = base_config(locked_groups=frozenset({"A"}), seed=3)
        result = random_search(d, cfg, iterations=100)
        for state in result.solutions:
            assert state.kept_per_group(d)[0] == 10

    def test_failure_reports_best_r(self):
        # no draw can match two wildly separated groups
        d = build_two_group_dataset(6, 60.0, seed=7)
        result = random_search(d, base_config(), iterations=20)
        assert not result.success
        assert result.rank.r < 1.0

    def test_time_limit_flags(self):
        d = build_two_group_dataset(50, 0.5, seed=8)
        cfg = base_config(time_limit=1e-6)
        result = random_search(d, cfg, iterations=100000)
        assert result.timed_out


class TestExhaustive:
    def test_matches_brute_force_small(self):
        d = build_two_group_dataset(6, 1.3, seed=9)
        cfg = base_config()
        result = exhaustive_search(d, cfg)
        ev = CriteriaEvaluator(d, cfg.criteria)
        best_kept = -1
        n = d.n_subjects
        for bits in range(2**n):
            keep = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
            counts = np.bincount(d.group_codes[keep], minlength=2)
            if counts.min() < cfg.min_group_size:
                continue
            if int(keep.sum()) <= best_kept:
                continue
            if ev.evaluate(keep)[0] >= 1.0:
                best_kept = int(keep.sum())
        assert result.success
        assert result.rank.preserved == best_kept

    def test_minimal_kl_among_equal_size(self):
        # at the matching depth, the returned solutions carry the smallest
        # divergence among all successful states of that size
        d = build_two_group_dataset(7, 1.2, seed=10)
        cfg = base_config()
        result = exhaustive_search(d, cfg)
        assert result.success
        depth = d.n_subjects - result.rank.preserved
        ev = CriteriaEvaluator(d, cfg.criteria)
        best_balance = None
        target = cfg.target_vector(d)
        for combo in itertools.combinations(range(d.n_subjects), depth):
            keep = np.ones(d.n_subjects, dtype=bool)
            keep[list(combo)] = False
            counts = np.bincount(d.group_codes[keep], minlength=2)
            if counts.min() < cfg.min_group_size:
                continue
            if ev.evaluate(keep)[0] < 1.0:
                continue
            observed = counts / counts.sum()
            mask = observed > 0
            bal = float(np.sum(observed[mask] * np.log(observed[mask] / target[mask])))
            if best_balance is None or bal < best_balance:
                best_balance = bal
        assert result.rank.balance == pytest.approx(best_balance, abs=1e-12)

    def test_heuristics_bracket_optimum(self):
        # heuristics can never preserve more than the exhaustive optimum,
        # and on small instances they stay within 3 subjects of it
        for seed in range(10):
            d = build_two_group_dataset(6, 1.2, seed=100 + seed)
            cfg = base_config(seed=seed)
            optimum = exhaustive_search(d, cfg)
            assert optimum.success
            for runner in (
                greedy_search,
                lambda dd, cc: lookahead_search(dd, cc, "h3", lookahead=1),
            ):
                heuristic = runner(d, cfg)
                assert heuristic.success
                assert heuristic.rank.preserved <= optimum.rank.preserved
                assert heuristic.rank.preserved >= optimum.rank.preserved - 3

    def test_budget_guard_raises(self):
        d = build_two_group_dataset(10, 5.0, seed=11)
        cfg = base_config(eval_budget=10)
        with pytest.raises(BudgetExceededError):
            exhaustive_search(d, cfg)

    def test_depth_bound_failure(self):
        d = build_two_group_dataset(8, 8.0, seed=12)
        result = exhaustive_search(d, base_config(), max_removed=1)
        assert not result.success


class TestFeasibilityArithmetic:
    def test_known_counts(self):
        assert count_configurations(40, 3) == 10_701
        assert count_configurations(40, 5) == 760_099
        assert count_configurations(123, 0) == 1
        assert count_configurations(5, 5) == 32

    def test_exact_big_integers(self):
        # float arithmetic overflows near N ~ 1030; exact integers must not
        value = count_configurations(1100, 550)
        assert isinstance(value, int)
        assert value > 10**300

    def test_bounds_checked(self):
        with pytest.raises(ValidationError):
            count_configurations(10, 11)
        with pytest.raises(ValidationError):
            count_configurations(10, -1)

    def test_estimate_formatting(self):
        assert format_duration(10.701) == "≈ 11 seconds"
        assert format_duration(760.099) == "≈ 13 minutes"
        assert format_duration(0.01) == "instantaneous"
        assert format_duration(3600 * 34 * 24 * 365) == "≈ 34 years"

    def test_estimate_with_forced_rate(self):
        d = build_two_group_dataset(20, 0.5, seed=13)
        cfg = base_config()
        est = estimate_exhaustive(d, cfg, heuristic_removals=5, calibrated_rate=1000.0)
        assert est.configurations == count_configurations(40, 5)
        assert est.seconds == pytest.approx(760.099, abs=1e-9)
        assert "13 minutes" in est.describe()
        assert est.feasible

    def test_estimate_zero_bound(self):
        d = build_two_group_dataset(20, 0.5, seed=13)
        est = estimate_exhaustive(d, base_config(), 0, calibrated_rate=1000.0)
        assert est.configurations == 1
        assert "instantaneous" in est.describe()

    def test_estimate_measures_rate_when_omitted(self):
        d = build_two_group_dataset(15, 0.5, seed=14)
        est = estimate_exhaustive(
            d, base_config(), 2, calibration_seconds=0.05
        )
        assert est.rate > 0
        assert est.seconds > 0
