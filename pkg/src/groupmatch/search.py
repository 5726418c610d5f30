"""Subset-search strategies for group matching.

Five strategies share one contract: walk the space of keep-vectors, maximize
the match score r (halting when r >= 1), respect group locks, per-group and
total removal bounds, and a minimum group size, and report the best
solution(s) found together with a removal trace.

* random_search      - independent binomial draws with a decreasing keep rate.
* greedy_search      - remove the subject whose removal yields the highest r.
* lookahead_search   - score removal sets of size L, then remove one subject,
                       chosen either by recursive narrowing on r ("h3") or by
                       set-membership counts ("h4"); supports lazy
                       recomputation (batches of removals per r update).
* exhaustive_search  - breadth-first enumeration by removal count; optimal
                       within its depth bound.

All randomness flows from one generator seeded by the config, so identical
(dataset, config, seed) triples replay identically at any thread count.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .criteria import (
    CriteriaEvaluator,
    MatchConfig,
    SolutionRank,
    balance_close,
    compare_solutions,
    r_close,
    solution_rank,
)
from .dataset import Dataset, SubsetState
from .errors import BudgetExceededError, UndefinedTestError, ValidationError
from .stats import TestRegistry

__all__ = [
    "TraceStep",
    "MatchResult",
    "ExhaustiveEstimate",
    "random_search",
    "greedy_search",
    "lookahead_search",
    "exhaustive_search",
    "count_configurations",
    "estimate_exhaustive",
    "format_duration",
]

# Evaluating candidate batches in parallel only pays off past this size.
_PARALLEL_THRESHOLD = 64


@dataclass(frozen=True)
class TraceStep:
    """One removal, for replay verification.

    ``r_after`` is None for removals made between r recomputations (lazy
    batching); the final removal of each batch carries the fresh value.
    """

    step: int
    removed_id: str
    r_before: float | None
    r_after: float | None
    pool_size: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "removed_id": self.removed_id,
                "r_before": self.r_before,
                "r_after": self.r_after,
                "pool_size": self.pool_size,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class MatchResult:
    """Outcome of one search run.

    ``solutions`` holds every stored best state; they are mutually
    equivalent under compare_solutions.  On success every one of them has
    r >= 1; on failure the single state closest to matching (highest r) is
    reported.
    """

    algorithm: str
    solutions: tuple[SubsetState, ...]
    rank: SolutionRank
    p_values: tuple[float, ...]
    success: bool
    wall_time: float
    seed: int
    evaluations: int
    parameters: dict = field(default_factory=dict)
    trace: tuple[TraceStep, ...] = ()
    timed_out: bool = False

    @property
    def r(self) -> float:
        return self.rank.r

    @property
    def best(self) -> SubsetState:
        return self.solutions[0]

    def excluded_count(self, dataset: Dataset) -> int:
        return dataset.n_subjects - self.rank.preserved


class _Budget:
    """Deterministic criterion-evaluation accounting.

    Every candidate state is charged the full criteria count before it is
    evaluated, whether or not a test turns out to be undefined partway
    through, so the counter does not depend on evaluation order or thread
    interleaving.
    """

    def __init__(self, ceiling: int, per_state: int):
        self.ceiling = ceiling
        self.per_state = per_state
        self.spent = 0

    def charge_states(self, n_states: int) -> None:
        self.spent += n_states * self.per_state
        if self.spent > self.ceiling:
            raise BudgetExceededError(
                f"criterion-evaluation budget exceeded: {self.spent} > "
                f"{self.ceiling}",
                evaluations=self.spent,
            )


class _Engine:
    """Shared machinery: bound evaluator, budget, rng, feasibility counts."""

    def __init__(
        self,
        dataset: Dataset,
        config: MatchConfig,
        registry: TestRegistry | None,
    ):
        config.validate_for(dataset, registry or _default_registry())
        self.dataset = dataset
        self.config = config
        self.evaluator = CriteriaEvaluator(dataset, config.criteria, registry)
        self.budget = _Budget(config.eval_budget, len(self.evaluator))
        self.rng = np.random.default_rng(config.seed)
        self.sizes = dataset.group_sizes()
        self.locked_mask = np.zeros(dataset.n_subjects, dtype=bool)
        for g in config.locked_groups:
            self.locked_mask[dataset.group_index[g]] = True
        bounds = []
        for i, g in enumerate(dataset.group_labels):
            if g in config.locked_groups:
                bounds.append(0)
            else:
                room = int(self.sizes[i]) - config.min_group_size
                cap = config.max_removed_per_group.get(g)
                bounds.append(room if cap is None else min(room, cap))
        self.group_removal_room = np.array(bounds, dtype=np.intp)
        self._pool = (
            ThreadPoolExecutor(max_workers=config.threads)
            if config.threads > 1
            else None
        )
        self.deadline: float | None = None

    def start_clock(self, started: float) -> None:
        if self.config.time_limit is not None:
            self.deadline = started + self.config.time_limit

    def out_of_time(self) -> bool:
        return self.deadline is not None and time.perf_counter() > self.deadline

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)

    def try_evaluate(self, keep: np.ndarray):
        """(r, p_values), or None when a test is undefined for this subset."""
        try:
            return self.evaluator.evaluate(keep)
        except UndefinedTestError:
            return None

    def evaluate_many(self, masks: Sequence[np.ndarray]) -> list:
        """Evaluate candidate keep-masks; results in canonical input order."""
        self.budget.charge_states(len(masks))
        if self._pool is None or len(masks) < _PARALLEL_THRESHOLD:
            return [self.try_evaluate(m) for m in masks]
        return list(self._pool.map(self.try_evaluate, masks))

    def evaluate_one(self, keep: np.ndarray):
        self.budget.charge_states(1)
        return self.try_evaluate(keep)

    def rank(self, keep: np.ndarray, r: float) -> SolutionRank:
        return solution_rank(self.dataset, keep, self.config, r)


def _default_registry() -> TestRegistry:
    from .stats import default_registry

    return default_registry


def _balance_better(a, b) -> bool:
    """Strictly better (smaller) balance, tolerance-aware for floats."""
    if isinstance(a, tuple):
        return a < b
    return a < b and not balance_close(a, b)


def _step_key_better(r_a: float, bal_a, r_b: float, bal_b) -> int:
    """Compare step candidates: r desc, then balance asc.  +1 a better."""
    if not r_close(r_a, r_b):
        return 1 if r_a > r_b else -1
    if _balance_better(bal_a, bal_b):
        return 1
    if _balance_better(bal_b, bal_a):
        return -1
    return 0


class _SolutionPool:
    """Best-rank states, deduplicated; extras beyond the cap are dropped in
    encounter order (deterministic)."""

    def __init__(self, cap: int):
        self.cap = cap
        self.rank: SolutionRank | None = None
        self.states: list[np.ndarray] = []
        self.p_values: tuple[float, ...] = ()
        self._keys: set[bytes] = set()

    def offer(self, keep: np.ndarray, rank: SolutionRank, ps: tuple[float, ...]):
        if self.rank is None or compare_solutions(rank, self.rank) > 0:
            self.rank = rank
            self.states = [keep.copy()]
            self.p_values = ps
            self._keys = {keep.tobytes()}
        elif compare_solutions(rank, self.rank) == 0 and len(self.states) < self.cap:
            key = keep.tobytes()
            if key not in self._keys:
                self._keys.add(key)
                self.states.append(keep.copy())

    def __bool__(self) -> bool:
        return self.rank is not None

    def subset_states(self) -> tuple[SubsetState, ...]:
        return tuple(SubsetState(s) for s in self.states)


class _BestFailing:
    """Closest-to-matching failing state: highest r, then better rank."""

    def __init__(self):
        self.r: float | None = None
        self.keep: np.ndarray | None = None
        self.rank: SolutionRank | None = None
        self.ps: tuple[float, ...] = ()

    def offer(self, keep: np.ndarray, rank: SolutionRank, ps: tuple[float, ...]):
        if self.r is None:
            better = True
        elif r_close(rank.r, self.r):
            better = compare_solutions(rank, self.rank) > 0
        else:
            better = rank.r > self.r
        if better:
            self.r = rank.r
            self.keep = keep.copy()
            self.rank = rank
            self.ps = ps


def _result(
    engine: _Engine,
    algorithm: str,
    parameters: dict,
    success: bool,
    pool_or_state,
    started: float,
    trace: Sequence[TraceStep] = (),
    timed_out: bool = False,
) -> MatchResult:
    wall = time.perf_counter() - started
    if isinstance(pool_or_state, _SolutionPool):
        solutions = pool_or_state.subset_states()
        rank = pool_or_state.rank
        ps = pool_or_state.p_values
    else:
        best: _BestFailing = pool_or_state
        solutions = (SubsetState(best.keep),)
        rank = best.rank
        ps = best.ps
    return MatchResult(
        algorithm=algorithm,
        solutions=solutions,
        rank=rank,
        p_values=ps,
        success=success,
        wall_time=wall,
        seed=engine.config.seed,
        evaluations=engine.budget.spent,
        parameters=parameters,
        trace=tuple(trace),
        timed_out=timed_out,
    )


# ---------------------------------------------------------------------------
# random search
# ---------------------------------------------------------------------------


def _keep_rate(engine: _Engine, i: int, total: int) -> float:
    """Keep probability for draw i of `total`, sweeping from ~all kept down
    to an expected count of one subject per group."""
    cfg = engine.config
    floor = engine.dataset.n_groups / engine.dataset.n_subjects
    if cfg.schedule_jitter:
        u = float(engine.rng.uniform((i - 1) / total, i / total))
    else:
        u = i / total
    if cfg.random_schedule == "linear":
        return 1.0 - u * (1.0 - floor)
    return floor**u


def random_search(
    dataset: Dataset,
    config: MatchConfig,
    iterations: int | None = None,
    registry: TestRegistry | None = None,
) -> MatchResult:
    """Sample keep-vectors at random, sweeping the expected kept count from
    nearly all subjects down to one per group, and return the best draw(s).

    Always returns: when no draw reaches r >= 1 the closest failing draw is
    reported with success=False.
    """
    total = config.iterations if iterations is None else int(iterations)
    if total < 1:
        raise ValidationError(f"iterations must be >= 1, got {total}")
    engine = _Engine(dataset, config, registry)
    started = time.perf_counter()
    engine.start_clock(started)
    try:
        n = dataset.n_subjects
        min_size = config.min_group_size
        unlocked_rows = np.flatnonzero(~engine.locked_mask)
        group_rows = [dataset.group_index[g] for g in dataset.group_labels]
        unlocked_groups = [
            i
            for i, g in enumerate(dataset.group_labels)
            if g not in config.locked_groups
        ]
        successes = _SolutionPool(config.max_solutions)
        failing = _BestFailing()
        timed_out = False

        # the full set is always evaluated first: an already-matched dataset
        # needs no removals at all
        full = np.ones(n, dtype=bool)
        evaluated = engine.evaluate_one(full)
        if evaluated is not None:
            r, ps = evaluated
            rank = engine.rank(full, r)
            if r >= 1.0:
                successes.offer(full, rank, ps)
            else:
                failing.offer(full, rank, ps)

        for i in range(1, total + 1):
            if engine.out_of_time():
                timed_out = True
                break
            q = _keep_rate(engine, i, total)
            keep = np.ones(n, dtype=bool)
            keep[unlocked_rows] = engine.rng.random(unlocked_rows.size) < q
            if config.ensure_feasible_draws:
                for gi in unlocked_groups:
                    rows = group_rows[gi]
                    kept_rows = rows[keep[rows]]
                    short = min(min_size, rows.size) - kept_rows.size
                    if short > 0:
                        out = rows[~keep[rows]]
                        picked = engine.rng.choice(out.size, size=short, replace=False)
                        keep[out[picked]] = True
            counts = np.bincount(
                dataset.group_codes[keep], minlength=dataset.n_groups
            )
            removed = engine.sizes - counts
            if np.any(removed > engine.group_removal_room):
                continue
            if config.max_removed_total is not None and int(removed.sum()) > (
                config.max_removed_total
            ):
                continue
            if np.any(counts[unlocked_groups] < min_size):
                continue
            evaluated = engine.evaluate_one(keep)
            if evaluated is None:
                continue
            r, ps = evaluated
            rank = engine.rank(keep, r)
            if r >= 1.0:
                successes.offer(keep, rank, ps)
            else:
                failing.offer(keep, rank, ps)

        params = {
            "iterations": total,
            "schedule": config.random_schedule,
            "jitter": config.schedule_jitter,
        }
        if successes:
            return _result(
                engine, "random", params, True, successes, started,
                timed_out=timed_out,
            )
        if failing.keep is None:
            raise UndefinedTestError(
                "criteria are undefined on the full dataset and every "
                "random draw was infeasible"
            )
        return _result(
            engine, "random", params, False, failing, started, timed_out=timed_out
        )
    finally:
        engine.close()


# ---------------------------------------------------------------------------
# constructive searches (greedy + lookahead)
# ---------------------------------------------------------------------------


class _Walk:
    """Mutable state of a constructive search."""

    def __init__(self, engine: _Engine):
        self.engine = engine
        d = engine.dataset
        self.keep = np.ones(d.n_subjects, dtype=bool)
        self.kept_counts = engine.sizes.copy()
        self.removed_counts = np.zeros(d.n_groups, dtype=np.intp)
        self.total_removed = 0
        self.trace: list[TraceStep] = []
        self.current_r: float | None = None
        self.current_ps: tuple[float, ...] = ()

    def removable_rows(self) -> np.ndarray:
        cfg = self.engine.config
        if (
            cfg.max_removed_total is not None
            and self.total_removed >= cfg.max_removed_total
        ):
            return np.empty(0, dtype=np.intp)
        group_open = self.removed_counts < self.engine.group_removal_room
        ok = self.keep & group_open[self.engine.dataset.group_codes]
        return np.flatnonzero(ok)

    def combo_feasible(self, combo: tuple[int, ...]) -> bool:
        cfg = self.engine.config
        if cfg.max_removed_total is not None:
            if self.total_removed + len(combo) > cfg.max_removed_total:
                return False
        if len(combo) == 1:
            return True  # singles from removable_rows are feasible already
        counts: dict[int, int] = {}
        for row in combo:
            g = int(self.engine.dataset.group_codes[row])
            counts[g] = counts.get(g, 0) + 1
        for g, c in counts.items():
            if self.removed_counts[g] + c > self.engine.group_removal_room[g]:
                return False
        return True

    def remove(self, row: int) -> None:
        self.keep[row] = False
        g = self.engine.dataset.group_codes[row]
        self.kept_counts[g] -= 1
        self.removed_counts[g] += 1
        self.total_removed += 1

    def mask_without(self, rows: Iterable[int]) -> np.ndarray:
        mask = self.keep.copy()
        mask[list(rows)] = False
        return mask

    def balance_of_mask(self, rows: Iterable[int]):
        """Balance term of the current state with `rows` also removed."""
        cfg = self.engine.config
        d = self.engine.dataset
        counts = self.kept_counts.copy()
        for row in rows:
            counts[d.group_codes[row]] -= 1
        if cfg.balance_mode == "proportions":
            observed = counts / counts.sum()
            target = cfg.target_vector(d)
            mask = observed > 0
            return float(
                max(np.sum(observed[mask] * np.log(observed[mask] / target[mask])), 0.0)
            )
        removed = self.removed_counts.copy()
        for row in rows:
            removed[d.group_codes[row]] += 1
        order = {g: i for i, g in enumerate(d.group_labels)}
        return tuple(int(removed[order[g]]) for g in cfg.precedence)


@dataclass
class _StepCandidates:
    """Evaluated removal sets for one step, in canonical order."""

    combos: list[tuple[int, ...]]
    rs: list[float]          # aligned with combos (undefined ones dropped)
    balances: list


def _evaluate_step(engine: _Engine, walk: _Walk, size: int) -> _StepCandidates | None:
    rows = walk.removable_rows()
    if rows.size < size:
        return None
    if size == 1:
        combos = [(int(i),) for i in rows]
    else:
        combos = [
            c
            for c in itertools.combinations((int(i) for i in rows), size)
            if walk.combo_feasible(c)
        ]
    if not combos:
        return None
    results = engine.evaluate_many([walk.mask_without(c) for c in combos])
    kept_combos: list[tuple[int, ...]] = []
    rs: list[float] = []
    balances: list = []
    if size == 1:
        # a single removal's balance depends only on the subject's group
        codes = engine.dataset.group_codes
        per_group: dict[int, object] = {}
        for combo in combos:
            g = int(codes[combo[0]])
            if g not in per_group:
                per_group[g] = walk.balance_of_mask(combo)
        balance_for = lambda c: per_group[int(codes[c[0]])]
    else:
        balance_for = walk.balance_of_mask
    for combo, res in zip(combos, results):
        if res is None:
            continue
        kept_combos.append(combo)
        rs.append(res[0])
        balances.append(balance_for(combo))
    if not kept_combos:
        return None
    return _StepCandidates(kept_combos, rs, balances)


def _argmax_pool(engine: _Engine, step: _StepCandidates) -> list[int]:
    """Indices of step candidates tied with the best (r desc, balance asc)
    key, capped at the configured pool size by seeded subsampling."""
    best = 0
    pool = [0]
    for j in range(1, len(step.combos)):
        cmp = _step_key_better(
            step.rs[j], step.balances[j], step.rs[best], step.balances[best]
        )
        if cmp > 0:
            best = j
            pool = [j]
        elif cmp == 0:
            pool.append(j)
    cap = engine.config.pool_cap
    if len(pool) > cap:
        picked = engine.rng.choice(len(pool), size=cap, replace=False)
        pool = [pool[int(i)] for i in sorted(picked)]
    return pool


def _choose_index(engine: _Engine, count: int) -> int:
    return 0 if count == 1 else int(engine.rng.integers(count))


def _narrow_by_r(engine: _Engine, walk: _Walk, pool_sets: list[tuple[int, ...]]) -> int:
    """Recursive narrowing on r alone: shrink candidate sets one element at
    a time, keeping the subsets with the highest r, until singletons remain."""
    candidates = pool_sets
    size = len(candidates[0])
    while size > 1:
        size -= 1
        universe = sorted(
            {sub for c in candidates for sub in itertools.combinations(c, size)}
        )
        results = engine.evaluate_many([walk.mask_without(c) for c in universe])
        best_r: float | None = None
        narrowed: list[tuple[int, ...]] = []
        for combo, res in zip(universe, results):
            if res is None:
                continue
            r = res[0]
            if best_r is None or (r > best_r and not r_close(r, best_r)):
                best_r = r
                narrowed = [combo]
            elif r_close(r, best_r):
                narrowed.append(combo)
        if not narrowed:
            # every subset hit an undefined test; fall back to the subjects
            # of the current candidate sets
            subjects = sorted({row for c in candidates for row in c})
            return subjects[_choose_index(engine, len(subjects))]
        if len(narrowed) > engine.config.pool_cap:
            picked = engine.rng.choice(
                len(narrowed), size=engine.config.pool_cap, replace=False
            )
            narrowed = [narrowed[int(i)] for i in sorted(picked)]
        candidates = narrowed
    return candidates[_choose_index(engine, len(candidates))][0]


def _choose_by_membership(
    engine: _Engine,
    walk: _Walk,
    step: _StepCandidates,
    pool: list[int],
) -> int:
    """Pick the subject occurring in the most pool sets; ties by
    single-removal r, then seeded-random."""
    counts: dict[int, int] = {}
    for j in pool:
        for row in step.combos[j]:
            counts[row] = counts.get(row, 0) + 1
    top = max(counts.values())
    candidates = sorted(row for row, c in counts.items() if c == top)
    if len(candidates) == 1:
        return candidates[0]
    if len(step.combos[pool[0]]) == 1:
        # pool members are singletons whose r values are already tied
        return candidates[_choose_index(engine, len(candidates))]
    results = engine.evaluate_many([walk.mask_without((c,)) for c in candidates])
    best_r: float | None = None
    finalists: list[int] = []
    for row, res in zip(candidates, results):
        if res is None:
            continue
        r = res[0]
        if best_r is None or (r > best_r and not r_close(r, best_r)):
            best_r = r
            finalists = [row]
        elif r_close(r, best_r):
            finalists.append(row)
    if not finalists:
        finalists = candidates
    return finalists[_choose_index(engine, len(finalists))]


def _constructive(
    dataset: Dataset,
    config: MatchConfig,
    registry: TestRegistry | None,
    algorithm: str,
    set_size: int,
    select,
) -> MatchResult:
    """Shared driver for greedy and lookahead searches.

    ``select(engine, walk, step, pool) -> row`` picks the subject removed
    first in each step; with lazy batching active, further removals follow
    the step's stale ranking until the batch fills.
    """
    engine = _Engine(dataset, config, registry)
    started = time.perf_counter()
    engine.start_clock(started)
    try:
        walk = _Walk(engine)
        failing = _BestFailing()
        timed_out = False
        evaluated = engine.evaluate_one(walk.keep)
        if evaluated is not None:
            r, ps = evaluated
            walk.current_r, walk.current_ps = r, ps
            rank = engine.rank(walk.keep, r)
            if r >= 1.0:
                pool = _SolutionPool(config.max_solutions)
                pool.offer(walk.keep, rank, ps)
                return _result(engine, algorithm, _params(config, set_size), True,
                               pool, started)
            failing.offer(walk.keep, rank, ps)
        careful = walk.current_r is not None and (
            walk.current_r >= config.reversion_threshold
        )

        while True:
            if engine.out_of_time():
                timed_out = True
                break
            step = _evaluate_step(engine, walk, set_size)
            if step is None:
                break
            pool = _argmax_pool(engine, step)
            first = select(engine, walk, step, pool)

            batch_limit = 1
            if not careful:
                batch_limit = config.batch_size
                if config.batch_fraction is not None:
                    remaining = walk.removable_rows().size
                    batch_limit = max(1, int(config.batch_fraction * remaining))
            plan = [first]
            if batch_limit > 1:
                ranked = sorted(
                    range(len(step.combos)),
                    key=lambda j: (
                        -step.rs[j],
                        step.balances[j],
                        step.combos[j],
                    ),
                )
                for j in ranked:
                    if len(plan) >= batch_limit:
                        break
                    row = step.combos[j][0]
                    if row != first:
                        plan.append(row)

            stale_r = walk.current_r
            removed_now: list[int] = []
            for row in plan:
                if not walk.keep[row]:
                    continue
                g = int(engine.dataset.group_codes[row])
                if walk.removed_counts[g] >= engine.group_removal_room[g]:
                    continue
                if config.max_removed_total is not None and (
                    walk.total_removed >= config.max_removed_total
                ):
                    break
                walk.remove(row)
                removed_now.append(row)
            if not removed_now:
                break

            evaluated = engine.evaluate_one(walk.keep)
            fresh_r = evaluated[0] if evaluated is not None else None
            for idx, row in enumerate(removed_now):
                last = idx == len(removed_now) - 1
                walk.trace.append(
                    TraceStep(
                        step=walk.total_removed - len(removed_now) + idx + 1,
                        removed_id=dataset.subject_ids[row],
                        r_before=stale_r,
                        r_after=fresh_r if last else None,
                        pool_size=len(pool),
                    )
                )
            if evaluated is None:
                # tests undefined on the new state: keep walking; candidate
                # evaluation will steer among defined states
                walk.current_r, walk.current_ps = None, ()
                continue
            r, ps = evaluated
            walk.current_r, walk.current_ps = r, ps
            rank = engine.rank(walk.keep, r)
            if r >= 1.0:
                pool_out = _SolutionPool(config.max_solutions)
                pool_out.offer(walk.keep, rank, ps)
                return _result(engine, algorithm, _params(config, set_size), True,
                               pool_out, started, walk.trace)
            failing.offer(walk.keep, rank, ps)
            if r >= config.reversion_threshold:
                careful = True

        if failing.keep is None:
            raise UndefinedTestError(
                "criteria were undefined on every state the search visited"
            )
        return _result(engine, algorithm, _params(config, set_size), False,
                       failing, started, walk.trace, timed_out=timed_out)
    finally:
        engine.close()


def _params(config: MatchConfig, set_size: int) -> dict:
    return {
        "lookahead": set_size,
        "batch_size": config.batch_size,
        "batch_fraction": config.batch_fraction,
        "reversion_threshold": config.reversion_threshold,
    }


def greedy_search(
    dataset: Dataset,
    config: MatchConfig,
    registry: TestRegistry | None = None,
) -> MatchResult:
    """Remove, at every step, the subject whose removal yields the highest r
    (ties by balance, then seeded-random), until r >= 1 or no subject may be
    removed."""

    def select(engine, walk, step, pool):
        return step.combos[pool[_choose_index(engine, len(pool))]][0]

    return _constructive(dataset, config, registry, "greedy", 1, select)


def lookahead_search(
    dataset: Dataset,
    config: MatchConfig,
    variant: str = "h3",
    lookahead: int | None = None,
    batch_size: int | None = None,
    registry: TestRegistry | None = None,
) -> MatchResult:
    """Score removal sets of size L each step, then remove a single subject.

    Variant "h3" narrows the best sets recursively on r; variant "h4"
    removes the subject that appears in the most best sets.  Both reduce to
    greedy_search at L = 1.  ``batch_size`` (or config.batch_fraction)
    enables lazy recomputation: several subjects are removed per r update
    until r reaches config.reversion_threshold, after which removals are
    re-scored one at a time.
    """
    if variant not in ("h3", "h4"):
        raise ValidationError(f"unknown lookahead variant {variant!r}")
    overrides = {}
    if lookahead is not None:
        overrides["lookahead"] = int(lookahead)
    if batch_size is not None:
        overrides["batch_size"] = int(batch_size)
    if overrides:
        config = config.with_(**overrides)
    size = config.lookahead

    if variant == "h3":

        def select(engine, walk, step, pool):
            if size == 1:
                return step.combos[pool[_choose_index(engine, len(pool))]][0]
            return _narrow_by_r(engine, walk, [step.combos[j] for j in pool])

    else:

        def select(engine, walk, step, pool):
            return _choose_by_membership(engine, walk, step, pool)

    return _constructive(dataset, config, registry, f"lookahead_{variant}", size, select)


# ---------------------------------------------------------------------------
# exhaustive search
# ---------------------------------------------------------------------------

_EXHAUSTIVE_CHUNK = 1024


def exhaustive_search(
    dataset: Dataset,
    config: MatchConfig,
    max_removed: int | None = None,
    registry: TestRegistry | None = None,
) -> MatchResult:
    """Breadth-first enumeration of removal sets by increasing removal count.

    Returns every best state at the first count where some feasible state
    reaches r >= 1 (ranked by balance, then r).  Raises BudgetExceededError
    when the criterion-evaluation ceiling is hit first.
    """
    engine = _Engine(dataset, config, registry)
    started = time.perf_counter()
    engine.start_clock(started)
    try:
        n = dataset.n_subjects
        bound = max_removed
        if bound is None:
            bound = config.max_removed_total
        if bound is None:
            bound = n
        if bound < 0:
            raise ValidationError(f"max_removed must be >= 0, got {bound}")
        removable = [
            int(i) for i in np.flatnonzero(~engine.locked_mask)
        ]
        room_total = int(engine.group_removal_room.sum())
        bound = min(bound, room_total, len(removable))
        codes = engine.dataset.group_codes
        failing = _BestFailing()

        for depth in range(bound + 1):
            pool = _SolutionPool(config.max_solutions)
            combos = itertools.combinations(removable, depth)
            while True:
                if engine.out_of_time():
                    # partial depth: optimality within the depth cannot be
                    # claimed, so report the best state seen as a failure
                    best = failing
                    if pool:
                        best = _BestFailing()
                        best.offer(pool.states[0], pool.rank, pool.p_values)
                    if best.keep is None:
                        raise UndefinedTestError(
                            "timed out before any state could be evaluated"
                        )
                    return _result(
                        engine, "exhaustive", {"max_removed": bound}, False,
                        best, started, timed_out=True,
                    )
                chunk = list(itertools.islice(combos, _EXHAUSTIVE_CHUNK))
                if not chunk:
                    break
                feasible = []
                for combo in chunk:
                    counts: dict[int, int] = {}
                    for row in combo:
                        g = int(codes[row])
                        counts[g] = counts.get(g, 0) + 1
                    if all(
                        c <= engine.group_removal_room[g] for g, c in counts.items()
                    ):
                        feasible.append(combo)
                if not feasible:
                    continue
                masks = []
                base = np.ones(n, dtype=bool)
                for combo in feasible:
                    mask = base.copy()
                    mask[list(combo)] = False
                    masks.append(mask)
                results = engine.evaluate_many(masks)
                for mask, res in zip(masks, results):
                    if res is None:
                        continue
                    r, ps = res
                    rank = engine.rank(mask, r)
                    if r >= 1.0:
                        pool.offer(mask, rank, ps)
                    else:
                        failing.offer(mask, rank, ps)
            if pool:
                return _result(
                    engine,
                    "exhaustive",
                    {"max_removed": bound},
                    True,
                    pool,
                    started,
                )
        if failing.keep is None:
            raise UndefinedTestError(
                "criteria were undefined on every enumerated state"
            )
        return _result(
            engine, "exhaustive", {"max_removed": bound}, False, failing, started
        )
    finally:
        engine.close()


# ---------------------------------------------------------------------------
# feasibility arithmetic
# ---------------------------------------------------------------------------


def count_configurations(n_subjects: int, max_removed: int) -> int:
    """Exact number of keep-vectors removing at most ``max_removed`` subjects:
    sum of C(N, i) for i = 0..max_removed.  Arbitrary precision."""
    if max_removed < 0:
        raise ValidationError(f"max_removed must be >= 0, got {max_removed}")
    if max_removed > n_subjects:
        raise ValidationError(
            f"max_removed {max_removed} exceeds subject count {n_subjects}"
        )
    return sum(math.comb(n_subjects, i) for i in range(max_removed + 1))


def format_duration(seconds: float) -> str:
    """Human-oriented duration: '≈ 13 minutes', '≈ 11 seconds', ..."""
    if seconds < 1.0:
        return "instantaneous"
    if seconds < 60.0:
        value, unit = round(seconds), "second"
    elif seconds < 3600.0:
        value, unit = round(seconds / 60.0), "minute"
    elif seconds < 86400.0:
        value, unit = round(seconds / 3600.0), "hour"
    elif seconds < 31_557_600.0:
        value, unit = round(seconds / 86400.0), "day"
    else:
        value, unit = round(seconds / 31_557_600.0), "year"
    value = max(1, int(value))
    plural = "" if value == 1 else "s"
    return f"≈ {value} {unit}{plural}"


@dataclass(frozen=True)
class ExhaustiveEstimate:
    configurations: int
    rate: float               # full-criteria evaluations per second
    seconds: float
    criterion_evaluations: int
    budget: int
    feasible: bool

    @property
    def verdict(self) -> str:
        return "feasible" if self.feasible else "infeasible"

    def describe(self) -> str:
        return (
            f"{self.configurations} configurations at {self.rate:.0f} "
            f"evaluations/second: {format_duration(self.seconds)} ({self.verdict})"
        )


def estimate_exhaustive(
    dataset: Dataset,
    config: MatchConfig,
    heuristic_removals: int,
    calibrated_rate: float | None = None,
    registry: TestRegistry | None = None,
    calibration_seconds: float = 0.25,
) -> ExhaustiveEstimate:
    """Project the cost of exhaustive search up to a removal bound discovered
    by a heuristic run.

    When no rate is supplied, one is measured by timing criteria evaluation
    on the actual dataset.  The verdict compares the projected number of
    criterion evaluations against the configured budget.
    """
    if calibrated_rate is not None and calibrated_rate <= 0:
        raise ValidationError("calibrated_rate must be positive")
    configurations = count_configurations(dataset.n_subjects, heuristic_removals)
    if calibrated_rate is None:
        evaluator = CriteriaEvaluator(dataset, config.criteria, registry)
        keep = np.ones(dataset.n_subjects, dtype=bool)
        begin = time.perf_counter()
        done = 0
        while time.perf_counter() - begin < calibration_seconds or done == 0:
            try:
                evaluator.evaluate(keep)
            except UndefinedTestError:
                pass
            done += 1
        calibrated_rate = done / max(time.perf_counter() - begin, 1e-9)
    seconds = configurations / calibrated_rate
    criterion_evals = configurations * len(config.criteria)
    return ExhaustiveEstimate(
        configurations=configurations,
        rate=calibrated_rate,
        seconds=seconds,
        criterion_evaluations=criterion_evals,
        budget=config.eval_budget,
        feasible=criterion_evals <= config.eval_budget,
    )
