"""Matching criteria, the match score r, and the solution ordering.

A criterion binds one statistical test to one covariate over a subset of
groups, with a p-value threshold alpha.  The match score of a subset is

    r = min over criteria of p_j / alpha_j

and a subset "matches" when r >= 1 (every test clears its threshold).
Candidate solutions are ordered lexicographically: more subjects preserved
first, then better group balance, then larger r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Union

import numpy as np

from .dataset import Dataset, SubsetState
from .errors import UndefinedTestError, ValidationError
from .stats import TestFunction, TestRegistry, default_registry

__all__ = [
    "CriterionSpec",
    "CriteriaSet",
    "MatchConfig",
    "SolutionRank",
    "CriteriaEvaluator",
    "compute_r",
    "kl_divergence",
    "compare_solutions",
    "solution_rank",
]

# Relative tolerance for floating-point rank components; differing summation
# orders make exact equality too brittle.
RANK_REL_TOL = 1e-12


@dataclass(frozen=True)
class CriterionSpec:
    """One (test, covariate, group subset, alpha) requirement."""

    test_name: str
    covariate: str
    group_subset: tuple[str, ...]
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "group_subset", tuple(self.group_subset))
        if len(self.group_subset) < 2:
            raise ValidationError(
                f"criterion on {self.covariate!r} needs >=2 groups, "
                f"got {self.group_subset}"
            )
        if len(set(self.group_subset)) != len(self.group_subset):
            raise ValidationError(f"duplicate groups in {self.group_subset}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(
                f"alpha must lie in (0, 1), got {self.alpha} "
                f"(criterion {self.test_name!r} on {self.covariate!r})"
            )

    def describe(self) -> str:
        return (
            f"{self.test_name}({self.covariate}; "
            f"{','.join(self.group_subset)}; alpha={self.alpha})"
        )


@dataclass(frozen=True)
class CriteriaSet:
    """Ordered list of criteria; the match score minimizes over all of them."""

    criteria: tuple[CriterionSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "criteria", tuple(self.criteria))
        if not self.criteria:
            raise ValidationError("need at least one criterion")
        triples = [
            (c.test_name, c.covariate, tuple(sorted(c.group_subset)))
            for c in self.criteria
        ]
        if len(set(triples)) != len(triples):
            raise ValidationError("duplicate (test, covariate, groups) criterion")

    def __len__(self) -> int:
        return len(self.criteria)

    def __iter__(self):
        return iter(self.criteria)

    def validate_for(self, dataset: Dataset, registry: TestRegistry) -> None:
        labels = set(dataset.group_labels)
        for c in self.criteria:
            unknown = [g for g in c.group_subset if g not in labels]
            if unknown:
                raise ValidationError(
                    f"criterion {c.describe()} names unknown groups {unknown}"
                )
            if c.covariate not in dataset.covariate_names:
                raise ValidationError(
                    f"criterion {c.describe()} names unknown covariate "
                    f"{c.covariate!r}"
                )
            if c.test_name not in registry:
                raise ValidationError(
                    f"criterion {c.describe()} names unregistered test "
                    f"{c.test_name!r}"
                )
            test = registry.get(c.test_name)
            if test.arity == "two_sample" and len(c.group_subset) != 2:
                raise ValidationError(
                    f"{c.test_name!r} is a two-sample test; criterion on "
                    f"{c.covariate!r} lists {len(c.group_subset)} groups"
                )


@dataclass(frozen=True)
class MatchConfig:
    """Everything a search run needs besides the dataset itself.

    Balance is judged either against target group proportions (KL
    divergence, smaller is better) or by a precedence order over groups
    (fewest removals from the most-preferred group wins).  The two modes
    are mutually exclusive.
    """

    criteria: CriteriaSet
    balance_mode: str = "proportions"          # "proportions" | "precedence"
    target_proportions: Mapping[str, float] | None = None  # None: original ratios
    precedence: tuple[str, ...] | None = None
    locked_groups: frozenset[str] = frozenset()
    max_removed_total: int | None = None
    max_removed_per_group: Mapping[str, int] = field(default_factory=dict)
    min_group_size: int = 2
    seed: int = 0
    iterations: int = 1000          # random search draws
    lookahead: int = 1              # removal-set size scored per step
    batch_size: int = 1             # removals per r recomputation
    batch_fraction: float | None = None  # alternative: share of remaining subjects
    reversion_threshold: float = 0.5     # r at which batching reverts to 1
    random_schedule: str = "geometric"   # "geometric" | "linear"
    schedule_jitter: bool = False
    ensure_feasible_draws: bool = True
    pool_cap: int = 64
    max_solutions: int = 64
    eval_budget: int = 10**8
    threads: int = 1
    time_limit: float | None = None  # cooperative; checked between steps

    def __post_init__(self):
        object.__setattr__(self, "locked_groups", frozenset(self.locked_groups))
        object.__setattr__(
            self, "max_removed_per_group", dict(self.max_removed_per_group)
        )
        if self.precedence is not None:
            object.__setattr__(self, "precedence", tuple(self.precedence))
        if self.balance_mode not in ("proportions", "precedence"):
            raise ValidationError(f"unknown balance_mode {self.balance_mode!r}")
        if self.balance_mode == "precedence" and self.precedence is None:
            raise ValidationError("precedence mode needs a precedence order")
        if self.random_schedule not in ("linear", "geometric"):
            raise ValidationError(f"unknown random_schedule {self.random_schedule!r}")
        for name, value, floor in (
            ("min_group_size", self.min_group_size, 1),
            ("iterations", self.iterations, 1),
            ("lookahead", self.lookahead, 1),
            ("batch_size", self.batch_size, 1),
            ("pool_cap", self.pool_cap, 1),
            ("max_solutions", self.max_solutions, 1),
            ("eval_budget", self.eval_budget, 1),
            ("threads", self.threads, 1),
        ):
            if value < floor:
                raise ValidationError(f"{name} must be >= {floor}, got {value}")
        if self.batch_fraction is not None and not 0.0 < self.batch_fraction <= 1.0:
            raise ValidationError(
                f"batch_fraction must lie in (0, 1], got {self.batch_fraction}"
            )
        if (self.batch_size > 1 or self.batch_fraction is not None) and (
            self.lookahead != 1
        ):
            raise ValidationError("batched removal requires lookahead = 1")
        if self.reversion_threshold <= 0.0:
            raise ValidationError("reversion_threshold must be positive")
        if self.time_limit is not None and self.time_limit <= 0.0:
            raise ValidationError("time_limit must be positive when set")
        if self.max_removed_total is not None and self.max_removed_total < 0:
            raise ValidationError("max_removed_total must be >= 0")
        if self.target_proportions is not None:
            props = dict(self.target_proportions)
            if any(v <= 0 for v in props.values()):
                raise ValidationError("target proportions must be positive")
            total = sum(props.values())
            if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
                raise ValidationError(
                    f"target proportions must sum to 1, got {total}"
                )
            object.__setattr__(self, "target_proportions", props)

    def validate_for(self, dataset: Dataset, registry: TestRegistry) -> None:
        self.criteria.validate_for(dataset, registry)
        labels = set(dataset.group_labels)
        for g in self.locked_groups:
            if g not in labels:
                raise ValidationError(f"locked group {g!r} not in dataset")
        for g, bound in self.max_removed_per_group.items():
            if g not in labels:
                raise ValidationError(f"removal bound names unknown group {g!r}")
            if bound < 0:
                raise ValidationError(f"removal bound for {g!r} must be >= 0")
            if g in self.locked_groups and bound != 0:
                raise ValidationError(
                    f"group {g!r} is locked; a nonzero removal bound contradicts it"
                )
        if self.precedence is not None:
            if sorted(self.precedence) != sorted(dataset.group_labels):
                raise ValidationError(
                    "precedence must order every dataset group exactly once"
                )
        if self.target_proportions is not None:
            if set(self.target_proportions) != labels:
                raise ValidationError(
                    "target proportions must cover every dataset group exactly"
                )
        for g in dataset.group_labels:
            if g not in self.locked_groups:
                if len(dataset.group_index[g]) < self.min_group_size:
                    raise ValidationError(
                        f"group {g!r} starts below min_group_size="
                        f"{self.min_group_size}"
                    )

    def target_vector(self, dataset: Dataset) -> np.ndarray:
        """Target proportions in canonical label order (original ratios when
        unspecified)."""
        if self.target_proportions is None:
            sizes = dataset.group_sizes().astype(float)
            return sizes / sizes.sum()
        return np.array(
            [self.target_proportions[g] for g in dataset.group_labels], dtype=float
        )

    def with_(self, **changes) -> "MatchConfig":
        return replace(self, **changes)


def kl_divergence(observed, target) -> float:
    """KL(observed || target) in nats, with 0 * ln 0 = 0.

    Both arguments are proportion vectors of equal length; target entries
    must be strictly positive.
    """
    obs = np.asarray(observed, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if obs.shape != tgt.shape:
        raise ValidationError(
            f"proportion vectors differ in shape: {obs.shape} vs {tgt.shape}"
        )
    if np.any(tgt <= 0.0):
        raise ValidationError("target proportions must be strictly positive")
    if np.any(obs < 0.0):
        raise ValidationError("observed proportions must be nonnegative")
    mask = obs > 0.0
    value = float(np.sum(obs[mask] * np.log(obs[mask] / tgt[mask])))
    return max(value, 0.0)


Balance = Union[float, tuple[int, ...]]


@dataclass(frozen=True)
class SolutionRank:
    """Lexicographic quality key: preserved count desc, balance asc, r desc.

    ``balance`` is a KL divergence (proportions mode) or a tuple of
    per-group removal counts in precedence order (precedence mode).
    """

    preserved: int
    balance: Balance
    r: float


def r_close(a: float, b: float) -> bool:
    """r values tie at 1e-12 *relative* tolerance: tiny p-values from
    strongly separated groups must still order candidates, so no absolute
    floor is applied."""
    return abs(a - b) <= RANK_REL_TOL * max(abs(a), abs(b))


def balance_close(a: float, b: float) -> bool:
    """Balance (KL) comparisons keep an absolute floor: a divergence gap
    below 1e-12 is summation noise, never a real imbalance."""
    return abs(a - b) <= RANK_REL_TOL * max(1.0, abs(a), abs(b))


def _compare_balance(a: Balance, b: Balance) -> int:
    """Negative when a is better (smaller)."""
    if isinstance(a, tuple) != isinstance(b, tuple):
        raise ValidationError("cannot compare ranks from different balance modes")
    if isinstance(a, tuple):
        return (a > b) - (a < b)
    if balance_close(a, b):
        return 0
    return 1 if a > b else -1


def compare_solutions(a: SolutionRank, b: SolutionRank) -> int:
    """+1 when a is the better solution, -1 when b is, 0 when equivalent.

    Equivalence means all three components tie (floats within 1e-12
    relative tolerance).
    """
    if a.preserved != b.preserved:
        return 1 if a.preserved > b.preserved else -1
    bal = _compare_balance(a.balance, b.balance)
    if bal != 0:
        return -bal
    if r_close(a.r, b.r):
        return 0
    return 1 if a.r > b.r else -1


class CriteriaEvaluator:
    """Criteria bound to one dataset for repeated evaluation.

    Precomputes per-criterion covariate columns and group row indices so a
    single evaluation is a handful of boolean gathers plus the test itself.
    Instances are immutable after construction and safe to share across
    threads.
    """

    def __init__(
        self,
        dataset: Dataset,
        criteria: CriteriaSet,
        registry: TestRegistry | None = None,
    ):
        registry = registry or default_registry
        criteria.validate_for(dataset, registry)
        self.dataset = dataset
        self.criteria = criteria
        self._bound: list[tuple[TestFunction, float, np.ndarray, list[np.ndarray]]] = []
        for spec in criteria:
            test = registry.get(spec.test_name)
            column = dataset.covariate_column(spec.covariate)
            rows = [dataset.group_index[g] for g in spec.group_subset]
            self._bound.append((test, spec.alpha, column, rows))

    def __len__(self) -> int:
        return len(self._bound)

    def p_values(self, keep: np.ndarray) -> tuple[float, ...]:
        """Per-criterion p-values on the kept rows.

        Raises UndefinedTestError when any criterion's test cannot be
        computed for this subset.
        """
        out = []
        for test, _, column, rows in self._bound:
            samples = [column[idx[keep[idx]]] for idx in rows]
            out.append(test(samples))
        return tuple(out)

    def evaluate(self, keep: np.ndarray) -> tuple[float, tuple[float, ...]]:
        """(r, per-criterion p-values) for the kept rows."""
        ps = self.p_values(keep)
        r = min(p / spec.alpha for p, spec in zip(ps, self.criteria))
        return r, ps


def compute_r(
    dataset: Dataset,
    state: SubsetState | np.ndarray,
    criteria: CriteriaSet,
    registry: TestRegistry | None = None,
) -> float:
    """Match score r = min over criteria of p_j / alpha_j; success iff r >= 1."""
    keep = state.keep if isinstance(state, SubsetState) else np.asarray(state, bool)
    r, _ = CriteriaEvaluator(dataset, criteria, registry).evaluate(keep)
    return r


def solution_rank(
    dataset: Dataset,
    keep: np.ndarray,
    config: MatchConfig,
    r: float,
) -> SolutionRank:
    """Rank a subset given its already-computed match score."""
    preserved = int(keep.sum())
    counts = np.bincount(dataset.group_codes[keep], minlength=dataset.n_groups)
    if config.balance_mode == "proportions":
        if np.any(counts == 0):
            raise ValidationError("cannot rank a subset with an empty group")
        observed = counts / counts.sum()
        balance: Balance = kl_divergence(observed, config.target_vector(dataset))
    else:
        sizes = dataset.group_sizes()
        removed = {
            g: int(sizes[i] - counts[i]) for i, g in enumerate(dataset.group_labels)
        }
        balance = tuple(removed[g] for g in config.precedence)  # type: ignore[union-attr]
    return SolutionRank(preserved, balance, r)
