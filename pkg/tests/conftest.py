"""Shared builders for test datasets.

The fixture datasets here are frozen: the acceptance suite depends on the
exact values, so builders take explicit seeds and the chosen defaults must
not change casually.
"""

from __future__ import annotations

import numpy as np
import pytest

from groupmatch.criteria import CriteriaSet, CriterionSpec, MatchConfig
from groupmatch.dataset import Dataset

# Clinical-style four-group fixture: same group sizes and criteria structure
# as a 113-subject developmental-disorders corpus (TD/ALN/ALI/SLI matched
# pairwise on age, performance/verbal IQ, and a severity score).
CLINICAL_SIZES = {"TD": 43, "ALN": 25, "ALI": 26, "SLI": 19}
CLINICAL_PROFILE = {
    #        age           PIQ          VIQ           severity
    "TD":  ((10.0, 2.2), (105.0, 12.0), (104.0, 13.0), (2.0, 1.5)),
    "ALN": ((10.2, 2.4), (104.0, 13.0), (101.0, 14.0), (12.3, 3.5)),
    "ALI": ((10.6, 2.3), (99.0, 14.0), (90.0, 14.0), (14.0, 3.5)),
    "SLI": ((10.4, 2.1), (100.0, 12.0), (93.0, 12.0), (3.0, 1.5)),
}
CLINICAL_SEED = 124


def build_clinical_dataset(seed: int = CLINICAL_SEED) -> Dataset:
    rng = np.random.default_rng(seed)
    ids, groups, rows = [], [], []
    for g in ("TD", "ALN", "ALI", "SLI"):
        n = CLINICAL_SIZES[g]
        cols = [rng.normal(mu, sd, n) for mu, sd in CLINICAL_PROFILE[g]]
        for i in range(n):
            ids.append(f"{g.lower()}{i + 1:03d}")
            groups.append(g)
            rows.append([c[i] for c in cols])
    return Dataset(ids, groups, np.array(rows), ["age", "piq", "viq", "ados"])


def clinical_criteria(alpha: float = 0.2) -> CriteriaSet:
    """All groups matched pairwise on age; IQ pairs (SLI,ALI) and (ALN,TD);
    severity pair (ALI,ALN)."""
    labels = ["ALI", "ALN", "SLI", "TD"]
    specs = []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            specs.append(CriterionSpec("welch_t", "age", (labels[i], labels[j]), alpha))
    for cov in ("piq", "viq"):
        specs.append(CriterionSpec("welch_t", cov, ("SLI", "ALI"), alpha))
        specs.append(CriterionSpec("welch_t", cov, ("ALN", "TD"), alpha))
    specs.append(CriterionSpec("welch_t", "ados", ("ALI", "ALN"), alpha))
    return CriteriaSet(tuple(specs))


def clinical_config(**overrides) -> MatchConfig:
    kwargs = dict(
        criteria=clinical_criteria(),
        balance_mode="precedence",
        precedence=("SLI", "ALI", "ALN", "TD"),
        locked_groups=frozenset({"SLI"}),
    )
    kwargs.update(overrides)
    return MatchConfig(**kwargs)


# Two-outlier trap: group A carries a symmetric extreme pair; removing either
# one alone exposes a mean shift (r drops), removing both restores the match.
# Verified by enumeration in the acceptance suite; parameters are frozen.
TRAP_BASE_SIZE = 8
TRAP_OUTLIER = 3.0
TRAP_DATA_SEED = 109
TRAP_ALPHA_WELCH = 0.7
TRAP_ALPHA_AD = 0.8


def build_trap_dataset() -> Dataset:
    rng = np.random.default_rng(TRAP_DATA_SEED)
    m = TRAP_BASE_SIZE
    base_a = rng.normal(0, 1, m)
    base_a -= base_a.mean()
    base_b = rng.normal(0, 1, m + 2)
    base_b -= base_b.mean()
    values = np.concatenate([base_a, [-TRAP_OUTLIER, TRAP_OUTLIER], base_b])
    ids = (
        [f"a{i}" for i in range(m)]
        + ["out_lo", "out_hi"]
        + [f"b{i}" for i in range(m + 2)]
    )
    groups = ["A"] * (m + 2) + ["B"] * (m + 2)
    return Dataset(ids, groups, values[:, None], ["x"])


def trap_criteria() -> CriteriaSet:
    return CriteriaSet(
        (
            CriterionSpec("welch_t", "x", ("A", "B"), TRAP_ALPHA_WELCH),
            CriterionSpec("anderson_darling", "x", ("A", "B"), TRAP_ALPHA_AD),
        )
    )


def build_two_group_dataset(
    n_per_group: int,
    shift: float,
    seed: int,
    n_shifted: int = 0,
) -> Dataset:
    """Two groups of continuous items; optionally a contaminated block in
    group B shifted by ``shift``."""
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0, n_per_group)
    if n_shifted:
        b = np.concatenate(
            [
                rng.normal(0.0, 1.0, n_per_group - n_shifted),
                rng.normal(shift, 1.0, n_shifted),
            ]
        )
        rng.shuffle(b)
    else:
        b = rng.normal(shift, 1.0, n_per_group)
    ids = [f"i{k}" for k in range(2 * n_per_group)]
    groups = ["A"] * n_per_group + ["B"] * n_per_group
    return Dataset(ids, groups, np.concatenate([a, b])[:, None], ["x"])


def welch_only_criteria(alpha: float = 0.2) -> CriteriaSet:
    return CriteriaSet((CriterionSpec("welch_t", "x", ("A", "B"), alpha),))


@pytest.fixture
def toy_matched_dataset() -> Dataset:
    """Two identical groups; every criterion passes on the full set."""
    values = np.array([1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0])[:, None]
    return Dataset(
        [f"s{i}" for i in range(8)],
        ["A"] * 4 + ["B"] * 4,
        values,
        ["x"],
    )
