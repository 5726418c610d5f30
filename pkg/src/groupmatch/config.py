"""Strict JSON run-configuration parsing.

Unknown keys are rejected at every level so a typo cannot silently change a
threshold or a lookahead.  Scalar fields may be overridden by CLI flags
after parsing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .criteria import CriteriaSet, CriterionSpec, MatchConfig
from .dataset import ColumnSchema
from .errors import ConfigError, GroupMatchError
from .harness import AlgorithmSpec
from .synthgen import SyntheticSpec

__all__ = ["RunConfig", "load_run_config", "load_synthetic_spec", "load_grid_config"]

_SEARCH_KEYS = {
    "iterations",
    "lookahead",
    "batch_size",
    "batch_fraction",
    "reversion_threshold",
    "random_schedule",
    "schedule_jitter",
    "ensure_feasible_draws",
    "pool_cap",
    "max_solutions",
    "eval_budget",
    "threads",
    "time_limit",
}

_ALGORITHM_NAMES = ("random", "greedy", "h3", "h4", "exhaustive")
_ALGORITHM_PARAM_KEYS = _SEARCH_KEYS | {"max_removed", "seed"}


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return mapping[key]


def _reject_unknown(mapping: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")


@dataclass(frozen=True)
class RunConfig:
    dataset_path: Path
    schema: ColumnSchema
    delimiter: str
    match_config: MatchConfig
    algorithms: tuple[AlgorithmSpec, ...]
    output_dir: Path | None


def _parse_criteria(raw, context: str) -> CriteriaSet:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{context}: 'criteria' must be a nonempty list")
    specs = []
    for i, item in enumerate(raw):
        ctx = f"{context}: criteria[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{ctx}: expected an object")
        _reject_unknown(item, {"test", "covariate", "groups", "alpha"}, ctx)
        specs.append(
            CriterionSpec(
                test_name=str(_require(item, "test", ctx)),
                covariate=str(_require(item, "covariate", ctx)),
                group_subset=tuple(str(g) for g in _require(item, "groups", ctx)),
                alpha=float(_require(item, "alpha", ctx)),
            )
        )
    return CriteriaSet(tuple(specs))


def _parse_algorithms(raw, context: str) -> tuple[AlgorithmSpec, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{context}: 'algorithms' must be a nonempty list")
    out = []
    for i, item in enumerate(raw):
        ctx = f"{context}: algorithms[{i}]"
        if isinstance(item, str):
            item = {"name": item}
        if not isinstance(item, dict):
            raise ConfigError(f"{ctx}: expected an object or a name string")
        name = str(_require(item, "name", ctx))
        if name not in _ALGORITHM_NAMES:
            raise ConfigError(
                f"{ctx}: unknown algorithm {name!r}; choose from {_ALGORITHM_NAMES}"
            )
        label = item.get("label")
        params = {
            k: v for k, v in item.items() if k not in ("name", "label")
        }
        _reject_unknown(
            {k: None for k in params}, _ALGORITHM_PARAM_KEYS, ctx
        )
        out.append(AlgorithmSpec(name=name, params=params, label=label))
    return tuple(out)


def load_run_config(path: str | Path) -> RunConfig:
    """Parse a match run configuration; raises ConfigError on any problem."""
    path = Path(path)
    context = str(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{context}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{context}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{context}: top level must be an object")
    _reject_unknown(
        raw,
        {
            "dataset",
            "criteria",
            "balance",
            "locked_groups",
            "max_removed_total",
            "max_removed_per_group",
            "min_group_size",
            "seed",
            "algorithms",
            "search",
            "output_dir",
        },
        context,
    )

    ds = _require(raw, "dataset", context)
    ctx = f"{context}: dataset"
    if not isinstance(ds, dict):
        raise ConfigError(f"{ctx}: expected an object")
    _reject_unknown(
        ds, {"path", "id_column", "group_column", "covariate_columns", "delimiter"}, ctx
    )
    try:
        schema = ColumnSchema(
            id_column=str(_require(ds, "id_column", ctx)),
            group_column=str(_require(ds, "group_column", ctx)),
            covariate_columns=tuple(
                str(c) for c in _require(ds, "covariate_columns", ctx)
            ),
        )
    except GroupMatchError as exc:
        raise ConfigError(f"{ctx}: {exc}") from None

    criteria = _parse_criteria(_require(raw, "criteria", context), context)

    balance_mode = "proportions"
    target = None
    precedence = None
    if "balance" in raw:
        bal = raw["balance"]
        ctx = f"{context}: balance"
        if not isinstance(bal, dict):
            raise ConfigError(f"{ctx}: expected an object")
        _reject_unknown(bal, {"mode", "target", "precedence"}, ctx)
        balance_mode = str(bal.get("mode", "proportions"))
        if bal.get("target") is not None:
            target = {str(k): float(v) for k, v in bal["target"].items()}
        if bal.get("precedence") is not None:
            precedence = tuple(str(g) for g in bal["precedence"])

    search_kwargs: dict = {}
    if "search" in raw:
        sr = raw["search"]
        ctx = f"{context}: search"
        if not isinstance(sr, dict):
            raise ConfigError(f"{ctx}: expected an object")
        _reject_unknown(sr, _SEARCH_KEYS, ctx)
        search_kwargs = dict(sr)

    try:
        match_config = MatchConfig(
            criteria=criteria,
            balance_mode=balance_mode,
            target_proportions=target,
            precedence=precedence,
            locked_groups=frozenset(
                str(g) for g in raw.get("locked_groups", [])
            ),
            max_removed_total=raw.get("max_removed_total"),
            max_removed_per_group={
                str(k): int(v)
                for k, v in (raw.get("max_removed_per_group") or {}).items()
            },
            min_group_size=int(raw.get("min_group_size", 2)),
            seed=int(raw.get("seed", 0)),
            **search_kwargs,
        )
    except GroupMatchError as exc:
        raise ConfigError(f"{context}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{context}: bad search settings: {exc}") from None

    algorithms = _parse_algorithms(_require(raw, "algorithms", context), context)
    output_dir = Path(raw["output_dir"]) if raw.get("output_dir") else None
    return RunConfig(
        dataset_path=Path(str(_require(ds, "path", f"{context}: dataset"))),
        schema=schema,
        delimiter=str(ds.get("delimiter", ",")),
        match_config=match_config,
        algorithms=algorithms,
        output_dir=output_dir,
    )


_SPEC_KEYS = {
    "n_items",
    "n_intruders",
    "n_covariates",
    "n_shifted_covariates",
    "group_split",
    "mean_range",
    "variance_factor_range",
    "shift_range",
    "shift_scale",
    "pd_eigenvalue_range",
    "basic_p_range",
    "full_p_max",
    "max_attempts",
    "seed",
}


def _spec_from_dict(raw: dict, context: str) -> SyntheticSpec:
    _reject_unknown(raw, _SPEC_KEYS, context)
    kwargs = dict(raw)
    for key in ("group_split", "mean_range", "variance_factor_range",
                "shift_range", "pd_eigenvalue_range", "basic_p_range"):
        if kwargs.get(key) is not None:
            kwargs[key] = tuple(kwargs[key])
    try:
        return SyntheticSpec(**kwargs)
    except GroupMatchError as exc:
        raise ConfigError(f"{context}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from None


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _spec_from_dict(raw, str(path))


@dataclass(frozen=True)
class GridConfig:
    specs: tuple[SyntheticSpec, ...]
    algorithms: tuple[AlgorithmSpec, ...]
    replications: int
    master_seed: int
    alpha: float
    tests: tuple[str, ...]
    workers: int
    time_limit: float | None
    output_dir: Path | None


def load_grid_config(path: str | Path) -> GridConfig:
    path = Path(path)
    context = str(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{context}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{context}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{context}: top level must be an object")
    _reject_unknown(
        raw,
        {
            "specs",
            "algorithms",
            "replications",
            "master_seed",
            "alpha",
            "tests",
            "workers",
            "time_limit",
            "output_dir",
        },
        context,
    )
    raw_specs = _require(raw, "specs", context)
    if not isinstance(raw_specs, list) or not raw_specs:
        raise ConfigError(f"{context}: 'specs' must be a nonempty list")
    specs = tuple(
        _spec_from_dict(s, f"{context}: specs[{i}]") for i, s in enumerate(raw_specs)
    )
    return GridConfig(
        specs=specs,
        algorithms=_parse_algorithms(_require(raw, "algorithms", context), context),
        replications=int(raw.get("replications", 1)),
        master_seed=int(raw.get("master_seed", 0)),
        alpha=float(raw.get("alpha", 0.2)),
        tests=tuple(raw.get("tests", ("welch_t", "anderson_darling"))),
        workers=int(raw.get("workers", 1)),
        time_limit=raw.get("time_limit"),
        output_dir=Path(raw["output_dir"]) if raw.get("output_dir") else None,
    )
