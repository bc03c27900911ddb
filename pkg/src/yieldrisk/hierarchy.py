"""Grouping structure and regression design for the nested panel.

Observations nest as parcel -> household -> village, with seasons being
the observed (village, time) pairs. Parcel, household and village
effects are constant over time (one group per physical unit), so the
random structure is additive across the five levels rather than a
strict chain of subscripts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import INPUT_FIELDS, CANONICAL_CROPS, TransformedRecord
from .errors import ConsistencyError, DomainError, SchemaError

LEVELS = ("parcel", "household", "season", "village", "time")

# Parent relations that are genuine functions on groups. A household
# spans many seasons and a village spans many times, so those pairs are
# deliberately absent.
PARENT_PAIRS = (
    ("parcel", "household"),
    ("household", "village"),
    ("parcel", "village"),
    ("season", "village"),
    ("season", "time"),
)


@dataclass(frozen=True)
class HierarchySpec:
    """Which random-effect levels a model includes, and whether the
    input covariates enter the mean.

    ``levels`` must be an ordered subset of ``LEVELS`` (innermost
    first). The default is all five levels with covariates.
    """

    levels: tuple[str, ...] = LEVELS
    include_covariates: bool = True

    def __post_init__(self):
        levels = tuple(self.levels)
        unknown = [lv for lv in levels if lv not in LEVELS]
        if unknown:
            raise DomainError(f"unknown levels {unknown}; valid levels are {LEVELS}")
        order = [LEVELS.index(lv) for lv in levels]
        if order != sorted(order) or len(set(levels)) != len(levels):
            raise DomainError(
                f"levels must be an ordered subset of {LEVELS} (innermost first), got {levels}")
        object.__setattr__(self, "levels", levels)


def _level_labels(records: Sequence[TransformedRecord], level: str):
    if level == "parcel":
        return [r.parcel_id for r in records]
    if level == "household":
        return [r.household_id for r in records]
    if level == "season":
        return [r.season_id for r in records]
    if level == "village":
        return [r.village_id for r in records]
    if level == "time":
        return [r.time_id for r in records]
    raise DomainError(f"unknown level {level!r}")


@dataclass(frozen=True)
class GroupIndex:
    """Integer group codes per level plus the parent maps between them.

    Fields
    ------
    codes : mapping level -> int array of shape (n,)
        Observation-to-group map; group integers index ``labels``.
    labels : mapping level -> tuple
        Group labels in code order (lexicographically sorted, so code 0
        is the lexicographically first label).
    sizes : mapping level -> int
        Number of groups at each level.
    parents : mapping (child_level, parent_level) -> int array
        Group-to-parent-group maps for the pairs in ``PARENT_PAIRS``
        that involve two included levels.
    n_obs : int
    """

    levels: tuple[str, ...]
    codes: Mapping[str, np.ndarray]
    labels: Mapping[str, tuple]
    sizes: Mapping[str, int]
    parents: Mapping[tuple[str, str], np.ndarray]
    n_obs: int

    def counts(self) -> dict[str, int]:
        """Group counts keyed by level, plus ``n_obs``."""
        out = {"n_obs": self.n_obs}
        out.update({lv: self.sizes[lv] for lv in self.levels})
        return out

    def members(self, level: str) -> np.ndarray:
        """Observation counts per group at ``level``."""
        return np.bincount(self.codes[level], minlength=self.sizes[level])


def build_index(records: Sequence[TransformedRecord],
                spec: HierarchySpec | None = None) -> GroupIndex:
    """Partition observations into groups at each included level.

    Nesting is validated on the raw identifiers regardless of which
    levels the spec includes: a parcel under two households (or a
    household under two villages) raises ``ConsistencyError`` naming the
    offending ids. A parcel appearing in several seasons is the normal
    panel structure, not a violation.

    Shuffling the records permutes ``codes`` rows identically but leaves
    the partition (labels, sizes, parents) unchanged, because groups are
    coded in sorted label order.
    """
    spec = spec or HierarchySpec()
    if not records:
        raise DomainError("cannot index an empty record list")
    _validate_nesting(records)
    codes: dict[str, np.ndarray] = {}
    labels: dict[str, tuple] = {}
    sizes: dict[str, int] = {}
    for level in spec.levels:
        labs = _level_labels(records, level)
        uniq = sorted(set(labs))
        lookup = {lab: i for i, lab in enumerate(uniq)}
        codes[level] = np.fromiter((lookup[lab] for lab in labs), dtype=np.int64, count=len(labs))
        labels[level] = tuple(uniq)
        sizes[level] = len(uniq)
    parents: dict[tuple[str, str], np.ndarray] = {}
    for child, parent in PARENT_PAIRS:
        if child in codes and parent in codes:
            parents[(child, parent)] = _parent_map(codes[child], codes[parent], sizes[child])
    return GroupIndex(levels=spec.levels, codes=codes, labels=labels,
                      sizes=sizes, parents=parents, n_obs=len(records))


def _validate_nesting(records: Sequence[TransformedRecord]) -> None:
    parcel_hh: dict[str, str] = {}
    hh_village: dict[str, str] = {}
    for r in records:
        prev = parcel_hh.setdefault(r.parcel_id, r.household_id)
        if prev != r.household_id:
            raise ConsistencyError(
                f"parcel {r.parcel_id!r} appears under households {prev!r} and {r.household_id!r}")
        prev_v = hh_village.setdefault(r.household_id, r.village_id)
        if prev_v != r.village_id:
            raise ConsistencyError(
                f"household {r.household_id!r} appears under villages {prev_v!r} and {r.village_id!r}")


def _parent_map(child_codes: np.ndarray, parent_codes: np.ndarray, n_child: int) -> np.ndarray:
    out = np.full(n_child, -1, dtype=np.int64)
    out[child_codes] = parent_codes
    return out


@dataclass(frozen=True)
class DesignMatrix:
    """Crop-blocked fixed-effects design.

    Column order is documented and fixed: crops are sorted with the
    canonical five first (rice, sorghum, wheat, maize, cotton) and any
    other labels alphabetically after them; within each crop block the
    columns are intercept, labor, fertilizer, mechanization, pesticide
    (intercept only when covariates are excluded). Covariate columns are
    zero outside their crop block.
    """

    X: np.ndarray
    columns: tuple[str, ...]
    crops: tuple[str, ...]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def crop_order(present: Sequence[str]) -> tuple[str, ...]:
    """Deterministic crop ordering: canonical five first, others sorted."""
    present = set(present)
    ordered = [c for c in CANONICAL_CROPS if c in present]
    ordered += sorted(present - set(CANONICAL_CROPS))
    return tuple(ordered)


def build_design(records: Sequence[TransformedRecord],
                 spec: HierarchySpec | None = None) -> DesignMatrix:
    """Build the crop-blocked design matrix on the transformed scale.

    With covariates, ``p = 5 * n_crops`` (per-crop intercept and four
    per-crop input slopes); without, ``p = n_crops`` (intercepts only).
    """
    spec = spec or HierarchySpec()
    if not records:
        raise DomainError("cannot build a design from an empty record list")
    crops = crop_order([r.crop for r in records])
    block = {c: i for i, c in enumerate(crops)}
    width = 5 if spec.include_covariates else 1
    p = width * len(crops)
    X = np.zeros((len(records), p))
    for i, r in enumerate(records):
        j = block[r.crop] * width
        X[i, j] = 1.0
        if spec.include_covariates:
            X[i, j + 1:j + 5] = r.inputs()
    columns = []
    for c in crops:
        columns.append(f"{c}:intercept")
        if spec.include_covariates:
            columns.extend(f"{c}:{f}" for f in INPUT_FIELDS)
    return DesignMatrix(X=X, columns=tuple(columns), crops=crops)


def season_dummies(index: GroupIndex) -> tuple[np.ndarray, tuple[str, ...]]:
    """Drop-first season indicator columns for the fixed-effects regression.

    The omitted baseline is the lexicographically first (village_id,
    time_id) pair. Returns the (n, n_seasons - 1) matrix and the labels
    of the retained columns.
    """
    if "season" not in index.codes:
        raise SchemaError("season level missing from index; cannot build season dummies")
    codes = index.codes["season"]
    k = index.sizes["season"]
    D = np.zeros((index.n_obs, k - 1))
    mask = codes > 0
    D[np.nonzero(mask)[0], codes[mask] - 1] = 1.0
    labels = tuple(f"season:{v}|{t}" for v, t in index.labels["season"][1:])
    return D, labels
