"""Panel and rainfall data model: record types, validation, CSV ingestion.

Yield observations arrive as one CSV row per parcel-season with raw
(untransformed) quantities; rainfall arrives as one row per village-day.
Both loaders validate eagerly and raise with 1-based line numbers so a
bad file fails loudly rather than poisoning a fit downstream.

All model quantities are put on the inverse-hyperbolic-sine scale by
:func:`transform_panel`; the transform is exactly ``asinh`` and keeps
zero-valued inputs (unused fertilizer, unirrigated plots) in the sample
without the arbitrary offsets a log transform would need.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConsistencyError, DomainError, RowError, SchemaError

CANONICAL_CROPS = ("rice", "sorghum", "wheat", "maize", "cotton")

INPUT_FIELDS = ("labor", "fertilizer", "mechanization", "pesticide")

PANEL_COLUMNS = (
    "parcel_id",
    "household_id",
    "village_id",
    "time_id",
    "crop",
    "yield",
    "labor",
    "fertilizer",
    "mechanization",
    "pesticide",
)

RAINFALL_COLUMNS = ("village_id", "date", "rain_mm", "region")

REGIONS = ("eastern_central", "western")

# Month in which the monsoon traditionally starts, per region.
MONSOON_START_MONTH = {"eastern_central": 6, "western": 7}


def ihs(value):
    """Inverse hyperbolic sine, ``ln(v + sqrt(v^2 + 1))``.

    Behaves like ``log`` for large ``v`` but is defined (and zero) at
    ``v = 0``, so zero-valued quantities stay in the sample.

    Parameters
    ----------
    value : float or array_like
        Non-negative, finite quantity on the raw scale.

    Returns
    -------
    float or ndarray
        The transformed value; a scalar input yields a scalar.

    Raises
    ------
    DomainError
        If any input is negative or non-finite.

    Examples
    --------
    >>> ihs(0.0)
    0.0
    >>> round(ihs(1.0), 9)
    0.881373587
    """
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("ihs requires finite input")
    if np.any(arr < 0):
        raise DomainError("ihs requires non-negative input")
    out = np.arcsinh(arr)
    if np.isscalar(value) or arr.ndim == 0:
        return float(out)
    return out


def ihs_inverse(value):
    """Inverse of :func:`ihs`, i.e. ``sinh``."""
    arr = np.asarray(value, dtype=float)
    out = np.sinh(arr)
    if np.isscalar(value) or arr.ndim == 0:
        return float(out)
    return out


def _check_quantity(name: str, value: float) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise DomainError(f"{name} must be finite, got {value!r}")
    if v < 0:
        raise DomainError(f"{name} must be non-negative, got {value!r}")
    return v


def _check_id(name: str, value: str) -> str:
    s = str(value).strip()
    if not s:
        raise DomainError(f"{name} must be a non-empty identifier")
    return s


@dataclass(frozen=True)
class YieldRecord:
    """One parcel-season observation on the raw scale.

    The season is not a stored column; it is the derived pair
    ``(village_id, time_id)`` exposed by :attr:`season_id`.
    """

    parcel_id: str
    household_id: str
    village_id: str
    time_id: str
    crop: str
    yield_raw: float
    labor: float
    fertilizer: float
    mechanization: float
    pesticide: float

    def __post_init__(self):
        object.__setattr__(self, "parcel_id", _check_id("parcel_id", self.parcel_id))
        object.__setattr__(self, "household_id", _check_id("household_id", self.household_id))
        object.__setattr__(self, "village_id", _check_id("village_id", self.village_id))
        object.__setattr__(self, "time_id", _check_id("time_id", self.time_id))
        crop = str(self.crop).strip().lower()
        if not crop:
            raise DomainError("crop must be a non-empty label")
        object.__setattr__(self, "crop", crop)
        object.__setattr__(self, "yield_raw", _check_quantity("yield", self.yield_raw))
        for name in INPUT_FIELDS:
            object.__setattr__(self, name, _check_quantity(name, getattr(self, name)))

    @property
    def season_id(self) -> tuple[str, str]:
        """Derived season identifier: the ``(village_id, time_id)`` pair."""
        return (self.village_id, self.time_id)


@dataclass(frozen=True)
class TransformedRecord:
    """A :class:`YieldRecord` carried onto the asinh scale."""

    parcel_id: str
    household_id: str
    village_id: str
    time_id: str
    crop: str
    y: float
    labor: float
    fertilizer: float
    mechanization: float
    pesticide: float

    @property
    def season_id(self) -> tuple[str, str]:
        return (self.village_id, self.time_id)

    def inputs(self) -> tuple[float, float, float, float]:
        """Transformed input quantities in canonical order."""
        return (self.labor, self.fertilizer, self.mechanization, self.pesticide)


def transform_panel(records: Sequence[YieldRecord]) -> list[TransformedRecord]:
    """Apply :func:`ihs` to the yield and the four input quantities.

    Order-preserving and element-wise, so permuting the input permutes
    the output identically.
    """
    out = []
    for r in records:
        out.append(
            TransformedRecord(
                parcel_id=r.parcel_id,
                household_id=r.household_id,
                village_id=r.village_id,
                time_id=r.time_id,
                crop=r.crop,
                y=ihs(r.yield_raw),
                labor=ihs(r.labor),
                fertilizer=ihs(r.fertilizer),
                mechanization=ihs(r.mechanization),
                pesticide=ihs(r.pesticide),
            )
        )
    return out


@dataclass(frozen=True)
class PanelSchema:
    """Ingestion options for :func:`load_yield_panel`.

    ``columns`` remaps canonical column names to the names actually in
    the file, e.g. ``{"yield": "harvest_kg"}``. ``allowed_crops``
    restricts the crop labels accepted; ``None`` accepts anything.
    """

    columns: Mapping[str, str] = field(default_factory=dict)
    allowed_crops: tuple[str, ...] | None = None

    def resolve(self, canonical: str) -> str:
        return self.columns.get(canonical, canonical)


def _open_rows(path, required: Iterable[str]):
    """Yield (line_number, row_dict) after validating the header."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read file: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise SchemaError(f"{path}: empty file, no header row")
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}; header is {list(header)}")
        for row in reader:
            yield reader.line_num, row


def load_yield_panel(path, schema: PanelSchema | None = None) -> list[YieldRecord]:
    """Read a yield panel CSV into validated records.

    Parameters
    ----------
    path : str or Path
        CSV with columns ``parcel_id, household_id, village_id, time_id,
        crop, yield, labor, fertilizer, mechanization, pesticide``
        (remappable through ``schema``). Extra columns are ignored.
    schema : PanelSchema, optional
        Column remapping and crop whitelist.

    Returns
    -------
    list of YieldRecord

    Raises
    ------
    SchemaError
        If required columns are absent.
    RowError
        If any row fails to parse or violates a value invariant; the
        message and ``lines`` attribute name every offending line.
        Duplicate ``(parcel_id, time_id)`` rows are rejected the same way.
    ConsistencyError
        If a parcel appears under two households, or a household under
        two villages.
    """
    schema = schema or PanelSchema()
    required = [schema.resolve(c) for c in PANEL_COLUMNS]
    records: list[YieldRecord] = []
    problems: list[tuple[int, str]] = []
    seen: dict[tuple[str, str], int] = {}
    dup_lines: list[int] = []
    for line, row in _open_rows(path, required):
        try:
            rec = YieldRecord(
                parcel_id=row[schema.resolve("parcel_id")],
                household_id=row[schema.resolve("household_id")],
                village_id=row[schema.resolve("village_id")],
                time_id=row[schema.resolve("time_id")],
                crop=row[schema.resolve("crop")],
                yield_raw=_parse_float(row[schema.resolve("yield")], "yield"),
                labor=_parse_float(row[schema.resolve("labor")], "labor"),
                fertilizer=_parse_float(row[schema.resolve("fertilizer")], "fertilizer"),
                mechanization=_parse_float(row[schema.resolve("mechanization")], "mechanization"),
                pesticide=_parse_float(row[schema.resolve("pesticide")], "pesticide"),
            )
        except (DomainError, ValueError) as exc:
            problems.append((line, str(exc)))
            continue
        if schema.allowed_crops is not None and rec.crop not in schema.allowed_crops:
            problems.append((line, f"crop {rec.crop!r} not in allowed set {sorted(schema.allowed_crops)}"))
            continue
        key = (rec.parcel_id, rec.time_id)
        if key in seen:
            dup_lines.append(line)
            problems.append((line, f"duplicate (parcel_id, time_id) {key}, first seen at line {seen[key]}"))
            continue
        seen[key] = line
        records.append(rec)
    if problems:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in problems[:20])
        more = "" if len(problems) <= 20 else f" (and {len(problems) - 20} more)"
        raise RowError(f"{path}: {len(problems)} invalid rows: {detail}{more}",
                       lines=tuple(ln for ln, _ in problems))
    _check_nesting(records)
    return records


def _parse_float(text, name: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise DomainError(f"{name} is not a number: {text!r}")


def _check_nesting(records: Sequence[YieldRecord]) -> None:
    """Each parcel lives in exactly one household, each household in one village."""
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


def write_yield_panel(path, records: Sequence[YieldRecord]) -> None:
    """Write records back to the canonical CSV layout (lossless round trip)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_COLUMNS)
        for r in records:
            writer.writerow([
                r.parcel_id, r.household_id, r.village_id, r.time_id, r.crop,
                repr(r.yield_raw), repr(r.labor), repr(r.fertilizer),
                repr(r.mechanization), repr(r.pesticide),
            ])


@dataclass(frozen=True)
class RainfallSeries:
    """Daily rainfall for one village-year.

    ``observations`` is date-sorted; ``gap_warnings`` records runs of
    missing days that fall inside the monsoon window for the region.
    """

    village_id: str
    year: int
    region: str
    observations: tuple[tuple[dt.date, float], ...]
    gap_warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.region not in REGIONS:
            raise DomainError(f"unknown region {self.region!r}; expected one of {REGIONS}")

    @property
    def first_date(self) -> dt.date:
        return self.observations[0][0]

    @property
    def last_date(self) -> dt.date:
        return self.observations[-1][0]

    def as_dict(self) -> dict[dt.date, float]:
        return dict(self.observations)

    def monsoon_start(self) -> dt.date:
        return dt.date(self.year, MONSOON_START_MONTH[self.region], 1)


def monsoon_window(region: str, year: int) -> tuple[dt.date, dt.date]:
    """Date range that matters for phase detection and the three phases.

    Runs from the traditional monsoon start through the latest possible
    phase end: the automatic fallback start (first of the next month)
    plus the 35 + 35 + 45 day phase layout.
    """
    start = dt.date(year, MONSOON_START_MONTH[region], 1)
    fallback = _first_of_next_month(start)
    return start, fallback + dt.timedelta(days=114)


def _first_of_next_month(day: dt.date) -> dt.date:
    if day.month == 12:
        return dt.date(day.year + 1, 1, 1)
    return dt.date(day.year, day.month + 1, 1)


@dataclass(frozen=True)
class RainfallSchema:
    """Column remapping for :func:`load_rainfall`."""

    columns: Mapping[str, str] = field(default_factory=dict)

    def resolve(self, canonical: str) -> str:
        return self.columns.get(canonical, canonical)


def load_rainfall(path, schema: RainfallSchema | None = None) -> list[RainfallSeries]:
    """Read a daily rainfall CSV into one series per (village, year).

    Parameters
    ----------
    path : str or Path
        CSV with columns ``village_id, date, rain_mm, region``; dates are
        ISO-8601. Extra columns are ignored.
    schema : RainfallSchema, optional

    Returns
    -------
    list of RainfallSeries
        Sorted by (village_id, year). Gaps of more than one day inside
        the monsoon window are recorded as warnings on the series, not
        errors.

    Raises
    ------
    SchemaError, RowError, ConsistencyError
        Same contract as :func:`load_yield_panel`; duplicate
        (village_id, date) rows and inconsistent per-village regions are
        rejected.
    """
    schema = schema or RainfallSchema()
    required = [schema.resolve(c) for c in RAINFALL_COLUMNS]
    rows: dict[tuple[str, int], list[tuple[dt.date, float]]] = {}
    region_of: dict[str, str] = {}
    seen: dict[tuple[str, dt.date], int] = {}
    problems: list[tuple[int, str]] = []
    for line, row in _open_rows(path, required):
        try:
            village = _check_id("village_id", row[schema.resolve("village_id")])
            day = dt.date.fromisoformat(str(row[schema.resolve("date")]).strip())
            mm = _parse_float(row[schema.resolve("rain_mm")], "rain_mm")
            if not math.isfinite(mm) or mm < 0:
                raise DomainError(f"rain_mm must be non-negative and finite, got {mm!r}")
            region = str(row[schema.resolve("region")]).strip()
            if region not in REGIONS:
                raise DomainError(f"unknown region {region!r}; expected one of {REGIONS}")
        except (DomainError, ValueError) as exc:
            problems.append((line, str(exc)))
            continue
        prev_region = region_of.setdefault(village, region)
        if prev_region != region:
            raise ConsistencyError(
                f"village {village!r} appears with regions {prev_region!r} and {region!r}")
        key = (village, day)
        if key in seen:
            problems.append((line, f"duplicate (village_id, date) {key}, first seen at line {seen[key]}"))
            continue
        seen[key] = line
        rows.setdefault((village, day.year), []).append((day, mm))
    if problems:
        detail = "; ".join(f"line {ln}: {msg}" for ln, msg in problems[:20])
        more = "" if len(problems) <= 20 else f" (and {len(problems) - 20} more)"
        raise RowError(f"{path}: {len(problems)} invalid rows: {detail}{more}",
                       lines=tuple(ln for ln, _ in problems))
    series = []
    for (village, year) in sorted(rows):
        obs = tuple(sorted(rows[(village, year)]))
        region = region_of[village]
        series.append(RainfallSeries(
            village_id=village, year=year, region=region, observations=obs,
            gap_warnings=tuple(_gap_warnings(obs, region, year)),
        ))
    return series


def _gap_warnings(obs: Sequence[tuple[dt.date, float]], region: str, year: int) -> list[str]:
    lo, hi = monsoon_window(region, year)
    warnings = []
    for (d0, _), (d1, _) in zip(obs, obs[1:]):
        missing = (d1 - d0).days - 1
        if missing <= 0:
            continue
        gap_lo, gap_hi = d0 + dt.timedelta(days=1), d1 - dt.timedelta(days=1)
        if gap_hi < lo or gap_lo > hi:
            continue
        warnings.append(f"gap of {missing} missing days from {gap_lo} to {gap_hi} inside monsoon window")
    return warnings


def write_rainfall(path, series: Sequence[RainfallSeries]) -> None:
    """Write series back to the canonical CSV layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAINFALL_COLUMNS)
        for s in series:
            for day, mm in s.observations:
                writer.writerow([s.village_id, day.isoformat(), repr(mm), s.region])
