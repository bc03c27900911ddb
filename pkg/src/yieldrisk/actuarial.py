"""Monsoon rainfall index-insurance: phase detection, payouts, pricing.

A contract covers three consecutive phases of the monsoon: two sowing
and flowering phases that pay when rainfall is deficient, and a harvest
phase that pays when rainfall is excessive. Payouts depend only on the
phase-total rainfall at a reference gauge, never on the individual
farmer's loss.

Phase I begins on the day accumulated rainfall since the traditional
monsoon start first exceeds 50 mm; if that does not happen within the
first month, the phase begins automatically on the first of the next
month. Phases I and II last 35 days each, phase III 45 days, laid out
consecutively.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .data import RainfallSeries, _first_of_next_month
from .errors import ContractError, CoverageError, DomainError

DEFICIT = "deficit"
EXCESS = "excess"

PHASE_LABELS = ("I", "II", "III")

PHASE_LENGTH_DAYS = {"I": 35, "II": 35, "III": 45}

DEFAULT_DIRECTION = {"I": DEFICIT, "II": DEFICIT, "III": EXCESS}

DEFAULT_SLOPE_RS_PER_MM = 10.0
DEFAULT_MAX_PAYOUT_RS = 1000.0

# Phase I trigger: cumulative rainfall must strictly exceed this.
DETECTION_THRESHOLD_MM = 50.0


@dataclass(frozen=True)
class PhaseTerm:
    """Payout schedule for one phase.

    For a deficit phase the payout is zero at or above the strike, rises
    at ``slope_rs_per_mm`` per mm of shortfall below the strike, and is
    ``max_payout_rs`` at or below the exit. An excess phase mirrors this
    above the strike. The exit boundary itself pays the maximum, which
    also covers the all-dry ``exit = 0`` case without a special rule.

    The linear segment is deliberately not capped: just inside the exit
    it pays ``|strike - exit| * slope``, which commercial schedules
    usually keep below the maximum but sometimes let exceed it, so both
    orderings are representable.
    """

    phase: str
    strike_mm: float
    exit_mm: float
    slope_rs_per_mm: float = DEFAULT_SLOPE_RS_PER_MM
    max_payout_rs: float = DEFAULT_MAX_PAYOUT_RS
    direction: str | None = None

    def __post_init__(self):
        if self.phase not in PHASE_LABELS:
            raise ContractError(f"phase must be one of {PHASE_LABELS}, got {self.phase!r}")
        if self.direction is None:
            object.__setattr__(self, "direction", DEFAULT_DIRECTION[self.phase])
        if self.direction not in (DEFICIT, EXCESS):
            raise ContractError(f"direction must be {DEFICIT!r} or {EXCESS!r}, got {self.direction!r}")
        for name in ("strike_mm", "exit_mm", "slope_rs_per_mm", "max_payout_rs"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ContractError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.strike_mm < 0 or self.exit_mm < 0:
            raise ContractError("strike and exit must be non-negative")
        if self.slope_rs_per_mm <= 0:
            raise ContractError(f"slope must be positive, got {self.slope_rs_per_mm}")
        if self.max_payout_rs <= 0:
            raise ContractError(f"max payout must be positive, got {self.max_payout_rs}")
        if self.direction == DEFICIT and not self.exit_mm < self.strike_mm:
            raise ContractError(
                f"deficit phase needs exit < strike, got exit={self.exit_mm} strike={self.strike_mm}")
        if self.direction == EXCESS and not self.strike_mm < self.exit_mm:
            raise ContractError(
                f"excess phase needs strike < exit, got strike={self.strike_mm} exit={self.exit_mm}")


@dataclass(frozen=True)
class Contract:
    """Three-phase contract with an optional observed market premium."""

    label: str
    phases: tuple[PhaseTerm, PhaseTerm, PhaseTerm]
    commercial_premium_rs: float | None = None

    def __post_init__(self):
        got = tuple(p.phase for p in self.phases)
        if sorted(got) != sorted(PHASE_LABELS):
            raise ContractError(f"a contract needs exactly one term per phase {PHASE_LABELS}, got {got}")
        ordered = tuple(sorted(self.phases, key=lambda p: PHASE_LABELS.index(p.phase)))
        object.__setattr__(self, "phases", ordered)
        if self.commercial_premium_rs is not None:
            v = float(self.commercial_premium_rs)
            if not math.isfinite(v) or v < 0:
                raise ContractError(f"commercial premium must be non-negative, got {v!r}")
            object.__setattr__(self, "commercial_premium_rs", v)

    def term(self, phase: str) -> PhaseTerm:
        for p in self.phases:
            if p.phase == phase:
                return p
        raise ContractError(f"no term for phase {phase!r}")


def payout(term: PhaseTerm, rainfall_mm: float) -> float:
    """Rupee payout of one phase given its total rainfall.

    Piecewise linear with a jump at the exit: the linear segment runs
    uncapped from zero at the strike to ``|strike - exit| * slope`` just
    inside the exit, then the payout is the maximum from the exit
    onward. The result is monotone within each segment but the jump at
    the exit may go either way.

    Raises
    ------
    DomainError
        On negative or non-finite rainfall.
    """
    r = float(rainfall_mm)
    if not math.isfinite(r) or r < 0:
        raise DomainError(f"rainfall must be non-negative and finite, got {rainfall_mm!r}")
    k, z, m, cap = term.strike_mm, term.exit_mm, term.slope_rs_per_mm, term.max_payout_rs
    if term.direction == DEFICIT:
        if r > k:
            return 0.0
        if r <= z:
            return cap
        return (k - r) * m
    if r < k:
        return 0.0
    if r >= z:
        return cap
    return (r - k) * m


@dataclass(frozen=True)
class PhaseWindows:
    """Detected phase date windows for one village-year (ends inclusive)."""

    village_id: str
    year: int
    region: str
    p1_start: dt.date
    p1_end: dt.date
    p2_start: dt.date
    p2_end: dt.date
    p3_start: dt.date
    p3_end: dt.date

    def window(self, phase: str) -> tuple[dt.date, dt.date]:
        if phase == "I":
            return self.p1_start, self.p1_end
        if phase == "II":
            return self.p2_start, self.p2_end
        if phase == "III":
            return self.p3_start, self.p3_end
        raise DomainError(f"unknown phase {phase!r}")


def detect_phases(series: RainfallSeries) -> PhaseWindows:
    """Locate the three phase windows for one village-year.

    Accumulation starts at the region's traditional monsoon start
    (June 1 east/central, July 1 west); phase I starts the first day the
    running total strictly exceeds 50 mm, or on the first of the next
    month if the first month never exceeds it. Phases II and III follow
    consecutively (35/35/45 days).

    Raises
    ------
    CoverageError
        If the series does not cover the monsoon start, or ends before
        the phase III end; ``missing_dates`` lists the absent days.
    """
    start0 = series.monsoon_start()
    if series.first_date > start0:
        missing = _date_range(start0, series.first_date - dt.timedelta(days=1))
        raise CoverageError(
            f"{series.village_id}/{series.year}: series begins {series.first_date}, "
            f"after monsoon start {start0}; missing {_fmt_dates(missing)}",
            missing_dates=tuple(missing))
    rain = series.as_dict()
    fallback = _first_of_next_month(start0)
    cum = 0.0
    day = start0
    start = fallback
    while day < fallback:
        cum += rain.get(day, 0.0)
        if cum > DETECTION_THRESHOLD_MM:
            start = day
            break
        day += dt.timedelta(days=1)
    p1_end = start + dt.timedelta(days=34)
    p2_start = p1_end + dt.timedelta(days=1)
    p2_end = p2_start + dt.timedelta(days=34)
    p3_start = p2_end + dt.timedelta(days=1)
    p3_end = p3_start + dt.timedelta(days=44)
    if series.last_date < p3_end:
        missing = _date_range(series.last_date + dt.timedelta(days=1), p3_end)
        raise CoverageError(
            f"{series.village_id}/{series.year}: series ends {series.last_date}, before "
            f"phase III end {p3_end}; missing {_fmt_dates(missing)}",
            missing_dates=tuple(missing))
    return PhaseWindows(
        village_id=series.village_id, year=series.year, region=series.region,
        p1_start=start, p1_end=p1_end, p2_start=p2_start, p2_end=p2_end,
        p3_start=p3_start, p3_end=p3_end)


def _date_range(lo: dt.date, hi: dt.date) -> list[dt.date]:
    days = (hi - lo).days
    return [lo + dt.timedelta(days=i) for i in range(days + 1)] if days >= 0 else []


def _fmt_dates(days: Sequence[dt.date], limit: int = 8) -> str:
    shown = ", ".join(str(d) for d in days[:limit])
    if len(days) > limit:
        shown += f", ... ({len(days)} days total)"
    return shown


def phase_total(series: RainfallSeries, start: dt.date, end: dt.date) -> float:
    """Total recorded rainfall over an inclusive date window.

    Missing days contribute nothing; the loader has already attached gap
    warnings to the series, and :func:`missing_days` reports the exact
    dates for a window.
    """
    if end < start:
        raise DomainError(f"window end {end} precedes start {start}")
    return float(sum(mm for day, mm in series.observations if start <= day <= end))


def missing_days(series: RainfallSeries, start: dt.date, end: dt.date) -> tuple[dt.date, ...]:
    """Days in the inclusive window with no recorded observation."""
    have = {day for day, _ in series.observations}
    return tuple(d for d in _date_range(start, end) if d not in have)


@dataclass(frozen=True)
class CellResult:
    """Payout evaluation of one village-year-phase cell."""

    village_id: str
    year: int
    phase: str
    window_start: dt.date
    window_end: dt.date
    total_mm: float
    payout_rs: float
    n_missing_days: int


@dataclass(frozen=True)
class PricingResult:
    """Actuarial summary of a contract over a rainfall panel.

    The fair premium is the sum over phases of the mean per-cell payout;
    the payout probability is the mean of the 0/1 payout indicator over
    all village-year-phase cells; years-until-payout converts that
    per-cell probability to a per-year waiting time under three cells
    per year, and is infinite when no cell pays.
    """

    contract: Contract
    fair_premium_rs: float
    phase_mean_payout: Mapping[str, float]
    phase_payout_frequency: Mapping[str, float]
    payout_probability: float
    years_until_payout: float
    n_cells: int
    n_series_used: int
    commercial_premium_rs: float | None
    loading_factor: float | None
    cells: tuple[CellResult, ...]
    excluded: tuple[tuple[str, int, str], ...]

    @property
    def contract_label(self) -> str:
        return self.contract.label


def price(contract: Contract, panel: Sequence[RainfallSeries]) -> PricingResult:
    """Price a contract against a panel of village-year rainfall series.

    Series where phase detection fails (insufficient coverage) are
    excluded from every average and reported in ``excluded``; ragged
    panels (different year counts per village) are accepted as-is.

    Raises
    ------
    DomainError
        If the panel is empty or no series survives phase detection.
    """
    if not panel:
        raise DomainError("cannot price against an empty rainfall panel")
    ordered = sorted(panel, key=lambda s: (s.village_id, s.year))
    cells: list[CellResult] = []
    excluded: list[tuple[str, int, str]] = []
    n_used = 0
    for series in ordered:
        try:
            windows = detect_phases(series)
        except CoverageError as exc:
            excluded.append((series.village_id, series.year, str(exc)))
            continue
        n_used += 1
        for term in contract.phases:
            lo, hi = windows.window(term.phase)
            total = phase_total(series, lo, hi)
            cells.append(CellResult(
                village_id=series.village_id, year=series.year, phase=term.phase,
                window_start=lo, window_end=hi, total_mm=total,
                payout_rs=payout(term, total),
                n_missing_days=len(missing_days(series, lo, hi))))
    if n_used == 0:
        reasons = "; ".join(r for _, _, r in excluded[:5])
        raise DomainError(f"no usable rainfall series: {reasons}")
    phase_mean: dict[str, float] = {}
    phase_freq: dict[str, float] = {}
    for label in PHASE_LABELS:
        pays = [c.payout_rs for c in cells if c.phase == label]
        phase_mean[label] = sum(pays) / len(pays)
        phase_freq[label] = sum(1 for p in pays if p > 0) / len(pays)
    fair = sum(phase_mean.values())
    prob = sum(1 for c in cells if c.payout_rs > 0) / len(cells)
    years = years_until_payout(prob)
    # undefined (not an error) when nothing pays: division by zero fair
    lf = None
    if contract.commercial_premium_rs is not None and fair > 0:
        lf = loading_factor(contract.commercial_premium_rs, fair)
    return PricingResult(
        contract=contract,
        fair_premium_rs=fair,
        phase_mean_payout=phase_mean,
        phase_payout_frequency=phase_freq,
        payout_probability=prob,
        years_until_payout=years,
        n_cells=len(cells),
        n_series_used=n_used,
        commercial_premium_rs=contract.commercial_premium_rs,
        loading_factor=lf,
        cells=tuple(cells),
        excluded=tuple(excluded))


def years_until_payout(probability: float) -> float:
    """Expected years between payouts given a per-cell payout probability.

    Payout events are treated as independent arrivals over three phase
    cells per year, so the wait is ``(1 / probability) / 3`` years;
    a zero probability gives ``inf``.
    """
    p = float(probability)
    if not math.isfinite(p) or not 0.0 <= p <= 1.0:
        raise DomainError(f"probability must be in [0, 1], got {probability!r}")
    return math.inf if p == 0.0 else (1.0 / p) / 3.0


def loading_factor(paid_premium_rs: float, fair_premium_rs: float) -> float:
    """Ratio of the premium actually charged to the actuarially fair one."""
    paid = float(paid_premium_rs)
    fair = float(fair_premium_rs)
    if not math.isfinite(paid) or paid < 0:
        raise DomainError(f"paid premium must be non-negative and finite, got {paid!r}")
    if not math.isfinite(fair) or fair <= 0:
        raise DomainError(f"fair premium must be positive and finite, got {fair!r}")
    return paid / fair


def standard_contracts() -> dict[str, Contract]:
    """The six published payout schedules (slope 10, maximum 1000).

    ``high_payout``, ``medium_payout`` and ``low_payout`` are the main
    designs; the ``alt_*`` entries are the less generous variants used
    for robustness comparisons. Only the high-payout design has an
    observed market premium attached.
    """

    def c(label, p1, p2, p3, premium=None):
        return Contract(
            label=label,
            phases=(PhaseTerm("I", *p1), PhaseTerm("II", *p2), PhaseTerm("III", *p3)),
            commercial_premium_rs=premium)

    return {
        "high_payout": c("high_payout", (70, 10), (80, 10), (375, 450), premium=280.0),
        "medium_payout": c("medium_payout", (78, 15), (72, 12), (499, 580)),
        "low_payout": c("low_payout", (50, 5), (60, 5), (560, 670)),
        "alt_high": c("alt_high", (45, 5), (55, 5), (500, 570)),
        "alt_medium": c("alt_medium", (25, 0), (15, 0), (500, 580)),
        "alt_low": c("alt_low", (30, 5), (30, 5), (500, 575)),
    }


def contract_to_dict(contract: Contract) -> dict:
    out = {
        "label": contract.label,
        "phases": [
            {
                "phase": p.phase,
                "strike": p.strike_mm,
                "exit": p.exit_mm,
                "slope": p.slope_rs_per_mm,
                "max_payout": p.max_payout_rs,
                "direction": p.direction,
            }
            for p in contract.phases
        ],
    }
    if contract.commercial_premium_rs is not None:
        out["commercial_premium_rs"] = contract.commercial_premium_rs
    return out


def save_contract(path, contract: Contract) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(contract_to_dict(contract), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_contract(path) -> Contract:
    """Read a contract from JSON or TOML.

    The file carries ``label``, optional ``commercial_premium_rs``, and
    a ``phases`` list of ``{phase, strike, exit, slope, max_payout,
    direction}`` blocks (slope, max_payout and direction optional).
    """
    try:
        text = open(path, "rb").read()
    except OSError as exc:
        raise ContractError(f"{path}: cannot read file: {exc}") from exc
    name = str(path)
    if name.endswith(".toml"):
        try:
            import tomllib  # py >= 3.11
        except ImportError:
            import tomli as tomllib
        try:
            raw = tomllib.loads(text.decode("utf-8"))
        except Exception as exc:
            raise ContractError(f"{path}: not valid TOML: {exc}")
    else:
        try:
            raw = json.loads(text.decode("utf-8"))
        except Exception as exc:
            raise ContractError(f"{path}: not valid JSON: {exc}")
    if not isinstance(raw, dict) or "phases" not in raw:
        raise ContractError(f"{path}: expected an object with a 'phases' list")
    phases = []
    for block in raw["phases"]:
        if "phase" not in block or "strike" not in block or "exit" not in block:
            raise ContractError(f"{path}: each phase block needs 'phase', 'strike', 'exit'; got {block}")
        phases.append(PhaseTerm(
            phase=str(block["phase"]),
            strike_mm=block["strike"],
            exit_mm=block["exit"],
            slope_rs_per_mm=block.get("slope", DEFAULT_SLOPE_RS_PER_MM),
            max_payout_rs=block.get("max_payout", DEFAULT_MAX_PAYOUT_RS),
            direction=block.get("direction"),
        ))
    if len(phases) != 3:
        raise ContractError(f"{path}: expected exactly 3 phase blocks, got {len(phases)}")
    return Contract(
        label=str(raw.get("label", "contract")),
        phases=tuple(phases),
        commercial_premium_rs=raw.get("commercial_premium_rs"))


def with_premium(contract: Contract, premium_rs: float) -> Contract:
    """Copy of the contract with the market premium replaced."""
    return replace(contract, commercial_premium_rs=premium_rs)


def render_pricing_text(result: PricingResult) -> str:
    """Human-readable pricing block; currency shown to one decimal."""
    lines = [f"Contract: {result.contract_label}", ""]
    lines.append(f"{'phase':<7}{'mean payout (Rs)':>18}{'payout freq':>13}")
    for label in PHASE_LABELS:
        lines.append(f"{label:<7}{result.phase_mean_payout[label]:>18.1f}"
                     f"{result.phase_payout_frequency[label]:>13.3f}")
    lines.append("")
    lines.append(f"fair premium (Rs):     {result.fair_premium_rs:.1f}")
    lines.append(f"payout probability:    {result.payout_probability:.4f}")
    if result.loading_factor is not None:
        lines.append(f"commercial premium:    {result.commercial_premium_rs:.1f}")
        lines.append(f"loading factor:        {result.loading_factor:.2f}")
    if math.isinf(result.years_until_payout):
        lines.append("years until payout:    inf (no cell pays out)")
    else:
        lines.append(f"years until payout:    {result.years_until_payout:.2f}")
    lines.append(f"cells used:            {result.n_cells} "
                 f"({result.n_series_used} village-years)")
    for village, year, reason in result.excluded:
        lines.append(f"excluded {village}/{year}: {reason}")
    return "\n".join(lines) + "\n"


def pricing_csv_rows(result: PricingResult) -> list[list]:
    """Machine-readable pricing summary (phase rows plus a summary row)."""
    rows = [["record", "contract", "phase", "strike_mm", "exit_mm", "direction",
             "mean_payout_rs", "payout_frequency", "fair_premium_rs",
             "payout_probability", "loading_factor", "years_until_payout", "n_cells"]]
    lbl = result.contract_label
    for label in PHASE_LABELS:
        term = result.contract.term(label)
        rows.append(["phase", lbl, label, repr(term.strike_mm), repr(term.exit_mm),
                     term.direction,
                     repr(result.phase_mean_payout[label]),
                     repr(result.phase_payout_frequency[label]),
                     "", "", "", "", ""])
    years = "inf" if math.isinf(result.years_until_payout) else repr(result.years_until_payout)
    lf = "" if result.loading_factor is None else repr(result.loading_factor)
    rows.append(["summary", lbl, "", "", "", "", "", "",
                 repr(result.fair_premium_rs), repr(result.payout_probability),
                 lf, years, result.n_cells])
    return rows


def cell_ledger_rows(result: PricingResult) -> list[list]:
    """Per-cell payout ledger for audit."""
    rows = [["contract", "village_id", "year", "phase", "window_start", "window_end",
             "total_mm", "payout_rs", "paid", "n_missing_days"]]
    for c in result.cells:
        rows.append([result.contract_label, c.village_id, c.year, c.phase,
                     c.window_start.isoformat(), c.window_end.isoformat(),
                     repr(c.total_mm), repr(c.payout_rs), int(c.payout_rs > 0),
                     c.n_missing_days])
    return rows
