"""Synthetic panel and rainfall generators with recorded ground truth.

The panel generator draws group effects level by level, composes the
observation-level mean additively, and emits records on the raw scale
through the sinh inverse so the ingestion and transform path is
exercised end to end. The rainfall generator draws phase-total rainfall
per village-year and lays it out as a daily series engineered so phase
detection recovers a chosen start date and the drawn totals round-trip
through the phase-window sums.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .actuarial import (DEFICIT, PHASE_LABELS, PHASE_LENGTH_DAYS, Contract, price)
from .data import MONSOON_START_MONTH, RainfallSeries, YieldRecord, ihs_inverse
from .decomposition import IDIOSYNCRATIC, VarianceDecomposition, decompose
from .errors import ConvergenceError, DomainError
from .hierarchy import LEVELS

NORMAL = "normal"
LOGNORMAL_SHIFTED = "lognormal_shifted"

_DEFAULT_BETA = {
    "rice": (7.2, 0.8, 0.5, 0.4, 0.3),
    "sorghum": (6.8, 0.8, 0.5, 0.4, 0.3),
    "wheat": (6.5, 0.8, 0.5, 0.4, 0.3),
    "maize": (6.9, 0.8, 0.5, 0.4, 0.3),
    "cotton": (6.3, 0.8, 0.5, 0.4, 0.3),
}

_DEFAULT_VARIANCES = {
    "parcel": 1.1,
    "household": 0.004,
    "season": 0.9,
    "village": 0.68,
    "time": 0.26,
    IDIOSYNCRATIC: 1.6,
}


@dataclass(frozen=True)
class GenerativeConfig:
    """Cardinalities, coefficients and disturbance law for a synthetic panel.

    ``times_per_parcel`` fixes how many time periods each parcel is
    observed in; ``obs_target`` instead picks per-parcel counts so the
    total observation count lands near the target (at least one, at most
    all times). ``family`` maps level names (or "idiosyncratic") to
    ``"normal"`` or ``"lognormal_shifted"``; the latter draws a shifted
    lognormal standardized to the target variance with sample skewness
    matching ``skew``.
    """

    villages: int = 4
    times: int = 3
    households_per_village: int = 5
    parcels_per_household: int = 3
    obs_per_parcel_season: int = 1
    times_per_parcel: int | None = None
    obs_target: int | None = None
    crops: tuple[str, ...] = ("rice", "sorghum", "wheat", "maize", "cotton")
    crop_mix: tuple[float, ...] | None = None
    beta: Mapping[str, tuple[float, ...]] | None = None
    mu: float = 7.0
    variances: Mapping[str, float] = field(default_factory=lambda: dict(_DEFAULT_VARIANCES))
    family: Mapping[str, str] = field(default_factory=dict)
    skew: float = 1.5
    input_location: float = 1.5
    input_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("villages", "times", "households_per_village",
                     "parcels_per_household", "obs_per_parcel_season"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be at least 1")
        if self.times_per_parcel is not None and self.obs_target is not None:
            raise DomainError("give times_per_parcel or obs_target, not both")
        if self.times_per_parcel is not None and not (1 <= self.times_per_parcel <= self.times):
            raise DomainError(f"times_per_parcel must be in [1, {self.times}]")
        for comp, v in self.variances.items():
            if comp not in LEVELS and comp != IDIOSYNCRATIC:
                raise DomainError(f"unknown variance component {comp!r}")
            if not math.isfinite(float(v)) or float(v) < 0:
                raise DomainError(f"variance for {comp!r} must be finite and non-negative")
        for comp, fam in self.family.items():
            if fam not in (NORMAL, LOGNORMAL_SHIFTED):
                raise DomainError(f"unknown family {fam!r} for {comp!r}")
        if self.skew < 0:
            raise DomainError("skew target must be non-negative")

    def resolved_beta(self) -> dict[str, np.ndarray]:
        out = {}
        for crop in self.crops:
            if self.beta is not None and crop in self.beta:
                vec = np.asarray(self.beta[crop], dtype=float)
            elif crop in _DEFAULT_BETA:
                vec = np.asarray(_DEFAULT_BETA[crop], dtype=float)
            else:
                vec = np.array([6.5, 0.5, 0.3, 0.2, 0.1])
            if vec.shape != (5,):
                raise DomainError(f"beta for {crop!r} must have 5 entries (intercept + 4 slopes)")
            out[crop] = vec
        return out


@dataclass(frozen=True)
class PanelTruth:
    """Ground truth recorded alongside a generated panel."""

    mu: float
    beta: Mapping[str, tuple[float, ...]]
    variances: Mapping[str, float]
    realized_variances: Mapping[str, float]
    effects: Mapping[str, Mapping[object, float]]
    decomposition: VarianceDecomposition
    n_obs: int
    clipped_rows: int
    seed: int


def _skew_sigma(skew: float) -> float:
    """Lognormal shape parameter whose skewness equals ``skew``."""
    if skew <= 0:
        return 0.0
    f = lambda w: (w + 2.0) * math.sqrt(w - 1.0) - skew
    w = brentq(f, 1.0 + 1e-12, 1e6)
    return math.sqrt(math.log(w))


def _draw_effects(rng: np.random.Generator, size: int, variance: float,
                  family: str, skew: float) -> np.ndarray:
    """Zero-mean disturbances with the requested variance and family."""
    if variance == 0.0:
        return np.zeros(size)
    sd = math.sqrt(variance)
    if family == NORMAL or skew == 0.0:
        return sd * rng.standard_normal(size)
    s = _skew_sigma(skew)
    w = math.exp(s * s)
    raw = np.exp(s * rng.standard_normal(size))
    return (raw - math.sqrt(w)) * math.sqrt(variance / ((w - 1.0) * w))


def generate_panel(cfg: GenerativeConfig) -> tuple[list[YieldRecord], PanelTruth]:
    """Draw a synthetic yield panel from the nested generative model.

    Returns the records (raw scale) and a :class:`PanelTruth` with the
    drawn effects, target and realized variances, and the target
    decomposition. Deterministic in ``cfg`` including its seed.

    Transformed responses that land below zero (possible since the
    composed mean is finite) are clipped to zero so the raw yield is
    valid; the truth records how many rows were touched.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n_villages = cfg.villages
    n_times = cfg.times
    n_households = n_villages * cfg.households_per_village
    n_parcels = n_households * cfg.parcels_per_household
    village_ids = [f"v{i:03d}" for i in range(n_villages)]
    time_ids = [f"t{i:03d}" for i in range(n_times)]
    household_ids = [f"h{i:05d}" for i in range(n_households)]
    parcel_ids = [f"p{i:06d}" for i in range(n_parcels)]
    village_of_household = np.repeat(np.arange(n_villages), cfg.households_per_village)
    household_of_parcel = np.repeat(np.arange(n_households), cfg.parcels_per_household)

    # How many time periods each parcel is observed in.
    if cfg.times_per_parcel is not None:
        k_per_parcel = np.full(n_parcels, cfg.times_per_parcel)
    elif cfg.obs_target is not None:
        per = cfg.obs_target / (n_parcels * cfg.obs_per_parcel_season)
        base = int(per)
        frac = per - base
        k_per_parcel = base + (rng.random(n_parcels) < frac)
        k_per_parcel = np.clip(k_per_parcel, 1, n_times).astype(int)
    else:
        k_per_parcel = np.full(n_parcels, n_times)

    variances = {comp: float(cfg.variances.get(comp, 0.0)) for comp in LEVELS + (IDIOSYNCRATIC,)}
    fam = {comp: cfg.family.get(comp, NORMAL) for comp in LEVELS + (IDIOSYNCRATIC,)}
    nu_parcel = _draw_effects(rng, n_parcels, variances["parcel"], fam["parcel"], cfg.skew)
    nu_household = _draw_effects(rng, n_households, variances["household"], fam["household"], cfg.skew)
    nu_season = _draw_effects(rng, n_villages * n_times, variances["season"],
                              fam["season"], cfg.skew).reshape(n_villages, n_times)
    nu_village = _draw_effects(rng, n_villages, variances["village"], fam["village"], cfg.skew)
    nu_time = _draw_effects(rng, n_times, variances["time"], fam["time"], cfg.skew)

    beta = cfg.resolved_beta()
    mix = None
    if cfg.crop_mix is not None:
        mix = np.asarray(cfg.crop_mix, dtype=float)
        if mix.shape != (len(cfg.crops),) or np.any(mix < 0) or mix.sum() <= 0:
            raise DomainError("crop_mix must be non-negative weights, one per crop")
        mix = mix / mix.sum()

    obs_parcel = []
    obs_time = []
    for i in range(n_parcels):
        times = np.sort(rng.choice(n_times, size=k_per_parcel[i], replace=False))
        for t in times:
            for _ in range(cfg.obs_per_parcel_season):
                obs_parcel.append(i)
                obs_time.append(int(t))
    obs_parcel = np.asarray(obs_parcel)
    obs_time = np.asarray(obs_time)
    n = len(obs_parcel)

    crop_idx = rng.choice(len(cfg.crops), size=n, p=mix)
    x = np.maximum(rng.normal(cfg.input_location, cfg.input_scale, size=(n, 4)), 0.0)
    eps = _draw_effects(rng, n, variances[IDIOSYNCRATIC], fam[IDIOSYNCRATIC], cfg.skew)

    hh = household_of_parcel[obs_parcel]
    vil = village_of_household[hh]
    beta_mat = np.vstack([beta[c] for c in cfg.crops])
    b = beta_mat[crop_idx]
    y = (cfg.mu + b[:, 0] + np.sum(b[:, 1:] * x, axis=1)
         + nu_parcel[obs_parcel] + nu_household[hh] + nu_season[vil, obs_time]
         + nu_village[vil] + nu_time[obs_time] + eps)
    clipped = int(np.sum(y < 0))
    y = np.maximum(y, 0.0)

    records = []
    raw_x = ihs_inverse(x)
    raw_y = ihs_inverse(y)
    for j in range(n):
        records.append(YieldRecord(
            parcel_id=parcel_ids[obs_parcel[j]],
            household_id=household_ids[hh[j]],
            village_id=village_ids[vil[j]],
            time_id=time_ids[obs_time[j]],
            crop=cfg.crops[crop_idx[j]],
            yield_raw=float(raw_y[j]),
            labor=float(raw_x[j, 0]),
            fertilizer=float(raw_x[j, 1]),
            mechanization=float(raw_x[j, 2]),
            pesticide=float(raw_x[j, 3]),
        ))

    seen_seasons = sorted({(int(v), int(t)) for v, t in zip(vil, obs_time)})
    effects = {
        "parcel": {parcel_ids[i]: float(nu_parcel[i]) for i in range(n_parcels)},
        "household": {household_ids[i]: float(nu_household[i]) for i in range(n_households)},
        "season": {(village_ids[v], time_ids[t]): float(nu_season[v, t]) for v, t in seen_seasons},
        "village": {village_ids[i]: float(nu_village[i]) for i in range(n_villages)},
        "time": {time_ids[i]: float(nu_time[i]) for i in range(n_times)},
    }
    realized = {}
    for level in LEVELS:
        vals = np.array(list(effects[level].values()))
        realized[level] = float(np.var(vals, ddof=1)) if len(vals) > 1 else 0.0
    realized[IDIOSYNCRATIC] = float(np.var(eps, ddof=1)) if n > 1 else 0.0

    truth = PanelTruth(
        mu=cfg.mu,
        beta={c: tuple(map(float, beta[c])) for c in cfg.crops},
        variances=variances,
        realized_variances=realized,
        effects=effects,
        decomposition=decompose(variances),
        n_obs=n,
        clipped_rows=clipped,
        seed=cfg.seed,
    )
    return records, truth


def survey_scale_config(seed: int = 0, **overrides) -> GenerativeConfig:
    """Desk-scale configuration: 30 villages, 10 times, ~1,000 households,
    ~5,100 parcels, ~12,000 observations, survey-patterned variances."""
    base = dict(
        villages=30, times=10, households_per_village=34, parcels_per_household=5,
        obs_target=11942, seed=seed)
    base.update(overrides)
    return GenerativeConfig(**base)


@dataclass(frozen=True)
class RainfallGenConfig:
    """Distributional targets for a synthetic rainfall panel.

    ``phase_mean``/``phase_sd`` give normal draws of phase-total rain
    (clipped at zero); ``trigger_day`` is the day of the monsoon start
    month on which phase I should begin, arranged by placing exactly
    50 mm the day before so the first phase day crosses the threshold.
    """

    villages: int = 5
    years: tuple[int, ...] = (1998, 1999, 2000, 2001)
    region: str = "eastern_central"
    phase_mean: tuple[float, float, float] = (180.0, 160.0, 280.0)
    phase_sd: tuple[float, float, float] = (60.0, 60.0, 100.0)
    trigger_day: int = 15
    seed: int = 0

    def __post_init__(self):
        if self.region not in MONSOON_START_MONTH:
            raise DomainError(f"unknown region {self.region!r}")
        if not 2 <= self.trigger_day <= 28:
            raise DomainError("trigger_day must lie in [2, 28] so the primer day exists")
        if self.villages < 1 or len(self.years) < 1:
            raise DomainError("need at least one village and one year")
        for s in self.phase_sd:
            if s < 0:
                raise DomainError("phase_sd entries must be non-negative")


@dataclass(frozen=True)
class RainfallTruth:
    """Drawn phase totals and engineered start dates per village-year."""

    totals: Mapping[tuple[str, int], tuple[float, float, float]]
    starts: Mapping[tuple[str, int], dt.date]
    clipped_cells: int
    seed: int


def generate_rainfall(cfg: RainfallGenConfig) -> tuple[list[RainfallSeries], RainfallTruth]:
    """Draw a rainfall panel whose phase structure is known exactly.

    Every series covers the monsoon start through three days past the
    phase III end with explicit zero rows, so detection never hits a
    coverage error and the emitted panel has no gaps. A zero phase I
    total gets a 0.4 mm starter on the first phase day (within the
    0.5 mm round-trip tolerance) so the trigger still fires there.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    month = MONSOON_START_MONTH[cfg.region]
    series = []
    totals: dict[tuple[str, int], tuple[float, float, float]] = {}
    starts: dict[tuple[str, int], dt.date] = {}
    clipped = 0
    for v in range(cfg.villages):
        village = f"rv{v:03d}"
        for year in cfg.years:
            draw = rng.normal(cfg.phase_mean, cfg.phase_sd)
            clipped += int(np.sum(draw < 0))
            draw = np.maximum(draw, 0.0)
            start0 = dt.date(year, month, 1)
            chosen = dt.date(year, month, cfg.trigger_day)
            rain: dict[dt.date, float] = {}
            end = chosen + dt.timedelta(days=114 + 3)
            day = start0
            while day <= end:
                rain[day] = 0.0
                day += dt.timedelta(days=1)
            rain[chosen - dt.timedelta(days=1)] = 50.0
            offset = 0
            for k, label in enumerate(PHASE_LABELS):
                length = PHASE_LENGTH_DAYS[label]
                daily = float(draw[k]) / length
                if k == 0 and daily == 0.0:
                    rain[chosen] = 0.4
                else:
                    for d in range(length):
                        rain[chosen + dt.timedelta(days=offset + d)] = daily
                offset += length
            obs = tuple(sorted(rain.items()))
            series.append(RainfallSeries(
                village_id=village, year=year, region=cfg.region,
                observations=obs, gap_warnings=()))
            totals[(village, year)] = tuple(float(t) for t in draw)
            starts[(village, year)] = chosen
    truth = RainfallTruth(totals=totals, starts=starts, clipped_cells=clipped, seed=cfg.seed)
    return series, truth


def calibrate_phase_means(contract: Contract, probability: float,
                          phase_sd: Sequence[float]) -> tuple[float, float, float]:
    """Normal phase-total means giving each phase the target payout
    probability, by quantile matching against the strike.

    A deficit phase pays when the total falls below the strike, so its
    mean sits ``z``-quantiles above the strike; an excess phase mirrors
    below. Zero-clipping of totals does not disturb the match because
    clipping moves mass only within the paying side of each strike.
    """
    if not 0 < probability < 1:
        raise DomainError("probability must lie strictly between 0 and 1")
    means = []
    for term, sd in zip(contract.phases, phase_sd):
        sd = float(sd)
        if sd <= 0:
            raise DomainError("phase_sd entries must be positive for calibration")
        if term.direction == DEFICIT:
            means.append(term.strike_mm - sd * norm.ppf(probability))
        else:
            means.append(term.strike_mm - sd * norm.ppf(1.0 - probability))
    return tuple(means)


def calibrate_to_premium(contract: Contract, target_premium: float,
                         cfg: RainfallGenConfig, tol: float = 0.1,
                         max_iter: int = 80) -> RainfallGenConfig:
    """Shift the phase-total means so the generated panel prices the
    contract at the target fair premium.

    A common shift moves deficit means down and excess means up, which
    makes the priced premium monotone in the shift; bisection then pins
    the target. Deterministic in the config seed; the returned config
    reproduces the calibrated panel exactly.
    """
    if target_premium <= 0:
        raise DomainError("target premium must be positive")

    def premium_at(delta: float) -> tuple[float, RainfallGenConfig]:
        signs = [-1.0 if t.direction == DEFICIT else 1.0 for t in contract.phases]
        means = tuple(m + s * delta for m, s in zip(cfg.phase_mean, signs))
        shifted = replace(cfg, phase_mean=means)
        panel, _ = generate_rainfall(shifted)
        return price(contract, panel).fair_premium_rs, shifted

    lo, hi = -600.0, 600.0
    f_lo, _ = premium_at(lo)
    f_hi, _ = premium_at(hi)
    if not (f_lo <= target_premium <= f_hi):
        raise ConvergenceError(
            f"target premium {target_premium} not bracketed by shifts [{lo}, {hi}] "
            f"(premia {f_lo:.1f}..{f_hi:.1f})")
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid, shifted = premium_at(mid)
        best = shifted
        if abs(f_mid - target_premium) <= tol:
            return shifted
        if f_mid < target_premium:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(
        f"premium calibration did not reach {target_premium} within {max_iter} bisections",
        last_iterate=best)
