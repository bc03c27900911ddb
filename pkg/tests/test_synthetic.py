"""Generators: panels with known truth, rainfall with known phase totals."""

from __future__ import annotations

import datetime as dt

import numpy as np
import pytest
from scipy import stats

from yieldrisk.actuarial import DEFICIT, detect_phases, price, standard_contracts
from yieldrisk.data import transform_panel
from yieldrisk.decomposition import decompose
from yieldrisk.errors import ConvergenceError, DomainError
from yieldrisk.hierarchy import build_index
from yieldrisk.synthetic import (
    LOGNORMAL_SHIFTED,
    GenerativeConfig,
    RainfallGenConfig,
    calibrate_phase_means,
    calibrate_to_premium,
    generate_panel,
    generate_rainfall,
    survey_scale_config,
)


@pytest.mark.parametrize("kw", [
    dict(villages=0),
    dict(times_per_parcel=2, obs_target=100),
    dict(times_per_parcel=9),                      # exceeds times
    dict(variances={"county": 1.0}),
    dict(variances={"parcel": -0.1, "idiosyncratic": 1.0}),
    dict(family={"parcel": "cauchy"}),
    dict(skew=-1.0),
])
def test_generative_config_validation(kw):
    with pytest.raises(DomainError):
        GenerativeConfig(**kw)


def test_generate_panel_deterministic():
    cfg = GenerativeConfig(seed=42)
    recs_a, truth_a = generate_panel(cfg)
    recs_b, truth_b = generate_panel(cfg)
    assert recs_a == recs_b
    assert truth_a.effects == truth_b.effects
    assert truth_a.realized_variances == truth_b.realized_variances
    recs_c, _ = generate_panel(GenerativeConfig(seed=43))
    assert recs_a != recs_c


def test_generate_panel_structure_matches_config():
    cfg = GenerativeConfig(villages=3, times=4, households_per_village=2,
                           parcels_per_household=2, seed=1)
    recs, truth = generate_panel(cfg)
    index = build_index(transform_panel(recs))   # nesting checks run here
    assert index.sizes["village"] == 3
    assert index.sizes["time"] == 4
    assert index.sizes["household"] == 6
    assert index.sizes["parcel"] == 12
    # full observation: every parcel seen at every time
    assert truth.n_obs == 12 * 4
    assert len(recs) == truth.n_obs


def test_generate_panel_times_per_parcel():
    cfg = GenerativeConfig(villages=2, times=5, households_per_village=2,
                           parcels_per_household=2, times_per_parcel=3, seed=7)
    recs, truth = generate_panel(cfg)
    assert truth.n_obs == 8 * 3
    per_parcel = {}
    for r in recs:
        per_parcel.setdefault(r.parcel_id, set()).add(r.time_id)
    assert all(len(ts) == 3 for ts in per_parcel.values())


def test_survey_scale_config_cardinalities():
    cfg = survey_scale_config(seed=0)
    recs, truth = generate_panel(cfg)
    index = build_index(transform_panel(recs))
    assert index.sizes["village"] == 30
    assert index.sizes["time"] == 10
    assert index.sizes["household"] == 1020
    assert index.sizes["parcel"] == 5100
    assert abs(truth.n_obs - 11942) < 150


def test_truth_decomposition_is_exact():
    _, truth = generate_panel(GenerativeConfig(seed=3))
    fresh = decompose(truth.variances)
    assert truth.decomposition.icc == fresh.icc
    assert truth.decomposition.share == fresh.share
    assert truth.decomposition.total == fresh.total


def test_realized_variances_recomputable_from_effects():
    _, truth = generate_panel(GenerativeConfig(seed=9))
    for level in ("parcel", "household", "season", "village", "time"):
        vals = np.array(list(truth.effects[level].values()))
        want = float(np.var(vals, ddof=1)) if len(vals) > 1 else 0.0
        assert truth.realized_variances[level] == want


def test_realized_variances_approach_targets_with_many_groups():
    cfg = GenerativeConfig(villages=8, times=4, households_per_village=8,
                           parcels_per_household=4, seed=11)
    _, truth = generate_panel(cfg)
    # 1024 parcels, 256 households, 32 seasons: enough groups to pin
    # the big components; village/time have too few groups to check
    for level in ("parcel", "season", "idiosyncratic"):
        target = truth.variances[level]
        assert truth.realized_variances[level] == pytest.approx(target, rel=0.35)


def test_lognormal_family_produces_right_skew():
    cfg = GenerativeConfig(villages=10, times=2, households_per_village=5,
                           parcels_per_household=20, seed=13,
                           family={"parcel": LOGNORMAL_SHIFTED}, skew=1.5)
    _, truth = generate_panel(cfg)
    draws = np.array(list(truth.effects["parcel"].values()))
    assert len(draws) == 1000
    assert abs(float(np.mean(draws))) < 0.15
    assert float(np.var(draws, ddof=1)) == pytest.approx(
        truth.variances["parcel"], rel=0.25)
    assert float(stats.skew(draws)) > 0.7

    normal_cfg = GenerativeConfig(villages=10, times=2, households_per_village=5,
                                  parcels_per_household=20, seed=13)
    _, normal_truth = generate_panel(normal_cfg)
    normal_draws = np.array(list(normal_truth.effects["parcel"].values()))
    assert abs(float(stats.skew(normal_draws))) < 0.4


def test_clipping_counts_and_keeps_yields_valid():
    cfg = GenerativeConfig(mu=-6.0, seed=5)    # mean far below zero
    recs, truth = generate_panel(cfg)
    assert truth.clipped_rows > 0
    assert all(r.yield_raw >= 0 for r in recs)


def test_crop_mix_degenerate_weight():
    cfg = GenerativeConfig(crop_mix=(1.0, 0.0, 0.0, 0.0, 0.0), seed=2)
    recs, _ = generate_panel(cfg)
    assert {r.crop for r in recs} == {"rice"}
    with pytest.raises(DomainError):
        generate_panel(GenerativeConfig(crop_mix=(1.0, 1.0), seed=2))


def test_resolved_beta_shapes():
    cfg = GenerativeConfig(crops=("rice", "quinoa"), seed=0)
    beta = cfg.resolved_beta()
    assert beta["rice"].shape == (5,)
    assert beta["quinoa"].shape == (5,)    # fallback vector for unknown crops
    bad = GenerativeConfig(beta={"rice": (1.0, 2.0)}, seed=0)
    with pytest.raises(DomainError):
        bad.resolved_beta()


@pytest.mark.parametrize("kw", [
    dict(region="atlantis"),
    dict(trigger_day=1),
    dict(trigger_day=29),
    dict(villages=0),
    dict(years=()),
    dict(phase_sd=(-1.0, 60.0, 100.0)),
])
def test_rainfall_config_validation(kw):
    with pytest.raises(DomainError):
        RainfallGenConfig(**kw)


def test_generate_rainfall_deterministic_and_gapless():
    cfg = RainfallGenConfig(seed=21)
    series_a, truth_a = generate_rainfall(cfg)
    series_b, truth_b = generate_rainfall(cfg)
    assert series_a == series_b
    assert truth_a.totals == truth_b.totals
    assert len(series_a) == cfg.villages * len(cfg.years)
    for s in series_a:
        days = [d for d, _ in s.observations]
        assert days == [days[0] + dt.timedelta(days=i) for i in range(len(days))]
        assert s.gap_warnings == ()


def test_generate_rainfall_phase_round_trip():
    cfg = RainfallGenConfig(villages=3, years=(2000, 2001), seed=8)
    series, truth = generate_rainfall(cfg)
    for s in series:
        w = detect_phases(s)
        assert w.p1_start == truth.starts[(s.village_id, s.year)]
        assert w.p1_start.day == cfg.trigger_day
        drawn = truth.totals[(s.village_id, s.year)]
        for phase, want in zip(("I", "II", "III"), drawn):
            lo, hi = w.window(phase)
            got = sum(mm for d, mm in s.observations if lo <= d <= hi)
            assert abs(got - want) <= 0.5


def test_generate_rainfall_dry_phase_one_still_triggers():
    cfg = RainfallGenConfig(villages=1, years=(2000,),
                            phase_mean=(0.0, 100.0, 200.0),
                            phase_sd=(0.0, 10.0, 10.0), seed=4)
    series, truth = generate_rainfall(cfg)
    w = detect_phases(series[0])
    assert w.p1_start == truth.starts[("rv000", 2000)]
    lo, hi = w.window("I")
    total = sum(mm for d, mm in series[0].observations if lo <= d <= hi)
    assert total == pytest.approx(0.4)    # starter drop, inside tolerance


def test_calibrate_phase_means_hits_quantiles():
    contract = standard_contracts()["high_payout"]
    sds = (60.0, 60.0, 100.0)
    means = calibrate_phase_means(contract, 0.14, sds)
    for term, mean, sd in zip(contract.phases, means, sds):
        if term.direction == DEFICIT:
            p = stats.norm.cdf(term.strike_mm, loc=mean, scale=sd)
        else:
            p = stats.norm.sf(term.strike_mm, loc=mean, scale=sd)
        assert p == pytest.approx(0.14, abs=1e-12)
    with pytest.raises(DomainError):
        calibrate_phase_means(contract, 0.0, sds)
    with pytest.raises(DomainError):
        calibrate_phase_means(contract, 0.14, (0.0, 60.0, 100.0))


def test_calibrated_panel_pays_at_target_rate():
    contract = standard_contracts()["high_payout"]
    sds = (60.0, 60.0, 100.0)
    means = calibrate_phase_means(contract, 0.14, sds)
    cfg = RainfallGenConfig(villages=40, years=tuple(range(1992, 2002)),
                            phase_mean=means, phase_sd=sds, seed=17)
    series, _ = generate_rainfall(cfg)
    result = price(contract, series)
    # 400 cells per phase; binomial noise is under a point and a half
    for phase in ("I", "II", "III"):
        assert result.phase_payout_frequency[phase] == pytest.approx(0.14, abs=0.045)
    assert result.payout_probability == pytest.approx(0.14, abs=0.03)


def test_calibrate_to_premium_reaches_target():
    contract = standard_contracts()["high_payout"]
    cfg = calibrate_to_premium(contract, 190.9, RainfallGenConfig(seed=6))
    panel, _ = generate_rainfall(cfg)
    assert price(contract, panel).fair_premium_rs == pytest.approx(190.9, abs=0.1)
    again = calibrate_to_premium(contract, 190.9, RainfallGenConfig(seed=6))
    assert again == cfg


def test_calibrate_to_premium_unreachable_target():
    contract = standard_contracts()["high_payout"]
    with pytest.raises(ConvergenceError):
        calibrate_to_premium(contract, 1e9, RainfallGenConfig(seed=6))
