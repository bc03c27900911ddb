"""Shared builders: single records, crossed panels, daily rainfall series."""

from __future__ import annotations

import datetime as dt

import numpy as np

from yieldrisk.data import (
    MONSOON_START_MONTH,
    RainfallSeries,
    TransformedRecord,
    YieldRecord,
)


def make_record(**kw):
    """One valid raw observation, overridable field by field."""
    base = dict(
        parcel_id="p1", household_id="h1", village_id="v1", time_id="t1",
        crop="rice", yield_raw=120.0, labor=10.0, fertilizer=5.0,
        mechanization=1.0, pesticide=0.5,
    )
    base.update(kw)
    return YieldRecord(**base)


def make_trec(y=0.0, parcel="p1", household="h1", village="v1", time="t1",
              crop="rice", inputs=(0.0, 0.0, 0.0, 0.0)):
    labor, fertilizer, mechanization, pesticide = (float(v) for v in inputs)
    return TransformedRecord(
        parcel_id=parcel, household_id=household, village_id=village,
        time_id=time, crop=crop, y=float(y), labor=labor,
        fertilizer=fertilizer, mechanization=mechanization,
        pesticide=pesticide)


def grid_panel(villages=2, times=2, households=2, parcels=2, seed=0,
               crop="rice", sigma=1.0, mean=0.0):
    """Fully crossed panel: every parcel observed at every time.

    ``households`` and ``parcels`` are per parent. Outcomes are iid
    noise around ``mean`` so fitters have something to chew on.
    """
    rng = np.random.default_rng(seed)
    out = []
    for v in range(villages):
        vid = f"v{v}"
        for h in range(households):
            hid = f"{vid}h{h}"
            for p in range(parcels):
                pid = f"{hid}p{p}"
                for t in range(times):
                    out.append(make_trec(
                        y=mean + float(sigma * rng.standard_normal()),
                        parcel=pid, household=hid, village=vid,
                        time=f"t{t}", crop=crop))
    return out


def daily_series(village, year, region, values, start=None):
    """Series of consecutive daily totals beginning at ``start``
    (default: the region's traditional monsoon start)."""
    if start is None:
        start = dt.date(year, MONSOON_START_MONTH[region], 1)
    obs = tuple((start + dt.timedelta(days=i), float(v))
                for i, v in enumerate(values))
    return RainfallSeries(village_id=village, year=year, region=region,
                          observations=obs)
