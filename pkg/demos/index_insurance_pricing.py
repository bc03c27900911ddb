"""Pricing rainfall index contracts against a synthetic panel.

Builds a multi-year daily rainfall panel, shows the detected phase
windows for one village-year, prices the six standard payout schedules,
and converts payout probabilities into expected waiting times between
payouts.

Run:  python3 demos/index_insurance_pricing.py
"""

from yieldrisk.actuarial import (detect_phases, phase_total, price,
                                 render_pricing_text, standard_contracts,
                                 years_until_payout)
from yieldrisk.synthetic import RainfallGenConfig, generate_rainfall

cfg = RainfallGenConfig(villages=8, years=tuple(range(1995, 2005)), seed=3)
panel, truth = generate_rainfall(cfg)
print(f"rainfall panel: {len(panel)} village-years, region {cfg.region}")
print()

one = panel[0]
w = detect_phases(one)
print(f"phase windows for {one.village_id}/{one.year}:")
for phase in ("I", "II", "III"):
    a, b = w.window(phase)
    print(f"  phase {phase:<3} {a} .. {b}   total {phase_total(one, a, b):7.1f} mm")
print()

contracts = standard_contracts()
print(f"{'contract':<16}{'fair premium':>14}{'P(payout)':>11}{'years between':>15}")
results = {}
for name, contract in contracts.items():
    res = price(contract, panel)
    results[name] = res
    print(f"{name:<16}{res.fair_premium_rs:>14.2f}{res.payout_probability:>11.3f}"
          f"{res.years_until_payout:>15.2f}")
print()

# the high-payout schedule carries an observed market premium, so its
# loading factor (market price over actuarially fair price) is reported
high = results["high_payout"]
print(render_pricing_text(high))
print()

print("waiting time is (1 / probability) / 3 with three phase cells per year:")
for p in (0.30, 0.10, 0.03):
    print(f"  per-cell payout probability {p:.2f} -> "
          f"{years_until_payout(p):.1f} years between payouts")
