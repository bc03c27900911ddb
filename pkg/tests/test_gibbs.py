"""Conjugate sampler: draw layout, diagnostics, and posterior behavior."""

import math

import numpy as np
import pytest
from scipy import stats

from yieldrisk.errors import DomainError, GibbsError
from yieldrisk.gibbs import (
    ChainConfig,
    PosteriorDraws,
    PriorSpec,
    _draw_inverse_gamma,
    draws_csv_rows,
    posterior_histogram,
    render_histogram_text,
    run_gibbs,
    summary_csv_rows,
)
from yieldrisk.hierarchy import HierarchySpec
from yieldrisk.synthetic import GenerativeConfig, generate_panel

VARIANCES = {"parcel": 0.9, "household": 0.5, "season": 0.8,
             "village": 0.6, "time": 0.4, "idiosyncratic": 1.1}


@pytest.fixture(scope="module")
def panel():
    cfg = GenerativeConfig(villages=8, times=5, households_per_village=4,
                           parcels_per_household=3, variances=VARIANCES,
                           mu=7.0, seed=21)
    records, truth = generate_panel(cfg)
    return records, truth


@pytest.fixture(scope="module")
def posterior(panel):
    records, _ = panel
    return run_gibbs(records, config=ChainConfig(chains=2, burn=500, keep=600,
                                                 seed=5))


def test_config_validation():
    with pytest.raises(DomainError):
        ChainConfig(chains=0)
    with pytest.raises(DomainError):
        ChainConfig(keep=0)
    with pytest.raises(DomainError):
        ChainConfig(thin=0)
    with pytest.raises(DomainError):
        ChainConfig(keep=10, thin=11)
    with pytest.raises(DomainError):
        ChainConfig(dic_penalty="bic")
    with pytest.raises(DomainError):
        ChainConfig(workers=0)
    assert ChainConfig(keep=100, thin=7).stored == 14


def test_prior_validation():
    with pytest.raises(DomainError):
        PriorSpec(coefficient_variance=0.0)
    with pytest.raises(DomainError):
        PriorSpec(variance_shape=-1.0)
    with pytest.raises(DomainError):
        PriorSpec(variance_rate=float("inf"))


def test_inverse_gamma_moments_match_reference():
    rng = np.random.default_rng(17)
    shape, rate = 12.0, 30.0
    x = np.array([_draw_inverse_gamma(rng, shape, rate) for _ in range(20_000)])
    ref = stats.invgamma(a=shape, scale=rate)
    assert float(x.mean()) == pytest.approx(ref.mean(), rel=0.02)
    assert float(x.var(ddof=1)) == pytest.approx(ref.var(), rel=0.06)
    ks = stats.kstest(x[:2000], ref.cdf)
    assert ks.pvalue > 0.01


def test_inverse_gamma_matches_residual_conditional():
    # shape and rate as the idiosyncratic conditional would set them
    rng = np.random.default_rng(23)
    resid = rng.normal(0.0, 1.2, size=144)
    shape = 1e-3 + len(resid) / 2.0
    rate = 1e-3 + float(resid @ resid) / 2.0
    x = np.array([_draw_inverse_gamma(rng, shape, rate) for _ in range(20_000)])
    ref = stats.invgamma(a=shape, scale=rate)
    assert float(x.mean()) == pytest.approx(ref.mean(), rel=0.03)
    assert float(x.var(ddof=1)) == pytest.approx(ref.var(), rel=0.03)


def test_draw_layout(posterior):
    L = 5
    p = 25
    assert posterior.draws.shape == (2, 600, 1 + L + 1 + p)
    assert posterior.parameters[0] == "mu"
    assert posterior.parameters[1:1 + L] == tuple(
        f"var[{lv}]" for lv in ("parcel", "household", "season", "village", "time"))
    assert posterior.parameters[1 + L] == "var[idiosyncratic]"
    assert all(name.startswith("beta[") for name in posterior.parameters[2 + L:])
    assert posterior.components == ("parcel", "household", "season", "village",
                                    "time", "idiosyncratic")
    assert len(posterior.beta_columns) == p
    assert posterior.n_obs == 480


def test_variance_draws_positive(posterior):
    vd = posterior.variance_draws()
    assert set(vd) == set(VARIANCES)
    for comp, arr in vd.items():
        assert arr.shape == (1200,)
        assert np.all(arr > 0)
    pv = posterior.posterior_variances()
    for comp in vd:
        assert pv[comp] == pytest.approx(float(vd[comp].mean()), rel=1e-12)


def test_posterior_near_generating_variances(posterior, panel):
    # components with plenty of groups concentrate; village and time have
    # 8 and 5 groups here, so only positivity is sensible for them
    _, truth = panel
    summ = posterior.summary()
    for comp in ("parcel", "household", "season", "idiosyncratic"):
        median = summ[f"var[{comp}]"]["median"]
        realized = truth.realized_variances[comp]
        assert realized / 4.0 < median < realized * 4.0
    for comp in VARIANCES:
        assert posterior.posterior_variances()[comp] > 0.0


def test_summary_shape_and_order(posterior):
    summ = posterior.summary()
    assert set(summ) == set(posterior.parameters)
    for name, s in summ.items():
        assert s["q2.5"] <= s["median"] <= s["q97.5"]
        assert s["sd"] > 0
        assert s["mean"] == pytest.approx(posterior.posterior_mean(name), rel=1e-12)
    for comp in VARIANCES:
        s = summ[f"var[{comp}]"]
        assert math.isfinite(s["rhat"])
        assert s["ess"] > 10


def test_intercept_ridge_flagged_not_variances(posterior):
    # the grand and crop intercepts are only jointly identified, so their
    # marginals mix slowly; identified variances must stay clean
    assert any("rhat" in w for w in posterior.warnings)
    flagged = next(w for w in posterior.warnings if "rhat" in w)
    for comp in VARIANCES:
        assert f"var[{comp}]" not in flagged
    for comp in VARIANCES:
        assert posterior.rhat[f"var[{comp}]"] < 1.1


def test_dic_identity(posterior):
    assert posterior.dic == pytest.approx(posterior.mean_deviance + posterior.p_d,
                                          rel=1e-12)
    assert posterior.p_d > 0
    assert posterior.deviance_at_mean < posterior.mean_deviance
    assert posterior.deviance_draws.shape == (2, 600)


def test_dic_prefers_hierarchical_model(panel):
    records, _ = panel
    cfg = ChainConfig(chains=2, burn=300, keep=400, seed=5)
    flat = run_gibbs(records, HierarchySpec(levels=()), config=cfg)
    full = run_gibbs(records, config=cfg)
    assert full.dic < flat.dic
    assert flat.levels == ()
    assert flat.parameters[1] == "var[idiosyncratic]"


def test_half_variance_penalty(panel):
    records, _ = panel
    a = run_gibbs(records, config=ChainConfig(chains=2, burn=100, keep=150, seed=9))
    b = run_gibbs(records, config=ChainConfig(chains=2, burn=100, keep=150, seed=9,
                                              dic_penalty="half_variance"))
    assert np.array_equal(a.draws, b.draws)
    assert b.p_d == pytest.approx(
        0.5 * float(np.var(a.deviance_draws.ravel(), ddof=1)), rel=1e-9)
    assert a.p_d != b.p_d
    assert b.dic == pytest.approx(b.mean_deviance + b.p_d, rel=1e-12)


def test_reruns_are_bitwise_identical(panel, posterior):
    records, _ = panel
    again = run_gibbs(records, config=ChainConfig(chains=2, burn=500, keep=600,
                                                  seed=5))
    assert np.array_equal(again.draws, posterior.draws)
    assert again.dic == posterior.dic


def test_seed_changes_draws(panel):
    records, _ = panel
    a = run_gibbs(records, config=ChainConfig(chains=1, burn=50, keep=60, seed=1))
    b = run_gibbs(records, config=ChainConfig(chains=1, burn=50, keep=60, seed=2))
    assert not np.array_equal(a.draws, b.draws)


def test_parallel_chains_match_serial(panel):
    records, _ = panel
    serial = run_gibbs(records, config=ChainConfig(chains=2, burn=50, keep=60,
                                                   seed=4, workers=1))
    parallel = run_gibbs(records, config=ChainConfig(chains=2, burn=50, keep=60,
                                                     seed=4, workers=2))
    assert np.array_equal(serial.draws, parallel.draws)
    assert serial.dic == parallel.dic


def test_observation_order_does_not_matter(panel, posterior):
    records, _ = panel
    shuffled = [records[i] for i in
                np.random.default_rng(99).permutation(len(records))]
    other = run_gibbs(shuffled, config=ChainConfig(chains=2, burn=500, keep=600,
                                                   seed=5))
    sa, sb = posterior.summary(), other.summary()
    for comp in VARIANCES:
        name = f"var[{comp}]"
        se_a = sa[name]["sd"] / math.sqrt(sa[name]["ess"])
        se_b = sb[name]["sd"] / math.sqrt(sb[name]["ess"])
        assert abs(sa[name]["mean"] - sb[name]["mean"]) <= 2.0 * (se_a + se_b)


def test_posterior_contracts_with_group_count():
    sds = []
    for parcels in (2, 4, 8):
        cfg = GenerativeConfig(villages=6, times=3, households_per_village=3,
                               parcels_per_household=parcels,
                               variances=VARIANCES, mu=7.0, seed=31)
        records, _ = generate_panel(cfg)
        post = run_gibbs(records, config=ChainConfig(chains=2, burn=250,
                                                     keep=300, seed=13))
        sds.append(post.summary()["var[parcel]"]["sd"])
    assert sds[0] > sds[1] > sds[2]


def test_thinning_and_short_run_diagnostics(panel):
    records, _ = panel
    thinned = run_gibbs(records, config=ChainConfig(chains=2, burn=20, keep=100,
                                                    thin=5, seed=7))
    assert thinned.draws.shape[1] == 20
    short = run_gibbs(records, config=ChainConfig(chains=1, burn=0, keep=3, seed=7))
    assert any("too few stored draws" in w for w in short.warnings)
    assert short.rhat == {}
    assert math.isnan(short.summary()["mu"]["rhat"])


def test_store_effects(panel):
    records, _ = panel
    post = run_gibbs(records, config=ChainConfig(chains=2, burn=30, keep=40,
                                                 seed=8, store_effects=True))
    assert set(post.effect_draws) == set(post.levels)
    for lv in post.levels:
        arr = post.effect_draws[lv]
        labels = post.effect_labels[lv]
        assert arr.shape == (2, 40, len(labels))
        # with thin=1 the stored draws are exactly the kept iterations
        np.testing.assert_allclose(arr.mean(axis=(0, 1)), post.effect_means[lv],
                                   rtol=1e-10, atol=1e-12)
    bare = run_gibbs(records, config=ChainConfig(chains=1, burn=10, keep=12, seed=8))
    assert bare.effect_draws == {}
    assert set(bare.effect_means) == set(bare.levels)


def test_non_finite_draw_aborts(panel, monkeypatch):
    records, _ = panel
    monkeypatch.setattr("yieldrisk.gibbs._draw_inverse_gamma",
                        lambda rng, shape, rate: float("nan"))
    with pytest.raises(GibbsError) as err:
        run_gibbs(records, config=ChainConfig(chains=1, burn=5, keep=5, seed=0))
    assert err.value.iteration == 1
    assert err.value.parameter.startswith("var[")


def test_unknown_parameter_rejected(posterior):
    with pytest.raises(DomainError):
        posterior.draws_for("var[weather]")
    with pytest.raises(DomainError):
        posterior.posterior_mean("gamma")


def test_histogram_counts(posterior):
    counts, edges = posterior_histogram(posterior, "var[parcel]", bins=25)
    assert counts.sum() == 1200
    assert len(edges) == 26
    text = render_histogram_text(posterior, "var[parcel]", bins=10, width=40)
    lines = text.strip("\n").split("\n")
    assert len(lines) == 11
    assert "var[parcel]" in lines[0]
    assert any("#" in ln for ln in lines[1:])


def test_draws_csv_rows(panel):
    records, _ = panel
    post = run_gibbs(records, config=ChainConfig(chains=2, burn=5, keep=6, seed=2))
    rows = draws_csv_rows(post)
    assert rows[0] == ("chain", "iter", "parameter", "value")
    assert len(rows) == 1 + 2 * 6 * len(post.parameters)
    assert rows[1][:3] == ("1", "1", "mu")
    assert float(rows[1][3]) == post.draws[0, 0, 0]
    assert rows[-1][0] == "2"


def test_summary_csv_rows(posterior):
    rows = summary_csv_rows(posterior)
    assert rows[0] == ("parameter", "mean", "sd", "q2.5", "median", "q97.5",
                       "rhat", "ess")
    assert len(rows) == 1 + len(posterior.parameters)
    body = {r[0]: r for r in rows[1:]}
    s = posterior.summary()["var[village]"]
    assert float(body["var[village]"][1]) == pytest.approx(s["mean"], rel=1e-12)
