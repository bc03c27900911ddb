"""Conjugate Gibbs sampling for the nested variance model.

Every full conditional is standard: coefficients and the grand
intercept are Gaussian, each group effect is Gaussian with precision
``n_members / s2 + 1 / s2_level``, and every variance is inverse gamma.
A sweep visits, in order, the coefficient block, the group effects from
the innermost level outward, the grand intercept, the level variances
in the same inner-to-outer order, and the idiosyncratic variance.

The residual vector is maintained incrementally (add a block's old
contribution back, draw, subtract the new one), so a sweep costs one
dense matrix-vector pair for the coefficient block plus a handful of
``bincount`` passes. Chains draw from independent seed-derived streams,
so results are reproducible regardless of how chains are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .data import YieldRecord, transform_panel
from .decomposition import IDIOSYNCRATIC
from .errors import DomainError, GibbsError
from .hierarchy import HierarchySpec, build_design, build_index

_RHAT_WARN = 1.1


@dataclass(frozen=True)
class PriorSpec:
    """Conjugate priors: independent normals on the coefficients and the
    grand intercept, independent inverse gammas on every variance."""

    coefficient_variance: float = 1e4
    variance_shape: float = 1e-3
    variance_rate: float = 1e-3

    def __post_init__(self):
        for name in ("coefficient_variance", "variance_shape", "variance_rate"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise DomainError(f"{name} must be positive and finite")


@dataclass(frozen=True)
class ChainConfig:
    """Sampler run lengths and bookkeeping switches.

    ``keep`` iterations follow ``burn`` per chain; every ``thin``-th
    kept iteration is stored, so ``keep // thin`` draws are retained per
    chain. Group-effect draws are stored only on request
    (``store_effects``) since they dominate memory at scale; their
    running posterior means are always kept. ``dic_penalty`` selects the
    effective-parameter estimate: ``"point"`` plugs posterior means into
    the deviance, ``"half_variance"`` uses half the deviance variance.
    """

    chains: int = 2
    burn: int = 5000
    keep: int = 5000
    thin: int = 1
    seed: int = 0
    store_effects: bool = False
    dic_penalty: str = "point"
    workers: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise DomainError("need at least one chain")
        if self.burn < 0 or self.keep < 1:
            raise DomainError("burn must be non-negative and keep positive")
        if not 1 <= self.thin <= self.keep:
            raise DomainError("thin must lie in [1, keep]")
        if self.dic_penalty not in ("point", "half_variance"):
            raise DomainError("dic_penalty must be 'point' or 'half_variance'")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")

    @property
    def stored(self) -> int:
        return self.keep // self.thin


def _draw_inverse_gamma(rng: np.random.Generator, shape: float, rate: float) -> float:
    """One inverse-gamma draw with density ``x^(-shape-1) exp(-rate/x)``."""
    return float(rate / rng.gamma(shape))


def _run_chain(cd: dict) -> dict:
    """One chain, self-contained and picklable. Returns stored draws and
    the running sums the caller needs for pooled summaries."""
    chain = cd["chain"]
    rng = np.random.default_rng(np.random.SeedSequence(cd["seed"], spawn_key=(chain,)))
    y = cd["y"]
    X = cd["X"]
    n, p = X.shape
    levels: tuple[str, ...] = cd["levels"]
    codes: list[np.ndarray] = cd["codes"]
    counts: list[int] = cd["counts"]
    L = len(levels)
    burn, keep, thin = cd["burn"], cd["keep"], cd["thin"]
    store_effects = cd["store_effects"]
    tau = cd["coefficient_variance"]
    d0 = cd["variance_shape"]
    g0 = cd["variance_rate"]

    XtX = X.T @ X
    members = [np.bincount(codes[l], minlength=counts[l]).astype(float) for l in range(L)]

    # Overdispersed but seed-determined starting point.
    beta = cd["beta0"] + rng.normal(0.0, 0.25, size=p)
    mu = float(rng.normal(0.0, 1.0))
    u = [np.zeros(c) for c in counts]
    base = max(cd["s2_0"], 1e-6) / (L + 1)
    sig = base * np.exp(rng.normal(0.0, 0.5, size=L))
    sige = base * math.exp(rng.normal(0.0, 0.5))

    resid = y - X @ beta - mu

    n_scalar = 1 + L + 1 + p
    stored = keep // thin
    draws = np.empty((stored, n_scalar))
    effect_draws = [np.empty((stored, c)) for c in counts] if store_effects else None
    effect_sums = [np.zeros(c) for c in counts]
    beta_sum = np.zeros(p)
    mu_sum = 0.0
    sige_sum = 0.0
    dev_sum = 0.0
    dev_sumsq = 0.0
    deviance = np.empty(stored)
    eye_p = np.eye(p)
    log2pi = math.log(2.0 * math.pi)

    def _abort(i: int, parameter: str):
        raise GibbsError(
            f"non-finite draw for {parameter} at iteration {i} of chain {chain}",
            iteration=i, parameter=parameter)

    for i in range(burn + keep):
        it = i + 1
        # Coefficient block.
        r_plus = resid + X @ beta
        prec = XtX / sige + eye_p / tau
        rhs = X.T @ r_plus / sige
        try:
            low = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            _abort(it, "beta")
        mean = cho_solve((low, True), rhs)
        beta = mean + solve_triangular(low.T, rng.standard_normal(p), lower=False)
        if not np.all(np.isfinite(beta)):
            _abort(it, "beta")
        resid = r_plus - X @ beta

        # Group effects, innermost level outward.
        for l in range(L):
            r_plus = resid + u[l][codes[l]]
            sums = np.bincount(codes[l], weights=r_plus, minlength=counts[l])
            prec_l = members[l] / sige + 1.0 / sig[l]
            mean_l = sums / sige / prec_l
            u[l] = mean_l + rng.standard_normal(counts[l]) / np.sqrt(prec_l)
            if not np.all(np.isfinite(u[l])):
                _abort(it, f"effects[{levels[l]}]")
            resid = r_plus - u[l][codes[l]]

        # Grand intercept.
        r_plus = resid + mu
        prec_mu = n / sige + 1.0 / tau
        mu = float(r_plus.sum() / sige / prec_mu
                   + rng.standard_normal() / math.sqrt(prec_mu))
        if not math.isfinite(mu):
            _abort(it, "mu")
        resid = r_plus - mu

        # Variances, levels then idiosyncratic.
        for l in range(L):
            sig[l] = _draw_inverse_gamma(rng, d0 + counts[l] / 2.0,
                                         g0 + float(u[l] @ u[l]) / 2.0)
            if not math.isfinite(sig[l]) or sig[l] <= 0:
                _abort(it, f"var[{levels[l]}]")
        rss = float(resid @ resid)
        sige = _draw_inverse_gamma(rng, d0 + n / 2.0, g0 + rss / 2.0)
        if not math.isfinite(sige) or sige <= 0:
            _abort(it, f"var[{IDIOSYNCRATIC}]")

        if i < burn:
            continue
        j = i - burn
        dev = n * (log2pi + math.log(sige)) + rss / sige
        dev_sum += dev
        dev_sumsq += dev * dev
        beta_sum += beta
        mu_sum += mu
        sige_sum += sige
        for l in range(L):
            effect_sums[l] += u[l]
        if (j + 1) % thin == 0:
            s = (j + 1) // thin - 1
            draws[s, 0] = mu
            draws[s, 1:1 + L] = sig
            draws[s, 1 + L] = sige
            draws[s, 2 + L:] = beta
            deviance[s] = dev
            if store_effects:
                for l in range(L):
                    effect_draws[l][s] = u[l]

    return {
        "draws": draws,
        "deviance": deviance,
        "effect_draws": effect_draws,
        "effect_sums": effect_sums,
        "beta_sum": beta_sum,
        "mu_sum": mu_sum,
        "sige_sum": sige_sum,
        "dev_sum": dev_sum,
        "dev_sumsq": dev_sumsq,
        "kept": keep,
    }


@dataclass
class PosteriorDraws:
    """Stored posterior sample plus pooled summaries.

    ``draws`` has shape (chains, stored, n_parameters) with parameters
    ordered as ``parameters``: the grand intercept, the level variances
    innermost first, the idiosyncratic variance, then the coefficients.
    Group-effect draws appear in ``effect_draws`` only when the run
    stored them; ``effect_means`` always holds their posterior means
    over every kept iteration.
    """

    parameters: tuple[str, ...]
    draws: np.ndarray
    components: tuple[str, ...]
    levels: tuple[str, ...]
    beta_columns: tuple[str, ...]
    effect_labels: Mapping[str, tuple]
    effect_draws: Mapping[str, np.ndarray]
    effect_means: Mapping[str, np.ndarray]
    deviance_draws: np.ndarray
    mean_deviance: float
    deviance_at_mean: float
    p_d: float
    dic: float
    rhat: Mapping[str, float]
    ess: Mapping[str, float]
    config: ChainConfig
    priors: PriorSpec
    n_obs: int
    warnings: tuple[str, ...] = ()

    def parameter_index(self, parameter: str) -> int:
        try:
            return self.parameters.index(parameter)
        except ValueError:
            raise DomainError(f"unknown parameter {parameter!r}") from None

    def draws_for(self, parameter: str) -> np.ndarray:
        """All chains' stored draws of one parameter, pooled."""
        return self.draws[:, :, self.parameter_index(parameter)].ravel()

    def variance_draws(self) -> dict[str, np.ndarray]:
        """Pooled variance draws keyed by component name."""
        out = {}
        for i, level in enumerate(self.levels):
            out[level] = self.draws[:, :, 1 + i].ravel()
        out[IDIOSYNCRATIC] = self.draws[:, :, 1 + len(self.levels)].ravel()
        return out

    def posterior_variances(self) -> dict[str, float]:
        """Posterior-mean point estimate of each variance component."""
        return {comp: float(v.mean()) for comp, v in self.variance_draws().items()}

    def posterior_mean(self, parameter: str) -> float:
        return float(self.draws_for(parameter).mean())

    def summary(self) -> dict[str, dict[str, float]]:
        """Per-parameter moments, central quantiles and diagnostics."""
        out = {}
        for name in self.parameters:
            x = self.draws_for(name)
            q = np.percentile(x, [2.5, 50.0, 97.5])
            out[name] = {
                "mean": float(x.mean()),
                "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
                "q2.5": float(q[0]),
                "median": float(q[1]),
                "q97.5": float(q[2]),
                "rhat": self.rhat.get(name, float("nan")),
                "ess": self.ess.get(name, float("nan")),
            }
        return out


def _split_sequences(x: np.ndarray) -> np.ndarray:
    """Split each chain's series in half; (chains, stored) ->
    (2 * chains, stored // 2), dropping a middle element when odd."""
    c, s = x.shape
    h = s // 2
    return np.vstack([x[:, :h], x[:, s - h:]])


def _split_rhat(x: np.ndarray) -> float:
    seqs = _split_sequences(x)
    m, n = seqs.shape
    if n < 2:
        return float("nan")
    means = seqs.mean(axis=1)
    w = float(seqs.var(axis=1, ddof=1).mean())
    b = n * float(means.var(ddof=1)) if m > 1 else 0.0
    if w <= 0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    centered = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, nfft)
    return np.fft.irfft(f * np.conj(f), nfft)[:n] / n


def _effective_sample_size(x: np.ndarray) -> float:
    """Pooled effective sample size from split chains, combining the
    variogram autocorrelation estimate with an initial-positive-pairs
    truncation made monotone."""
    seqs = _split_sequences(x)
    m, n = seqs.shape
    if n < 4:
        return float("nan")
    acovs = np.vstack([_autocovariance(s) for s in seqs])
    w = float((acovs[:, 0] * n / (n - 1)).mean())
    means = seqs.mean(axis=1)
    b = n * float(means.var(ddof=1)) if m > 1 else 0.0
    var_plus = (n - 1) / n * w + b / n
    if var_plus <= 0:
        return float("nan")
    rho = 1.0 - (w - acovs.mean(axis=0)) / var_plus
    total = 0.0
    prev = float("inf")
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        k += 1
    tau = max(2.0 * total - 1.0, 1e-12)
    return float(min(m * n / tau, m * n))


def run_gibbs(records: Sequence[YieldRecord], spec: HierarchySpec | None = None,
              priors: PriorSpec | None = None,
              config: ChainConfig | None = None) -> PosteriorDraws:
    """Sample the posterior of the nested variance model.

    The grand intercept and the per-crop intercepts are only jointly
    identified by the data; their individual chains therefore mix
    slowly and may be flagged by the split statistic, while identified
    quantities (variances, slopes, intercept sums) are unaffected.

    Raises :class:`GibbsError` naming the iteration and parameter if any
    conditional produces a non-finite draw.
    """
    spec = spec or HierarchySpec()
    priors = priors or PriorSpec()
    config = config or ChainConfig()
    trans = transform_panel(records)
    index = build_index(trans, spec)
    design = build_design(trans, spec)
    y = np.array([r.y for r in trans])

    beta0 = np.linalg.lstsq(design.X, y, rcond=None)[0]
    resid0 = y - design.X @ beta0
    s2_0 = float(resid0 @ resid0) / max(len(y) - design.p, 1)

    base = {
        "y": y,
        "X": design.X,
        "levels": index.levels,
        "codes": [index.codes[lv] for lv in index.levels],
        "counts": [index.sizes[lv] for lv in index.levels],
        "burn": config.burn,
        "keep": config.keep,
        "thin": config.thin,
        "store_effects": config.store_effects,
        "coefficient_variance": priors.coefficient_variance,
        "variance_shape": priors.variance_shape,
        "variance_rate": priors.variance_rate,
        "beta0": beta0,
        "s2_0": s2_0,
        "seed": config.seed,
    }
    chain_inputs = [dict(base, chain=c) for c in range(config.chains)]
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            results = list(pool.map(_run_chain, chain_inputs))
    else:
        results = [_run_chain(ci) for ci in chain_inputs]

    levels = index.levels
    L = len(levels)
    parameters = (("mu",)
                  + tuple(f"var[{lv}]" for lv in levels)
                  + (f"var[{IDIOSYNCRATIC}]",)
                  + tuple(f"beta[{c}]" for c in design.columns))
    draws = np.stack([r["draws"] for r in results])
    deviance = np.stack([r["deviance"] for r in results])

    total_kept = sum(r["kept"] for r in results)
    mean_beta = sum(r["beta_sum"] for r in results) / total_kept
    mean_mu = sum(r["mu_sum"] for r in results) / total_kept
    mean_sige = sum(r["sige_sum"] for r in results) / total_kept
    effect_means = {}
    for l, lv in enumerate(levels):
        effect_means[lv] = sum(r["effect_sums"][l] for r in results) / total_kept

    fitted = design.X @ mean_beta + mean_mu
    for l, lv in enumerate(levels):
        fitted += effect_means[lv][index.codes[lv]]
    resid_bar = y - fitted
    n = len(y)
    d_bar = sum(r["dev_sum"] for r in results) / total_kept
    d_at_mean = n * math.log(2.0 * math.pi * mean_sige) \
        + float(resid_bar @ resid_bar) / mean_sige
    if config.dic_penalty == "point":
        p_d = d_bar - d_at_mean
    else:
        total_sq = sum(r["dev_sumsq"] for r in results)
        total_s = sum(r["dev_sum"] for r in results)
        var_dev = (total_sq - total_s * total_s / total_kept) / max(total_kept - 1, 1)
        p_d = 0.5 * var_dev
    dic = d_bar + p_d

    warnings: list[str] = []
    rhat: dict[str, float] = {}
    ess: dict[str, float] = {}
    if config.stored >= 4:
        for j, name in enumerate(parameters):
            series = draws[:, :, j]
            rhat[name] = _split_rhat(series)
            ess[name] = _effective_sample_size(series)
        poorly = [name for name, v in rhat.items()
                  if math.isfinite(v) and v > _RHAT_WARN]
        if poorly:
            warnings.append(
                f"split rhat above {_RHAT_WARN} for: {', '.join(poorly)}; "
                "treat those marginals as unconverged")
    else:
        warnings.append("too few stored draws for split-chain diagnostics")

    effect_draws = {}
    if config.store_effects:
        for l, lv in enumerate(levels):
            effect_draws[lv] = np.stack([r["effect_draws"][l] for r in results])

    return PosteriorDraws(
        parameters=parameters,
        draws=draws,
        components=levels + (IDIOSYNCRATIC,),
        levels=levels,
        beta_columns=design.columns,
        effect_labels={lv: index.labels[lv] for lv in levels},
        effect_draws=effect_draws,
        effect_means=effect_means,
        deviance_draws=deviance,
        mean_deviance=float(d_bar),
        deviance_at_mean=float(d_at_mean),
        p_d=float(p_d),
        dic=float(dic),
        rhat=rhat,
        ess=ess,
        config=config,
        priors=priors,
        n_obs=n,
        warnings=tuple(warnings),
    )


def posterior_histogram(draws: PosteriorDraws, parameter: str,
                        bins: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Histogram (counts, edges) of one parameter's pooled draws."""
    x = draws.draws_for(parameter)
    counts, edges = np.histogram(x, bins=bins)
    return counts, edges


def render_histogram_text(draws: PosteriorDraws, parameter: str,
                          bins: int = 30, width: int = 50) -> str:
    """Fixed-width text histogram of one parameter's pooled draws."""
    counts, edges = posterior_histogram(draws, parameter, bins=bins)
    peak = max(int(counts.max()), 1)
    x = draws.draws_for(parameter)
    lines = [f"{parameter}: n = {x.size}, mean = {x.mean():.6g}, "
             f"sd = {x.std(ddof=1):.6g}"]
    for i, c in enumerate(counts):
        bar = "#" * max(int(round(width * c / peak)), 1 if c else 0)
        lines.append(f"  {edges[i]:>12.5g} .. {edges[i + 1]:>12.5g} {int(c):>7d} {bar}")
    return "\n".join(lines) + "\n"


def draws_csv_rows(draws: PosteriorDraws) -> list[tuple[str, str, str, str]]:
    """Long-format draw rows (chain, iter, parameter, value), 1-based
    chain and stored-iteration indices, with header."""
    rows = [("chain", "iter", "parameter", "value")]
    n_chains, stored, _ = draws.draws.shape
    for c in range(n_chains):
        for s in range(stored):
            for j, name in enumerate(draws.parameters):
                rows.append((str(c + 1), str(s + 1), name, repr(float(draws.draws[c, s, j]))))
    return rows


def summary_csv_rows(draws: PosteriorDraws) -> list[tuple[str, ...]]:
    """Per-parameter posterior summary rows with header."""
    rows = [("parameter", "mean", "sd", "q2.5", "median", "q97.5", "rhat", "ess")]
    summ = draws.summary()
    for name in draws.parameters:
        s = summ[name]
        rows.append((name, repr(s["mean"]), repr(s["sd"]), repr(s["q2.5"]),
                     repr(s["median"]), repr(s["q97.5"]),
                     repr(s["rhat"]), repr(s["ess"])))
    return rows
