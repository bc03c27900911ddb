"""Fixed-effects baseline and maximum-likelihood fitting of the nested
variance model.

The marginal model never materializes an n-by-n covariance. Everything
runs through sufficient statistics: with ``Z`` the stacked group
indicator matrix (q columns across the random levels) and ``D`` the
block-diagonal prior covariance, the capacitance matrix
``M = D^-1 + Z'Z / s2`` is q-by-q and sparse, and

* ``log|V| = n log s2 + sum_l c_l log s2_l + log|M|``
* ``a' V^-1 b = (a'b - (Z'a)' M^-1 (Z'b) / s2) / s2``
* group-effect predictions solve ``M u = Z'(y - X beta) / s2``

so one sparse factorization per parameter value prices the likelihood,
the generalized-least-squares coefficients, and the effect predictions.
Expectation-maximization updates (which also need the block diagonal of
``M^-1``) warm-start a quasi-Newton polish on log variances.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import cho_factor, cho_solve, qr as qr_pivot
from scipy.optimize import minimize
from scipy.sparse.linalg import splu
from scipy.stats import norm

from .data import YieldRecord, transform_panel
from .decomposition import IDIOSYNCRATIC, VarianceDecomposition, decompose
from .errors import ContractError, ConvergenceError, DomainError, RankDeficiencyError
from .hierarchy import (GroupIndex, HierarchySpec, build_design, build_index,
                        season_dummies)

_VARIANCE_FLOOR = 1e-10
_BOUNDARY_LOG = -20.0
_DENSE_Q = 800


@dataclass(frozen=True)
class FitResult:
    """Uniform fit summary for the least-squares and likelihood paths.

    ``variances`` maps component names (the random levels plus
    ``"idiosyncratic"``) to point estimates; for the fixed-effects
    baseline only the idiosyncratic entry is present. Components pinned
    at the zero boundary are reported as exactly ``0.0`` and listed in
    ``boundary``; ``unidentified`` lists components whose variance the
    data cannot separate (with the reason repeated in ``warnings``).
    Coefficient standard errors assume Gaussian disturbances, hence
    ``normality_assumed``.
    """

    method: str
    n_obs: int
    n_params: int
    coefficients: Mapping[str, float]
    standard_errors: Mapping[str, float]
    variances: Mapping[str, float]
    variance_se: Mapping[str, float]
    log_likelihood: float
    aic: float
    r_squared: float | None
    levels: tuple[str, ...]
    converged: bool
    iterations: int
    em_log_likelihoods: tuple[float, ...]
    boundary: tuple[str, ...]
    unidentified: tuple[str, ...]
    dropped_columns: tuple[str, ...]
    blups: Mapping[str, Mapping[object, float]]
    normality_assumed: bool = True
    warnings: tuple[str, ...] = ()
    _context: object = field(default=None, repr=False, compare=False)

    def decomposition(self) -> VarianceDecomposition:
        """Variance decomposition of the fitted components."""
        return decompose(self.variances)


def _rank_detect(X: np.ndarray, columns: Sequence[str], on_deficient: str):
    """Pivoted-QR rank detection. Returns kept column indices (sorted)
    and the dropped labels."""
    n, p = X.shape
    _, R, perm = qr_pivot(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        raise RankDeficiencyError("design matrix is identically zero", columns=tuple(columns))
    tol = diag[0] * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank == p:
        return np.arange(p), ()
    dropped = tuple(columns[j] for j in sorted(perm[rank:]))
    if on_deficient == "raise":
        raise RankDeficiencyError(
            f"design is rank deficient ({rank} < {p}); collinear columns: {', '.join(dropped)}",
            columns=dropped)
    return np.sort(perm[:rank]), dropped


def fit_ols(records: Sequence[YieldRecord], spec: HierarchySpec | None = None,
            include_seasons: bool = False, on_deficient: str = "drop") -> FitResult:
    """Pooled least squares of transformed yield on the crop design.

    ``include_seasons`` adds drop-first season indicator columns, which
    absorbs season, village and time variation into fixed effects.
    Collinear columns are dropped with a warning by default; pass
    ``on_deficient="raise"`` to get :class:`RankDeficiencyError` naming
    them instead.

    The reported idiosyncratic variance is the degrees-of-freedom
    corrected residual variance; the log likelihood and information
    criterion use the maximum-likelihood variance, with parameter count
    ``rank + 1``.
    """
    if on_deficient not in ("drop", "raise"):
        raise DomainError("on_deficient must be 'drop' or 'raise'")
    spec = spec or HierarchySpec()
    trans = transform_panel(records)
    design = build_design(trans, spec)
    X = design.X
    columns = list(design.columns)
    if include_seasons:
        index = build_index(trans, HierarchySpec(levels=("season",),
                                                 include_covariates=spec.include_covariates))
        D, season_labels = season_dummies(index)
        X = np.hstack([X, D])
        columns.extend(season_labels)
    y = np.array([r.y for r in trans])
    n = len(y)
    keep, dropped = _rank_detect(X, columns, on_deficient)
    Xk = X[:, keep]
    kept_cols = [columns[j] for j in keep]
    k = Xk.shape[1]
    if n <= k:
        raise DomainError(f"need more observations ({n}) than columns ({k})")
    beta, rss_arr, _, _ = np.linalg.lstsq(Xk, y, rcond=None)
    resid = y - Xk @ beta
    rss = float(resid @ resid)
    s2 = rss / (n - k)
    XtX = Xk.T @ Xk
    cov = s2 * np.linalg.inv(XtX)
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    tss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    s2_ml = rss / n
    lnl = -0.5 * n * (math.log(2.0 * math.pi * s2_ml) + 1.0)
    warnings = ()
    if dropped:
        warnings = (f"dropped collinear columns: {', '.join(dropped)}",)
    return FitResult(
        method="ols",
        n_obs=n,
        n_params=k + 1,
        coefficients=dict(zip(kept_cols, map(float, beta))),
        standard_errors=dict(zip(kept_cols, map(float, se))),
        variances={IDIOSYNCRATIC: float(s2)},
        variance_se={},
        log_likelihood=float(lnl),
        aic=float(2.0 * (k + 1) - 2.0 * lnl),
        r_squared=float(r2),
        levels=(),
        converged=True,
        iterations=0,
        em_log_likelihoods=(),
        boundary=(),
        unidentified=(),
        dropped_columns=dropped,
        blups={},
        warnings=warnings,
    )


@dataclass
class _Stats:
    """Sufficient statistics of the panel for the marginal model."""

    levels: tuple[str, ...]
    counts: tuple[int, ...]
    offsets: tuple[int, ...]
    q: int
    n: int
    columns: tuple[str, ...]
    XtX: np.ndarray
    Xty: np.ndarray
    yty: float
    ZtX: np.ndarray
    Zty: np.ndarray
    ZtZ: sparse.spmatrix

    @property
    def p(self) -> int:
        return len(self.columns)


def _build_stats(index: GroupIndex, X: np.ndarray, columns: Sequence[str],
                 y: np.ndarray) -> _Stats:
    n = index.n_obs
    rows = np.arange(n)
    blocks = []
    counts = []
    for level in index.levels:
        c = index.sizes[level]
        S = sparse.csr_matrix((np.ones(n), (rows, index.codes[level])), shape=(n, c))
        blocks.append(S)
        counts.append(c)
    Z = sparse.hstack(blocks, format="csr")
    offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(counts)[:-1]]))
    return _Stats(
        levels=index.levels,
        counts=tuple(counts),
        offsets=offsets,
        q=int(sum(counts)),
        n=n,
        columns=tuple(columns),
        XtX=X.T @ X,
        Xty=X.T @ y,
        yty=float(y @ y),
        ZtX=np.asarray(Z.T @ X),
        Zty=np.asarray(Z.T @ y).ravel(),
        ZtZ=(Z.T @ Z).tocsc(),
    )


class _DenseFactor:
    def __init__(self, M: np.ndarray):
        self._c = cho_factor(M, lower=True)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._c[0]))))

    def solve(self, B):
        return cho_solve(self._c, B)


class _SparseFactor:
    def __init__(self, M: sparse.spmatrix):
        self._lu = splu(M)
        # M is positive definite, so the determinant magnitude is the answer.
        self.logdet = float(np.sum(np.log(np.abs(self._lu.U.diagonal()))))

    def solve(self, B):
        return self._lu.solve(np.asarray(B))


def _factorize(stats: _Stats, theta: np.ndarray):
    sig_e = theta[-1]
    dinv = np.concatenate([np.full(c, 1.0 / s)
                           for c, s in zip(stats.counts, theta[:-1])])
    if stats.q <= _DENSE_Q:
        M = (stats.ZtZ * (1.0 / sig_e)).toarray()
        M[np.diag_indices_from(M)] += dinv
        return _DenseFactor(M)
    M = (stats.ZtZ * (1.0 / sig_e) + sparse.diags(dinv)).tocsc()
    return _SparseFactor(M)


@dataclass
class _GLS:
    beta: np.ndarray
    log_likelihood: float
    factor: object
    XtViX: np.ndarray
    Ztr: np.ndarray


def _gls_core(stats: _Stats, theta: np.ndarray) -> _GLS:
    """One marginal-likelihood evaluation with coefficients profiled out."""
    sig_e = float(theta[-1])
    fac = _factorize(stats, theta)
    A = fac.solve(stats.ZtX)
    my = fac.solve(stats.Zty)
    XtViX = (stats.XtX - stats.ZtX.T @ A / sig_e) / sig_e
    XtViy = (stats.Xty - stats.ZtX.T @ my / sig_e) / sig_e
    try:
        c = cho_factor(XtViX, lower=True)
        beta = cho_solve(c, XtViy)
    except np.linalg.LinAlgError:
        beta = np.linalg.lstsq(XtViX, XtViy, rcond=None)[0]
    ytViy = (stats.yty - stats.Zty @ my / sig_e) / sig_e
    rss_v = float(ytViy - XtViy @ beta)
    logdet_v = (stats.n * math.log(sig_e)
                + sum(c * math.log(s) for c, s in zip(stats.counts, theta[:-1]))
                + fac.logdet)
    lnl = -0.5 * (stats.n * math.log(2.0 * math.pi) + logdet_v + rss_v)
    return _GLS(beta=beta, log_likelihood=float(lnl), factor=fac, XtViX=XtViX,
                Ztr=stats.Zty - stats.ZtX @ beta)


def _profile_nll(stats: _Stats, theta: np.ndarray) -> float:
    try:
        g = _gls_core(stats, theta)
    except (np.linalg.LinAlgError, ValueError, RuntimeError):
        return 1e10
    if not math.isfinite(g.log_likelihood):
        return 1e10
    return -g.log_likelihood


def _block_diag_traces(stats: _Stats, fac, chunk: int = 1024) -> np.ndarray:
    """Per-level traces of the block diagonal of ``M^-1``."""
    q = stats.q
    diag = np.empty(q)
    for s in range(0, q, chunk):
        e = min(s + chunk, q)
        B = np.zeros((q, e - s))
        B[np.arange(s, e), np.arange(e - s)] = 1.0
        sol = fac.solve(B)
        diag[s:e] = sol[np.arange(s, e), np.arange(e - s)]
    return np.array([diag[o:o + c].sum() for o, c in zip(stats.offsets, stats.counts)])


def _em_step(stats: _Stats, theta: np.ndarray) -> tuple[float, np.ndarray]:
    """One expectation-maximization cycle; returns the profile log
    likelihood at the incoming parameters and the updated parameters."""
    sig_e = float(theta[-1])
    g = _gls_core(stats, theta)
    u = g.factor.solve(g.Ztr) / sig_e
    traces = _block_diag_traces(stats, g.factor)
    new = np.empty_like(theta)
    for l, (off, c) in enumerate(zip(stats.offsets, stats.counts)):
        ssq = float(u[off:off + c] @ u[off:off + c])
        new[l] = (ssq + traces[l]) / c
    beta = g.beta
    rtr = stats.yty - 2.0 * beta @ stats.Xty + beta @ stats.XtX @ beta
    ssr = rtr - 2.0 * float(u @ g.Ztr) + float(u @ (stats.ZtZ @ u))
    tr_ztz_minv = sig_e * (stats.q - float(np.sum(traces / theta[:-1])))
    new[-1] = (ssr + tr_ztz_minv) / stats.n
    return g.log_likelihood, np.maximum(new, _VARIANCE_FLOOR)


def _identification_checks(index: GroupIndex) -> tuple[tuple[str, ...], tuple[str, ...]]:
    flags: list[str] = []
    notes: list[str] = []
    for level in index.levels:
        if index.sizes[level] < 2:
            flags.append(level)
            notes.append(f"level '{level}' has a single group; its variance is "
                         "confounded with the intercept")
        elif np.all(index.members(level) == 1):
            flags.append(level)
            notes.append(f"every '{level}' group has one observation; its variance is "
                         "confounded with the idiosyncratic term")
    for i, a in enumerate(index.levels):
        for b in index.levels[i + 1:]:
            if index.sizes[a] != index.sizes[b]:
                continue
            pair = index.codes[a].astype(np.int64) * (index.sizes[b] + 1) + index.codes[b]
            if len(np.unique(pair)) == index.sizes[a]:
                notes.append(f"levels '{a}' and '{b}' induce the same partition; "
                             "their variances are not separately identified")
                for lv in (a, b):
                    if lv not in flags:
                        flags.append(lv)
    return tuple(flags), tuple(notes)


@dataclass
class _MLEContext:
    """In-process handle kept on a likelihood fit so profiles can reuse
    the sufficient statistics."""

    stats: _Stats
    theta: np.ndarray
    components: tuple[str, ...]
    log_likelihood: float


def fit_mle(records: Sequence[YieldRecord], spec: HierarchySpec | None = None, *,
            em_iterations: int = 25, polish: bool = True, tol: float = 1e-8,
            max_polish: int = 200, compute_se: bool = True,
            on_deficient: str = "drop") -> FitResult:
    """Maximum likelihood for the nested random-effects model.

    Expectation-maximization runs from a least-squares warm start until
    the profile log likelihood moves less than ``tol`` (relative) or
    ``em_iterations`` is reached, then a bound-constrained quasi-Newton
    pass on log variances finishes the job. The recorded per-iteration
    log likelihoods are non-decreasing, a useful self-check.

    Variance standard errors come from the curvature of the profile
    likelihood at the optimum (finite differences on the natural scale);
    they are ``nan`` for components pinned at the zero boundary.
    """
    spec = spec or HierarchySpec()
    if not spec.levels:
        raise DomainError("the likelihood fit needs at least one random level; "
                          "use fit_ols for the purely fixed-effects model")
    trans = transform_panel(records)
    index = build_index(trans, spec)
    design = build_design(trans, spec)
    y = np.array([r.y for r in trans])
    keep, dropped = _rank_detect(design.X, design.columns, on_deficient)
    X = design.X[:, keep]
    columns = tuple(design.columns[j] for j in keep)
    warnings: list[str] = []
    if dropped:
        warnings.append(f"dropped collinear columns: {', '.join(dropped)}")
    unidentified, id_notes = _identification_checks(index)
    warnings.extend(id_notes)

    stats = _build_stats(index, X, columns, y)
    n_comp = len(index.levels) + 1
    components = index.levels + (IDIOSYNCRATIC,)

    beta0 = np.linalg.lstsq(X, y, rcond=None)[0]
    resid0 = y - X @ beta0
    s2_total = float(resid0 @ resid0) / max(stats.n - stats.p, 1)
    theta = np.full(n_comp, max(s2_total, 1e-6) / n_comp)

    em_path: list[float] = []
    em_converged = False
    iterations = 0
    for it in range(em_iterations):
        lnl, theta_new = _em_step(stats, theta)
        em_path.append(lnl)
        iterations = it + 1
        if em_path[-2:-1] and abs(lnl - em_path[-2]) <= tol * (1.0 + abs(lnl)):
            theta = theta_new
            em_converged = True
            break
        theta = theta_new
    em_path.append(-_profile_nll(stats, theta))

    polished = False
    if polish:
        x0 = np.log(np.maximum(theta, _VARIANCE_FLOOR))
        res = minimize(lambda phi: _profile_nll(stats, np.exp(phi)), x0,
                       method="L-BFGS-B", jac="3-point",
                       bounds=[(-30.0, 10.0)] * n_comp,
                       options={"maxiter": max_polish, "ftol": 1e-11})
        if -res.fun >= em_path[-1] - 1e-6:
            theta = np.exp(res.x)
            polished = bool(res.success)
    converged = polished or em_converged
    if not converged:
        warnings.append("optimizer did not report convergence; estimates are the "
                        "best iterate found")

    g = _gls_core(stats, theta)
    lnl_hat = g.log_likelihood
    u = g.factor.solve(g.Ztr) / float(theta[-1])

    boundary = tuple(components[i] for i in range(n_comp)
                     if math.log(max(theta[i], _VARIANCE_FLOOR)) <= _BOUNDARY_LOG)
    variances = {}
    for i, comp in enumerate(components):
        variances[comp] = 0.0 if comp in boundary else float(theta[i])

    variance_se: dict[str, float] = {comp: float("nan") for comp in components}
    if compute_se:
        variance_se.update(_variance_standard_errors(stats, theta, components, boundary))

    try:
        cov_beta = np.linalg.inv(g.XtViX)
        beta_se = np.sqrt(np.maximum(np.diag(cov_beta), 0.0))
    except np.linalg.LinAlgError:
        beta_se = np.full(stats.p, float("nan"))
        warnings.append("coefficient covariance is singular; standard errors unavailable")

    blups: dict[str, dict[object, float]] = {}
    for level, off, c in zip(stats.levels, stats.offsets, stats.counts):
        labels = index.labels[level]
        blups[level] = {labels[j]: float(u[off + j]) for j in range(c)}

    k = stats.p + n_comp
    context = _MLEContext(stats=stats, theta=theta.copy(), components=components,
                          log_likelihood=lnl_hat)
    return FitResult(
        method="mle",
        n_obs=stats.n,
        n_params=k,
        coefficients=dict(zip(columns, map(float, g.beta))),
        standard_errors=dict(zip(columns, map(float, beta_se))),
        variances=variances,
        variance_se=variance_se,
        log_likelihood=float(lnl_hat),
        aic=float(2.0 * k - 2.0 * lnl_hat),
        r_squared=None,
        levels=index.levels,
        converged=converged,
        iterations=iterations,
        em_log_likelihoods=tuple(em_path),
        boundary=boundary,
        unidentified=unidentified,
        dropped_columns=dropped,
        blups=blups,
        warnings=tuple(warnings),
        _context=context,
    )


def _variance_standard_errors(stats: _Stats, theta: np.ndarray,
                              components: tuple[str, ...],
                              boundary: tuple[str, ...]) -> dict[str, float]:
    """Curvature-based standard errors on the natural variance scale."""
    free = [i for i, comp in enumerate(components) if comp not in boundary]
    if not free:
        return {}
    m = len(free)
    h = np.array([min(max(1e-5, 1e-4 * theta[i]), theta[i] / 2.0) for i in free])

    def f(delta: np.ndarray) -> float:
        th = theta.copy()
        th[free] = np.maximum(theta[free] + delta, _VARIANCE_FLOOR)
        return _profile_nll(stats, th)

    f0 = f(np.zeros(m))
    H = np.empty((m, m))
    for a in range(m):
        da = np.zeros(m)
        da[a] = h[a]
        H[a, a] = (f(da) - 2.0 * f0 + f(-da)) / (h[a] ** 2)
        for b in range(a + 1, m):
            db = np.zeros(m)
            db[b] = h[b]
            H[a, b] = H[b, a] = (f(da + db) - f(da - db) - f(-da + db) + f(-da - db)) \
                / (4.0 * h[a] * h[b])
    out: dict[str, float] = {}
    try:
        cov = np.linalg.inv(H)
        d = np.diag(cov)
        for j, i in enumerate(free):
            out[components[i]] = math.sqrt(d[j]) if d[j] > 0 else float("nan")
    except np.linalg.LinAlgError:
        pass
    return out


_VAR_ID = re.compile(r"^var\[([a-z_]+)\]$")
_BETA_ID = re.compile(r"^beta\[(.+)\]$")


def parse_parameter_id(parameter: str) -> tuple[str, str]:
    """Split a parameter identifier into its kind and key.

    ``"var[parcel]"`` -> ``("var", "parcel")``;
    ``"beta[rice:labor]"`` -> ``("beta", "rice:labor")``;
    ``"mu"`` -> ``("mu", "mu")``.
    """
    if parameter == "mu":
        return ("mu", "mu")
    m = _VAR_ID.match(parameter)
    if m:
        return ("var", m.group(1))
    m = _BETA_ID.match(parameter)
    if m:
        return ("beta", m.group(1))
    raise DomainError(f"unrecognized parameter identifier {parameter!r}; expected "
                      "'mu', 'var[<component>]' or 'beta[<crop>:<term>]'")


@dataclass(frozen=True)
class ZetaProfile:
    """Signed-root likelihood-ratio profile of a single parameter.

    ``zetas[i]`` is ``sign(theta_i - theta_hat) * sqrt(2 (lnL_hat -
    lnL_profile(theta_i)))``; against a Gaussian likelihood it is a
    straight line through zero with slope ``1/se``, so curvature and
    asymmetry read off directly. Grid points where the inner
    optimization failed are listed in ``failed`` and omitted.
    """

    parameter: str
    theta_hat: float
    se: float
    thetas: tuple[float, ...]
    zetas: tuple[float, ...]
    failed: tuple[float, ...]
    log_likelihood_hat: float


def _stats_fix_column(stats: _Stats, j: int, value: float) -> _Stats:
    """Sufficient statistics of the model with column ``j`` constrained,
    folding ``value`` times the column into the response offset."""
    keep = [i for i in range(stats.p) if i != j]
    XtX = stats.XtX[np.ix_(keep, keep)]
    Xty = stats.Xty[keep] - value * stats.XtX[keep, j]
    yty = stats.yty - 2.0 * value * stats.Xty[j] + value * value * stats.XtX[j, j]
    ZtX = stats.ZtX[:, keep]
    Zty = stats.Zty - value * stats.ZtX[:, j]
    return _Stats(levels=stats.levels, counts=stats.counts, offsets=stats.offsets,
                  q=stats.q, n=stats.n,
                  columns=tuple(stats.columns[i] for i in keep),
                  XtX=XtX, Xty=Xty, yty=float(yty), ZtX=ZtX, Zty=Zty, ZtZ=stats.ZtZ)


def _optimize_variances(stats: _Stats, theta0: np.ndarray,
                        fixed: int | None = None,
                        fixed_value: float | None = None) -> float:
    """Maximized profile log likelihood over variances, optionally with
    one variance clamped. Returns the achieved log likelihood."""
    n_comp = len(theta0)
    free = [i for i in range(n_comp) if i != fixed]

    def nll(phi_free: np.ndarray) -> float:
        th = np.empty(n_comp)
        th[free] = np.exp(phi_free)
        if fixed is not None:
            th[fixed] = fixed_value
        return _profile_nll(stats, th)

    x0 = np.log(np.maximum(theta0[free], _VARIANCE_FLOOR))
    res = minimize(nll, x0, method="L-BFGS-B", jac="3-point",
                   bounds=[(-30.0, 10.0)] * len(free),
                   options={"maxiter": 150, "ftol": 1e-11})
    best = -res.fun
    start = -nll(x0)
    if not math.isfinite(best) or best < start:
        best = start
    if not math.isfinite(best) or best <= -1e9:
        raise ConvergenceError("profile optimization failed")
    return best


def profile_zeta(result: FitResult, parameter: str, n_points: int = 21,
                 half_width_se: float = 4.0) -> ZetaProfile:
    """Profile one parameter of a likelihood fit on a signed-root scale.

    The grid spans ``half_width_se`` Wald standard errors either side of
    the estimate (clipped below at a small positive value for
    variances), with the remaining variances re-optimized and the
    coefficients profiled at every point.
    """
    ctx = result._context
    if not isinstance(ctx, _MLEContext):
        raise ContractError("profiling needs a likelihood fit produced in this "
                            "process; refit before profiling")
    if n_points < 3:
        raise DomainError("need at least 3 grid points")
    kind, key = parse_parameter_id(parameter)
    stats = ctx.stats
    lnl_hat = ctx.log_likelihood

    if kind == "mu":
        raise DomainError("the likelihood fit folds the grand intercept into the "
                          "crop intercepts; profile one of those instead")
    if kind == "var":
        if key not in ctx.components:
            raise DomainError(f"unknown variance component {key!r}")
        idx = ctx.components.index(key)
        theta_hat = float(ctx.theta[idx])
        se = float(result.variance_se.get(key, float("nan")))
        width = half_width_se * se if math.isfinite(se) and se > 0 \
            else max(abs(theta_hat), 1e-6)
        lo = max(theta_hat - width, max(theta_hat * 1e-3, 1e-8))
        hi = theta_hat + width
        grid = np.linspace(lo, hi, n_points)
        reported_hat = float(result.variances[key])

        def prof(theta0: float) -> float:
            return _optimize_variances(stats, ctx.theta, fixed=idx, fixed_value=theta0)
    else:
        if key not in stats.columns:
            raise DomainError(f"unknown coefficient {key!r}")
        j = stats.columns.index(key)
        theta_hat = float(result.coefficients[key])
        se = float(result.standard_errors.get(key, float("nan")))
        width = half_width_se * se if math.isfinite(se) and se > 0 \
            else max(abs(theta_hat) * 0.5, 1e-3)
        grid = np.linspace(theta_hat - width, theta_hat + width, n_points)
        reported_hat = theta_hat

        def prof(theta0: float) -> float:
            return _optimize_variances(_stats_fix_column(stats, j, theta0), ctx.theta)

    thetas: list[float] = []
    zetas: list[float] = []
    failed: list[float] = []
    for theta0 in grid:
        try:
            lnl_prof = prof(float(theta0))
        except (ConvergenceError, np.linalg.LinAlgError, ValueError):
            failed.append(float(theta0))
            continue
        lr = 2.0 * (lnl_hat - lnl_prof)
        if lr < -1e-4:
            # The constrained optimum beat the unconstrained fit, so this
            # point is untrustworthy rather than merely noisy.
            failed.append(float(theta0))
            continue
        z = math.copysign(math.sqrt(max(lr, 0.0)), theta0 - theta_hat)
        thetas.append(float(theta0))
        zetas.append(z)
    return ZetaProfile(parameter=parameter, theta_hat=reported_hat, se=se,
                       thetas=tuple(thetas), zetas=tuple(zetas),
                       failed=tuple(failed), log_likelihood_hat=lnl_hat)


def zeta_csv_rows(profiles: Sequence[ZetaProfile]) -> list[tuple[str, str, str]]:
    """Long-format rows for one or more profiles, with header."""
    rows = [("parameter", "theta", "abs_zeta")]
    for pr in profiles:
        for theta, zeta in zip(pr.thetas, pr.zetas):
            rows.append((pr.parameter, repr(theta), repr(abs(zeta))))
    return rows


def _stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def render_fit_text(result: FitResult) -> str:
    """Human-readable fit report: header, variance components, and the
    coefficient table with two-sided normal tests."""
    lines = []
    lines.append(f"method: {result.method}   n = {result.n_obs}   "
                 f"parameters = {result.n_params}")
    stat = f"log likelihood = {result.log_likelihood:.4f}   aic = {result.aic:.4f}"
    if result.r_squared is not None:
        stat += f"   r_squared = {result.r_squared:.4f}"
    lines.append(stat)
    if not result.converged:
        lines.append("warning: not converged")
    lines.append("")
    lines.append("variance components")
    lines.append(f"  {'component':<16}{'estimate':>12}{'se':>12}")
    for comp, v in result.variances.items():
        se = result.variance_se.get(comp, float("nan"))
        se_txt = f"{se:>12.6f}" if math.isfinite(se) else f"{'--':>12}"
        mark = "  (boundary)" if comp in result.boundary else ""
        mark += "  (not identified)" if comp in result.unidentified else ""
        lines.append(f"  {comp:<16}{v:>12.6f}{se_txt}{mark}")
    lines.append("")
    lines.append("coefficients")
    lines.append(f"  {'term':<24}{'estimate':>12}{'se':>12}{'z':>10}{'p':>12}")
    for name, est in result.coefficients.items():
        se = result.standard_errors.get(name, float("nan"))
        if math.isfinite(se) and se > 0:
            z = est / se
            p = 2.0 * float(norm.sf(abs(z)))
            lines.append(f"  {name:<24}{est:>12.6f}{se:>12.6f}{z:>10.3f}"
                         f"{p:>12.3g}  {_stars(p)}")
        else:
            lines.append(f"  {name:<24}{est:>12.6f}{'--':>12}{'--':>10}{'--':>12}")
    lines.append("significance: *** p<0.01  ** p<0.05  * p<0.1")
    if result.warnings:
        lines.append("")
        for w in result.warnings:
            lines.append(f"note: {w}")
    return "\n".join(lines) + "\n"


def _season_key(label) -> str:
    if isinstance(label, tuple):
        return "|".join(str(x) for x in label)
    return str(label)


def fit_to_dict(result: FitResult) -> dict:
    """JSON-ready summary of a fit; the same shape for every method so
    downstream consumers need not care how the numbers were produced."""
    return {
        "method": result.method,
        "n_obs": result.n_obs,
        "n_params": result.n_params,
        "coefficients": dict(result.coefficients),
        "standard_errors": _clean_nan(result.standard_errors),
        "variances": dict(result.variances),
        "variance_se": _clean_nan(result.variance_se),
        "log_likelihood": result.log_likelihood,
        "aic": result.aic,
        "r_squared": result.r_squared,
        "levels": list(result.levels),
        "converged": result.converged,
        "iterations": result.iterations,
        "em_log_likelihoods": list(result.em_log_likelihoods),
        "boundary": list(result.boundary),
        "unidentified": list(result.unidentified),
        "dropped_columns": list(result.dropped_columns),
        "normality_assumed": result.normality_assumed,
        "warnings": list(result.warnings),
        "blups": {level: {_season_key(lab): v for lab, v in vals.items()}
                  for level, vals in result.blups.items()},
    }


def _clean_nan(mapping: Mapping[str, float]) -> dict:
    return {k: (None if not math.isfinite(v) else v) for k, v in mapping.items()}


def fit_from_dict(d: Mapping) -> FitResult:
    """Rebuild a :class:`FitResult` from :func:`fit_to_dict` output.

    The returned object carries no in-process context, so it supports
    reporting and decomposition but not profiling.
    """
    def _nanify(m):
        return {k: (float("nan") if v is None else float(v)) for k, v in dict(m).items()}

    def _opt(v):
        return float("nan") if v is None else float(v)

    return FitResult(
        method=d["method"],
        n_obs=int(d["n_obs"]),
        n_params=int(d["n_params"]),
        coefficients={k: float(v) for k, v in d["coefficients"].items()},
        standard_errors=_nanify(d.get("standard_errors", {})),
        variances={k: float(v) for k, v in d["variances"].items()},
        variance_se=_nanify(d.get("variance_se", {})),
        log_likelihood=_opt(d.get("log_likelihood")),
        aic=_opt(d.get("aic")),
        r_squared=None if d.get("r_squared") is None else float(d["r_squared"]),
        levels=tuple(d.get("levels", ())),
        converged=bool(d.get("converged", True)),
        iterations=int(d.get("iterations", 0)),
        em_log_likelihoods=tuple(d.get("em_log_likelihoods", ())),
        boundary=tuple(d.get("boundary", ())),
        unidentified=tuple(d.get("unidentified", ())),
        dropped_columns=tuple(d.get("dropped_columns", ())),
        blups={level: dict(vals) for level, vals in d.get("blups", {}).items()},
        normality_assumed=bool(d.get("normality_assumed", True)),
        warnings=tuple(d.get("warnings", ())),
    )
