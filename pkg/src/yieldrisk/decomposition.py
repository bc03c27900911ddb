"""Variance decomposition: intraclass correlations and variance shares.

Given the six variance components (five nested levels plus the
idiosyncratic term), two summaries are produced:

* the intraclass correlation at each level, i.e. the correlation between
  two observations sharing that level and everything below it, which is
  the cumulative sum of component variances from the parcel level up,
  divided by the total;
* the share of total variance attributable to each component alone.

Both are invariant to rescaling all components by a common factor. The
ICC sequence is weakly increasing from parcel to time by construction,
and the time-level ICC equals one minus the idiosyncratic share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DomainError
from .hierarchy import LEVELS

IDIOSYNCRATIC = "idiosyncratic"

COMPONENTS = LEVELS + (IDIOSYNCRATIC,)

# Levels whose variation is shared by all parcels in a season and is in
# principle attributable to observable season/village/time conditions.
COVARIATE_SIDE = ("season", "village", "time")

IDIOSYNCRATIC_SIDE = ("parcel", "household", IDIOSYNCRATIC)


@dataclass(frozen=True)
class VarianceDecomposition:
    """Point decomposition of total variance.

    ``icc[level]`` is the intraclass correlation at that level;
    ``share[component]`` the fraction of total variance from that
    component alone. Levels absent from the fitted model appear with
    zero variance and are listed in ``not_modeled``.
    """

    variances: Mapping[str, float]
    total: float
    icc: Mapping[str, float]
    share: Mapping[str, float]
    covariate_share: float
    idiosyncratic_side_share: float
    not_modeled: tuple[str, ...]

    def share_percent(self, component: str) -> int:
        """Whole-percent rendering of a share (banker's rounding)."""
        return int(round(100.0 * self.share[component]))


def decompose(variances: Mapping[str, float]) -> VarianceDecomposition:
    """Decompose total variance into ICCs and per-component shares.

    Parameters
    ----------
    variances : mapping
        Keys from ``("parcel", "household", "season", "village", "time",
        "idiosyncratic")``; the idiosyncratic entry is required, level
        entries may be absent (treated as zero and flagged).

    Raises
    ------
    DomainError
        On negative or non-finite variances, unknown keys, or an
        all-zero total.
    """
    unknown = [k for k in variances if k not in COMPONENTS]
    if unknown:
        raise DomainError(f"unknown variance components {unknown}; valid keys are {list(COMPONENTS)}")
    if IDIOSYNCRATIC not in variances:
        raise DomainError("an idiosyncratic variance is required")
    full = {}
    not_modeled = []
    for comp in COMPONENTS:
        v = float(variances.get(comp, 0.0))
        if not math.isfinite(v) or v < 0:
            raise DomainError(f"variance for {comp!r} must be finite and non-negative, got {v!r}")
        if comp != IDIOSYNCRATIC and comp not in variances:
            not_modeled.append(comp)
        full[comp] = v
    total = sum(full.values())
    if total <= 0:
        raise DomainError("total variance is zero; nothing to decompose")
    icc = {}
    running = 0.0
    for level in LEVELS:
        running += full[level]
        icc[level] = running / total
    share = {comp: full[comp] / total for comp in COMPONENTS}
    return VarianceDecomposition(
        variances=full,
        total=total,
        icc=icc,
        share=share,
        covariate_share=sum(share[c] for c in COVARIATE_SIDE),
        idiosyncratic_side_share=sum(share[c] for c in IDIOSYNCRATIC_SIDE),
        not_modeled=tuple(not_modeled),
    )


@dataclass(frozen=True)
class PosteriorDecomposition:
    """Decomposition applied draw-by-draw to a posterior sample.

    ``icc_draws`` and ``share_draws`` map names to arrays over draws;
    ``summary`` maps ``icc[<level>]`` / ``share[<component>]`` /
    ``covariate_share`` to (mean, sd, 2.5%, 50%, 97.5%) tuples, and
    ``point`` is the decomposition of the posterior-mean variances.
    """

    icc_draws: Mapping[str, np.ndarray]
    share_draws: Mapping[str, np.ndarray]
    covariate_share_draws: np.ndarray
    summary: Mapping[str, tuple[float, float, float, float, float]]
    point: VarianceDecomposition
    not_modeled: tuple[str, ...]


def _summarize(x: np.ndarray) -> tuple[float, float, float, float, float]:
    q = np.percentile(x, [2.5, 50.0, 97.5])
    return (float(np.mean(x)), float(np.std(x, ddof=1)) if x.size > 1 else 0.0,
            float(q[0]), float(q[1]), float(q[2]))


def decompose_posterior(draws) -> PosteriorDecomposition:
    """Propagate a posterior sample of variances through :func:`decompose`.

    Parameters
    ----------
    draws : PosteriorDraws or mapping
        Either a sampler result exposing ``variance_draws()`` or a plain
        mapping from component name to a 1-d array of draws. All arrays
        must share a length; absent levels are treated as zero variance.
    """
    if hasattr(draws, "variance_draws"):
        arrays = draws.variance_draws()
    else:
        arrays = {k: np.asarray(v, dtype=float) for k, v in draws.items()}
    unknown = [k for k in arrays if k not in COMPONENTS]
    if unknown:
        raise DomainError(f"unknown variance components {unknown}")
    if IDIOSYNCRATIC not in arrays:
        raise DomainError("an idiosyncratic variance is required")
    lengths = {len(v) for v in arrays.values()}
    if len(lengths) != 1:
        raise DomainError(f"draw arrays must share a length, got {sorted(lengths)}")
    (n_draws,) = lengths
    if n_draws == 0:
        raise DomainError("empty draw arrays")
    mat = np.zeros((n_draws, len(COMPONENTS)))
    not_modeled = []
    for j, comp in enumerate(COMPONENTS):
        if comp in arrays:
            mat[:, j] = arrays[comp]
        elif comp != IDIOSYNCRATIC:
            not_modeled.append(comp)
    if np.any(~np.isfinite(mat)) or np.any(mat < 0):
        raise DomainError("variance draws must be finite and non-negative")
    totals = mat.sum(axis=1)
    if np.any(totals <= 0):
        raise DomainError("a draw has zero total variance; nothing to decompose")
    shares = mat / totals[:, None]
    cum = np.cumsum(shares[:, :len(LEVELS)], axis=1)
    icc_draws = {level: cum[:, i] for i, level in enumerate(LEVELS)}
    share_draws = {comp: shares[:, j] for j, comp in enumerate(COMPONENTS)}
    cov_idx = [COMPONENTS.index(c) for c in COVARIATE_SIDE]
    covariate = shares[:, cov_idx].sum(axis=1)
    summary = {}
    for level in LEVELS:
        summary[f"icc[{level}]"] = _summarize(icc_draws[level])
    for comp in COMPONENTS:
        summary[f"share[{comp}]"] = _summarize(share_draws[comp])
    summary["covariate_share"] = _summarize(covariate)
    point = decompose({comp: float(mat[:, j].mean()) for j, comp in enumerate(COMPONENTS)
                       if comp == IDIOSYNCRATIC or comp not in not_modeled})
    return PosteriorDecomposition(
        icc_draws=icc_draws,
        share_draws=share_draws,
        covariate_share_draws=covariate,
        summary=summary,
        point=point,
        not_modeled=tuple(not_modeled),
    )


def render_decomposition_text(dec: VarianceDecomposition, title: str = "Variance decomposition") -> str:
    """Three-panel report: variances, ICCs, shares.

    Variances and ICCs print with three decimals, shares as whole
    percents; levels not in the model are marked rather than shown as
    genuine zeros.
    """
    lines = [title, "=" * len(title), ""]
    lines.append("Panel A: variance components")
    for comp in COMPONENTS:
        mark = "  (not modeled)" if comp in dec.not_modeled else ""
        lines.append(f"  {comp:<14} {dec.variances[comp]:>8.3f}{mark}")
    lines.append(f"  {'total':<14} {dec.total:>8.3f}")
    lines.append("")
    lines.append("Panel B: intraclass correlation by level")
    for level in LEVELS:
        mark = "  (not modeled)" if level in dec.not_modeled else ""
        lines.append(f"  {level:<14} {dec.icc[level]:>8.3f}{mark}")
    lines.append("")
    lines.append("Panel C: share of total variance")
    for comp in COMPONENTS:
        mark = "  (not modeled)" if comp in dec.not_modeled else ""
        lines.append(f"  {comp:<14} {dec.share_percent(comp):>7d}%{mark}")
    lines.append("")
    lines.append(f"  season+village+time share: {100.0 * dec.covariate_share:.1f}%")
    lines.append(f"  parcel+household+idiosyncratic share: {100.0 * dec.idiosyncratic_side_share:.1f}%")
    return "\n".join(lines) + "\n"


def decomposition_csv_rows(dec: VarianceDecomposition) -> list[list]:
    """Machine-readable form of the three-panel report."""
    rows = [["panel", "name", "value", "not_modeled"]]
    for comp in COMPONENTS:
        rows.append(["variance", comp, repr(dec.variances[comp]), int(comp in dec.not_modeled)])
    rows.append(["variance", "total", repr(dec.total), 0])
    for level in LEVELS:
        rows.append(["icc", level, repr(dec.icc[level]), int(level in dec.not_modeled)])
    for comp in COMPONENTS:
        rows.append(["share", comp, repr(dec.share[comp]), int(comp in dec.not_modeled)])
    rows.append(["share", "covariate_side", repr(dec.covariate_share), 0])
    rows.append(["share", "idiosyncratic_side", repr(dec.idiosyncratic_side_share), 0])
    return rows
