"""Nested variance models for crop yields and monsoon index insurance.

The package has two halves. The modelling half fits a six-component
variance decomposition of transformed crop yields (five nested grouping
levels plus an idiosyncratic term) by pooled least squares, maximum
likelihood, or Gibbs sampling, and turns the fitted components into
intra-class correlations and variance shares. The actuarial half prices
three-phase rainfall index insurance contracts from daily village
rainfall, with phase windows detected from the monsoon onset.
"""

from .errors import (YieldriskError, DataError, SchemaError, RowError,
                     ConsistencyError, DomainError, ContractError,
                     CoverageError, ConfigError, NumericalError,
                     RankDeficiencyError, ConvergenceError, GibbsError)
from .data import (CANONICAL_CROPS, INPUT_FIELDS, PANEL_COLUMNS,
                   RAINFALL_COLUMNS, REGIONS, MONSOON_START_MONTH,
                   ihs, ihs_inverse, YieldRecord, TransformedRecord,
                   transform_panel, PanelSchema, load_yield_panel,
                   write_yield_panel, RainfallSeries, RainfallSchema,
                   load_rainfall, write_rainfall, monsoon_window)
from .hierarchy import (LEVELS, PARENT_PAIRS, HierarchySpec, GroupIndex,
                        build_index, DesignMatrix, build_design, crop_order,
                        season_dummies)
from .decomposition import (IDIOSYNCRATIC, COMPONENTS, COVARIATE_SIDE,
                            IDIOSYNCRATIC_SIDE, VarianceDecomposition,
                            decompose, PosteriorDecomposition,
                            decompose_posterior, render_decomposition_text,
                            decomposition_csv_rows)
from .estimation import (FitResult, fit_ols, fit_mle, profile_zeta,
                         ZetaProfile, zeta_csv_rows, parse_parameter_id,
                         render_fit_text, fit_to_dict, fit_from_dict)
from .gibbs import (PriorSpec, ChainConfig, PosteriorDraws, run_gibbs,
                    posterior_histogram, render_histogram_text,
                    draws_csv_rows, summary_csv_rows)
from .actuarial import (DEFICIT, EXCESS, PHASE_LABELS, PHASE_LENGTH_DAYS,
                        DETECTION_THRESHOLD_MM, PhaseTerm, Contract, payout,
                        PhaseWindows, detect_phases, phase_total,
                        CellResult, PricingResult, price, years_until_payout,
                        loading_factor,
                        standard_contracts, contract_to_dict, save_contract,
                        load_contract, with_premium, render_pricing_text,
                        pricing_csv_rows, cell_ledger_rows)
from .synthetic import (GenerativeConfig, PanelTruth, generate_panel,
                        survey_scale_config, RainfallGenConfig,
                        RainfallTruth, generate_rainfall,
                        calibrate_phase_means, calibrate_to_premium)

__version__ = "0.1.0"

__all__ = [
    "YieldriskError", "DataError", "SchemaError", "RowError",
    "ConsistencyError", "DomainError", "ContractError", "CoverageError",
    "ConfigError", "NumericalError", "RankDeficiencyError",
    "ConvergenceError", "GibbsError",
    "CANONICAL_CROPS", "INPUT_FIELDS", "PANEL_COLUMNS", "RAINFALL_COLUMNS",
    "REGIONS", "MONSOON_START_MONTH",
    "ihs", "ihs_inverse", "YieldRecord", "TransformedRecord",
    "transform_panel", "PanelSchema", "load_yield_panel", "write_yield_panel",
    "RainfallSeries", "RainfallSchema", "load_rainfall", "write_rainfall",
    "monsoon_window",
    "LEVELS", "PARENT_PAIRS", "HierarchySpec", "GroupIndex", "build_index",
    "DesignMatrix", "build_design", "crop_order", "season_dummies",
    "IDIOSYNCRATIC", "COMPONENTS", "COVARIATE_SIDE", "IDIOSYNCRATIC_SIDE",
    "VarianceDecomposition", "decompose", "PosteriorDecomposition",
    "decompose_posterior", "render_decomposition_text",
    "decomposition_csv_rows",
    "FitResult", "fit_ols", "fit_mle", "profile_zeta", "ZetaProfile",
    "zeta_csv_rows", "parse_parameter_id", "render_fit_text", "fit_to_dict",
    "fit_from_dict",
    "PriorSpec", "ChainConfig", "PosteriorDraws", "run_gibbs",
    "posterior_histogram", "render_histogram_text", "draws_csv_rows",
    "summary_csv_rows",
    "DEFICIT", "EXCESS", "PHASE_LABELS", "PHASE_LENGTH_DAYS",
    "DETECTION_THRESHOLD_MM", "PhaseTerm", "Contract", "payout",
    "PhaseWindows", "detect_phases", "phase_total", "CellResult",
    "PricingResult", "price", "years_until_payout", "loading_factor",
    "standard_contracts",
    "contract_to_dict", "save_contract", "load_contract", "with_premium",
    "render_pricing_text", "pricing_csv_rows", "cell_ledger_rows",
    "GenerativeConfig", "PanelTruth", "generate_panel",
    "survey_scale_config", "RainfallGenConfig", "RainfallTruth",
    "generate_rainfall", "calibrate_phase_means", "calibrate_to_premium",
]
