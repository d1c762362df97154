"""Incremental XVA pricing under asymmetric funding rates.

Builds the reduced pre-default BSDE of a bilateral contract, solves it by
least-squares Monte Carlo, verifies the sign conditions under which exactly
one of the funding adjustments vanishes, and switches to linear or
closed-form pricing when they hold.
"""

from .binary import Verdict, check_clean, check_replacement, empirical_sign_fraction, table_one
from .bsde import (
    BsdeSolution,
    GeneratorSpec,
    PhiMap,
    RegressionBasis,
    build_generator_spec,
    build_phi,
    generator_eval,
    lift_to_G,
    solve_linear,
    solve_semilinear,
)
from .closedform import ClosedFormInputs, bs_cb, call_price_replacement, forward_linear_price, norm_cdf, vasicek_zcb
from .closeout import CloseoutSpec, closeout_amount, margin, theta_exposures
from .market import (
    AssetModel,
    FundingSpreads,
    IntensityCurve,
    LegacyPortfolio,
    MarketModel,
    PathEnsemble,
    PiecewiseConstant,
    ShortRateModel,
    legacy_value,
    sample_default_times,
    simulate_paths,
    survival,
    uniform_grid,
)
from .payoffs import CleanPriceCurve, Contract, clean_price, malliavin_xi, terminal_xi
from .xva import XvaReport, decompose, identity_check

__all__ = [
    "AssetModel",
    "BsdeSolution",
    "CleanPriceCurve",
    "ClosedFormInputs",
    "CloseoutSpec",
    "Contract",
    "FundingSpreads",
    "GeneratorSpec",
    "IntensityCurve",
    "LegacyPortfolio",
    "MarketModel",
    "PathEnsemble",
    "PhiMap",
    "PiecewiseConstant",
    "RegressionBasis",
    "ShortRateModel",
    "Verdict",
    "XvaReport",
    "bs_cb",
    "build_generator_spec",
    "build_phi",
    "call_price_replacement",
    "check_clean",
    "check_replacement",
    "clean_price",
    "closeout_amount",
    "decompose",
    "empirical_sign_fraction",
    "forward_linear_price",
    "generator_eval",
    "identity_check",
    "legacy_value",
    "lift_to_G",
    "malliavin_xi",
    "margin",
    "norm_cdf",
    "sample_default_times",
    "simulate_paths",
    "solve_linear",
    "solve_semilinear",
    "survival",
    "table_one",
    "terminal_xi",
    "theta_exposures",
    "uniform_grid",
    "vasicek_zcb",
]

__version__ = "0.1.0"
