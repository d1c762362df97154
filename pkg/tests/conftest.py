import numpy as np
import pytest

from xvakit import (
    AssetModel,
    Contract,
    FundingSpreads,
    IntensityCurve,
    LegacyPortfolio,
    MarketModel,
    ShortRateModel,
    simulate_paths,
    uniform_grid,
)


def make_market(
    r=0.02,
    sigma=0.2,
    s0=100.0,
    hH=0.02,
    hC=0.03,
    s_ell=0.005,
    s_b=0.01,
    repo=frozenset({"H", "C"}),
    epsilon=0.0,
    rate_kind="constant",
    vasicek=(0.5, 0.03, 0.01),
    assets_kind="gbm",
    bond_maturity=None,
):
    if rate_kind == "constant":
        rate = ShortRateModel("constant", r)
    else:
        kappa, theta, sigma_r = vasicek
        rate = ShortRateModel("vasicek", r0=r, kappa=kappa, theta=theta, sigma_r=sigma_r)
    if assets_kind == "gbm":
        assets = AssetModel("gbm", [s0], [[sigma]])
    else:
        assets = AssetModel("bond", bond_maturity=bond_maturity)
    return MarketModel(
        rate,
        assets,
        IntensityCurve(hH, hC),
        FundingSpreads(s_ell, s_b),
        repo,
        LegacyPortfolio(epsilon),
    )


def sell_call_53(Lm=0.4):
    """The replacement-close-out sold-call configuration of the closed-form example."""
    market = make_market()
    contract = Contract(
        "call", 1.0, side="hedger_pays", strike=100.0, Lm=Lm, LH=0.6, LC=0.6, closeout="replacement"
    )
    return market, contract


@pytest.fixture(scope="session")
def market53():
    return make_market()


@pytest.fixture(scope="session")
def small_ensemble(market53):
    grid = uniform_grid(1.0, 25)
    return simulate_paths(market53, grid, 4_000, seed=101)


@pytest.fixture(scope="session")
def medium_ensemble(market53):
    grid = uniform_grid(1.0, 50)
    return simulate_paths(market53, grid, 20_000, seed=202)
