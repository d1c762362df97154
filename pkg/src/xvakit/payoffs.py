"""Contract catalogue: terminal payoffs, clean prices with delta fields, Malliavin derivatives.

Sign convention throughout: a positive promised dividend means the hedger
pays.  ``side="hedger_pays"`` is the sell side (the payoff leaves the
hedger), ``side="hedger_receives"`` the buy side.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ._lsq import design_matrix, fit_slice
from .errors import ConfigurationError, UnsupportedContractError
from .market import MarketModel, PathEnsemble

KINDS = ("forward_combo", "call", "put", "asian_floating_call", "zero_coupon_bond", "bond_option")
SIDES = ("hedger_pays", "hedger_receives")


@dataclass(frozen=True)
class Contract:
    """One terminal-payment contract plus its close-out and loss parameters."""

    kind: str
    maturity: float
    side: str = "hedger_pays"
    strike: float | None = None
    weights: tuple | None = None
    strikes: tuple | None = None
    bond_maturity: float | None = None
    Lm: float = 1.0
    LH: float = 0.0
    LC: float = 0.0
    closeout: str = "clean"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedContractError(f"unknown contract kind {self.kind!r}")
        if self.side not in SIDES:
            raise ConfigurationError(f"side must be one of {SIDES}")
        if self.closeout not in ("clean", "replacement"):
            raise ConfigurationError("closeout must be 'clean' or 'replacement'")
        if self.maturity <= 0.0:
            raise ConfigurationError("maturity must be positive")
        for name in ("Lm", "LH", "LC"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.kind in ("call", "put", "asian_floating_call", "bond_option"):
            if self.strike is None or self.strike < 0.0:
                raise ConfigurationError(f"{self.kind} requires a nonnegative strike")
        if self.kind == "forward_combo":
            if not self.weights or self.strikes is None or len(self.weights) != len(self.strikes):
                raise ConfigurationError("forward_combo requires matching weights and strikes")
            if any(k < 0.0 for k in self.strikes):
                raise ConfigurationError("strikes must be nonnegative")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))
        if self.kind == "bond_option":
            if self.bond_maturity is None or self.bond_maturity <= self.maturity:
                raise ConfigurationError("bond_option requires bond_maturity > maturity")

    @property
    def side_sign(self) -> float:
        return 1.0 if self.side == "hedger_pays" else -1.0

    @property
    def xi_sign(self) -> float:
        """Sign of the discounted terminal payoff: +-1 for one-signed payoffs, 0 for mixed."""
        if self.kind == "forward_combo":
            return 0.0
        return self.side_sign

    @property
    def notional(self) -> float:
        """Reference scale for nil-vs-positive classifications."""
        if self.kind == "forward_combo":
            return max(sum(abs(w * k) for w, k in zip(self.weights, self.strikes)), 1.0)
        if self.strike is not None:
            return max(self.strike, 1.0)
        return 1.0


# ---------------------------------------------------------------------------
# terminal payoff


def _asian_weights(grid: np.ndarray) -> np.ndarray:
    """Trapezoid weights (in years) of the log-average discretization."""
    dt = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def asian_log_average(ensemble: PathEnsemble) -> np.ndarray:
    """Geometric-average factor I_T = exp((1/T) trapz(ln S^1))."""
    w = _asian_weights(ensemble.grid)
    return np.exp(np.log(ensemble.S[:, :, 0]) @ w / ensemble.maturity)


def _asian_running(ensemble: PathEnsemble) -> np.ndarray:
    """Cumulative trapezoid of ln S^1 (years-weighted), the extra Markov state."""
    w = _asian_weights(ensemble.grid)
    return np.cumsum(np.log(ensemble.S[:, :, 0]) * w[None, :], axis=1)


def _base_terminal(contract: Contract, ensemble: PathEnsemble) -> np.ndarray:
    """Undiscounted terminal payment, before the side sign."""
    S_T = ensemble.S[:, -1, 0]
    if contract.kind == "forward_combo":
        w = np.asarray(contract.weights)
        k = np.asarray(contract.strikes)
        return np.sum(w) * S_T - np.sum(w * k)
    if contract.kind == "call":
        return np.maximum(S_T - contract.strike, 0.0)
    if contract.kind == "put":
        return np.maximum(contract.strike - S_T, 0.0)
    if contract.kind == "asian_floating_call":
        return np.maximum(S_T - contract.strike * asian_log_average(ensemble), 0.0)
    if contract.kind == "zero_coupon_bond":
        return np.ones(ensemble.n_paths)
    if contract.kind == "bond_option":
        # traded asset is the U-bond, so S_T is already P(T, U)
        return np.maximum(S_T - contract.strike, 0.0)
    raise UnsupportedContractError(contract.kind)


def terminal_xi(contract: Contract, ensemble: PathEnsemble) -> np.ndarray:
    """Discounted terminal payoff xi = B^{-1}_T * (terminal dividend), signed by side."""
    if abs(contract.maturity - ensemble.maturity) > 1e-12:
        raise ConfigurationError("contract maturity must equal the grid end")
    return contract.side_sign * ensemble.B_inv[:, -1] * _base_terminal(contract, ensemble)


# ---------------------------------------------------------------------------
# clean price


class _ForwardComboPricer:
    """Analytic discounted clean price of a forward combination (constant rate)."""

    def __init__(self, contract: Contract, market: MarketModel):
        if market.rate.kind != "constant":
            raise ConfigurationError("forward_combo clean price assumes a constant OIS rate")
        self.sign = contract.side_sign
        self.w_sum = float(np.sum(contract.weights))
        self.wk_sum = float(np.sum(np.asarray(contract.weights) * np.asarray(contract.strikes)))
        self.disc_T = float(np.exp(-market.rate.r0 * contract.maturity))
        self.vol_row = market.assets.vol[0]

    def evaluate(self, ensemble: PathEnsemble):
        s1 = ensemble.s_tilde[:, :, 0]
        p = self.sign * (self.w_sum * s1 - self.wk_sum * self.disc_T)
        z = self.sign * self.w_sum * s1[:, :, None] * self.vol_row[None, None, :]
        return p, z


class _ZcbPricer:
    """Analytic discounted clean price of the T-maturity Treasury position."""

    def __init__(self, contract: Contract, market: MarketModel):
        self.sign = contract.side_sign
        self.rate = market.rate
        self.T = contract.maturity

    def evaluate(self, ensemble: PathEnsemble):
        tau = self.T - ensemble.grid
        price = self.rate.zcb_price(ensemble.r_path, tau[None, :])
        p = self.sign * ensemble.B_inv * price
        sigma1 = self.rate.bond_vol(ensemble.grid, self.T)
        z = (sigma1[None, :] * p)[:, :, None]
        return p, z


class _BondOptionPricer:
    """Analytic (Jamshidian) discounted clean price of a call on the U-bond."""

    def __init__(self, contract: Contract, market: MarketModel):
        self.sign = contract.side_sign
        self.rate = market.rate
        self.T = contract.maturity
        self.U = contract.bond_maturity
        self.K = contract.strike

    def _zbo_and_slope(self, r, t):
        rate = self.rate
        pU = rate.zcb_price(r, self.U - t)
        pT = rate.zcb_price(r, self.T - t)
        ttm = np.maximum(self.T - t, 0.0)
        sp = (
            rate.sigma_r
            / rate.kappa
            * (1.0 - np.exp(-rate.kappa * (self.U - self.T)))
            * np.sqrt((1.0 - np.exp(-2.0 * rate.kappa * ttm)) / (2.0 * rate.kappa))
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            h = np.where(sp > 0.0, np.log(pU / (self.K * pT)) / np.where(sp > 0, sp, 1.0) + 0.5 * sp, np.inf)
        itm = pU > self.K * pT
        phi_h = np.where(sp > 0.0, ndtr(h), itm.astype(float))
        phi_h2 = np.where(sp > 0.0, ndtr(h - sp), itm.astype(float))
        value = pU * phi_h - self.K * pT * phi_h2
        bU = rate.zcb_loading(self.U - t)
        bT = rate.zcb_loading(ttm)
        slope = -bU * pU * phi_h + self.K * bT * pT * phi_h2
        return value, slope

    def evaluate(self, ensemble: PathEnsemble):
        t = ensemble.grid[None, :]
        value, slope = self._zbo_and_slope(ensemble.r_path, t)
        p = self.sign * ensemble.B_inv * value
        z = (self.sign * ensemble.B_inv * self.rate.sigma_r * slope)[:, :, None]
        return p, z


class _RegressionPricer:
    """LSMC conditional-expectation clean price for call/put/asian payoffs.

    The regression target is variance-reduced with the discounted-asset
    martingale as control variate; the delta field comes from a pathwise-delta
    regression.  Fitted slice models (coefficients plus normalizations) are
    kept so the same price function can be evaluated on a drift-shifted
    ensemble.
    """

    def __init__(self, contract: Contract, market: MarketModel, degree: int):
        if market.assets.n != 1:
            raise ConfigurationError("regression clean price implemented for a single driving asset")
        if market.rate.kind != "constant":
            raise ConfigurationError("option clean prices assume a constant OIS rate")
        self.contract = contract
        self.degree = degree
        self.sigma1 = float(market.assets.vol[0, 0])
        self.disc_T = float(np.exp(-market.rate.r0 * contract.maturity))
        self.p_models = None  # per slice: (coef, norms)
        self.z_models = None

    # -- state and targets

    def _state_columns(self, ensemble: PathEnsemble, k: int) -> list[np.ndarray]:
        s1 = ensemble.s_tilde[:, k, 0]
        cols = [s1]
        if self.contract.kind == "asian_floating_call":
            cols.append(_asian_running(ensemble)[:, k])
        return cols

    def _intrinsic(self, ensemble: PathEnsemble, k: int) -> np.ndarray:
        s1 = ensemble.s_tilde[:, k, 0]
        K = self.contract.strike
        if self.contract.kind == "call":
            return np.maximum(s1 - K * self.disc_T, 0.0)
        if self.contract.kind == "put":
            return np.maximum(K * self.disc_T - s1, 0.0)
        # asian: strike scales with the running average seen so far
        run = np.exp(_asian_running(ensemble)[:, k] / self.contract.maturity)
        return np.maximum(s1 - K * self.disc_T * run, 0.0)

    def _pathwise_delta(self, ensemble: PathEnsemble) -> np.ndarray:
        """D_t xi evaluated at t: the regression target for the delta field."""
        c = self.contract
        s_T = ensemble.s_tilde[:, -1, 0]
        if c.kind == "call":
            itm = s_T > c.strike * self.disc_T
            return c.side_sign * itm * self.sigma1 * s_T
        if c.kind == "put":
            itm = s_T < c.strike * self.disc_T
            return -c.side_sign * itm * self.sigma1 * s_T
        # asian: the (T - t)/T tail weight is slice dependent; handled in fit()
        raise UnsupportedContractError(c.kind)

    def fit(self, ensemble: PathEnsemble):
        c = self.contract
        xi = terminal_xi(c, ensemble)
        s_tail = ensemble.s_tilde[:, -1, 0]
        M = ensemble.n_steps
        N = ensemble.n_paths
        p = np.empty((N, M + 1))
        z = np.empty((N, M + 1, 1))
        self.p_models = [None] * (M + 1)
        self.z_models = [None] * (M + 1)

        itm_T = _base_terminal(c, ensemble) > 0.0
        p[:, M] = xi
        z[:, M, 0] = self._delta_target(ensemble, M, itm_T, s_tail)
        for k in range(M):
            cols = self._state_columns(ensemble, k) + [self._intrinsic(ensemble, k)]
            X, norms = design_matrix(cols, self.degree)
            s1_k = ensemble.s_tilde[:, k, 0]
            dm = s_tail - s1_k
            var = float(np.dot(dm, dm))
            beta = float(np.dot(dm, xi - xi.mean()) / var) if var > 0 else 0.0
            target = xi - beta * dm
            min_rank = 1 if k == 0 else 2
            coef, fitted, _ = fit_slice(X, target, k, min_rank=min_rank)
            p[:, k] = fitted
            self.p_models[k] = (coef, norms, beta)

            zt = self._delta_target(ensemble, k, itm_T, s_tail)
            zcoef, zfit, _ = fit_slice(X, zt, k, min_rank=min_rank)
            z[:, k, 0] = zfit
            self.z_models[k] = (zcoef, norms)

        self._p0 = float(np.mean(p[:, 0]))
        t0 = xi - self.p_models[0][2] * (s_tail - ensemble.s_tilde[:, 0, 0])
        self._p0_se = float(np.std(t0, ddof=1) / np.sqrt(N))
        return p, z

    def _delta_target(self, ensemble, k, itm_T, s_tail):
        c = self.contract
        if c.kind == "asian_floating_call":
            w = _asian_weights(ensemble.grid)
            tail = float(np.sum(w[k + 1 :]))
            avg = asian_log_average(ensemble)
            return c.side_sign * itm_T * self.sigma1 * (
                s_tail - self.disc_T * c.strike * avg * tail / c.maturity
            )
        if c.kind == "call":
            return c.side_sign * itm_T * self.sigma1 * s_tail
        if c.kind == "put":
            return -c.side_sign * itm_T * self.sigma1 * s_tail
        raise UnsupportedContractError(c.kind)

    def evaluate(self, ensemble: PathEnsemble):
        """Evaluate the fitted slice models on (possibly drift-shifted) states."""
        if self.p_models is None:
            return self.fit(ensemble)
        M = ensemble.n_steps
        N = ensemble.n_paths
        xi = terminal_xi(self.contract, ensemble)
        s_tail = ensemble.s_tilde[:, -1, 0]
        itm_T = _base_terminal(self.contract, ensemble) > 0.0
        p = np.empty((N, M + 1))
        z = np.empty((N, M + 1, 1))
        p[:, M] = xi
        z[:, M, 0] = self._delta_target(ensemble, M, itm_T, s_tail)
        for k in range(M):
            cols = self._state_columns(ensemble, k) + [self._intrinsic(ensemble, k)]
            coef, norms, _ = self.p_models[k]
            X, _ = design_matrix(cols, self.degree, norms)
            p[:, k] = X @ coef
            zcoef, znorms = self.z_models[k]
            Xz, _ = design_matrix(cols, self.degree, znorms)
            z[:, k, 0] = Xz @ zcoef
        return p, z


@dataclass(frozen=True)
class CleanPriceCurve:
    """Discounted clean price and delta field on the ensemble grid.

    ``p_tilde[:, -1]`` holds the pre-payment limit at T (the price drops to
    zero once the terminal dividend is paid).
    """

    grid: np.ndarray
    p_tilde: np.ndarray
    Z: np.ndarray
    p0: float
    p0_se: float
    pricer: object
    contract: Contract

    def evaluate_on(self, ensemble: PathEnsemble):
        """Clean price and delta of the same contract on another ensemble."""
        return self.pricer.evaluate(ensemble)


def clean_price(contract: Contract, ensemble: PathEnsemble, degree: int = 3) -> CleanPriceCurve:
    """Clean price curve: analytic for forwards and bond instruments, LSMC otherwise."""
    market = ensemble.market
    if contract.kind == "forward_combo":
        pricer = _ForwardComboPricer(contract, market)
    elif contract.kind == "zero_coupon_bond":
        pricer = _ZcbPricer(contract, market)
    elif contract.kind == "bond_option":
        pricer = _BondOptionPricer(contract, market)
    elif contract.kind in ("call", "put", "asian_floating_call"):
        pricer = _RegressionPricer(contract, market, degree)
    else:
        raise UnsupportedContractError(contract.kind)

    if isinstance(pricer, _RegressionPricer):
        p, z = pricer.fit(ensemble)
        p0, p0_se = pricer._p0, pricer._p0_se
    else:
        p, z = pricer.evaluate(ensemble)
        p0, p0_se = float(p[0, 0]) if p.shape[0] else 0.0, 0.0
        # analytic prices are deterministic functions of the (common) t=0 state
        p0 = float(np.mean(p[:, 0]))
    return CleanPriceCurve(ensemble.grid, p, z, p0, p0_se, pricer, contract)


def clean_curve_to_csv(curve: CleanPriceCurve, path) -> None:
    mean = curve.p_tilde.mean(axis=0)
    se = curve.p_tilde.std(axis=0, ddof=1) / np.sqrt(curve.p_tilde.shape[0])
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "mean", "SE"])
        for t, m, s in zip(curve.grid, mean, se):
            w.writerow([f"{t:.10g}", f"{m:.10g}", f"{s:.10g}"])


# ---------------------------------------------------------------------------
# Malliavin derivatives


def malliavin_xi(contract: Contract, ensemble: PathEnsemble, theta: float) -> np.ndarray:
    """Analytic Malliavin derivative D_theta(xi) per path, shape (n_paths, n).

    Indicator kinks carry their one-sided value on the in-the-money event and
    zero elsewhere (the boundary has measure zero).
    """
    if theta < 0.0 or theta > contract.maturity + 1e-12:
        raise ConfigurationError("theta must lie in [0, T]")
    market = ensemble.market
    n = market.assets.n
    sign = contract.side_sign
    B_inv_T = ensemble.B_inv[:, -1]
    s_tail = ensemble.s_tilde[:, -1, 0]

    if contract.kind == "forward_combo":
        vol = market.assets.vol[0]
        return sign * np.sum(contract.weights) * s_tail[:, None] * vol[None, :]

    if contract.kind in ("call", "put"):
        disc = float(np.exp(-market.rate.r0 * contract.maturity))
        vol = market.assets.vol[0]
        if contract.kind == "call":
            itm = s_tail > contract.strike * disc
            core = itm * s_tail
        else:
            itm = s_tail < contract.strike * disc
            core = -(itm * s_tail)
        return sign * core[:, None] * vol[None, :]

    if contract.kind == "asian_floating_call":
        disc = float(np.exp(-market.rate.r0 * contract.maturity))
        vol = market.assets.vol[0]
        w = _asian_weights(ensemble.grid)
        tail = float(np.sum(w[ensemble.grid > theta + 1e-12]))
        avg = asian_log_average(ensemble)
        itm = s_tail > contract.strike * disc * avg
        core = itm * (s_tail - disc * contract.strike * avg * tail / contract.maturity)
        return sign * core[:, None] * vol[None, :]

    if contract.kind == "zero_coupon_bond":
        if market.rate.kind != "vasicek":
            raise UnsupportedContractError("zero_coupon_bond Malliavin derivative requires the vasicek rate")
        sigma_T = market.rate.bond_vol(theta, contract.maturity)
        return (sign * B_inv_T * sigma_T)[:, None]

    if contract.kind == "bond_option":
        sigma_U = market.rate.bond_vol(theta, contract.bond_maturity)
        sigma_T = market.rate.bond_vol(theta, contract.maturity)
        s_TU = ensemble.s_tilde[:, -1, 0]  # discounted U-bond at T
        itm = ensemble.S[:, -1, 0] > contract.strike
        core = itm * (sigma_U * s_TU - contract.strike * B_inv_T * sigma_T)
        return (sign * core)[:, None]

    raise UnsupportedContractError(contract.kind)
