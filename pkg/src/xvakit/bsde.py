"""Reduced pre-default BSDE: generator assembly, regression solver, linear fast path, lift.

The value adjustment process solves a semi-linear BSDE whose generator
collects the asymmetric funding drift, the legacy-portfolio carry, and the
intensity-weighted incremental default exposures, minus an early-termination
charge.  When the funding argument has a known sign the same equation is
linear and admits a forward representation under a drift-shifted measure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._lsq import design_matrix, fit_slice
from .closeout import CloseoutSpec, theta_exposures
from .errors import (
    ConfigurationError,
    HedgeReconstructionError,
    PreconditionError,
    StepSizeError,
    UnsupportedConfigurationError,
)
from .market import COUNTERPARTY, HEDGER, MarketModel, PathEnsemble, PiecewiseConstant, simulate_paths
from .payoffs import CleanPriceCurve, Contract, _asian_running, terminal_xi


# ---------------------------------------------------------------------------
# funding map


@dataclass(frozen=True)
class PhiMap:
    """State-only funding map phi_t(z) = alpha_t^T (z + Z^N_t).

    ``alpha`` is a deterministic function of time; the case tag records which
    repo configuration produced it.
    """

    case: str
    n: int
    _alpha_fn: object

    def alpha(self, t):
        """alpha_t sampled at times t, shape (len(t), n)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.asarray(self._alpha_fn(t), dtype=float).reshape(t.size, self.n)

    def alpha_on_grid(self, grid) -> np.ndarray:
        return self.alpha(grid)


def _const_alpha(case: str, n: int, vec) -> PhiMap:
    vec = np.asarray(vec, dtype=float)
    return PhiMap(case, n, lambda t: np.broadcast_to(vec, (np.size(t), n)).copy())


def build_phi(market: MarketModel, rho=None) -> PhiMap:
    """Derive the funding map from the repo set.

    Supported cases: full repo coverage (alpha = 0); equity-style markets with
    pure-jump defaultable bonds repo-financed and any subset of assets left to
    treasury funding; the single-factor bond market where all hedge legs share
    the bond volatility and none is repo-financed.  Configurations whose
    residual treasury funding depends on the defaultable positions themselves
    admit no state-only map and are rejected.
    """
    assets = market.assets
    n = assets.n
    rho = market.repo if rho is None else rho

    if rho == "all" or (not isinstance(rho, str) and set(rho) >= set(range(1, n + 1)) | {HEDGER, COUNTERPARTY}):
        return _const_alpha("repo_all", n, np.zeros(n))

    rho = set(rho)
    if assets.kind == "gbm":
        if not {HEDGER, COUNTERPARTY} <= rho:
            raise UnsupportedConfigurationError(
                "defaultable bonds outside the repo set leave the funding map depending on the "
                "default-hedge positions; no state-only map exists"
            )
        if np.any(assets.defaultable_vols != 0.0):
            raise UnsupportedConfigurationError(
                "defaultable-bond volatilities not spanned by the traded assets"
            )
        sel = np.array([0.0 if (i + 1) in rho else 1.0 for i in range(n)])
        try:
            alpha = np.linalg.solve(assets.vol.T, sel)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("volatility matrix must be invertible for this repo set") from exc
        return _const_alpha("assets_via_treasury", n, alpha)

    if rho & ({HEDGER, COUNTERPARTY} | set(range(1, n + 1))):
        raise UnsupportedConfigurationError(
            "bond-market funding map requires an empty repo intersection with the traded legs"
        )
    rate = market.rate
    U = assets.bond_maturity

    def alpha_fn(t):
        sig = rate.bond_vol(np.atleast_1d(t), U)
        with np.errstate(divide="ignore"):
            a = np.where(sig != 0.0, 1.0 / np.where(sig != 0.0, sig, 1.0), 0.0)
        return a[:, None]

    return PhiMap("bond_market", n, alpha_fn)


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomials in the driving state plus the clean price as a regressor."""

    degree: int = 3
    include_clean_price: bool = True

    def columns(self, contract: Contract, ensemble: PathEnsemble, k: int, p_col=None) -> list[np.ndarray]:
        market = ensemble.market
        if market.assets.kind == "bond":
            cols = [ensemble.r_path[:, k]]
        else:
            cols = [ensemble.s_tilde[:, k, 0]]
            if contract.kind == "asian_floating_call":
                cols.append(_asian_running(ensemble)[:, k])
        if self.include_clean_price and p_col is not None:
            cols.append(np.asarray(p_col, dtype=float))
        return cols


@dataclass
class GeneratorSpec:
    """Grid-sampled coefficients of the reduced generator for one configuration."""

    contract: Contract
    market: MarketModel
    closeout: CloseoutSpec
    curve: CleanPriceCurve
    phi: PhiMap
    mode: str
    grid: np.ndarray
    s_ell_g: np.ndarray
    s_b_g: np.ndarray
    s_eps_g: np.ndarray
    hH_g: np.ndarray
    hC_g: np.ndarray
    h_g: np.ndarray
    G_g: np.ndarray
    Beps_g: np.ndarray
    alpha_g: np.ndarray

    def lipschitz_y(self) -> float:
        smax = max(self.s_ell_g.max(), self.s_b_g.max())
        c = self.closeout
        return float(
            smax
            + self.h_g.max()
            + self.hH_g.max() * (1.0 + c.LH * c.Lm)
            + self.hC_g.max() * (1.0 + c.LC * c.Lm)
        )

    def with_mode(self, mode: str) -> "GeneratorSpec":
        if mode not in ("semilinear", "linear_b", "linear_ell"):
            raise ConfigurationError(f"unknown generator mode {mode!r}")
        return GeneratorSpec(**{**self.__dict__, "mode": mode})

    @property
    def s_x_curve(self) -> PiecewiseConstant:
        if self.mode == "linear_b":
            return self.market.spreads.s_b
        if self.mode == "linear_ell":
            return self.market.spreads.s_ell
        raise ConfigurationError("designated spread only defined in linear modes")


def build_generator_spec(
    contract: Contract,
    market: MarketModel,
    ensemble: PathEnsemble,
    curve: CleanPriceCurve,
    phi: PhiMap,
    mode: str = "semilinear",
    e_E: float = 0.0,
) -> GeneratorSpec:
    if mode not in ("semilinear", "linear_b", "linear_ell"):
        raise ConfigurationError(f"unknown generator mode {mode!r}")
    grid = ensemble.grid
    sp = market.spreads
    iv = market.intensities
    s_eps = sp.s_ell if market.legacy.epsilon >= 0.0 else sp.s_b
    return GeneratorSpec(
        contract=contract,
        market=market,
        closeout=CloseoutSpec.from_contract(contract, e_E),
        curve=curve,
        phi=phi,
        mode=mode,
        grid=grid,
        s_ell_g=np.atleast_1d(sp.s_ell(grid)),
        s_b_g=np.atleast_1d(sp.s_b(grid)),
        s_eps_g=np.atleast_1d(s_eps(grid)),
        hH_g=np.atleast_1d(iv.hH(grid)),
        hC_g=np.atleast_1d(iv.hC(grid)),
        h_g=np.atleast_1d(iv.hH(grid) + iv.hC(grid)),
        G_g=np.exp(-(iv.hH.integral(grid) + iv.hC.integral(grid))),
        Beps_g=market.legacy.epsilon * np.exp(np.atleast_1d(s_eps.integral(grid))),
        alpha_g=phi.alpha_on_grid(grid),
    )


def funding_argument(spec: GeneratorSpec, k: int, y, z, p=None, zN=None):
    """Signed treasury position: lending when positive, borrowing when negative."""
    p = spec.curve.p_tilde[:, k] if p is None else np.asarray(p, dtype=float)
    zN = spec.curve.Z[:, k, :] if zN is None else np.asarray(zN, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim == 1:
        z = z[:, None]
    zN = np.atleast_1d(zN)
    if zN.ndim == 1:
        zN = zN[:, None]
    phi_val = (z + zN) @ spec.alpha_g[k]
    y = np.asarray(y, dtype=float)
    if spec.closeout.convention == "clean":
        return y + spec.closeout.Lm * p + spec.Beps_g[k] - phi_val
    return spec.closeout.Lm * (y + p) + spec.Beps_g[k] - phi_val


def generator_eval(spec: GeneratorSpec, k: int, y, z, p=None, zN=None, b_inv=None):
    """Reduced generator g^F at grid slice k, vectorized over paths.

    Semilinear mode splits the funding argument by sign across the two
    spreads; linear modes apply the designated spread to the signed quantity.
    The intensity-weighted incremental exposures and the early-termination
    charge -h*y are always carried in full.
    """
    p_arr = spec.curve.p_tilde[:, k] if p is None else np.asarray(p, dtype=float)
    q = funding_argument(spec, k, y, z, p, zN)
    if spec.mode == "semilinear":
        gG = -np.maximum(q, 0.0) * spec.s_ell_g[k] + np.maximum(-q, 0.0) * spec.s_b_g[k]
    elif spec.mode == "linear_b":
        gG = -q * spec.s_b_g[k]
    else:
        gG = -q * spec.s_ell_g[k]
    gG = gG + spec.s_eps_g[k] * spec.Beps_g[k]
    e_tilde = None
    if spec.closeout.e_E != 0.0:
        e_tilde = spec.closeout.e_E * (np.asarray(b_inv, dtype=float) if b_inv is not None else 1.0)
    y = np.asarray(y, dtype=float)
    _, _, tdH, tdC = theta_exposures(spec.closeout, y, p_arr, e_tilde)
    return gG - spec.hH_g[k] * tdH + spec.hC_g[k] * tdC - spec.h_g[k] * y


def funding_argument_paths(spec: GeneratorSpec, sol: "BsdeSolution", ensemble: PathEnsemble) -> np.ndarray:
    """Funding argument on every (path, step) pair, shape (n_paths, M)."""
    M = ensemble.n_steps
    q = np.empty((ensemble.n_paths, M))
    for k in range(M):
        q[:, k] = funding_argument(spec, k, sol.Y[:, k], sol.Z[:, k, :])
    return q


# ---------------------------------------------------------------------------
# solutions


@dataclass(frozen=True)
class BsdeSolution:
    """Per-path value/volatility fields of the reduced adjustment process."""

    grid: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    Y0: float
    Y0_se: float
    mode: str
    diagnostics: dict = field(default_factory=dict)


def solve_semilinear(
    spec: GeneratorSpec,
    ensemble: PathEnsemble,
    terminal: np.ndarray,
    basis: RegressionBasis | None = None,
) -> BsdeSolution:
    """Backward least-squares scheme: explicit in z, two-pass implicit in y.

    At each slice the conditional expectation of the next value and the
    volatility field are projected on the basis; the generator is then applied
    with two Picard passes on y.  The reported standard error comes from the
    telescoped pathwise estimator terminal + sum(g dt), whose mean coincides
    with the backward value because every projection preserves sample means.
    """
    basis = basis or RegressionBasis()
    grid = ensemble.grid
    M = ensemble.n_steps
    N = ensemble.n_paths
    dt = ensemble.dt
    n = spec.phi.n

    L = spec.lipschitz_y()
    if L * dt.max() >= 1.0:
        raise StepSizeError(
            f"implicit step not contracting (L*dt = {L * dt.max():.3f} >= 1); use a finer grid"
        )

    Y = np.empty((N, M + 1))
    Z = np.zeros((N, M, n))
    Y[:, M] = np.asarray(terminal, dtype=float)
    g_path = np.empty((N, M))
    conds = np.empty(M)

    for k in range(M - 1, -1, -1):
        cols = basis.columns(spec.contract, ensemble, k, spec.curve.p_tilde[:, k])
        X, _ = design_matrix(cols, basis.degree)
        min_rank = 1 if k == 0 else 2
        _, ey, cond = fit_slice(X, Y[:, k + 1], k, min_rank=min_rank)
        conds[k] = cond
        resid = Y[:, k + 1] - ey
        for j in range(n):
            _, zf, _ = fit_slice(X, resid * ensemble.dW[:, k, j] / dt[k], k, min_rank=min_rank)
            Z[:, k, j] = zf
        b_inv = ensemble.B_inv[:, k]
        y1 = ey + dt[k] * generator_eval(spec, k, ey, Z[:, k, :], b_inv=b_inv)
        g_path[:, k] = generator_eval(spec, k, y1, Z[:, k, :], b_inv=b_inv)
        Y[:, k] = ey + dt[k] * g_path[:, k]

    telescoped = Y[:, M] + g_path @ dt
    y0 = float(np.mean(Y[:, 0]))
    se = float(np.std(telescoped, ddof=1) / np.sqrt(N))
    return BsdeSolution(grid, Y, Z, y0, se, "semilinear", {"condition_numbers": conds})


# ---------------------------------------------------------------------------
# linear fast path


def _tail_trapezoid(grid, values):
    """Tail integrals int_{t_k}^{T} v ds by trapezoid along the last axis."""
    dt = np.diff(grid)
    seg = 0.5 * (values[..., :-1] + values[..., 1:]) * dt
    tail = np.zeros_like(values)
    tail[..., :-1] = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
    return tail


def _linear_branch(spec: GeneratorSpec):
    """Which party's loss decay applies in the replacement linear equation."""
    sgn = spec.contract.xi_sign
    if sgn == 0.0:
        raise PreconditionError(
            "replacement-close-out linear representation needs a one-signed payoff (an option)"
        )
    return ("H", spec.closeout.LH) if sgn > 0 else ("C", spec.closeout.LC)


def _decay_cumulative(spec: GeneratorSpec, t) -> np.ndarray:
    """Lambda(0, t) of the linear representation, exact on the curve segments."""
    iv = spec.market.intensities
    c = spec.closeout
    s_x = spec.s_x_curve
    if c.convention == "clean":
        return s_x.integral(t) + iv.hH.integral(t) + iv.hC.integral(t)
    party, L_i = _linear_branch(spec)
    h_cum = iv.hH.integral(t) if party == "H" else iv.hC.integral(t)
    return c.Lm * s_x.integral(t) + L_i * c.Lm * h_cum


def _refine_grid(spec: GeneratorSpec, factor: int = 8) -> np.ndarray:
    fine = np.linspace(spec.grid[0], spec.grid[-1], factor * (spec.grid.size - 1) + 1)
    brk = np.concatenate(
        [
            spec.market.intensities.hH.times,
            spec.market.intensities.hC.times,
            spec.market.spreads.s_ell.times,
            spec.market.spreads.s_b.times,
        ]
    )
    brk = brk[(brk >= fine[0]) & (brk <= fine[-1])]
    return np.unique(np.concatenate([fine, brk]))


def _eps_source_profile(spec: GeneratorSpec) -> np.ndarray:
    """Deterministic c_eps(t) = A_t^{-1} int_t^T A_s (s^eps - s^x)(s) B~^eps_s ds on the grid."""
    if spec.market.legacy.epsilon == 0.0:
        return np.zeros(spec.grid.size)
    fine = _refine_grid(spec)
    A = np.exp(-_decay_cumulative(spec, fine))
    s_x = spec.s_x_curve
    s_eps_curve = spec.market.spreads.s_ell if spec.market.legacy.epsilon >= 0.0 else spec.market.spreads.s_b
    beps = spec.market.legacy.epsilon * np.exp(s_eps_curve.integral(fine))
    src = (s_eps_curve(fine) - s_x(fine)) * beps
    tail = _tail_trapezoid(fine, (A * src)[None, :])[0] / A
    return np.interp(spec.grid, fine, tail)


def _zcb_value_profile(spec: GeneratorSpec) -> np.ndarray:
    """k(t) with V_t = sign * S~_t * k(t) + c_eps(t) for the Treasury position.

    Solves k' = h k - beta backward from k(T) = 1 with exact exponential steps
    on a refined grid; beta = (1 - Lm) s_x + h - h_branch L_branch Lm, the
    branch fixed by the sign of the clean price (which never changes sign for
    a bond position).
    """
    c = spec.closeout
    iv = spec.market.intensities
    s_x = spec.s_x_curve
    sign = spec.contract.side_sign
    fine = _refine_grid(spec)
    h = iv.hH(fine) + iv.hC(fine)
    lam = c.LH * c.Lm * iv.hH(fine) if sign > 0 else c.LC * c.Lm * iv.hC(fine)
    beta = (1.0 - c.Lm) * s_x(fine) + h - lam
    k_prof = np.empty(fine.size)
    k_prof[-1] = 1.0
    for j in range(fine.size - 2, -1, -1):
        dtj = fine[j + 1] - fine[j]
        if h[j] > 0.0:
            ss = beta[j] / h[j]
            k_prof[j] = ss + (k_prof[j + 1] - ss) * np.exp(-h[j] * dtj)
        else:
            k_prof[j] = k_prof[j + 1] + beta[j] * dtj
    return np.interp(spec.grid, fine, k_prof)


class _AnalyticLinearFields:
    """Closed-form per-path linear-solution fields for catalogued contracts."""

    def __init__(self, spec: GeneratorSpec):
        self.spec = spec
        self.c_eps = _eps_source_profile(spec)
        c = spec.contract
        if c.kind == "zero_coupon_bond" and c.closeout == "clean":
            self.kind = "zcb"
            self.k_prof = _zcb_value_profile(spec)
        elif c.kind in ("call", "put") and c.closeout == "replacement":
            self.kind = "option"
            lam = _decay_cumulative(spec, spec.grid)
            self.decay = np.exp(-(lam[-1] - lam))
            self.m_fwd = spec.s_x_curve.integral(spec.grid[-1]) - spec.s_x_curve.integral(spec.grid)
        else:
            raise UnsupportedConfigurationError("no analytic linear fields for this contract")

    @staticmethod
    def supports(spec: GeneratorSpec) -> bool:
        c = spec.contract
        return (c.kind == "zero_coupon_bond" and c.closeout == "clean") or (
            c.kind in ("call", "put") and c.closeout == "replacement"
        )

    def fields(self, ensemble: PathEnsemble, p_base: np.ndarray):
        """(Y, alpha_pi) on ``ensemble``: value paths and the funded hedge alpha^T(Z + Z^N)."""
        spec = self.spec
        c = spec.contract
        sign = c.side_sign
        s_til = ensemble.s_tilde[:, :, 0]

        if self.kind == "zcb":
            V = sign * s_til * self.k_prof[None, :] + self.c_eps[None, :]
            alpha_pi = sign * self.k_prof[None, :] * s_til
            Y = V - sign * s_til
            return Y, alpha_pi

        K = c.strike
        disc_T = float(np.exp(-spec.market.rate.r0 * c.maturity))
        sigma = float(spec.market.assets.vol[0, 0])
        ttm = spec.grid[-1] - spec.grid
        v = sigma * np.sqrt(np.maximum(ttm, 0.0))
        fwd = s_til * np.exp(self.m_fwd)[None, :]
        strike_d = K * disc_T
        with np.errstate(divide="ignore", invalid="ignore"):
            d1 = np.where(
                v[None, :] > 0.0,
                (np.log(fwd / strike_d) + 0.5 * (v**2)[None, :]) / np.where(v[None, :] > 0.0, v[None, :], 1.0),
                np.where(fwd > strike_d, np.inf, -np.inf),
            )
        nd1 = ndtr(d1)
        nd2 = ndtr(np.where(np.isfinite(d1), d1 - v[None, :], d1))
        if c.kind == "call":
            black = fwd * nd1 - strike_d * nd2
            slope = nd1 * np.exp(self.m_fwd)[None, :]
        else:
            black = strike_d * (1.0 - nd2) - fwd * (1.0 - nd1)
            slope = -(1.0 - nd1) * np.exp(self.m_fwd)[None, :]
        V = sign * self.decay[None, :] * black + self.c_eps[None, :]
        alpha_pi = sign * self.decay[None, :] * s_til * slope
        Y = V - p_base
        return Y, alpha_pi


def _analytic_shifted_mean_xi(spec: GeneratorSpec) -> float | None:
    """E^x[xi] at t=0 under the drift-shifted measure, where the catalogue admits it."""
    c = spec.contract
    market = spec.market
    m_T = spec.s_x_curve.integral(float(spec.grid[-1]))
    if c.kind == "forward_combo":
        s0 = float(market.assets.s0[0])
        disc_T = float(np.exp(-market.rate.r0 * c.maturity))
        w = np.asarray(c.weights)
        k = np.asarray(c.strikes)
        return c.side_sign * float(np.sum(w) * s0 * np.exp(m_T) - np.sum(w * k) * disc_T)
    if c.kind == "zero_coupon_bond":
        p0 = float(market.rate.zcb_price(market.rate.r0, c.maturity))
        return c.side_sign * p0 * float(np.exp(m_T))
    if c.kind in ("call", "put") and market.rate.kind == "constant":
        s0 = float(market.assets.s0[0])
        disc_T = float(np.exp(-market.rate.r0 * c.maturity))
        sigma = float(market.assets.vol[0, 0])
        v = sigma * np.sqrt(c.maturity)
        fwd = s0 * np.exp(m_T)
        strike_d = c.strike * disc_T
        if v <= 0.0:
            black = max(fwd - strike_d, 0.0) if c.kind == "call" else max(strike_d - fwd, 0.0)
        else:
            d1 = (np.log(fwd / strike_d) + 0.5 * v * v) / v
            if c.kind == "call":
                black = fwd * ndtr(d1) - strike_d * ndtr(d1 - v)
            else:
                black = strike_d * ndtr(v - d1) - fwd * ndtr(-d1)
        return c.side_sign * float(black)
    return None


def solve_linear(
    spec: GeneratorSpec,
    ensemble: PathEnsemble,
    terminal: np.ndarray | None = None,
    basis: RegressionBasis | None = None,
) -> BsdeSolution:
    """Forward representation of the linear equation under the designated spread.

    The measure shift W -> W - int alpha s^x dt is realized by re-simulating
    drift-adjusted paths with the same seed.  The head value accumulates the
    exponential decay and the deterministic/clean-price sources along each
    shifted path; per-path fields on the base ensemble come from closed forms
    where the catalogue admits them and from transferred slice regressions
    otherwise.  Where the shifted terminal expectation is analytic it serves
    as a control variate for the head value.
    """
    if spec.mode not in ("linear_b", "linear_ell"):
        raise ConfigurationError("solve_linear requires a linear generator mode")
    c = spec.contract
    market = spec.market
    grid = spec.grid
    M = grid.size - 1
    N = ensemble.n_paths
    s_x = spec.s_x_curve

    w_drift = spec.alpha_g[:-1] * np.atleast_1d(s_x(grid[:-1]))[:, None]
    shifted = simulate_paths(market, grid, N, ensemble.seed, w_drift=w_drift)
    p_sh, _ = spec.curve.evaluate_on(shifted)
    xi_sh = terminal_xi(c, shifted)
    v_term = xi_sh + (np.zeros(N) if terminal is None else np.asarray(terminal, dtype=float))

    lam = _decay_cumulative(spec, grid)
    A = np.exp(-lam)
    s_x_g = np.atleast_1d(s_x(grid))
    if spec.closeout.convention == "clean":
        loss_ind = np.where(
            p_sh >= 0.0,
            (spec.hH_g * spec.closeout.LH * spec.closeout.Lm)[None, :],
            (spec.hC_g * spec.closeout.LC * spec.closeout.Lm)[None, :],
        )
        beta = (1.0 - spec.closeout.Lm) * s_x_g[None, :] + spec.h_g[None, :] - loss_ind
        src = beta * p_sh
    else:
        _linear_branch(spec)  # validates the one-signed payoff requirement
        src = np.zeros_like(p_sh)
    src = src + ((spec.s_eps_g - s_x_g) * spec.Beps_g)[None, :]

    H = A[-1] * v_term + _tail_trapezoid(grid, A[None, :] * src)[:, 0]
    exi = _analytic_shifted_mean_xi(spec)
    if exi is not None:
        hv = H - A[-1] * xi_sh
        v0 = float(np.mean(hv)) + A[-1] * exi
        se_h = float(np.std(hv, ddof=1) / np.sqrt(N))
    else:
        v0 = float(np.mean(H))
        se_h = float(np.std(H, ddof=1) / np.sqrt(N))
    y0 = v0 - spec.curve.p0
    se = float(np.sqrt(se_h**2 + spec.curve.p0_se**2))

    n = spec.phi.n
    Y = np.empty((N, M + 1))
    Z = np.zeros((N, M, n))
    diagnostics: dict = {}

    if _AnalyticLinearFields.supports(spec) and terminal is None:
        model = _AnalyticLinearFields(spec)
        Yf, alpha_pi = model.fields(ensemble, spec.curve.p_tilde)
        Y[:] = Yf
        # recover Z from alpha^T(Z + Z^N); the analytic catalogue is single-factor
        for k in range(M):
            a = spec.alpha_g[k]
            aa = float(a @ a)
            if aa > 0.0:
                resid = alpha_pi[:, k] - spec.curve.Z[:, k, :] @ a
                Z[:, k, :] = resid[:, None] * (a / aa)[None, :]
        diagnostics["fields"] = "analytic"
    else:
        basis = basis or RegressionBasis()
        tail = _tail_trapezoid(grid, A[None, :] * src)
        F = (A[-1] * v_term[:, None] + tail) / A[None, :]
        Y[:, M] = v_term - p_sh[:, M]
        conds = np.empty(M)
        dt = np.diff(grid)
        for k in range(M):
            cols = basis.columns(c, shifted, k, p_sh[:, k])
            X, norms = design_matrix(cols, basis.degree)
            min_rank = 1 if k == 0 else 2
            coef, fitted, cond = fit_slice(X, F[:, k], k, min_rank=min_rank)
            conds[k] = cond
            cols_b = basis.columns(c, ensemble, k, spec.curve.p_tilde[:, k])
            Xb, _ = design_matrix(cols_b, basis.degree, norms)
            Y[:, k] = Xb @ coef - spec.curve.p_tilde[:, k]
            # volatility field Pi from the decay-compensated martingale increments
            resid = (A[k + 1] * F[:, k + 1] - A[k] * fitted) / A[k]
            for j in range(n):
                zc, _, _ = fit_slice(X, resid * shifted.dW[:, k, j] / dt[k], k, min_rank=min_rank)
                Z[:, k, j] = Xb @ zc
            Z[:, k, :] -= spec.curve.Z[:, k, :]
        diagnostics["fields"] = "regression_transfer"
        diagnostics["condition_numbers"] = conds

    return BsdeSolution(grid, Y, Z, y0, se, spec.mode, diagnostics)


# ---------------------------------------------------------------------------
# lift back to the full filtration


@dataclass(frozen=True)
class LiftedSolution:
    """Full-filtration description: hedge legs and at-default values.

    The pre-default value is the reduced Y; at the first default the process
    jumps to -Theta^{dH}(Y_-) or +Theta^{dC}(Y_-).  ``pi_assets`` holds the
    discounted positions in the non-defaultable assets when the volatility
    matrix is invertible.
    """

    grid: np.ndarray
    pi_H: np.ndarray
    pi_C: np.ndarray
    at_default_H: np.ndarray
    at_default_C: np.ndarray
    pi_assets: np.ndarray | None


def lift_to_G(sol: BsdeSolution, spec: GeneratorSpec, ensemble: PathEnsemble, require_hedge: bool = False) -> LiftedSolution:
    """Reconstruct hedge legs pi~^H, pi~^C and (optionally) the asset hedge.

    pi~^H = Y + Theta~^H(Y) and pi~^C = Y - Theta~^C(Y); the asset positions
    solve sigma^T pi~ = Z + Z^N after removing the defaultable legs'
    volatility contributions.
    """
    grid = sol.grid
    M = grid.size - 1
    p = spec.curve.p_tilde
    eE = None
    if spec.closeout.e_E != 0.0:
        eE = spec.closeout.e_E * ensemble.B_inv
    tH, tC, tdH, tdC = theta_exposures(spec.closeout, sol.Y, p, eE)
    pi_H = sol.Y + tH
    pi_C = sol.Y - tC

    pi_assets = None
    market = spec.market
    n = market.assets.n
    try:
        rhs = sol.Z + spec.curve.Z[:, :M, :]
        if market.assets.kind == "bond":
            sig1 = market.rate.bond_vol(grid[:M], market.assets.bond_maturity)
            if np.any(sig1 == 0.0):
                raise np.linalg.LinAlgError("zero bond volatility slice")
            resid = rhs[:, :, 0] - sig1[None, :] * (pi_H[:, :M] + pi_C[:, :M])
            pi_assets = (resid / sig1[None, :])[:, :, None]
        else:
            dv = market.assets.defaultable_vols
            resid = rhs - pi_H[:, :M, None] * dv[0][None, None, :] - pi_C[:, :M, None] * dv[1][None, None, :]
            sigT_inv = np.linalg.inv(market.assets.vol.T)
            pi_assets = np.einsum("ij,pkj->pki", sigT_inv, resid)
    except np.linalg.LinAlgError as exc:
        if require_hedge:
            raise HedgeReconstructionError(
                "volatility matrix singular; asset hedge not recoverable (Y, Z remain valid)"
            ) from exc
        pi_assets = None

    return LiftedSolution(grid, pi_H, pi_C, tdH, tdC, pi_assets)


def solution_to_csv(sol: BsdeSolution, path) -> None:
    meanY = sol.Y.mean(axis=0)
    seY = sol.Y.std(axis=0, ddof=1) / np.sqrt(sol.Y.shape[0])
    meanZ = sol.Z.mean(axis=0)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "mean_Y", "SE_Y"] + [f"mean_Z{j + 1}" for j in range(sol.Z.shape[2])])
        for k, t in enumerate(sol.grid):
            row = [f"{t:.10g}", f"{meanY[k]:.10g}", f"{seY[k]:.10g}"]
            if k < sol.Z.shape[1]:
                row += [f"{meanZ[k, j]:.10g}" for j in range(sol.Z.shape[2])]
            else:
                row += [""] * sol.Z.shape[2]
            w.writerow(row)
