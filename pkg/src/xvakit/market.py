"""Market state: asset/rate simulation, discounting, default intensities, legacy funding.

Everything observable lives on the reference (Brownian) filtration.  Default
times only enter through deterministic intensity curves; realized default
times are sampled separately and used solely by the full-filtration
validation oracle.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ArgumentError, ConfigurationError

HEDGER = "H"
COUNTERPARTY = "C"

#: sentinel for a repo set covering every traded asset (rho = I)
REPO_ALL = "all"


def _freeze(a):
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous piecewise-constant function of time on [0, inf).

    ``values[i]`` applies on ``[times[i], times[i+1])``; the last value extends
    to infinity.  ``times[0]`` must be 0.  Integrals are exact.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if t.shape != v.shape:
            raise ConfigurationError("times and values must have equal length")
        if t[0] != 0.0:
            raise ConfigurationError("first breakpoint must be t=0")
        if t.size > 1 and np.any(np.diff(t) <= 0.0):
            raise ConfigurationError("breakpoints must be strictly increasing")
        object.__setattr__(self, "times", _freeze(t))
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def flat(cls, value: float) -> "PiecewiseConstant":
        return cls(np.array([0.0]), np.array([float(value)]))

    @classmethod
    def coerce(cls, spec) -> "PiecewiseConstant":
        """Accept a PiecewiseConstant, a scalar, or a {times, values} mapping."""
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, dict):
            return cls(np.asarray(spec["times"], float), np.asarray(spec["values"], float))
        return cls.flat(float(spec))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.values.size - 1)
        return self.values[idx] if t.ndim else float(self.values[idx])

    def integral(self, t):
        """Exact integral over [0, t], vectorized in t."""
        t = np.asarray(t, dtype=float)
        seg = np.concatenate([[0.0], np.cumsum(self.values[:-1] * np.diff(self.times))])
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.values.size - 1)
        out = seg[idx] + self.values[idx] * (t - self.times[idx])
        return out if t.ndim else float(out)

    @property
    def max(self) -> float:
        return float(np.max(self.values))

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0.0))


@dataclass(frozen=True)
class ShortRateModel:
    """OIS short rate: constant, or mean-reverting Gaussian (Vasicek)."""

    kind: str
    r0: float
    kappa: float = 0.0
    theta: float = 0.0
    sigma_r: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "vasicek"):
            raise ConfigurationError(f"unknown short-rate kind {self.kind!r}")
        if self.kind == "vasicek" and (self.kappa <= 0.0 or self.sigma_r < 0.0):
            raise ConfigurationError("vasicek requires kappa > 0 and sigma_r >= 0")

    # -- Vasicek affine zero-coupon machinery (constant kind never calls these)

    def zcb_loading(self, tau):
        """Affine exposure B(tau) = (1 - exp(-kappa*tau)) / kappa."""
        tau = np.asarray(tau, dtype=float)
        return (1.0 - np.exp(-self.kappa * tau)) / self.kappa

    def zcb_price(self, r_t, tau):
        """P(t, t+tau) = A(tau) exp(-B(tau) r_t) under the money-market measure."""
        if self.kind != "vasicek":
            raise ConfigurationError("zcb_price requires the vasicek kind")
        tau = np.asarray(tau, dtype=float)
        B = self.zcb_loading(tau)
        s2 = self.sigma_r**2
        A = np.exp((self.theta - s2 / (2.0 * self.kappa**2)) * (B - tau) - s2 * B**2 / (4.0 * self.kappa))
        return A * np.exp(-B * np.asarray(r_t, dtype=float))

    def bond_vol(self, t, maturity):
        """Lognormal volatility of the ZCB maturing at ``maturity``: -sigma_r * B(maturity - t)."""
        return -self.sigma_r * self.zcb_loading(np.maximum(np.asarray(maturity - np.asarray(t, float)), 0.0))


@dataclass(frozen=True)
class AssetModel:
    """Traded non-defaultable assets plus the defaultable bond volatilities.

    kind "gbm": n lognormal assets with constant volatility rows ``vol``.
    kind "bond": the single traded asset is the zero-coupon bond maturing at
    ``bond_maturity`` under the Vasicek rate; its volatility is time dependent
    and the defaultable bonds share it (same maturity).
    """

    kind: str = "gbm"
    s0: np.ndarray = field(default_factory=lambda: np.array([100.0]))
    vol: np.ndarray = field(default_factory=lambda: np.array([[0.2]]))
    defaultable_vols: np.ndarray | None = None
    bond_maturity: float | None = None

    def __post_init__(self):
        if self.kind not in ("gbm", "bond"):
            raise ConfigurationError(f"unknown asset kind {self.kind!r}")
        s0 = np.atleast_1d(np.asarray(self.s0, dtype=float))
        if np.any(s0 <= 0.0):
            raise ConfigurationError("initial prices must be positive")
        vol = np.atleast_2d(np.asarray(self.vol, dtype=float))
        n = s0.size
        if vol.shape != (n, n):
            raise ConfigurationError(f"vol must be ({n}, {n}) rows of per-asset volatility vectors")
        dv = self.defaultable_vols
        dv = np.zeros((2, n)) if dv is None else np.atleast_2d(np.asarray(dv, dtype=float))
        if dv.shape != (2, n):
            raise ConfigurationError("defaultable_vols must be two n-vectors (sigma_H, sigma_C)")
        if self.kind == "bond":
            if n != 1:
                raise ConfigurationError("bond asset kind supports a single traded bond")
            if self.bond_maturity is None or self.bond_maturity <= 0.0:
                raise ConfigurationError("bond asset kind requires a positive bond_maturity")
        object.__setattr__(self, "s0", _freeze(s0))
        object.__setattr__(self, "vol", _freeze(vol))
        object.__setattr__(self, "defaultable_vols", _freeze(dv))

    @property
    def n(self) -> int:
        return self.s0.size


@dataclass(frozen=True)
class IntensityCurve:
    """Deterministic piecewise-constant default intensities of the two parties."""

    hH: PiecewiseConstant
    hC: PiecewiseConstant

    def __post_init__(self):
        object.__setattr__(self, "hH", PiecewiseConstant.coerce(self.hH))
        object.__setattr__(self, "hC", PiecewiseConstant.coerce(self.hC))
        if not (self.hH.is_nonnegative and self.hC.is_nonnegative):
            raise ConfigurationError("intensities must be nonnegative")

    def h(self, t):
        return self.hH(t) + self.hC(t)

    def cumulative(self, t):
        return self.hH.integral(t) + self.hC.integral(t)


def survival(curve: IntensityCurve, t, components: bool = False):
    """Survival probability G_t = exp(-int_0^t h), exact on the piecewise segments.

    With ``components=True`` returns the pair (G^H_t, G^C_t) instead.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ArgumentError("survival requires t >= 0")
    if components:
        gH = np.exp(-curve.hH.integral(t))
        gC = np.exp(-curve.hC.integral(t))
        return (gH, gC) if t.ndim else (float(gH), float(gC))
    g = np.exp(-curve.cumulative(t))
    return g if t.ndim else float(g)


@dataclass(frozen=True)
class FundingSpreads:
    """Lending/borrowing spreads over OIS; repo and margin rates are pinned to OIS."""

    s_ell: PiecewiseConstant
    s_b: PiecewiseConstant

    def __post_init__(self):
        object.__setattr__(self, "s_ell", PiecewiseConstant.coerce(self.s_ell))
        object.__setattr__(self, "s_b", PiecewiseConstant.coerce(self.s_b))
        if not (self.s_ell.is_nonnegative and self.s_b.is_nonnegative):
            raise ConfigurationError("funding spreads must be nonnegative (funding rates >= OIS)")


@dataclass(frozen=True)
class LegacyPortfolio:
    """Bank's endowed position; grows at its sign-dependent funding rate."""

    epsilon: float = 0.0

    def spread(self, spreads: FundingSpreads) -> PiecewiseConstant:
        return spreads.s_ell if self.epsilon >= 0.0 else spreads.s_b

    def discounted_value(self, spreads: FundingSpreads, t):
        """B^{-1}_t B^eps_t = eps * exp(int_0^t s^eps); deterministic, the OIS leg cancels."""
        return self.epsilon * np.exp(self.spread(spreads).integral(t))

    def value(self, spreads: FundingSpreads, r_path: np.ndarray, grid: np.ndarray):
        """Undiscounted per-path B^eps on the grid (trapezoidal OIS accrual)."""
        r_int = np.concatenate(
            [np.zeros((r_path.shape[0], 1)), np.cumsum(0.5 * (r_path[:, 1:] + r_path[:, :-1]) * np.diff(grid), axis=1)],
            axis=1,
        )
        return self.discounted_value(spreads, grid)[None, :] * np.exp(r_int)


def legacy_value(lp: LegacyPortfolio, spreads: FundingSpreads, r_path: np.ndarray, grid: np.ndarray, t: float):
    """Per-path legacy value B^eps_t and its (deterministic) discounted value."""
    if t < grid[0] - 1e-12 or t > grid[-1] + 1e-12:
        raise ArgumentError("t outside the simulated grid span")
    k = int(np.argmin(np.abs(grid - t)))
    full = lp.value(spreads, r_path, grid)[:, k]
    return full, lp.discounted_value(spreads, grid[k])


@dataclass(frozen=True)
class MarketModel:
    """Everything needed to simulate the observable state and price a contract."""

    rate: ShortRateModel
    assets: AssetModel
    intensities: IntensityCurve
    spreads: FundingSpreads
    repo: frozenset | str = frozenset()
    legacy: LegacyPortfolio = field(default_factory=LegacyPortfolio)

    def __post_init__(self):
        if isinstance(self.repo, str):
            if self.repo != REPO_ALL:
                raise ConfigurationError("repo must be a set of legs or 'all'")
        else:
            repo = frozenset(self.repo)
            valid = set(range(1, self.assets.n + 1)) | {HEDGER, COUNTERPARTY}
            if not repo <= valid:
                raise ConfigurationError(f"repo entries must be in {sorted(valid, key=str)}")
            object.__setattr__(self, "repo", repo)
        if self.assets.kind == "bond" and self.rate.kind != "vasicek":
            raise ConfigurationError("bond asset kind requires the vasicek short rate")

    @property
    def repo_all(self) -> bool:
        return self.repo == REPO_ALL

    def replace_legacy(self, epsilon: float) -> "MarketModel":
        return MarketModel(self.rate, self.assets, self.intensities, self.spreads, self.repo, LegacyPortfolio(epsilon))


def uniform_grid(maturity: float, steps: int) -> np.ndarray:
    if steps < 1 or maturity <= 0.0:
        raise ConfigurationError("need steps >= 1 and maturity > 0")
    return np.linspace(0.0, maturity, steps + 1)


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated Brownian increments and derived state on a fixed grid.

    Immutable after construction; arrays are read-only.  ``S`` holds
    undiscounted asset values, shape (n_paths, M+1, n); ``dW`` the Brownian
    increments of the simulation measure, shape (n_paths, M, n).
    """

    grid: np.ndarray
    n_paths: int
    dW: np.ndarray
    S: np.ndarray
    B_inv: np.ndarray
    r_path: np.ndarray
    seed: int
    market: MarketModel
    w_drift: np.ndarray | None = None  # per-step W-drift of the simulation measure, (M, n)

    @cached_property
    def s_tilde(self) -> np.ndarray:
        """Discounted asset values B^{-1} S."""
        return _freeze(self.S * self.B_inv[:, :, None])

    @cached_property
    def dt(self) -> np.ndarray:
        return _freeze(np.diff(self.grid))

    @property
    def maturity(self) -> float:
        return float(self.grid[-1])

    @property
    def n_steps(self) -> int:
        return self.grid.size - 1


def simulate_paths(
    market: MarketModel,
    grid: np.ndarray,
    n_paths: int,
    seed: int,
    w_drift: np.ndarray | None = None,
) -> PathEnsemble:
    """Simulate the reference-filtration state on ``grid``.

    Discounted GBM assets are simulated exactly in log space (driftless under
    the pricing measure); the Vasicek rate uses its exact Gaussian transition;
    B^{-1} accrues by trapezoidal integration of the rate path (exact
    exponential for a constant rate).  ``w_drift`` (shape (M, n) or (n,))
    adds a deterministic drift to the Brownian motion, realizing measure
    shifts by re-simulation rather than likelihood weights.  Deterministic
    for fixed (seed, grid, n_paths).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0.0):
        raise ConfigurationError("grid must be strictly increasing with at least two points")
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    n = market.assets.n
    M = grid.size - 1
    dt = np.diff(grid)

    if w_drift is None:
        drift = np.zeros((M, n))
    else:
        drift = np.broadcast_to(np.asarray(w_drift, dtype=float), (M, n)).copy()

    rng = np.random.Generator(np.random.Philox(key=seed))
    Z = rng.standard_normal(size=(n_paths, M, n))
    dW = Z * np.sqrt(dt)[None, :, None]

    # short rate and discount factor
    rate = market.rate
    if rate.kind == "constant":
        r_path = np.full((1, M + 1), rate.r0)
        B_inv = np.exp(-rate.r0 * grid)[None, :]
        r_path = np.broadcast_to(r_path, (n_paths, M + 1))
        B_inv = np.broadcast_to(B_inv, (n_paths, M + 1))
    else:
        r_path = np.empty((n_paths, M + 1))
        r_path[:, 0] = rate.r0
        ea = np.exp(-rate.kappa * dt)
        std = rate.sigma_r * np.sqrt((1.0 - np.exp(-2.0 * rate.kappa * dt)) / (2.0 * rate.kappa))
        # deterministic W-drift enters through the same exponential kernel
        shift = rate.sigma_r * drift[:, 0] * (1.0 - ea) / rate.kappa
        for k in range(M):
            r_path[:, k + 1] = rate.theta + (r_path[:, k] - rate.theta) * ea[k] + shift[k] + std[k] * Z[:, k, 0]
        r_int = np.concatenate(
            [np.zeros((n_paths, 1)), np.cumsum(0.5 * (r_path[:, 1:] + r_path[:, :-1]) * dt, axis=1)], axis=1
        )
        B_inv = np.exp(-r_int)

    assets = market.assets
    if assets.kind == "gbm":
        # exact driftless log-space scheme for the discounted assets
        sig = assets.vol  # (n, n)
        diff = dW + drift[None, :, :] * dt[None, :, None]  # effective dW under the target measure
        log_steps = np.einsum("ij,pkj->pki", sig, diff) - 0.5 * np.sum(sig**2, axis=1)[None, None, :] * dt[None, :, None]
        log_s = np.concatenate(
            [np.zeros((n_paths, 1, n)), np.cumsum(log_steps, axis=1)], axis=1
        ) + np.log(assets.s0)[None, None, :]
        s_tilde = np.exp(log_s)
        S = s_tilde / B_inv[:, :, None]
    else:
        tau = assets.bond_maturity - grid
        S = rate.zcb_price(r_path, tau[None, :])[:, :, None]

    return PathEnsemble(
        grid=_freeze(grid),
        n_paths=n_paths,
        dW=_freeze(dW),
        S=_freeze(S),
        B_inv=_freeze(np.ascontiguousarray(B_inv)),
        r_path=_freeze(np.ascontiguousarray(r_path)),
        seed=seed,
        market=market,
        w_drift=None if w_drift is None else _freeze(drift),
    )


def sample_default_times(curve: IntensityCurve, n_paths: int, seed: int):
    """Inverse-transform default times tau^i = inf{t : int_0^t h^i >= E_i}.

    Independent unit exponentials per party, on a dedicated stream decoupled
    from the path stream of the same seed.  Returns (tau_H, tau_C) with
    np.inf where the cumulative hazard never reaches the draw.  Used only by
    the full-filtration validation oracle.
    """
    rng = np.random.Generator(np.random.Philox(key=seed).jumped(1))
    out = []
    for pw in (curve.hH, curve.hC):
        e = rng.exponential(size=n_paths)
        out.append(_invert_cumulative_hazard(pw, e))
    return out[0], out[1]


def _invert_cumulative_hazard(pw: PiecewiseConstant, e: np.ndarray) -> np.ndarray:
    knots = pw.times
    cum = np.concatenate([[0.0], np.cumsum(pw.values[:-1] * np.diff(knots))])
    tau = np.full(e.shape, np.inf)
    idx = np.searchsorted(cum, e, side="right") - 1
    last = pw.values.size - 1
    for seg in range(pw.values.size):
        mask = idx == seg
        if not np.any(mask):
            continue
        v = pw.values[seg]
        if v > 0.0:
            t = knots[seg] + (e[mask] - cum[seg]) / v
            if seg < last:
                t = np.where(t <= knots[seg + 1], t, np.inf)  # guarded; by construction t stays in segment
            tau[mask] = t
        # v == 0 on the last segment: hazard saturates, never defaults
        elif seg < last:
            tau[mask] = np.inf  # cannot happen: cum flat, searchsorted skips
    return tau


def dump_ensemble_csv(ensemble: PathEnsemble, path) -> None:
    """Debug dump: one row per (path, grid time)."""
    n = ensemble.S.shape[2]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["path_id", "t"] + [f"S{i + 1}" for i in range(n)] + ["r", "B_inv"])
        for p in range(ensemble.n_paths):
            for k, t in enumerate(ensemble.grid):
                row = [p, f"{t:.10g}"]
                row += [f"{ensemble.S[p, k, i]:.10g}" for i in range(n)]
                row += [f"{ensemble.r_path[p, k]:.10g}", f"{ensemble.B_inv[p, k]:.10g}"]
                w.writerow(row)
