"""Batch front end: one YAML run configuration, price/verify/table/paths commands, CSV reports.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 verifier
precondition violation, 5 sign-table mismatch.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .binary import check_clean, check_replacement, empirical_sign_fraction, table_one, table_to_csv
from .bsde import (
    RegressionBasis,
    build_generator_spec,
    build_phi,
    solution_to_csv,
    solve_linear,
    solve_semilinear,
)
from .closedform import ClosedFormInputs, call_price_replacement
from .errors import (
    ConfigurationError,
    NumericalDegeneracyError,
    PreconditionError,
    StepSizeError,
    TableMismatchError,
    UnsupportedConfigurationError,
    UnsupportedContractError,
    XvakitError,
)
from .market import (
    AssetModel,
    FundingSpreads,
    IntensityCurve,
    LegacyPortfolio,
    MarketModel,
    ShortRateModel,
    dump_ensemble_csv,
    simulate_paths,
    uniform_grid,
)
from .payoffs import Contract, clean_curve_to_csv, clean_price
from .xva import decompose, identity_check, report_to_csv, report_to_text


@dataclass(frozen=True)
class RunConfig:
    """Parsed run configuration: market, contract, and numerics sections."""

    market: MarketModel
    contract: Contract
    steps: int
    paths: int
    seed: int
    basis_degree: int

    @property
    def header(self) -> str:
        return f"seed={self.seed} paths={self.paths} steps={self.steps} T={self.contract.maturity:g}"


def _require(mapping, key, section):
    if key not in mapping:
        raise ConfigurationError(f"missing '{key}' in the {section} section")
    return mapping[key]


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse the YAML run configuration; numeric overrides win over the file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")

    mkt = _require(raw, "market", "root")
    con = _require(raw, "contract", "root")
    num = dict(raw.get("numerics", {}))
    for key, value in (overrides or {}).items():
        if value is not None:
            num[key] = value

    contract = _build_contract(con)
    market = _build_market(mkt, contract)

    steps = int(num.get("steps", 50))
    paths = int(num.get("paths", 100_000))
    seed = int(num.get("seed", 0))
    degree = int(num.get("basis_degree", 3))
    if steps < 1 or paths < 1:
        raise ConfigurationError("numerics must be positive")
    return RunConfig(market, contract, steps, paths, seed, degree)


def _build_contract(con: dict) -> Contract:
    loss = dict(con.get("loss", {}))
    kwargs = dict(
        kind=_require(con, "kind", "contract"),
        maturity=float(_require(con, "maturity", "contract")),
        side=con.get("side", "hedger_pays"),
        Lm=float(loss.get("Lm", 1.0)),
        LH=float(loss.get("LH", 0.0)),
        LC=float(loss.get("LC", 0.0)),
        closeout=con.get("closeout", "clean"),
    )
    if "strike" in con:
        kwargs["strike"] = float(con["strike"])
    if "weights" in con:
        kwargs["weights"] = tuple(float(w) for w in con["weights"])
        kwargs["strikes"] = tuple(float(k) for k in _require(con, "strikes", "contract"))
    if "bond_maturity" in con:
        kwargs["bond_maturity"] = float(con["bond_maturity"])
    return Contract(**kwargs)


def _build_market(mkt: dict, contract: Contract) -> MarketModel:
    rcfg = _require(mkt, "rate", "market")
    rate = ShortRateModel(
        kind=rcfg.get("kind", "constant"),
        r0=float(_require(rcfg, "r0", "market.rate")),
        kappa=float(rcfg.get("kappa", 0.0)),
        theta=float(rcfg.get("theta", 0.0)),
        sigma_r=float(rcfg.get("sigma_r", 0.0)),
    )
    acfg = dict(mkt.get("assets", {}))
    kind = acfg.get("kind", "gbm")
    if kind == "bond":
        U = contract.bond_maturity if contract.bond_maturity is not None else contract.maturity
        assets = AssetModel("bond", s0=[1.0], vol=[[1.0]], bond_maturity=U)
    else:
        assets = AssetModel(
            "gbm",
            s0=acfg.get("s0", [100.0]),
            vol=acfg.get("vol", [[0.2]]),
            defaultable_vols=acfg.get("defaultable_vols"),
        )
    icfg = dict(mkt.get("intensities", {}))
    intensities = IntensityCurve(icfg.get("hH", 0.0), icfg.get("hC", 0.0))
    scfg = dict(mkt.get("spreads", {}))
    spreads = FundingSpreads(scfg.get("s_ell", 0.0), scfg.get("s_b", 0.0))
    repo_raw = mkt.get("repo", [])
    if isinstance(repo_raw, str):
        if repo_raw == "all":
            repo = "all"
        elif repo_raw in ("none", ""):
            repo = frozenset()
        else:
            raise ConfigurationError(f"unknown repo spec {repo_raw!r}")
    else:
        repo = frozenset(int(x) if isinstance(x, (int, float)) and not isinstance(x, bool) else str(x) for x in repo_raw)
    legacy = LegacyPortfolio(float(mkt.get("epsilon", 0.0)))
    return MarketModel(rate, assets, intensities, spreads, repo, legacy)


# ---------------------------------------------------------------------------
# workflows


def _prepare(cfg: RunConfig):
    grid = uniform_grid(cfg.contract.maturity, cfg.steps)
    ensemble = simulate_paths(cfg.market, grid, cfg.paths, cfg.seed)
    curve = clean_price(cfg.contract, ensemble, cfg.basis_degree)
    phi = build_phi(cfg.market)
    return ensemble, curve, phi


def _verdict(cfg: RunConfig, ensemble, curve):
    if cfg.contract.closeout == "clean":
        return check_clean(cfg.contract, cfg.market, ensemble, curve)
    return check_replacement(cfg.contract, cfg.market, ensemble, curve)


def _closed_form_value(cfg: RunConfig):
    c = cfg.contract
    m = cfg.market
    if (
        c.kind == "call"
        and c.closeout == "replacement"
        and c.side == "hedger_pays"
        and m.legacy.epsilon <= 0.0
        and m.rate.kind == "constant"
    ):
        sp = m.spreads
        iv = m.intensities
        curves = [sp.s_b, sp.s_ell, iv.hH, iv.hC]
        if any(cv.values.size > 1 for cv in curves):
            return None
        return call_price_replacement(
            ClosedFormInputs(
                S=float(m.assets.s0[0]),
                K=c.strike,
                T_minus_t=c.maturity,
                sigma=float(m.assets.vol[0, 0]),
                r=m.rate.r0,
                s_b=float(sp.s_b.values[0]),
                s_ell=float(sp.s_ell.values[0]),
                hH=float(iv.hH.values[0]),
                LH=c.LH,
                Lm=c.Lm,
                epsilon=m.legacy.epsilon,
            )
        )
    return None


def run_price(cfg: RunConfig, outdir: Path, debug_paths: bool = False) -> dict:
    """Verifier-gated pricing: linear fast path plus semilinear cross-check when
    authorized, semilinear only otherwise.  Writes price.csv and xva.csv."""
    ensemble, curve, phi = _prepare(cfg)
    try:
        verdict = _verdict(cfg, ensemble, curve)
    except PreconditionError:
        verdict = None

    basis = RegressionBasis(cfg.basis_degree)
    semi_spec = build_generator_spec(cfg.contract, cfg.market, ensemble, curve, phi, "semilinear")
    zero_terminal = np.zeros(ensemble.n_paths)
    results = {}
    if verdict is not None and verdict.authorized_mode is not None:
        lin_spec = semi_spec.with_mode(verdict.authorized_mode)
        primary = solve_linear(lin_spec, ensemble, basis=basis)
        cross = solve_semilinear(semi_spec, ensemble, zero_terminal, basis)
        report_spec, report_sol = lin_spec, primary
        results["census_wrong_sign"] = empirical_sign_fraction(primary, lin_spec, ensemble, verdict.outcome)
    else:
        primary = solve_semilinear(semi_spec, ensemble, zero_terminal, basis)
        cross = None
        report_spec, report_sol = semi_spec, primary

    report = decompose(report_sol, report_spec, ensemble)
    report = type(report)(
        **{
            **report.__dict__,
            "verdict_outcome": verdict.outcome if verdict else "not_applicable",
            "verdict_mode": verdict.mode if verdict else "none",
        }
    )
    residual = identity_check(report)

    p0 = curve.p0
    price = p0 + primary.Y0
    v0_total = price + cfg.market.legacy.epsilon
    closed = _closed_form_value(cfg)

    outdir.mkdir(parents=True, exist_ok=True)
    rows = [
        ("p_N_0", p0, curve.p0_se),
        ("Y0", primary.Y0, primary.Y0_se),
        ("price", price, float(np.hypot(curve.p0_se, primary.Y0_se))),
        ("V0_total", v0_total, float(np.hypot(curve.p0_se, primary.Y0_se))),
        ("epsilon", cfg.market.legacy.epsilon, ""),
        ("identity_residual", residual, ""),
    ]
    if cross is not None:
        rows.append(("Y0_semilinear_cross", cross.Y0, cross.Y0_se))
        rows.append(("price_semilinear_cross", p0 + cross.Y0, float(np.hypot(curve.p0_se, cross.Y0_se))))
    if closed is not None:
        rows.append(("closed_form_price", closed, ""))
    if "census_wrong_sign" in results:
        rows.append(("census_wrong_sign", results["census_wrong_sign"], ""))
    rows.append(("solver_mode", primary.mode, ""))
    rows.append(("verdict", f"{verdict.outcome}/{verdict.mode}" if verdict else "not_applicable", ""))

    with open(outdir / "price.csv", "w", newline="", encoding="utf-8") as f:
        f.write(f"# {cfg.header}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["quantity", "value", "SE"])
        for name, value, se in rows:
            vstr = f"{value:.10g}" if isinstance(value, float) else str(value)
            sstr = f"{se:.10g}" if isinstance(se, float) else str(se)
            w.writerow([name, vstr, sstr])

    report_to_csv(report, outdir / "xva.csv", header_comment=cfg.header)
    solution_to_csv(primary, outdir / "solution.csv")
    clean_curve_to_csv(curve, outdir / "clean_price.csv")
    if debug_paths:
        dump_ensemble_csv(ensemble, outdir / "paths.csv")

    results.update(
        dict(price=price, p0=p0, y0=primary.Y0, verdict=verdict, report=report, closed_form=closed, residual=residual)
    )
    print(f"price = {price:.6f}  (p^N_0 = {p0:.6f}, Y0 = {primary.Y0:.6f}, mode = {primary.mode})")
    if verdict is not None:
        print(f"verdict = {verdict.outcome}/{verdict.mode}")
    print(report_to_text(report))
    return results


def run_verify(cfg: RunConfig, outdir: Path) -> dict:
    """Sign-condition check only; undetermined is a result, not a failure."""
    ensemble, curve, _ = _prepare(cfg)
    verdict = _verdict(cfg, ensemble, curve)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "verdict.csv", "w", newline="", encoding="utf-8") as f:
        f.write(f"# {cfg.header}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["field", "value"])
        w.writerow(["outcome", verdict.outcome])
        w.writerow(["mode", verdict.mode])
        for name in sorted(verdict.evidence):
            value = verdict.evidence[name]
            w.writerow([f"margin_{name}", f"{value:.10g}" if isinstance(value, float) else str(value)])
        if verdict.epsilon_bounds is not None:
            w.writerow(["epsilon_star", f"{verdict.epsilon_bounds[0]:.10g}"])
            w.writerow(["epsilon_star_upper", f"{verdict.epsilon_bounds[1]:.10g}"])
        if verdict.notes:
            w.writerow(["notes", verdict.notes])
    print(f"verdict = {verdict.outcome}/{verdict.mode}")
    return {"verdict": verdict}


def run_table(cfg: RunConfig, outdir: Path) -> dict:
    """Buy/sell x call/put FBA/DVA sign table under replacement close-out."""
    c = cfg.contract
    if c.strike is None:
        raise ConfigurationError("table command needs a contract strike")
    cells = table_one(
        cfg.market,
        strike=c.strike,
        maturity=c.maturity,
        Lm=c.Lm,
        LH=c.LH,
        LC=c.LC,
        n_paths=cfg.paths,
        steps=cfg.steps,
        seed=cfg.seed,
        degree=cfg.basis_degree,
    )
    outdir.mkdir(parents=True, exist_ok=True)
    table_to_csv(cells, outdir / "table.csv", header_comment=cfg.header)
    for cell in cells:
        print(
            f"{cell.position}/{cell.option}: FBA {cell.fba_class} ({cell.fba:.6g}), "
            f"DVA {cell.dva_class} ({cell.dva:.6g}), verdict {cell.verdict}"
        )
    return {"cells": cells}


def run_paths(cfg: RunConfig, outdir: Path) -> dict:
    """Debug ensemble dump."""
    grid = uniform_grid(cfg.contract.maturity, cfg.steps)
    ensemble = simulate_paths(cfg.market, grid, cfg.paths, cfg.seed)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "paths.csv"
    tmp = Path(str(path) + ".tmp")
    dump_ensemble_csv(ensemble, tmp)
    with open(tmp, "r", encoding="utf-8") as src, open(path, "w", newline="", encoding="utf-8") as dst:
        dst.write(f"# {cfg.header}\n")
        dst.write(src.read())
    tmp.unlink()
    print(f"wrote {path}")
    return {}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="xvakit", description=__doc__)
    parser.add_argument("command", choices=["price", "verify", "table", "paths"])
    parser.add_argument("config", help="YAML run configuration")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--paths", type=int, default=None, help="override path count")
    parser.add_argument("--steps", type=int, default=None, help="override grid steps")
    parser.add_argument("--seed", type=int, default=None, help="override RNG seed")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, {"paths": args.paths, "steps": args.steps, "seed": args.seed})
    except (ConfigurationError, UnsupportedContractError, UnsupportedConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    outdir = Path(args.out)
    try:
        if args.command == "price":
            run_price(cfg, outdir)
        elif args.command == "verify":
            run_verify(cfg, outdir)
        elif args.command == "table":
            run_table(cfg, outdir)
        else:
            run_paths(cfg, outdir)
    except PreconditionError as exc:
        print(f"verifier precondition violated: {exc}", file=sys.stderr)
        return 4
    except TableMismatchError as exc:
        print(f"sign-table mismatch: {exc}", file=sys.stderr)
        return 5
    except (StepSizeError, NumericalDegeneracyError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, UnsupportedContractError, UnsupportedConfigurationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except XvakitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
