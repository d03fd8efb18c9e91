"""Batch front end: subcommands wiring the numerical modules, JSON/CSV
emission, and manifest-driven runs.

Exit codes: 0 success, 1 manifest/schema violation, 2 domain error,
3 numerical failure (escape, divergence, ill-conditioning).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import DomainError, ManifestError, NumericalError
from .gauges import derive_constants, q_residual, CylField
from .delaunay import solve_orbit, hamiltonian
from .jacobi import (ModeOperator, mode_apply, indicial_roots, generators,
                     symplectic_pairing)
from .gluing import GluingConfig, build_approximate, defect, decay_study
from .corrector import iterate, verify_correction, nondegeneracy_diag
from .schemas import validate_manifest, validate_summary


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(x) if isinstance(x, float) else str(x)
                              for x in row) + "\n")


def _orbit_residual(orbit, grid_per_period=128, acc=10):
    """Sup residual of the sampled orbit over one period, via exact
    (step-capped) sampling and centered stencils with padding."""
    consts = orbit.constants
    T = orbit.period
    npts = grid_per_period
    h = T / npts
    pad = 8
    tg = (np.arange(-pad, npts + pad + 1)) * h
    vals = orbit.sample_exact(tg)
    fld = CylField.mode0(consts, tg, vals)
    res = q_residual(fld, acc=acc, trim=pad)
    return res.supResidual


def _orbit_summary(orbit, with_residual=True):
    doc = {
        "command": "orbit",
        "n": orbit.constants.n,
        "eps": orbit.eps,
        "period": orbit.period,
        "vDdot0": orbit.vDdot0,
        "hamiltonian": orbit.hamiltonianValue,
        "isConstant": orbit.isConstant,
        "periodicityDefect": float(orbit.diagnostics.get("periodicityDefect",
                                                         0.0)),
        "minDefect": float(orbit.diagnostics.get("minDefect", 0.0)),
    }
    if with_residual:
        doc["residualSup"] = _orbit_residual(orbit)
        ts = np.linspace(0.0, orbit.period, 129)
        H = np.array([hamiltonian(orbit.state(t), orbit.constants)
                      for t in ts])
        doc["hamiltonianDrift"] = float(np.max(np.abs(H - H[0]))
                                        / max(abs(H[0]), 1e-300))
    return doc


def cmd_constants(params, out):
    c = derive_constants(params["n"])
    doc = {"command": "constants", "n": c.n, "c2": c.c2, "c0": c.c0,
           "cN": c.cN, "p": c.p, "qTarget": c.qTarget, "epsBar": c.epsBar,
           "K": c.K, "cH": c.cH}
    return doc, {}


def cmd_orbit(params, out):
    orbit = solve_orbit(params["n"], params["eps"],
                        tol=params.get("tol", 1e-11))
    doc = _orbit_summary(orbit)
    return doc, {"orbit.json": orbit.to_json()}


def cmd_sweep(params, out):
    rows = []
    H = []
    for eps in params["epsList"]:
        orbit = solve_orbit(params["n"], eps, tol=params.get("tol", 1e-11))
        rows.append({
            "eps": orbit.eps, "period": orbit.period,
            "hamiltonian": orbit.hamiltonianValue,
            "residualSup": _orbit_residual(orbit),
            "periodicityDefect": float(
                orbit.diagnostics.get("periodicityDefect", 0.0)),
        })
        H.append(orbit.hamiltonianValue)
    dH = np.diff(H)
    monotone = bool(np.all(dH > 0) or np.all(dH < 0))
    direction = "increasing" if len(dH) and np.all(dH > 0) else (
        "decreasing" if len(dH) and np.all(dH < 0) else "non-monotone")
    doc = {"command": "sweep", "n": params["n"], "rows": rows,
           "hamiltonianMonotone": monotone,
           "hamiltonianDirection": direction}
    csv_rows = [(r["eps"], r["period"], r["hamiltonian"], r["residualSup"])
                for r in rows]
    return doc, {"sweep.csv": ("eps,period,hamiltonian,residualSup",
                               csv_rows)}


def cmd_indicial(params, out):
    orbit = solve_orbit(params["n"], params["eps"],
                        tol=params.get("tol", 1e-11))
    spec = indicial_roots(orbit, params.get("modes", [0, 1, 2]))
    doc = {"command": "indicial", "n": spec.n, "eps": spec.eps,
           "modes": spec.to_json()["modes"]}
    csv_rows = [(e["l"], e["lambda"],
                 ";".join(repr(x) for x in e["exponents"]))
                for e in doc["modes"]]
    return doc, {"spectrum.json": spec.to_json(),
                 "spectrum.csv": ("l,lambda,exponents", csv_rows)}


def cmd_jacobi(params, out):
    orbit = solve_orbit(params["n"], params["eps"])
    basis = generators(orbit, d_eps=params.get("dEps", 1e-4))
    T = orbit.period
    gpp = params.get("gridPerPeriod", 64)
    tg = np.linspace(-T, 2 * T, 3 * gpp + 1)
    residuals = {}
    rates = {}
    for tag, sign, deg in basis.fields():
        slot = 0 if tag == "0" else 1
        op = ModeOperator(orbit, orbit.constants.lam(deg))
        w = basis.profile(slot, sign, tg)
        r = mode_apply(op, tg, w)
        trim = 8
        residuals[tag + sign] = float(np.max(np.abs(r[trim:-trim])))
        rates[tag + sign] = basis.measured_rate(slot, sign)
    op0 = ModeOperator(orbit, 0.0)
    ts = np.linspace(0.0, T, 33)
    om = np.array([symplectic_pairing(
        op0, lambda t: basis.jet(0, "-", t)[:, 0],
        lambda t: basis.jet(0, "+", t)[:, 0], t) for t in ts])
    d_eps = params.get("dEps", 1e-4)
    hi = solve_orbit(orbit.constants, orbit.eps + d_eps)
    lo = solve_orbit(orbit.constants, orbit.eps - d_eps)
    dHdEps = (hi.hamiltonianValue - lo.hamiltonianValue) / (2 * d_eps)
    doc = {"command": "jacobi", "n": orbit.constants.n, "eps": orbit.eps,
           "dsdEps": basis.dsdEps, "dTdEps": basis.dTdEps,
           "crossValidationError": basis.crossValidationError,
           "generatorResiduals": residuals, "measuredRates": rates,
           "pairingRatio": float(np.mean(om) / dHdEps),
           "pairingDrift": float(np.max(np.abs(om - om[0])))}
    return doc, {}


def _config_from_params(params):
    return GluingConfig.from_json(params["config"])


def cmd_glue(params, out):
    cfg = _config_from_params(params)
    gpp = params.get("gridPerPeriod", 64)
    delta = params.get("delta", 1.5)
    approx = build_approximate(cfg, grid_per_period=gpp)
    d = defect(approx, delta=delta)
    doc = {"command": "glue", "n": cfg.constants.n, "eps": cfg.orbit.eps,
           "m": cfg.m, "supPsi": d.supPsi, "weightedPsi": d.weightedPsi,
           "supResidual": d.supResidual,
           "supOutsideBand": d.supOutsideBand, "delta": delta}
    artifacts = {"field.json": approx.field.to_json(),
                 "psi.json": d.psi.to_json()}
    if "mList" in params:
        st = decay_study(cfg, params["mList"], grid_per_period=gpp,
                         delta=delta)
        doc["study"] = {"mList": st.mList, "supPsi": st.supPsi,
                        "weightedPsi": st.weightedPsi, "betaHat": st.betaHat,
                        "fitResidual": st.fitResidual, "exact": st.exact}
        artifacts["study.csv"] = ("m,supPsi,weightedPsi,fitBeta", st.rows())
    return doc, artifacts


def cmd_correct(params, out):
    cfg = _config_from_params(params)
    gpp = params.get("gridPerPeriod", 64)
    approx = build_approximate(cfg, grid_per_period=gpp)
    result = iterate(approx,
                     scheme=params.get("scheme", "picard"),
                     tol=params.get("tol", 1e-9),
                     max_iter=params.get("maxIter", 25),
                     min_iter=params.get("minIter", 1),
                     degrees=tuple(params.get("modes", [0])))
    res_sup, psi_sup = verify_correction(approx, result.correction)
    ratios = [r[3] for r in result.trace.rows if np.isfinite(r[3])]
    doc = {"command": "correct", "n": cfg.constants.n, "eps": cfg.orbit.eps,
           "m": cfg.m, "scheme": result.scheme,
           "initialDefect": result.initialDefect,
           "finalDefect": result.finalDefect,
           "residualSup": res_sup, "psiSup": psi_sup,
           "converged": result.converged,
           "iterations": len(result.trace.rows) - 1,
           "maxRatio": max(ratios) if ratios else None,
           "cond": result.cond,
           "alpha": {f"{l}:{side}{sign}": val
                     for (l, side, sign), val in result.alpha.items()}}
    return doc, {"corrected.json": result.solution.to_json(),
                 "trace.csv": ("k,defectSup,corrSup,ratio",
                               result.trace.rows)}


def cmd_diagnose(params, out):
    cfg = _config_from_params(params)
    gpp = params.get("gridPerPeriod", 64)
    approx = build_approximate(cfg, grid_per_period=gpp)
    degrees = tuple(params.get("modes", [0]))
    correction = None
    conds = {}
    corrected = bool(params.get("applyCorrection", True))
    if corrected:
        result = iterate(approx, degrees=degrees)
        correction = result.correction
        if np.isfinite(result.cond):
            conds["borderedSystem"] = result.cond
    diag = nondegeneracy_diag(approx, correction,
                              delta=params.get("delta", 1.5),
                              delta_prime=params.get("deltaPrime"),
                              degrees=degrees)
    doc = {"command": "diagnose", "n": cfg.constants.n, "eps": cfg.orbit.eps,
           "m": cfg.m, "sigmaMin": diag.sigmaMin, "delta": diag.delta,
           "deltaPrime": diag.deltaPrime,
           "perMode": {str(l): v for l, v in diag.perMode.items()},
           "corrected": corrected, "condEstimates": conds}
    return doc, {"diagnostics.json": doc}


HANDLERS = {
    "constants": cmd_constants,
    "orbit": cmd_orbit,
    "sweep": cmd_sweep,
    "indicial": cmd_indicial,
    "jacobi": cmd_jacobi,
    "glue": cmd_glue,
    "correct": cmd_correct,
    "diagnose": cmd_diagnose,
}


def execute(manifest):
    """Validate and run a manifest; returns (summary, artifacts)."""
    validate_manifest(manifest)
    out = manifest.get("out", "qglue_out")
    np.random.seed(manifest.get("seed", 0) % (2 ** 32))
    summary, artifacts = HANDLERS[manifest["command"]](manifest["params"],
                                                       out)
    validate_summary(summary)
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "summary.json"), summary)
    for name, payload in artifacts.items():
        path = os.path.join(out, name)
        if name.endswith(".csv"):
            header, rows = payload
            _write_csv(path, header.split(","), rows)
        else:
            _write_json(path, payload)
    return summary, artifacts


def _resolve_eps(n, token):
    """Necksize from a CLI token; 'epsbar' resolves to the family maximum
    (its printed rounding exceeds the exact value, so a literal is cleaner
    than typing digits)."""
    if isinstance(token, str) and token.strip().lower() == "epsbar":
        return derive_constants(n).epsBar
    return float(token)


def _parse_modes(text):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def build_parser():
    ap = argparse.ArgumentParser(
        prog="qglue",
        description="constant-curvature gluing on punctured spheres: "
                    "orbits, linear analysis, blends and corrections")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", default="qglue_out")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("constants", help="dimension-dependent coefficients")
    p.add_argument("--n", type=int, required=True)
    common(p)

    p = sub.add_parser("orbit", help="solve one periodic orbit")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", required=True,
                   help="necksize; the literal 'epsbar' selects the maximum")
    p.add_argument("--tol", type=float, default=1e-11)
    common(p)

    p = sub.add_parser("sweep", help="orbit family sweep")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps-list", required=True,
                   help="comma-separated necksizes; 'epsbar' allowed")
    p.add_argument("--tol", type=float, default=1e-11)
    common(p)

    p = sub.add_parser("indicial", help="Floquet exponents per mode")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", required=True)
    p.add_argument("--modes", default="0..2")
    common(p)

    p = sub.add_parser("jacobi", help="generator fields and pairing checks")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", required=True)
    p.add_argument("--deps", type=float, default=1e-4)
    common(p)

    for name, extra in (("glue", ("delta", "m-list")),
                        ("correct", ("scheme", "tol", "modes")),
                        ("diagnose", ("delta", "delta-prime", "modes"))):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="gluing configuration JSON file")
        p.add_argument("--m", type=int, default=None,
                       help="override the config's overlap length")
        p.add_argument("--grid-per-period", type=int, default=64)
        if "delta" in extra:
            p.add_argument("--delta", type=float, default=1.5)
        if "delta-prime" in extra:
            p.add_argument("--delta-prime", type=float, default=None)
        if "m-list" in extra:
            p.add_argument("--m-list", default=None,
                           help="overlap sweep for the decay study, e.g. "
                                "1,2,3,4,5")
        if "scheme" in extra:
            p.add_argument("--scheme", choices=["picard", "newton"],
                           default="picard")
        if "tol" in extra:
            p.add_argument("--tol", type=float, default=1e-9)
        if "modes" in extra:
            p.add_argument("--modes", default="0")
        common(p)

    p = sub.add_parser("run", help="execute a run manifest")
    p.add_argument("manifest")
    return ap


def _manifest_from_args(args):
    cmd = args.command
    if cmd == "run":
        with open(args.manifest) as fh:
            return json.load(fh)
    params = {}
    if cmd in ("constants", "orbit", "sweep", "indicial", "jacobi"):
        params["n"] = args.n
    if cmd in ("orbit", "indicial", "jacobi"):
        params["eps"] = _resolve_eps(args.n, args.eps)
    if cmd == "orbit":
        params["tol"] = args.tol
    if cmd == "sweep":
        consts = derive_constants(args.n)
        params["epsList"] = [
            consts.epsBar if tok.strip().lower() == "epsbar"
            else float(tok) for tok in args.eps_list.split(",")]
        params["tol"] = args.tol
    if cmd == "indicial":
        params["modes"] = _parse_modes(args.modes)
    if cmd == "jacobi":
        params["dEps"] = args.deps
    if cmd in ("glue", "correct", "diagnose"):
        with open(args.config) as fh:
            params["config"] = json.load(fh)
        if args.m is not None:
            params["config"]["m"] = args.m
        params["gridPerPeriod"] = args.grid_per_period
    if cmd == "glue":
        params["delta"] = args.delta
        if args.m_list:
            params["mList"] = [int(x) for x in args.m_list.split(",")]
    if cmd == "correct":
        params["scheme"] = args.scheme
        params["tol"] = args.tol
        params["modes"] = _parse_modes(args.modes)
    if cmd == "diagnose":
        params["delta"] = args.delta
        if args.delta_prime is not None:
            params["deltaPrime"] = args.delta_prime
        params["modes"] = _parse_modes(args.modes)
    return {"command": cmd, "params": params, "out": args.out,
            "seed": args.seed}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        manifest = _manifest_from_args(args)
        summary, _ = execute(manifest)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 1
    except DomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, sort_keys=True, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
