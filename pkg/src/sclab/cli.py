"""Command line driver.

Each subcommand loads a JSON scenario, runs one verification family and
writes CSV tables plus a JSON bundle and a run manifest to the output
directory.  ``scl report`` runs every command the scenario lists and also
renders the figures.  Invalid configs exit with status 2 and a dotted-path
diagnostic on stderr; numerical preconditions that fail at run time are
recorded in the bundle instead of aborting the whole report.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import COMMANDS, Scenario, load_scenario
from .damping import (average_damping_constants, build_escape_function,
                      check_damping_assumption, dichotomy_check,
                      sample_escape_points, verify_escape_relation)
from .errors import (ConfigError, IntegrationError, ModelError,
                     PreconditionError)
from .flow import (PhasePoint, RegionSpec, _shell_points, classify_trajectory,
                   sample_trapped_set, symplectic_evolve)
from .helmholtz import (GaussianProfile, build_source, circle_source,
                        green_function_1d, outgoing_estimate_constant,
                        point_source, radiation_residual, solve_outgoing,
                        sphere_identity_check)
from .measure import (flow_measure, liouville_residual,
                      normalized_empirical_pairing, propagation_check,
                      reintersection_fraction, sample_negamma,
                      symbol_battery_2d)
from .operator import build_hamiltonian, gaussian_symbol, grid_for
from .reporting import emit_report, write_manifest
from .resolvent import (eigenvalue_free_scan, h_scaling_fit,
                        incoming_region_norm, weighted_resolvent_norm)
from .weights import l2s_norm

RUNTIME_ERRORS = (PreconditionError, ModelError, IntegrationError)


def _grid(scn: Scenario, h: float):
    return grid_for(h, scn.dim, scn.grid_L, xi_max=scn.xi_max,
                    order=scn.grid_order, cap_width=scn.cap_width,
                    cap_strength=scn.cap_strength, buffer=scn.buffer,
                    n_max=scn.n_max)


def _operator(scn: Scenario, h: float, variant: str = "full"):
    model = scn.build_model()
    grid = _grid(scn, h)
    op = build_hamiltonian(model, grid, h, variant=variant, xi_max=scn.xi_max)
    return model, grid, op


def _source_spec(scn: Scenario, profile: GaussianProfile):
    if scn.source_kind == "circle":
        return circle_source(radius=scn.source_radius, n_nodes=scn.n_nodes,
                             amplitude=scn.source_amplitude, profile=profile)
    return point_source(scn.source_center, amplitude=scn.source_amplitude,
                        profile=profile, dim=scn.dim)


def _fmt_vec(v) -> str:
    return ";".join(repr(float(c)) for c in np.atleast_1d(v))


def _tol(scn: Scenario, key: str, default):
    v = scn.tolerances.get(key, default)
    return type(default)(v) if default is not None else v


# ---------------------------------------------------------------------------
# command bodies; each returns (results dict, tables dict)


def cmd_flow(scn: Scenario, seed: int):
    model = scn.build_model()
    rng = np.random.default_rng(seed)
    n_samp = int(_tol(scn, "flow_samples", 12))
    horizon = _tol(scn, "flow_horizon", 200.0)
    box = max(2.0, 1.5 * model.scan_radius())
    X0, Xi0 = _shell_points(model, rng, scn.interval, box, n_samp)
    counts = {"trapped": 0, "escaping": 0, "mixed": 0}
    rows = []
    rc = None
    for i in range(X0.shape[0]):
        res = classify_trajectory(model, PhasePoint(X0[i], Xi0[i]),
                                  scn.interval, horizon=horizon, rc=rc)
        rc = res.escape_radius      # reuse across samples
        out = symplectic_evolve(model, X0[i], Xi0[i], min(horizon, 100.0))
        e0 = float(model.energy(X0[i][None, :], Xi0[i][None, :])[0])
        e1 = float(model.energy(out["X"], out["Xi"])[0])
        counts[res.label] += 1
        rows.append([i, _fmt_vec(X0[i]), _fmt_vec(Xi0[i]), e0, res.label,
                     res.forward, res.backward, abs(e1 - e0)])
    tables = {"flow_summary": {
        "header": ["sample", "x0", "xi0", "energy", "label", "forward",
                   "backward", "drift"],
        "rows": rows}}
    results = {"n_samples": len(rows), "counts": counts,
               "escape_radius": rc, "horizon": horizon,
               "max_drift": max((r[-1] for r in rows), default=0.0)}
    return results, tables


def cmd_damping(scn: Scenario, seed: int):
    model = scn.build_model()
    horizon = _tol(scn, "damping_horizon", 200.0)
    n_keep = int(_tol(scn, "damping_samples", 64))
    box = max(2.0, 1.5 * model.scan_radius())
    trapped = sample_trapped_set(model, scn.interval, box,
                                 n_candidates=max(200, 4 * n_keep),
                                 horizon=min(horizon, 200.0), seed=seed)
    results = {"n_trapped": int(trapped.points.shape[0]),
               "escape_radius": trapped.escape_radius,
               "trap_horizon": trapped.horizon}
    pts = trapped.points[:n_keep]
    if pts.shape[0] == 0:
        # nothing is trapped, so the trapped-set damping condition is empty
        results["verdict"] = "vacuous"
        return results, {}
    rep = check_damping_assumption(model, pts, t_max=horizon)
    bound = average_damping_constants(model, pts, horizon=max(horizon, 400.0))
    dich = dichotomy_check(model, pts, horizon=min(horizon, 200.0))
    rows = [[i, float(w) if np.isfinite(w) else -1.0, bool(np.isfinite(w))]
            for i, w in enumerate(rep.window_times)]
    tables = {"damping_windows": {
        "header": ["sample", "first_window", "windowed"], "rows": rows}}
    results.update({
        "verdict": "holds" if rep.verdict else "fails",
        "n_failures": int(rep.failures.size),
        "ladder_top": float(rep.t_max),
        "c0": bound.c0, "C": bound.C,
        "affine_horizon": bound.horizon,
        "affine_violations": bound.n_violations,
        "dichotomy": {"c0": dich.c0, "C": dich.C, "rc": dich.rc,
                      "violations": dich.n_violations}})
    return results, tables


def cmd_escape(scn: Scenario, seed: int):
    model = scn.build_model()
    # the bump construction needs a strict aperture below 1/2
    sig = scn.sigma if scn.sigma < 0.5 else 0.45
    esc = build_escape_function(model, scn.E, scn.delta, sigma=sig)
    n_pts = int(_tol(scn, "escape_samples", 40))
    samples = sample_escape_points(esc, n_pts, seed=seed)
    rep = verify_escape_relation(esc, samples)
    rows = [[i, float(r)] for i, r in enumerate(rep.residuals)]
    tables = {"escape_relation": {"header": ["sample", "residual"],
                                  "rows": rows}}
    results = {"max_residual": rep.max_residual, "edge_leak": rep.edge_leak,
               "sup_f": rep.sup_f, "sigma": sig, "delta": scn.delta,
               "rc": esc.rc, "n_samples": int(samples.shape[0]),
               "fd_step": rep.fd_step}
    return results, tables


def cmd_resolvent_scan(scn: Scenario, seed: int):
    rows, values = [], []
    m_minus = None
    for h in scn.h_ladder:
        model, grid, op = _operator(scn, h)
        m_minus = model.m_minus
        z = complex(scn.E, scn.eps0 * h)
        rn = weighted_resolvent_norm(op, z, delta=scn.delta, seed=seed)
        gap = z.imag - h * m_minus
        bound = 1.0 / gap if gap > 0 else float("inf")
        rows.append([h, z.real, z.imag, rn.value, rn.sigma_min, rn.residual,
                     rn.method, bound])
        values.append(rn.value)
    tables = {"resolvent_scan": {
        "header": ["h", "re_z", "im_z", "norm", "sigma_min", "residual",
                   "method", "dissipative_bound"],
        "rows": rows}}
    results = {"delta": scn.delta, "eps0": scn.eps0, "m_minus": m_minus}
    finite = np.isfinite(values)
    if len(values) >= 2 and np.all(finite):
        fit = h_scaling_fit(scn.h_ladder, values)
        results.update({"slope": fit.slope, "intercept": fit.intercept,
                        "fit_residual": fit.max_residual})
    else:
        results["slope"] = None
    return results, tables


def cmd_eig_free(scn: Scenario, seed: int):
    rows, thresholds = [], []
    n_off = 0
    all_found = True
    for h in scn.h_ladder:
        _, _, op = _operator(scn, h)
        scan = eigenvalue_free_scan(op, scn.interval, scn.beta, seed=seed)
        thresholds.append([h, float(scan.threshold)])
        off = set(complex(v) for v in np.atleast_1d(scan.offenders))
        for ev, mass in zip(np.atleast_1d(scan.eigenvalues),
                            np.atleast_1d(scan.interior_mass)):
            rows.append([h, float(ev.real), float(ev.imag), float(mass),
                         complex(ev) in off])
        n_off += len(off)
        all_found = all_found and bool(np.all(np.isfinite(scan.all_found)))
    tables = {"eig_free": {
        "header": ["h", "re_eig", "im_eig", "interior_mass", "offender"],
        "rows": rows}}
    results = {"interval": list(scn.interval), "beta": scn.beta,
               "thresholds": thresholds, "n_offenders": n_off,
               "passed": n_off == 0}
    return results, tables


def cmd_incoming(scn: Scenario, seed: int):
    speed = float(np.sqrt(scn.E))
    R_in = min(scn.region_R, 0.35 * scn.grid_L)
    # signed sigma: cos(x, xi) <= -sigma on the incoming side
    inner = RegionSpec(R=R_in, d=scn.region_d, sigma=-scn.sigma, sign="-")
    outer = RegionSpec(R=R_in / 2.0, d=scn.region_d / 2.0,
                       sigma=-scn.sigma / 2.0, sign="-")
    x_cap = min(scn.grid_L - scn.cap_width, R_in + 4.0)
    x0 = _tol(scn, "incoming_x0", R_in + 1.6)
    xw = _tol(scn, "incoming_x_width", 0.25)
    xiw = _tol(scn, "incoming_xi_width", 0.12)
    beta_w = _tol(scn, "incoming_weight", 1.0)
    K = _tol(scn, "incoming_K", 1.0)
    if scn.dim == 1:
        c_minus, xi_minus = x0, -speed
        c_src, xi_src = 0.8, speed
    else:
        c_minus, xi_minus = (x0, 0.0), (-speed, 0.0)
        c_src, xi_src = (0.8, 0.0), (speed, 0.0)
    om_minus = gaussian_symbol("omega_minus", scn.dim, c_minus, xi_minus,
                               x_width=xw, xi_width=xiw)
    om = gaussian_symbol("omega_src", scn.dim, c_src, xi_src,
                         x_width=xw, xi_width=xiw)
    rows, values = [], []
    for h in scn.h_ladder:
        _, _, op = _operator(scn, h)
        z = complex(scn.E, scn.eps0 * h)
        inc = incoming_region_norm(op, z, om_minus, om, beta_power=beta_w,
                                   inner_zone=inner, outer_zone=outer,
                                   x_cap=x_cap)
        rows.append([h, inc.value, K * h ** 3, inc.geometry_ok])
        values.append(inc.value)
    # local exponent between consecutive ladder rungs
    expo = []
    for k in range(1, len(values)):
        if values[k] > 0 and values[k - 1] > 0:
            expo.append(float(np.log(values[k - 1] / values[k])
                              / np.log(scn.h_ladder[k - 1] / scn.h_ladder[k])))
    tables = {"incoming_scan": {
        "header": ["h", "norm", "cubic_bound", "geometry_ok"], "rows": rows}}
    results = {"zone_R": R_in, "x_cap": x_cap, "weight_power": beta_w,
               "K": K, "local_exponents": expo,
               "bounded": bool(all(r[1] <= r[2] for r in rows))}
    return results, tables


def cmd_helmholtz(scn: Scenario, seed: int):
    profile = GaussianProfile(scn.dim, scn.profile_width)
    spec = _source_spec(scn, profile)
    gaps_rows, rad_rows, sphere_rows = [], [], []
    results = {"per_h": {}}
    model = scn.build_model()
    for h in scn.h_ladder:
        grid = _grid(scn, h)
        op = build_hamiltonian(model, grid, h, xi_max=scn.xi_max)
        f = build_source(spec, grid, h)
        eps = [h * fac for fac in scn.eps_factors]
        sol = solve_outgoing(op, f, scn.E, eps_ladder=eps, delta=scn.delta)
        for k, g in enumerate(sol.cauchy_gaps):
            ratio = sol.gap_ratios[k - 1] if k else float("nan")
            gaps_rows.append([h, float(sol.epsilons[k + 1]), float(g), ratio])
        u = sol.u_extrapolated
        rad = radiation_residual(u, op, complex(scn.E), delta=scn.delta)
        rad_rows.append([h, rad.norm, rad.relative])
        radii = np.linspace(1.5, max(2.0, grid.interior_radius - 0.5), 4)
        sph = sphere_identity_check(sol.u, f, op, complex(scn.E, eps[-1]),
                                    radii)
        for r, d in zip(sph.radii, sph.defects):
            sphere_rows.append([h, float(r), float(d)])
        est = outgoing_estimate_constant(sol, f, op, complex(scn.E),
                                         delta=scn.delta)
        entry = {"cauchy_ok": sol.cauchy_ok,
                 "solver_residual": float(np.max(sol.solver_residuals)),
                 "estimate_constant": est.c_observed,
                 "interior_norm": est.interior_norm,
                 "radiation_relative": rad.relative,
                 "sphere_max_defect": sph.max_defect}
        if model.is_free and scn.dim == 1:
            # closed-form outgoing kernel, convolved against the same grid
            # source by chunked quadrature; compared on the trusted interior
            x = grid.points[:, 0]
            ref = np.empty(x.size, dtype=complex)
            for j0 in range(0, x.size, 512):
                sl = slice(j0, j0 + 512)
                ker = green_function_1d(x[sl, None], x[None, :],
                                        complex(scn.E), h)
                ref[sl] = ker @ f * grid.cell_volume
            num = l2s_norm(u - ref, grid.points, -scn.delta, grid.cell_volume,
                           mask=grid.interior_mask)
            den = l2s_norm(ref, grid.points, -scn.delta, grid.cell_volume,
                           mask=grid.interior_mask)
            entry["green_gap"] = float(num / den) if den else float("inf")
        results["per_h"][repr(float(h))] = entry
    tables = {
        "cauchy_gaps": {"header": ["h", "eps", "gap", "ratio"],
                        "rows": gaps_rows},
        "radiation": {"header": ["h", "norm", "relative"], "rows": rad_rows},
        "sphere_identity": {"header": ["h", "radius", "defect"],
                            "rows": sphere_rows},
    }
    results["cauchy_ok"] = all(v["cauchy_ok"] for v in
                               results["per_h"].values())
    return results, tables


def cmd_measure_compare(scn: Scenario, seed: int):
    if scn.dim != 2:
        raise PreconditionError("measure comparison runs planar scenarios; "
                                "set model.dim = 2")
    model = scn.build_model()
    profile = GaussianProfile(2, scn.profile_width)
    spec = _source_spec(scn, profile)
    sample = sample_negamma(model, spec, scn.E,
                            n_directions=scn.n_directions)
    mu = flow_measure(model, sample, profile, scn.horizon, scn.dt,
                      convention=scn.fourier_convention, im_e1=scn.im_e1)
    interior = _grid(scn, scn.h_ladder[-1]).interior_radius
    r_hi = min(_tol(scn, "battery_r_hi", 1.9), 0.9 * interior)
    battery = symbol_battery_2d(r_lo=_tol(scn, "battery_r_lo", 0.5),
                                r_hi=r_hi, xi_shell=float(np.sqrt(scn.E)))
    rows = []
    worst = {}
    for h in scn.h_ladder:
        grid = _grid(scn, h)
        op = build_hamiltonian(model, grid, h, xi_max=scn.xi_max)
        f = build_source(spec, grid, h)
        eps = [h * fac for fac in scn.eps_factors]
        sol = solve_outgoing(op, f, scn.E, eps_ladder=eps, delta=scn.delta)
        u = sol.u_extrapolated
        gaps = []
        for q in battery:
            emp = normalized_empirical_pairing(u, q, grid, h,
                                               sample.manifold_dim, scn.dim)
            fl = mu.pairing(q)
            gap = abs(emp.real - fl) / max(abs(fl), 1e-12)
            rows.append([h, q.name, fl, float(emp.real), gap])
            gaps.append(gap)
        worst[repr(float(h))] = max(gaps)
    lio = liouville_residual(model, mu, battery)
    t_prop = 2.0 * mu.dt * max(1, round(0.25 * scn.horizon / (2.0 * mu.dt)))
    prop = propagation_check(model, mu, t_prop, battery)
    tables = {"measure_compare": {
        "header": ["h", "symbol", "flow", "empirical", "rel_gap"],
        "rows": rows}}
    results = {"negamma_total": sample.total_weight,
               "manifold_dim": sample.manifold_dim,
               "energy_sup_error": mu.energy_sup_error(model),
               "tail_mass": mu.tail_mass, "converged": mu.converged,
               "worst_gap": worst,
               "liouville_max": lio.max_defect,
               "propagation_t": t_prop,
               "propagation_max": prop.max_defect,
               "reintersection": reintersection_fraction(
                   model, sample, min(scn.horizon, 20.0))}
    return results, tables


_RUNNERS = {
    "flow": cmd_flow,
    "damping": cmd_damping,
    "escape": cmd_escape,
    "resolvent-scan": cmd_resolvent_scan,
    "eig-free": cmd_eig_free,
    "incoming": cmd_incoming,
    "helmholtz": cmd_helmholtz,
    "measure-compare": cmd_measure_compare,
}


def run_command(name: str, scn: Scenario, seed: int):
    try:
        return _RUNNERS[name](scn, seed)
    except RUNTIME_ERRORS as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}, {}


def cmd_report(scn: Scenario, seed: int):
    wanted = [c for c in scn.commands if c != "report"]
    if not wanted:
        wanted = [c for c in COMMANDS if c != "report"]
    results, tables = {}, {}
    for name in (c for c in COMMANDS if c in wanted):
        res, tab = run_command(name, scn, seed)
        results[name] = res
        tables.update(tab)
    return results, tables


# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True,
                        help="path to the scenario JSON file")
    shared.add_argument("--out", default=None,
                        help="output directory (default runs/<scenario>)")
    shared.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    shared.add_argument("--threads", type=int, default=None,
                        help="thread cap for the linear algebra backends")
    p = argparse.ArgumentParser(
        prog="scl", description="semiclassical verification laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    descriptions = {
        "flow": "classify shell orbits and track energy drift",
        "damping": "trapped-set damping windows and affine averages",
        "escape": "escape-function derivative identity residuals",
        "resolvent-scan": "weighted resolvent norms over the h ladder",
        "eig-free": "interior-localized spectrum against the h*beta strip",
        "incoming": "incoming-region resolvent block norms",
        "helmholtz": "limiting-absorption solves and radiation checks",
        "measure-compare": "flow-formula measure against grid solutions",
        "report": "run the scenario's command list and render figures",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[shared], help=descriptions[name])
        if name == "report":
            sp.add_argument("--no-figures", action="store_true",
                            help="skip the PNG renders")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("config field '--threads': must be >= 1", file=sys.stderr)
            return 2
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        scn = load_scenario(args.config)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    seed = scn.seed if args.seed is None else args.seed
    out_dir = args.out or os.path.join("runs", scn.name)
    os.makedirs(out_dir, exist_ok=True)
    if args.command == "report":
        results, tables = cmd_report(scn, seed)
        bundle = {"scenario": scn.name, "seed": seed,
                  "results": results, "tables": tables}
        write_manifest(out_dir, scn.raw, seed, scn.tolerances)
        emit_report(bundle, out_dir, figures=not args.no_figures)
        failed = [c for c, r in results.items() if "error" in r]
        for c in failed:
            print(f"{c}: {results[c]['error']}", file=sys.stderr)
        print(f"report: wrote {out_dir}")
        return 0
    res, tables = run_command(args.command, scn, seed)
    bundle = {"scenario": scn.name, "seed": seed,
              "results": {args.command: res}, "tables": tables}
    write_manifest(out_dir, scn.raw, seed, scn.tolerances)
    emit_report(bundle, out_dir, figures=False)
    if "error" in res:
        print(f"{args.command}: {res['error']}", file=sys.stderr)
        return 1
    print(f"{args.command}: wrote {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
