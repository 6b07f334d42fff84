"""Command-line entry point: ``thermbath <command> [config.json] [flags]``.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime errors.
Errors are printed to stderr as one JSON object and, when the output
directory is known, also written to ``error.json`` there.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import allaser, hilbert, lvc, probe, transfer
from .config import COMMANDS, ConfigError, fixture_names, grid_values, load_fixture, parse_config
from .io import ArtifactWriter, build_manifest, is_manifest
from .lindblad import (
    MasterEquation,
    TimeSeries,
    analytic_phonon_curve,
    evolve,
    steady_state,
    thermal_dissipators,
)

TWO_PI = 2.0 * math.pi


def _csv(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _density_json(rho: hilbert.DensityMatrix) -> dict:
    return json.loads(rho.to_json())


# --- command runners ---------------------------------------------------------------
# Each runner takes (block, ctx, out) and returns a JSON-serializable summary.

def _bath_equation(b):
    lay = hilbert.HilbertLayout(False, (b["cutoff"],))
    a = hilbert.mode_op(lay, 0)
    nss = b["gamma_h"] / b["gamma_c"]
    eq = MasterEquation(hilbert.Operator(lay, np.zeros((lay.dim, lay.dim))),
                        tuple(thermal_dissipators(a, b["gamma_c"], nss)))
    return lay, eq, nss


def run_bath_relax(b, ctx, out):
    lay, eq, nss = _bath_equation(b)
    if b["initial"] == "fock":
        fock = np.zeros((b["cutoff"], b["cutoff"]), dtype=complex)
        fock[int(b["n0"]), int(b["n0"])] = 1.0
        rho0 = hilbert.product_state(lay, mode_states={0: fock})
    else:
        rho0 = hilbert.thermal_state(lay, 0, b["n0"], tail_tol=b["tail_tol"])
    grid = np.linspace(0.0, b["t_max"], b["n_points"])
    ts = evolve(rho0, eq, grid, {"n": hilbert.number_op(lay, 0)}, store_states=ctx["dump_state"])
    ana = analytic_phonon_curve(float(ts["n"][0]), nss, b["gamma_c"], grid)["n"]
    series = TimeSeries(grid, {"n": ts["n"], "n_analytic": ana},
                        {"t": "ms", "n": "quanta", "n_analytic": "quanta"})
    out.write("relax.csv", series.to_csv_text())
    rel = np.max(np.abs(ts["n"] - ana) / np.maximum(np.abs(ana), 1e-300))
    if ctx["dump_state"]:
        out.write_json("state.json", _density_json(ts.states[-1]))
    return {"n_ss": nss, "max_rel_error_vs_analytic": float(rel)}


def run_steady_state(b, ctx, out):
    lay, eq, nss = _bath_equation(b)
    guess = hilbert.thermal_state(lay, 0, b["n0"], tail_tol=b["tail_tol"])
    rho = steady_state(eq, guess)
    target = hilbert.thermal_state(lay, 0, nss, tail_tol=b["tail_tol"])
    p = np.real(np.diag(rho.matrix))
    ratio = nss / (nss + 1.0)
    rows = [(n, float(p[n]), float(np.real(target.matrix[n, n]))) for n in range(lay.dim)]
    out.write("populations.csv", _csv(["n [quanta]", "p_n [1]", "p_thermal [1]"], rows))
    if ctx["dump_state"]:
        out.write_json("state.json", _density_json(rho))
    return {"n_ss": nss, "mean_n": float(np.arange(lay.dim) @ p),
            "fidelity_to_thermal": hilbert.fidelity(rho, target),
            "detailed_balance_ratio": ratio}


def _model(t) -> lvc.LvcModel:
    return lvc.LvcModel.from_dict({k: t[k] for k in ("delta_e", "v", "modes", "imperfections", "cutoffs")})


def _sweep(model, grid, t_sim, t, workers):
    """Rates on a grid; failing points are collected rather than raised."""
    model = model.with_cutoffs(model.resolved_cutoffs)

    def one(x):
        try:
            return transfer.rate_at_gap(model, float(x), t_sim, dt=t["dt"], safety=t["safety"]), None
        except Exception as exc:  # reported per point in error.json
            return math.nan, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            res = list(pool.map(one, grid))
    else:
        res = [one(x) for x in grid]
    rates = np.array([r for r, _ in res])
    failures = [{"index": i, "delta_e": float(grid[i]), "error": e}
                for i, (_, e) in enumerate(res) if e is not None]
    return model, rates, failures


def _spectrum(t, ctx, out, two_mode):
    model = _model(t)
    grid = grid_values(t["grid"])
    t_sim = t["t_sim"] if t["t_sim"] is not None else transfer.default_t_sim(model)
    model, rates, failures = _sweep(model, grid, t_sim, t, ctx["workers"])
    unit = "omega_1" if two_mode else "omega"
    rows = [(float(x), float(k)) for x, k in zip(grid, rates)]
    name = "spectrum.partial.csv" if failures else "spectrum.csv"
    out.write(name, _csv([f"delta_e [{unit}]", f"k_T [{unit}]"], rows))
    summary = {"t_sim": t_sim, "cutoffs": list(model.resolved_cutoffs)}
    if not failures:
        summary["local_maxima"] = transfer.RateSpectrum(grid, rates).local_maxima().tolist()
    if two_mode:
        m1, m2 = model.modes
        res = transfer.resonance_positions(model.v, m1.omega, m2.omega, 3)
        lo, hi = float(grid[0]), float(grid[-1])
        res = [r for r in res if lo <= r["delta_e"] <= hi]
        out.write("resonances.csv", _csv(["l1 [quanta]", "l2 [quanta]", f"delta_e [{unit}]"],
                                         [(r["l1"], r["l2"], r["delta_e"]) for r in res]))
    if failures:
        raise PointFailures(failures, summary)
    return summary


class PointFailures(RuntimeError):
    def __init__(self, failures, summary):
        super().__init__(f"{len(failures)} grid point(s) failed")
        self.failures = failures
        self.summary = summary


def run_transfer_spectrum(t, ctx, out):
    return _spectrum(t, ctx, out, two_mode=False)


def run_two_mode_spectrum(t, ctx, out):
    return _spectrum(t, ctx, out, two_mode=True)


def run_transfer_dynamics(t, ctx, out):
    model = _model(t)
    t_sim = t["t_sim"] if t["t_sim"] is not None else transfer.default_t_sim(model)
    ts = transfer.simulate_transfer(model, t_sim, dt=t["dt"], safety=t["safety"])
    series = TimeSeries(ts.times, {"sigma_z": ts["sigma_z"], "P_D": ts["P_D"]},
                        {"t": "1/omega", "sigma_z": "1", "P_D": "1"})
    out.write("dynamics.csv", series.to_csv_text())
    k = transfer.transfer_rate(TimeSeries(ts.times, {"P_D": ts["P_D"]}), t_sim)
    if ctx["dump_state"]:
        from .lindblad import Integrator
        from .lvc import build_master_equation, initial_donor_state
        eq = build_master_equation(model)
        rho = np.array(initial_donor_state(model).matrix, dtype=complex, order="C")
        Integrator(eq, t["safety"]).advance(rho, t_sim)
        out.write_json("state.json", _density_json(
            hilbert.DensityMatrix.from_matrix(model.layout, rho, validate=False)))
    return {"t_sim": t_sim, "k_T": k, "cutoffs": list(model.resolved_cutoffs)}


def run_surfaces(t, ctx, out):
    model = _model(t)
    s = transfer.adiabatic_surfaces(model)
    rows = [(float(e), float(w), lab) for e, w, lab in zip(s.eigenvalues, s.donor_weight, s.labels)]
    out.write("surfaces.csv", _csv(["energy [omega]", "donor_weight [1]", "surface"], rows))
    return {"n_states": len(rows), "n_upper": s.labels.count("upper"),
            "n_lower": s.labels.count("lower"), "n_unclassified": s.labels.count("unclassified")}


def run_probe_fit(p, ctx, out):
    n_true = probe._thermal_levels(p["nbar"], 1e-12) if p["nbar"] > 0 else 1
    p_true = hilbert.thermal_populations(p["nbar"], max(n_true, p["n_max"] + 1))
    p_true = p_true / p_true.sum()
    grid = probe.probe_grid(p["omega_rabi"], p["n_points"], p["span"])
    sig = probe.bsb_signal(p_true, p["omega_rabi"], p["gamma_d"], grid, shots=p["shots"],
                           seed=ctx["seed"], omega_jitter=p["omega_jitter"])
    out.write("signal.csv", sig.to_csv_text())
    th = probe.fit_thermal(sig)
    est = probe.fit_free_populations(sig, p["n_max"], p["constraint_scale"], thermal=th)
    rows = [(n, float(est.p_n[n]), float(math.sqrt(max(est.covariance[n, n], 0.0))),
             float(p_true[n]) if n < p_true.size else 0.0) for n in range(est.p_n.size)]
    out.write("populations.csv", _csv(["n [quanta]", "p_n [1]", "sigma [1]", "p_true [1]"], rows))
    report = {
        "thermal": {"n_ave": th.n_ave, "omega_rabi": th.omega_rabi, "gamma_d": th.gamma_d,
                    "covariance": th.covariance.tolist(), "reduced_chi2": th.reduced_chi2,
                    "converged": th.converged},
        "free": {"nbar_mean": est.nbar_mean, "nbar_sigma": est.nbar_sigma,
                 "omega_rabi": est.omega_rabi, "gamma_d": est.gamma_d,
                 "reduced_chi2": est.reduced_chi2, "converged": est.converged,
                 "active_constraints": est.active_constraints,
                 "rank_deficient": est.rank_deficient},
        "total_variation_to_truth": probe.total_variation(est.p_n, p_true),
    }
    out.write_json("fit.json", report)
    return {"n_ave": th.n_ave, "nbar_mean": est.nbar_mean,
            "total_variation": report["total_variation_to_truth"]}


def drive_spec(d, seed) -> allaser.StochasticDriveSpec:
    """Convert a drive block (2 pi kHz and ms) into a spec in rad/ms."""
    ob = TWO_PI * d["omega_b_khz"]
    gd = TWO_PI * d["gamma_decay_khz"]
    if d["omega_r_khz"] is not None:
        orr = TWO_PI * d["omega_r_khz"]
    else:
        orr = allaser.omega_r_for_nss(d["n_ss"], ob, gd, d["tau_ms"])
    return allaser.StochasticDriveSpec(orr, ob, gd, d["tau_ms"], d["cutoff"], seed)


def run_allaser(d, ctx, out):
    spec = drive_spec(d, ctx["seed"])
    rates = allaser.effective_rates(spec)
    dt = d["dt_ms"] if d["dt_ms"] is not None else d["tau_ms"]
    n_steps = int(round(d["t_max_ms"] / dt))
    grid = dt * np.arange(n_steps + 1)
    rho0 = allaser.initial_state(spec, d["n0"], tail_tol=d["tail_tol"])
    res = allaser.ensemble_mean_n(spec, rho0, grid, d["n_traj"], workers=ctx["workers"])
    n0 = float(res.mean_n[0])
    ana = analytic_phonon_curve(n0, rates.n_ss, rates.gamma_prime, grid)["n"]
    series = TimeSeries(grid, {"mean_n": res.mean_n, "stderr": res.stderr, "n_effective": ana},
                        {"t": "ms", "mean_n": "quanta", "stderr": "quanta", "n_effective": "quanta"})
    out.write("allaser.csv", series.to_csv_text())
    lay = hilbert.HilbertLayout(False, (spec.cutoff,))
    ref = hilbert.thermal_state(lay, 0, rates.n_ss, tail_tol=d["tail_tol"])
    fid = hilbert.fidelity(res.mode_state(), ref)
    if ctx["dump_state"]:
        out.write_json("state.json", _density_json(res.final_state_mean))
    return {"omega_r_rad_per_ms": spec.omega_r, "gamma_b_per_ms": rates.gamma_b,
            "gamma_r_per_ms": rates.gamma_r, "gamma_prime_per_ms": rates.gamma_prime,
            "n_ss": rates.n_ss, "final_mean_n": float(res.mean_n[-1]),
            "final_fidelity_to_thermal": fid}


def run_fgr(f, ctx, out):
    grid = grid_values(f["grid"])
    header = ["delta_e [omega]"] + [f"k_FGR(nbar={nb:g}) [omega]" for nb in f["nbar"]]
    rows = []
    for x in grid:
        n = x / f["omega"]
        ok = abs(n - round(n)) < 1e-6 and round(n) >= 1
        rows.append([float(x)] + [transfer.fgr_rate(f["v"], f["g"], f["omega"], nb, float(x),
                                                    f["prefactor"]) if ok else math.nan
                                  for nb in f["nbar"]])
    out.write("fgr.csv", _csv(header, rows))
    return {"n_points": len(rows)}


def run_marcus(m, ctx, out):
    grid = grid_values(m["grid"])
    lam = m["g"] ** 2 / m["omega"]
    k = transfer.marcus_rate(m["v"], lam, m["k_bt"], grid)
    out.write("marcus.csv", _csv(["delta_e [omega]", "k_M [omega]", "sqrt_pi_k_M [omega]"],
                                 [(float(x), float(y), float(math.sqrt(math.pi) * y))
                                  for x, y in zip(grid, np.atleast_1d(k))]))
    return {"lambda": lam, "peak_delta_e": float(grid[int(np.argmax(k))])}


def run_resonances(r, ctx, out):
    res = transfer.resonance_positions(r["v"], r["omega1"], r["omega2"], r["l_max"])
    out.write("resonances.csv", _csv(["l1 [quanta]", "l2 [quanta]", "delta_e [omega_1]"],
                                     [(x["l1"], x["l2"], x["delta_e"]) for x in res]))
    return {"n_resonances": len(res)}


RUNNERS = {
    "bath-relax": run_bath_relax,
    "steady-state": run_steady_state,
    "transfer-spectrum": run_transfer_spectrum,
    "transfer-dynamics": run_transfer_dynamics,
    "two-mode-spectrum": run_two_mode_spectrum,
    "probe-fit": run_probe_fit,
    "allaser": run_allaser,
    "fgr": run_fgr,
    "marcus": run_marcus,
    "surfaces": run_surfaces,
    "resonances": run_resonances,
}


# --- orchestration -------------------------------------------------------------------

def default_workers() -> int:
    env = os.environ.get("THERMBATH_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"THERMBATH_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("THERMBATH_WORKERS must be at least 1")
        return n
    return os.cpu_count() or 1


def resolve(document: dict, overrides: dict):
    """Apply flag overrides (flags > config > defaults) and validate.

    Returns the :class:`RunConfig` and a map of where each top-level setting came from.
    """
    doc = dict(document)
    sources = {}
    for key in ("seed", "out_dir", "workers", "dump_state"):
        if overrides.get(key) is not None:
            doc[key] = overrides[key]
            sources[key] = "flag"
        elif key in document:
            sources[key] = "config"
        else:
            sources[key] = "default"
    cfg = parse_config(doc)
    if cfg.data["workers"] is None:
        cfg.data["workers"] = default_workers()
        sources["workers"] = "env" if os.environ.get("THERMBATH_WORKERS") else "default"
    return cfg, sources


def execute(cfg, sources: dict | None = None) -> tuple[int, dict]:
    """Run a validated config; write outputs and the manifest.

    Returns the exit status and the manifest.
    """
    data = cfg.data
    out = ArtifactWriter(data["out_dir"])
    ctx = {"seed": data["seed"], "workers": data["workers"], "dump_state": data["dump_state"]}
    t0 = time.perf_counter()
    status, summary, code = "ok", {}, 0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            summary = RUNNERS[cfg.command](cfg.block, ctx, out)
    except PointFailures as exc:
        status, code, summary = "partial", 2, exc.summary
        out.write_json("error.json", {"error": "runtime", "message": str(exc),
                                      "failures": exc.failures})
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        status, code = "failed", 2
        out.write_json("error.json", {"error": "runtime", "type": type(exc).__name__,
                                      "message": str(exc)})
    manifest = build_manifest(data, sources or {}, out.outputs, time.perf_counter() - t0,
                              summary, status)
    out.write_json("manifest.json", manifest)
    return code, manifest


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermbath",
                                 description="Engineered thermal baths and vibronic transfer dynamics.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def flags(p):
        p.add_argument("config", nargs="?", help="JSON config, run manifest, or fixture:<name>")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")
        p.add_argument("--workers", type=int, help="parallel workers (default: THERMBATH_WORKERS or CPU count)")
        p.add_argument("--dump-state", dest="dump_state", action="store_true", default=None,
                       help="also write the final density matrix as JSON")

    flags(sub.add_parser("run", help="run the command named in the config"))
    for c in COMMANDS:
        flags(sub.add_parser(c, help=f"run {c}"))
    sub.add_parser("fixtures", help="list shipped reference configs")
    return ap


def _load_document(ref: str | None) -> dict:
    if ref is None:
        return {}
    if ref.startswith("fixture:"):
        return load_fixture(ref.split(":", 1)[1])
    try:
        text = Path(ref).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if is_manifest(doc):
        doc = doc["config"]
    return doc


def _fail(payload: dict, out_dir: str | None, code: int) -> int:
    print(json.dumps(payload), file=sys.stderr)
    if out_dir:
        try:
            ArtifactWriter(out_dir).write_json("error.json", payload)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.cmd == "fixtures":
        for name in fixture_names():
            print(name)
        return 0
    overrides = {"seed": args.seed, "out_dir": args.out_dir, "workers": args.workers,
                 "dump_state": args.dump_state}
    try:
        doc = _load_document(args.config)
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        if args.cmd != "run":
            if doc.get("command", args.cmd) != args.cmd:
                raise ConfigError(f"config is for {doc['command']!r}, not {args.cmd!r}", "$.command")
            doc = {**doc, "command": args.cmd}
        cfg, sources = resolve(doc, overrides)
    except ConfigError as exc:
        return _fail(exc.to_dict(), args.out_dir, 1)
    code, manifest = execute(cfg, sources)
    if code:
        err = Path(cfg.data["out_dir"]) / "error.json"
        print(err.read_text().strip(), file=sys.stderr)
    else:
        print(json.dumps({"status": manifest["status"], "out_dir": cfg.data["out_dir"],
                          "summary": manifest["summary"]}, default=float))
    return code


if __name__ == "__main__":
    sys.exit(main())
