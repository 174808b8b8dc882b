"""Batch entry point: config parsing, pipeline orchestration, reports.

Exit codes: 0 ok, 1 invalid configuration, 2 numerical failure (shooting,
eigensolve, flow blow-up), 3 strict-mode violation of a guaranteed bound.
Identical config + seed gives byte-identical outputs; every JSON report
embeds the resolved-config hash and the seed.
"""

import argparse
import configparser
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import flow, geometry, solitons, spectral, stability


class ConfigError(ValueError):
    pass


# section -> key -> default; types are taken from the defaults
DEFAULTS = {
    "soliton": {
        "kind": "shoot",        # shoot | cigar | gaussian_expander | flat_steady
        "epsilon": 1,
        "n": 3,
        "s": 0.7,
        "r_max": 15.0,
        "big_n": 2000,          # key "N" in files; stored under big_n
        "ode_tol": 1e-10,
        "normalize": True,
    },
    "window": {
        "lo": -1.0,             # negative means "use the sector default"
        "hi": -1.0,
    },
    "spectral": {
        "sector": "diagonal_tensor",
        "tolerance": 1e-8,
        "alpha": 0.5,
        "count": 100,
    },
    "flow": {
        "amplitude": 0.01,
        "shape": "bump_psi",
        "dt_safety": 0.25,
        "horizon": 2.0,
        "sample_target": 200,
        "pure_mrf": False,
    },
    "run": {
        "seed": 0,
        "out": "solstab_out",
    },
}

_KEY_ALIASES = {("soliton", "n_nodes"): "big_n", ("soliton", "N"): "big_n"}


def _coerce(section, key, raw, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: not a boolean: {raw!r}")
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: bad value {raw!r}")
    return raw.strip()


def parse_config(path=None):
    cfg = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str  # keep key case: N stays N
        read = cp.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in cp.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp[section].items():
                name = _KEY_ALIASES.get((section, key), key)
                if name not in cfg[section]:
                    raise ConfigError(f"unknown key {section}.{key}")
                cfg[section][name] = _coerce(section, key, raw,
                                             DEFAULTS[section][name])
    return cfg


def validate_config(cfg):
    sol = cfg["soliton"]
    if sol["kind"] not in ("shoot", "cigar", "gaussian_expander",
                           "flat_steady"):
        raise ConfigError(f"unknown soliton kind {sol['kind']!r}")
    if sol["epsilon"] not in (0, 1):
        raise ConfigError("epsilon must be 0 or 1")
    if not 2 <= sol["n"] <= 8:
        raise ConfigError("dimension n out of range [2, 8]")
    if sol["kind"] == "cigar" and sol["n"] != 2:
        raise ConfigError("the cigar lives in dimension 2")
    if sol["kind"] == "shoot" and not 0.0 < sol["s"] <= 10.0:
        raise ConfigError("shooting parameter s out of range (0, 10]")
    if not 1.0 <= sol["r_max"] <= 1000.0:
        raise ConfigError("r_max out of range [1, 1000]")
    if not 16 <= sol["big_n"] <= 500000:
        raise ConfigError("grid too coarse or too large (N in [16, 5e5])")
    if not 0.0 < sol["ode_tol"] <= 1e-2:
        raise ConfigError("ode_tol out of range (0, 1e-2]")
    win = cfg["window"]
    if win["lo"] >= 0.0 and win["hi"] >= 0.0 and win["lo"] >= win["hi"]:
        raise ConfigError("empty window: lo must be < hi")
    spec = cfg["spectral"]
    if spec["sector"] not in ("scalar", "diagonal_tensor", "tensor"):
        raise ConfigError(f"unknown sector {spec['sector']!r}")
    if not 0.0 < spec["tolerance"] <= 1e-2:
        raise ConfigError("spectral tolerance out of range (0, 1e-2]")
    if not 0.0 <= spec["alpha"] <= 1.0:
        raise ConfigError("alpha out of range [0, 1]")
    if not 1 <= spec["count"] <= 100000:
        raise ConfigError("count out of range")
    flw = cfg["flow"]
    if not 0.0 <= flw["amplitude"] <= flow.CLOSENESS_BOUND:
        raise ConfigError("amplitude out of range [0, "
                          f"{flow.CLOSENESS_BOUND}]")
    if flw["shape"] not in ("bump_psi", "bump_xi", "bump_g",
                            "random_highfreq"):
        raise ConfigError(f"unknown perturbation shape {flw['shape']!r}")
    if flw["dt_safety"] <= 0.0:
        # no upper bound on purpose: an unstable step must be allowed to
        # run and be caught by the blow-up detector (exit 2)
        raise ConfigError("dt_safety must be positive")
    if flw["horizon"] <= 0.0:
        raise ConfigError("horizon must be positive")
    if not 4 <= flw["sample_target"] <= 100000:
        raise ConfigError("sample_target out of range")
    if cfg["run"]["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return cfg


def resolved_text(cfg):
    lines = []
    for section in sorted(cfg):
        for key in sorted(cfg[section]):
            if section == "run" and key == "out":
                continue  # destination is not part of the run identity
            val = cfg[section][key]
            name = "N" if key == "big_n" else key
            lines.append(f"{section}.{name} = {val}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return hashlib.sha256(resolved_text(cfg).encode()).hexdigest()


def _window(cfg, p, sector):
    win = cfg["window"]
    lo, hi = win["lo"], win["hi"]
    dlo, dhi = spectral.default_window(p, sector)
    return (lo if lo >= 0.0 else dlo, hi if hi >= 0.0 else dhi)


def build_profile(cfg):
    sol = cfg["soliton"]
    if sol["kind"] == "shoot":
        return solitons.shoot_soliton(sol["epsilon"], sol["n"], sol["s"],
                                      sol["r_max"], ode_tol=sol["ode_tol"],
                                      N=sol["big_n"],
                                      normalize=sol["normalize"])
    return solitons.closed_form(sol["kind"], sol["n"], r_max=sol["r_max"],
                                N=sol["big_n"], normalize=sol["normalize"])


def _atomic_write(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _meta(cfg):
    return {"config_sha256": config_hash(cfg), "seed": cfg["run"]["seed"]}


def _profile_id(p):
    return {"kind": p.kind, "epsilon": p.epsilon, "n": p.n,
            "s": p.s, "N": p.grid.N, "r_max": float(p.grid.r[-1])}


# -- subcommands -------------------------------------------------------------

def cmd_build(cfg, out, strict):
    p = build_profile(cfg)
    rows = ["r,xi,phi,f,fp,phip,a,b,R"]
    c = p.curvature
    for i in range(p.grid.N):
        rows.append(",".join(f"{v:.12e}" for v in (
            p.grid.r[i], p.metric.xi[i], p.metric.phi[i], p.f[i],
            p.fp[i], p.phip[i], c.a[i], c.b[i], c.R[i])))
    _atomic_write(os.path.join(out, "profile.csv"), "\n".join(rows) + "\n")
    summary = dict(_meta(cfg))
    summary["profile"] = _profile_id(p)
    summary["lambda_g"] = p.lambda_g
    summary["mu_g"] = p.mu_g
    summary["cone_angle"] = p.cone_angle
    summary["constraint_drift"] = p.constraint_drift
    summary["identity_residuals"] = solitons.identity_residuals(p)
    summary["hypothesis_H"] = solitons.check_hypothesis_H(p)
    summary["potential_growth"] = solitons.potential_growth_check(p)
    _write_json(os.path.join(out, "build_summary.json"), summary)
    return 0


def cmd_check_identities(cfg, out, strict):
    p = build_profile(cfg)
    rep = dict(_meta(cfg))
    rep["profile"] = _profile_id(p)
    rep["identity_residuals"] = solitons.identity_residuals(p)
    rep["hypothesis_H"] = solitons.check_hypothesis_H(p)
    _write_json(os.path.join(out, "identities.json"), rep)
    return 0


def cmd_spectrum(cfg, out, strict):
    p = build_profile(cfg)
    sector = cfg["spectral"]["sector"]
    if sector == "tensor":
        sector = "diagonal_tensor"
    window = _window(cfg, p, sector)
    prob = spectral.SpectralProblem(p, sector=sector, window=window,
                                    tolerance=cfg["spectral"]["tolerance"])
    if sector == "scalar":
        res = spectral.bottom_scalar(prob)
    else:
        res = spectral.bottom_lichnerowicz(prob)
    rep = dict(_meta(cfg))
    rep.update(res.as_report())
    rep["hardy_lower_bound"] = float(
        spectral.hardy_lower_bound(p, window=window))
    cur = p.curvature
    nonneg = bool(min(float(np.min(cur.a)), float(np.min(cur.b)))
                  >= -1e-8 * (1.0 + float(np.max(np.abs(cur.a)))))
    rep["nonneg_curvature"] = nonneg
    if p.epsilon == 1:
        rmnorm = np.maximum(np.abs(cur.a), np.abs(cur.b))
        rep["bochner_margin"] = float(np.min(cur.R)) + 0.5 * p.n \
            - 2.0 * float(np.max(rmnorm))
    else:
        rep["bochner_margin"] = None
    _write_json(os.path.join(out, "spectrum.json"), rep)
    # an expanding profile with nonnegative curvature has a positive
    # bottom unconditionally; treat a nonpositive measured value as a
    # guaranteed-bound violation
    if strict and p.epsilon == 1 and nonneg and sector != "scalar" \
            and res.lambda_min <= 1e-8:
        print("strict: measured tensor bottom nonpositive on a "
              "nonneg-curvature expander", file=sys.stderr)
        return 3
    return 0


def cmd_hardy(cfg, out, strict):
    p = build_profile(cfg)
    window = _window(cfg, p, "scalar")
    margin = spectral.hardy_check(p, alpha=cfg["spectral"]["alpha"],
                                  count=cfg["spectral"]["count"],
                                  seed=cfg["run"]["seed"], window=window)
    rep = dict(_meta(cfg))
    rep["alpha"] = cfg["spectral"]["alpha"]
    rep["count"] = cfg["spectral"]["count"]
    rep["min_margin"] = float(margin)
    rep["hardy_lower_bound"] = float(
        spectral.hardy_lower_bound(p, window=window))
    rep["window"] = [float(window[0]), float(window[1])]
    _write_json(os.path.join(out, "hardy.json"), rep)
    if strict and margin < -1e-8:
        print("strict: Hardy margin negative beyond tolerance",
              file=sys.stderr)
        return 3
    return 0


def _flow_config(cfg, p, pure_mrf=False):
    flw = cfg["flow"]
    window = _window(cfg, p, "diagonal_tensor")
    pert = {"shape": flw["shape"], "amplitude": flw["amplitude"],
            "seed": cfg["run"]["seed"]}
    return flow.FlowConfig(p, window=window, dt_safety=flw["dt_safety"],
                           horizon=flw["horizon"], perturbation=pert,
                           sample_target=flw["sample_target"],
                           pure_mrf=pure_mrf)


def _flow_report(cfg, trace, lam):
    vacuous = trace.amplitude == 0.0
    rep = dict(_meta(cfg))
    rep["profile_id"] = _profile_id(trace.config.profile)
    rep["kind"] = trace.kind
    rep["amplitude"] = trace.amplitude
    rep["fitted_l2f_rate"] = trace.fitted_l2f_rate
    rep["fitted_sup_rate"] = trace.fitted_sup_rate
    rep["lambda_bottom"] = float(lam)
    if vacuous and trace.kind == "linear":
        rep["lyapunov_pass"] = None
        rep["gronwall_pass"] = None
        rep["vacuous"] = True
    else:
        lya = flow.lyapunov_check(trace, lam)
        rep["lyapunov_pass"] = lya["pass"]
        rep["lyapunov_rate"] = lya["rate"]
        rep["vacuous"] = vacuous
        if trace.kind == "linear":
            gw = flow.gronwall_check(trace, trace.epsilon, lam)
            rep["gronwall_pass"] = gw["pass"]
            rep["gronwall_companion_residual"] = gw["companion_residual"]
        else:
            rep["gronwall_pass"] = None
    rep["stationarity_residual"] = trace.stationarity_residual
    if trace.kind == "mrhf":
        rep["upwind"] = trace.upwind
        rep["peclet"] = trace.peclet
        rep["terminal_sup"] = float(trace.sup_norm[-1])
    return rep


def _bottom_on(p, window, tolerance):
    res = spectral.bottom_lichnerowicz(spectral.SpectralProblem(
        p, sector="diagonal_tensor", window=window, tolerance=tolerance))
    return float(res.lambda_min)


def cmd_flow_linear(cfg, out, strict):
    p = build_profile(cfg)
    fc = _flow_config(cfg, p)
    wp = fc.window_profile()
    flw = cfg["flow"]
    h0 = flow.perturbation_field(wp, flw["shape"], flw["amplitude"],
                                 seed=cfg["run"]["seed"])
    trace = flow.run_linear_flow(fc, h0)
    lam = _bottom_on(p, fc.window, cfg["spectral"]["tolerance"])
    _atomic_write(os.path.join(out, "flow_trace.csv"),
                  "\n".join(trace.csv_rows()) + "\n")
    _write_json(os.path.join(out, "flow_report.json"),
                _flow_report(cfg, trace, lam))
    return 0


def cmd_flow_nonlinear(cfg, out, strict):
    p = build_profile(cfg)
    fc = _flow_config(cfg, p, pure_mrf=cfg["flow"]["pure_mrf"])
    trace = flow.run_mrhf(fc)
    lam = _bottom_on(p, fc.window, cfg["spectral"]["tolerance"])
    _atomic_write(os.path.join(out, "flow_trace.csv"),
                  "\n".join(trace.csv_rows()) + "\n")
    _write_json(os.path.join(out, "flow_report.json"),
                _flow_report(cfg, trace, lam))
    return 0


def cmd_criteria(cfg, out, strict):
    p = build_profile(cfg)
    window = _window(cfg, p, "diagonal_tensor")
    reports = stability.criteria_suite(p, seed=cfg["run"]["seed"],
                                       alpha=cfg["spectral"]["alpha"],
                                       window=window)
    sha = config_hash(cfg)
    payload = []
    for rep in reports:
        d = rep.as_dict()
        d["config_sha256"] = sha
        if d["seed"] is None:
            d["seed"] = cfg["run"]["seed"]
        payload.append(d)
    _write_json(os.path.join(out, "criteria.json"), payload)
    if strict and any(r.verdict == "fail" and r.guaranteed
                      for r in reports):
        print("strict: a guaranteed inequality failed", file=sys.stderr)
        return 3
    return 0


def _parse_sweep(text):
    try:
        key, rng = text.split("=", 1)
        lo, hi, step = (float(x) for x in rng.split(":"))
    except ValueError:
        raise ConfigError("sweep wants key=lo:hi:step")
    if key != "s":
        raise ConfigError("only sweeps over s are supported")
    if step <= 0 or hi < lo:
        raise ConfigError("bad sweep range")
    k = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(k)]


def _sweep_one(args):
    cfg, s = args
    cfg = {sec: dict(kv) for sec, kv in cfg.items()}
    cfg["soliton"]["s"] = s
    p = build_profile(cfg)
    sector = cfg["spectral"]["sector"]
    if sector == "tensor":
        sector = "diagonal_tensor"
    window = _window(cfg, p, sector)
    prob = spectral.SpectralProblem(p, sector=sector, window=window,
                                    tolerance=cfg["spectral"]["tolerance"])
    res = spectral.bottom_scalar(prob) if sector == "scalar" \
        else spectral.bottom_lichnerowicz(prob)
    rep = res.as_report()
    rep["s"] = s
    rep["lambda_g"] = p.lambda_g
    return rep


def cmd_sweep(cfg, out, strict, sweep_values):
    if cfg["soliton"]["kind"] != "shoot":
        raise ConfigError("sweep needs kind = shoot")
    jobs = [(cfg, s) for s in sweep_values]
    if len(jobs) > 1:
        workers = min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(jobs[0])]
    results.sort(key=lambda rep: rep["s"])
    payload = dict(_meta(cfg))
    payload["sweep"] = results
    _write_json(os.path.join(out, "sweep.json"), payload)
    return 0


COMMANDS = {
    "build": cmd_build,
    "check-identities": cmd_check_identities,
    "spectrum": cmd_spectrum,
    "hardy": cmd_hardy,
    "flow-linear": cmd_flow_linear,
    "flow-nonlinear": cmd_flow_nonlinear,
    "criteria": cmd_criteria,
}


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="solstab",
        description="Rotationally symmetric soliton stability toolkit")
    ap.add_argument("command", choices=sorted(COMMANDS) + ["sweep"])
    ap.add_argument("--config", metavar="PATH", default=None)
    ap.add_argument("--out", metavar="DIR", default=None)
    ap.add_argument("--seed", type=int, default=None, metavar="U64")
    ap.add_argument("--strict", action="store_true")
    ap.add_argument("--print-config", action="store_true")
    ap.add_argument("--sweep", metavar="s=LO:HI:STEP", default=None)
    args = ap.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be a nonnegative integer")
            cfg["run"]["seed"] = args.seed
        if args.out is not None:
            cfg["run"]["out"] = args.out
        validate_config(cfg)
        if args.print_config:
            sys.stdout.write(resolved_text(cfg))
            return 0
        out = cfg["run"]["out"]
        os.makedirs(out, exist_ok=True)
        if args.command == "sweep":
            if args.sweep is None:
                raise ConfigError("sweep needs --sweep s=lo:hi:step")
            return cmd_sweep(cfg, out, args.strict,
                             _parse_sweep(args.sweep))
        return COMMANDS[args.command](cfg, out, args.strict)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (flow.FlowError, spectral.SpectralError,
            solitons.SolitonError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except geometry.GridError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
