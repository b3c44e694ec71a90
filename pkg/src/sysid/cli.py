"""Command-line front end.

    sysid simulate   --config sim.json --out dir
    sysid infer      --traj t.csv --family full --k 1 --p 9
    sysid bound      --config c.json
    sysid pac        --request r.json
    sysid experiment --spec s.json --out dir

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from .complexity import ComplexityConfig, SpectralBounds, bound_report, norm_only_bounds
from .data import family_from_json, resolve_family
from .errors import ConfigError, NumericalError, ParseError, SysIdError
from .estimators import naive_infer, proposed_infer, raw_ols
from .experiments import ExperimentSpec, run_experiment, run_pac_demo
from .pac import BoundsProvider, limits_from_dict, request_from_dict, run_pac
from .simulation import LinearSystem, NoiseModel, noise_preset, simulate_trials, system_preset
from .trajectory_io import load_trajectory, save_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _clean(obj):
    """Make numpy values and non-finite floats JSON friendly."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n"
    if out:
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _system(d):
    return system_preset(d) if isinstance(d, str) else LinearSystem.from_dict(d)


def _noise(d):
    return noise_preset(d) if isinstance(d, str) else NoiseModel.from_dict(d)


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    system = _system(cfg.get("system", "bias"))
    noise = _noise(cfg.get("noise", "bias"))
    horizon = int(cfg.get("horizon", 20))
    trials = int(cfg.get("trials", 1))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    batch = simulate_trials(system, noise, horizon, seed, trials)
    os.makedirs(args.out, exist_ok=True)
    record = bool(cfg.get("record_noise", True))
    for i in range(trials):
        traj = batch.trajectory(i)
        if not record:
            traj = type(traj)(r=traj.r)
        save_trajectory(traj, os.path.join(args.out, f"traj_{i:04d}.csv"))
    return EXIT_OK


def cmd_infer(args) -> int:
    traj = load_trajectory(args.traj)
    if args.family_json:
        family = family_from_json(args.family_json)
    else:
        p = args.p if args.p is not None else traj.length - 1
        family = resolve_family(args.family, args.k, p)
    k, p = family.k, family.p
    results = {}
    methods = ["proposed", "naive", "raw_ols"] if args.method == "all" else [args.method]
    for m in methods:
        # every method reads the same observations r(k..p+1)
        if m == "proposed":
            res = proposed_infer(traj, family)
        elif m == "naive":
            res = naive_infer(traj, k, p + 1)
        else:
            res = raw_ols(traj, k, p + 1)
        results[m] = res.to_dict()
    _emit({"k": k, "p": p, "family": family.to_dict(), "results": results}, args.out)
    return EXIT_OK


def _bounds_source(d: dict, k: int, p: int):
    """System matrix, explicit bounds or a norm bound, from a config dict."""
    if "system" in d:
        return _system(d["system"]).A
    if "sigma_max_A" in d:
        return norm_only_bounds(float(d["sigma_max_A"]), k, p)
    if d.get("bounds") is not None:
        return SpectralBounds.from_dict(d["bounds"])
    return None


def _split_config(d: dict):
    d = dict(d)
    extra = {key: d.pop(key) for key in ("system", "sigma_max_A", "noise") if key in d}
    if "noise" in extra:
        v = _noise(extra["noise"]).variances()
        d.setdefault("sigma_p2", v.sigma_p2)
        d.setdefault("sigma_o2", v.sigma_o2)
        d.setdefault("sigma_i2", v.sigma_i2)
        d.setdefault("sigma_a2", v.sigma_a2)
        d.setdefault("mu", v.mu)
    return d, extra


def cmd_bound(args) -> int:
    raw = _load_json(args.config)
    d, extra = _split_config(raw)
    config = ComplexityConfig.from_dict(d)
    source = _bounds_source({**extra, "bounds": d.get("bounds")}, config.k, config.p)
    _emit(bound_report(config, source), args.out)
    return EXIT_OK


def cmd_pac(args) -> int:
    """Request file: {"request", "config", "limits"} plus one of "system",
    "sigma_max_A" or config.bounds, and optionally a "noise" preset."""
    raw = _load_json(args.request)
    if "request" not in raw:
        raise ConfigError("pac file needs a 'request' object")
    request = request_from_dict(raw["request"])
    outer = {key: raw[key] for key in ("system", "sigma_max_A", "noise") if key in raw}
    cd, extra = _split_config({**raw.get("config", {}), **outer})
    if "system" in extra:
        cd.setdefault("n", _system(extra["system"]).n)
    k = request.k
    cd.update(k=k, p=k + 1, family="chain")
    config = ComplexityConfig.from_dict(cd)
    if "system" in extra:
        provider = BoundsProvider(_system(extra["system"]).A)
    elif "sigma_max_A" in extra:
        provider = BoundsProvider.norm_only(float(extra["sigma_max_A"]))
    else:
        provider = BoundsProvider(None, config)
    outcome = run_pac(request, config, provider, limits_from_dict(raw.get("limits")))
    _emit(outcome.to_dict(), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    raw = _load_json(args.spec)
    spec = ExperimentSpec.from_dict(raw)
    if args.seed is not None:
        spec.master_seed = args.seed
    spec.output_dir = args.out
    if spec.pac:
        demo = run_pac_demo(spec, threads=args.threads)
        status = demo.outcome.status
        print(f"pac status: {status}; bound horizon: {demo.bound_horizon}")
    else:
        run_experiment(spec, threads=args.threads)
    print(f"wrote results to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sysid", description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=None, help="master seed (overrides the file)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for trials")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate trajectories to CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("infer", help="estimate (A, a) from a trajectory CSV")
    s.add_argument("--traj", required=True)
    s.add_argument("--family", default="full", help="full, chain or star")
    s.add_argument("--family-json", default=None, help="explicit family file")
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--p", type=int, default=None)
    s.add_argument("--method", default="all", choices=["all", "proposed", "naive", "raw_ols"])
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("bound", help="evaluate bounds and sufficient conditions")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_bound)

    s = sub.add_parser("pac", help="run the accuracy/confidence verification loop")
    s.add_argument("--request", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_pac)

    s = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SysIdError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
