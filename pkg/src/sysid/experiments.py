"""Monte Carlo comparisons of the estimators.

Each trial simulates one trajectory up to the largest terminal time any
sweep value needs; every sweep value then reads a prefix of it, so the
sweep points share their randomness. Trials run in fixed-size chunks on a
thread pool and are reassembled in trial order, which keeps the output
independent of the thread count.
"""
from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .complexity import ComplexityConfig, f_values
from .data import IndexFamily, chain_family, resolve_family, star_family
from .errors import ConfigError
from .estimators import ESTIMATORS, model_error, naive_infer, proposed_infer, raw_ols
from .pac import (BoundsProvider, PacOutcome, limits_from_dict, request_from_dict, run_pac,
                  solve_rho3_for_l_up)
from .simulation import (LinearSystem, NoiseModel, Trajectory, noise_preset, simulate_trials,
                         system_preset)

SWEEPS = ("observation_count", "redundant_count", "terminal_time")
CHUNK = 100


@dataclass
class ExperimentSpec:
    name: str
    system: LinearSystem
    noise: NoiseModel
    sweep: str
    values: List[int]
    estimators: List[str] = field(default_factory=lambda: ["proposed", "raw_ols"])
    family: object = "chain"   # preset name or explicit family (dict)
    k: int = 1
    p: Optional[int] = None    # family horizon, used by the redundant_count sweep
    trials: int = 2000
    master_seed: int = 0
    output_dir: Optional[str] = None
    pac: Optional[dict] = None

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ConfigError(f"sweep must be one of {SWEEPS}, got {self.sweep!r}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        vals = [int(v) for v in self.values]
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep values must be nonempty and strictly increasing")
        self.values = vals
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ConfigError(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.sweep == "redundant_count":
            if self.p is None or self.p <= self.k:
                raise ConfigError("redundant_count sweep needs a family horizon p > k")
            top = len(redundant_order(self.k, self.p))
            if vals[0] < 0 or vals[-1] > top:
                raise ConfigError(f"redundant counts must lie in [0, {top}]")
        elif self.sweep == "observation_count" and vals[0] < 2:
            raise ConfigError("observation counts must be >= 2")
        elif self.sweep == "terminal_time" and vals[0] < self.k + 1:
            raise ConfigError(f"terminal times must be >= k + 1 = {self.k + 1}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        preset = d.pop("preset", None)
        if preset is not None:
            base = preset_spec(preset)
            merged = base.to_dict()
            merged.update(d)
            d = merged
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        for req in ("name", "system", "noise", "sweep", "values"):
            if req not in d:
                raise ConfigError(f"experiment spec needs field {req!r}")
        sysd, noised = d["system"], d["noise"]
        d["system"] = system_preset(sysd) if isinstance(sysd, str) else LinearSystem.from_dict(sysd)
        d["noise"] = noise_preset(noised) if isinstance(noised, str) else NoiseModel.from_dict(noised)
        for key in ("k", "trials", "master_seed"):
            if key in d:
                d[key] = int(d[key])
        if d.get("p") is not None:
            d["p"] = int(d["p"])
        return cls(**d)

    def to_dict(self) -> dict:
        fam = self.family.to_dict() if isinstance(self.family, IndexFamily) else self.family
        return {"name": self.name, "system": self.system.to_dict(), "noise": self.noise.to_dict(),
                "sweep": self.sweep, "values": list(self.values),
                "estimators": list(self.estimators), "family": fam, "k": self.k, "p": self.p,
                "trials": self.trials, "master_seed": self.master_seed,
                "output_dir": self.output_dir, "pac": self.pac}


def redundant_order(k: int, p: int) -> List[tuple]:
    """Pairs not in the star basis, m ascending then q ascending."""
    return [(m, q) for m in range(k + 1, p) for q in range(m + 1, p + 1)]


def preset_spec(name: str) -> ExperimentSpec:
    if name == "bias":
        return ExperimentSpec("bias", system_preset("bias"), noise_preset("bias"),
                              "observation_count", [10, 20, 30, 40, 50, 60],
                              ["proposed", "raw_ols"], "chain")
    if name == "redundancy":
        return ExperimentSpec("redundancy", system_preset("redundancy"),
                              noise_preset("redundancy"),
                              "redundant_count", list(range(22)), ["proposed", "naive"],
                              "star", k=1, p=8, trials=500)
    if name in ("horizon", "horizon_alt"):
        pac = {"request": {"phi": 1.5, "delta": 0.2811, "k": 1}, "sigma_max_A": 1.004,
               "target_l_up": 140}
        return ExperimentSpec(name, system_preset(name), noise_preset(name), "terminal_time",
                              [20, 40, 60, 80, 100, 120, 140, 145, 160],
                              ["proposed", "raw_ols"], "chain", pac=pac)
    raise ConfigError(f"unknown experiment preset {name!r}; "
                      "known: bias, redundancy, horizon, horizon_alt")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    errors: Dict[str, np.ndarray]     # estimator -> (values, trials), nan when infeasible
    estimates: Dict[str, np.ndarray]  # estimator -> (values, trials, n, n)
    rows: List[dict]

    def mean_error(self, estimator: str) -> np.ndarray:
        return np.array([r["mean_error"] for r in self.rows if r["estimator"] == estimator])


def _terminal(spec: ExperimentSpec, v: int) -> int:
    if spec.sweep == "observation_count":
        return spec.k + v - 1
    if spec.sweep == "terminal_time":
        return v
    return spec.p + 1


def _family(spec: ExperimentSpec, v: int, T: int) -> IndexFamily:
    k = spec.k
    if spec.sweep == "redundant_count":
        base = star_family(k, spec.p).tags()
        return IndexFamily.from_tags(k, spec.p, base + redundant_order(k, spec.p)[:v])
    fam = resolve_family(spec.family, k, T - 1)
    if fam.k != k or fam.p != T - 1:
        raise ConfigError(f"explicit family on [{fam.k}, {fam.p}] does not match "
                          f"window [{k}, {T - 1}]")
    return fam


def _estimate(name: str, traj: Trajectory, family: IndexFamily, k: int, T: int):
    if name == "proposed":
        return proposed_infer(traj, family)
    if name == "naive":
        return naive_infer(traj, k, T)
    return raw_ols(traj, k, T)


def _run_chunk(spec: ExperimentSpec, families, terminals, start: int, count: int):
    n = spec.system.n
    T_max = max(terminals)
    batch = simulate_trials(spec.system, spec.noise, T_max, spec.master_seed, count, start)
    nv = len(spec.values)
    errs = {e: np.full((nv, count), np.nan) for e in spec.estimators}
    ests = {e: np.full((nv, count, n, n), np.nan) for e in spec.estimators}
    for t in range(count):
        full = batch.r[t]
        for i, (fam, T) in enumerate(zip(families, terminals)):
            traj = Trajectory(r=full[:T])
            for e in spec.estimators:
                res = _estimate(e, traj, fam, spec.k, T)
                if res.feasible:
                    errs[e][i, t] = model_error(res.A, spec.system.A)
                    ests[e][i, t] = res.A
    return errs, ests


def _summarise(spec: ExperimentSpec, errors) -> List[dict]:
    rows = []
    for i, v in enumerate(spec.values):
        for e in spec.estimators:
            x = errors[e][i]
            ok = x[np.isfinite(x)]
            mean = float(ok.mean()) if ok.size else float("nan")
            se = float(ok.std(ddof=1) / np.sqrt(ok.size)) if ok.size > 1 else 0.0
            rows.append({"sweep_value": v, "estimator": e, "mean_error": mean, "stderr": se,
                         "feasible_fraction": ok.size / x.size})
    return rows


def run_experiment(spec: ExperimentSpec, threads: int = 1, write: bool = True) -> ExperimentResult:
    terminals = [_terminal(spec, v) for v in spec.values]
    families = [_family(spec, v, T) for v, T in zip(spec.values, terminals)]
    starts = list(range(0, spec.trials, CHUNK))
    jobs = [(s, min(CHUNK, spec.trials - s)) for s in starts]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: _run_chunk(spec, families, terminals, *j), jobs))
    else:
        parts = [_run_chunk(spec, families, terminals, *j) for j in jobs]
    errors = {e: np.concatenate([p[0][e] for p in parts], axis=1) for e in spec.estimators}
    estimates = {e: np.concatenate([p[1][e] for p in parts], axis=1) for e in spec.estimators}
    result = ExperimentResult(spec, errors, estimates, _summarise(spec, errors))
    if write and spec.output_dir:
        write_outputs(result, spec.output_dir)
    return result


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_outputs(result: ExperimentResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cols = ["sweep_value", "estimator", "mean_error", "stderr", "feasible_fraction"]
    _write_csv(os.path.join(out_dir, "results.csv"), cols,
               [[r[c] for c in cols] for r in result.rows])
    for e in result.spec.estimators:
        series = [[r["sweep_value"], r["mean_error"], r["mean_error"] - r["stderr"],
                   r["mean_error"] + r["stderr"]] for r in result.rows if r["estimator"] == e]
        _write_csv(os.path.join(out_dir, f"series_{e}.csv"),
                   ["sweep_value", "mean", "lower", "upper"], series)
    trial_rows = []
    for i, v in enumerate(result.spec.values):
        for e in result.spec.estimators:
            for t, x in enumerate(result.errors[e][i]):
                trial_rows.append([v, t, e, int(np.isfinite(x)), x])
    _write_csv(os.path.join(out_dir, "trials.csv"),
               ["sweep_value", "trial", "estimator", "feasible", "error"], trial_rows)
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        d = result.spec.to_dict()
        d.pop("output_dir")  # keeps the file identical across output locations
        json.dump(d, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class PacDemoResult:
    outcome: PacOutcome
    experiment: ExperimentResult
    bound_horizon: Optional[int]   # k + l_up - 1 at the requested accuracy and confidence
    rho3: float
    success: List[dict]


def _pac_parts(spec: ExperimentSpec):
    pac = dict(spec.pac or {})
    if "request" not in pac:
        raise ConfigError("pac demo needs a 'request' object")
    req = dict(pac["request"])
    req.setdefault("k", spec.k)
    base = ComplexityConfig(n=spec.system.n, k=int(req["k"]), p=int(req["k"]) + 1,
                            family=chain_family(int(req["k"]), int(req["k"]) + 1))
    base = base.with_noise(spec.noise)
    for key in ("gamma", "kappa", "c_universal", "rho1", "rho2"):
        if key in pac:
            base = base.replace(**{key: float(pac[key])})
    if "sigma_max_A" in pac:
        provider = BoundsProvider.norm_only(float(pac["sigma_max_A"]))
    else:
        provider = BoundsProvider(spec.system)
    return pac, req, base, provider


def run_pac_demo(spec: ExperimentSpec, threads: int = 1, write: bool = True) -> PacDemoResult:
    """Run the verification loop, then measure the success rate over terminal times.

    When the request gives ``target_l_up`` instead of ``rho3``, rho3 is solved
    so that the bound equals the target (the larger root).
    """
    if spec.sweep != "terminal_time":
        raise ConfigError("pac demo sweeps terminal_time")
    if "proposed" not in spec.estimators:
        raise ConfigError("pac demo needs the proposed estimator")
    pac, req, base, provider = _pac_parts(spec)
    k = int(req["k"])
    if "rho3" not in req and "target_l_up" in pac:
        p0 = k + int(pac["target_l_up"]) - 1
        _, f2 = f_values(provider(k, p0), base.variances, k)
        cfg = base.replace(phi=float(req["phi"]), delta=float(req["delta"]))
        roots = solve_rho3_for_l_up(cfg, f2, float(pac["target_l_up"]))
        if not roots:
            raise ConfigError(f"no rho3 in (0, 1) gives l_up = {pac['target_l_up']}")
        req["rho3"] = roots[-1]
    request = request_from_dict(req)
    outcome = run_pac(request, base, provider, limits_from_dict(pac.get("limits")))
    first = outcome.trace[0] if outcome.trace else {}
    lu = first.get("l_up")
    horizon = None if lu is None else k + lu - 1
    exp = run_experiment(spec, threads=threads, write=False)
    prop = exp.errors["proposed"]
    success = []
    for i, T in enumerate(spec.values):
        x = prop[i]
        frac = float(np.mean(np.isfinite(x) & (x <= request.phi)))
        success.append({"terminal_time": T, "success_fraction": frac,
                        "target": 1 - request.delta,
                        "past_bound": horizon is not None and T - 1 >= horizon,
                        "meets_target": frac >= 1 - request.delta})
    res = PacDemoResult(outcome, exp, horizon, request.rho3, success)
    if write and spec.output_dir:
        write_outputs(exp, spec.output_dir)
        _write_csv(os.path.join(spec.output_dir, "success.csv"),
                   ["terminal_time", "success_fraction", "target", "past_bound", "meets_target"],
                   [[s[c] for c in ("terminal_time", "success_fraction", "target")]
                    + [int(s["past_bound"]), int(s["meets_target"])] for s in success])
        with open(os.path.join(spec.output_dir, "pac_outcome.json"), "w") as fh:
            d = outcome.to_dict()
            d["requested_rho3"] = request.rho3
            d["bound_horizon"] = horizon
            json.dump(d, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return res
