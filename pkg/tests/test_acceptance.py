"""Acceptance criteria, one test per criterion.

Each criterion function returns (passed, detail). The pytest wrappers record
the outcome, which the terminal summary prints as one PASS/FAIL line per
criterion, and then assert it. Run this file directly to get the same lines
without pytest. Random draws use master seed 0 throughout.
"""
import json
import math
import os
import subprocess
import sys
import tempfile
import time
from itertools import combinations

import numpy as np
import pytest

from sysid.complexity import (CUBIC_MAX, ComplexityConfig, NoiseVariances, build_cv,
                              build_eta_batch, epsilon_opt, exact_bounds,
                              expected_diff_moment, f_pair, f_values, gamma_and_M,
                              bound_set, l_up_value, stacked_norm_sq)
from sysid.data import (IndexFamily, all_tags, build_matrices, chain_family, full_family,
                        star_family)
from sysid.estimators import (build_gram, compute_R, feasibility_report, model_error,
                              naive_infer, proposed_infer)
from sysid.experiments import preset_spec, run_experiment, run_pac_demo
from sysid.pac import solve_rho3_for_l_up
from sysid.selection import select
from sysid.simulation import (DistributionSpec, LinearSystem, NoiseModel, Trajectory,
                              empirical_diff_moment, scaled_system, simulate,
                              simulate_trials)

SEED = 0
U = DistributionSpec.uniform
RESULTS = {}


def _noise():
    return NoiseModel(U(-1, 1), U(0, 1), U(-1, 1))


def _stable(rng, n, lo=0.2, hi=0.9):
    A = rng.normal(size=(n, n))
    return A * rng.uniform(lo, hi) / np.linalg.norm(A, 2)


def _z_check(mean, se, target):
    """Entrywise |mean - target| <= 3 se; entries with zero spread must match exactly."""
    dev = np.abs(mean - target)
    zero = se == 0
    ok_zero = np.all(dev[zero] <= 1e-12 * (1 + np.abs(target[zero])))
    z = np.where(zero, 0.0, dev / np.where(zero, 1.0, se))
    return bool(ok_zero and np.all(z <= 3.0)), float(z.max()), int(np.sum(z > 3.0)), z.size


# --------------------------------------------------------------------------

def criterion_1():
    t0 = time.perf_counter()
    sys_ = LinearSystem(scaled_system(0.5).A)
    nz = NoiseModel(DistributionSpec.constant(0.7), DistributionSpec.constant(1.3), U(-1, 1),
                    strict=False)
    tr = simulate(sys_, nz, 10, seed=SEED)
    prop = proposed_infer(tr, chain_family(1, 9))
    nv = naive_infer(tr, 1, 10)
    e1, e2 = model_error(prop.A, sys_.A), model_error(nv.A, sys_.A)
    dt = time.perf_counter() - t0
    return e1 <= 1e-8 and e2 <= 1e-8 and dt < 1.0, \
        f"proposed err {e1:.2e}, naive err {e2:.2e}, {dt:.3f} s"


def _mixed_family(rng, k, p):
    kind = rng.integers(0, 4)
    if kind == 0:
        return full_family(k, p)
    if kind == 1:
        return chain_family(k, p)
    if kind == 2:
        return star_family(k, p)
    tags = [t for t in all_tags(k, p) if rng.random() < 0.5] or [(k, p)]
    return IndexFamily.from_tags(k, p, tags)


def criterion_2():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 3))
        p = k + int(rng.integers(1, 9))
        sys_ = LinearSystem(rng.normal(size=(n, n)) * 0.5, rng.normal(size=n))
        tr = simulate(sys_, _noise(), p + 1, seed=rng.integers(2**32))
        fam = _mixed_family(rng, k, p)
        dm = build_matrices(tr, fam)
        P, Q = build_gram(dm.X_base, dm.X_shift)
        R = compute_R(tr, fam, sys_)
        worst = max(worst, np.linalg.norm(sys_.A @ P - (Q - R)) / (1 + np.linalg.norm(Q)))
    dt = time.perf_counter() - t0
    return worst <= 1e-9 and dt < 5.0, f"max ||AP-(Q-R)||/(1+||Q||) = {worst:.2e}, {dt:.2f} s"


def criterion_3():
    rng = np.random.default_rng(SEED)
    agree = deficient = 0
    for i in range(200):
        n = int(rng.integers(1, 5))
        p = int(rng.integers(2, 9))
        sys_ = LinearSystem(rng.normal(size=(n, n)) * 0.5, rng.normal(size=n))
        tr = simulate(sys_, _noise(), p + 1, seed=rng.integers(2**32))
        if i % 2:
            # squeeze the observations into an affine subspace of dimension d < n
            d = int(rng.integers(0, n))
            B = np.linalg.qr(rng.normal(size=(n, n)))[0][:, :d]
            shift = rng.normal(size=n)
            tr = Trajectory(r=tr.r @ B @ B.T + shift)
        rep = feasibility_report(tr, full_family(1, p))
        deficient += not rep.proposed_feasible
        agree += rep.agree
    return agree == 200, f"{agree}/200 agree ({deficient} rank-deficient)"


def criterion_4():
    rng = np.random.default_rng(SEED)
    worst_A = worst_a = 0.0
    done = 0
    while done < 100:
        n = int(rng.integers(1, 5))
        p = int(rng.integers(n + 2, 12))
        sys_ = LinearSystem(_stable(rng, n), rng.normal(size=n))
        tr = simulate(sys_, _noise(), p + 1, seed=rng.integers(2**32))
        prop = proposed_infer(tr, full_family(1, p))
        if not prop.feasible:
            continue
        ls = naive_infer(tr, 1, p + 1)
        worst_A = max(worst_A, float(np.abs(prop.A - ls.A).max()))
        worst_a = max(worst_a, float(np.abs(prop.a - ls.a).max()))
        done += 1
    return worst_A <= 1e-8 and worst_a <= 1e-8, \
        f"max |A_if - A_ls| = {worst_A:.2e}, max |a_if - a_ls| = {worst_a:.2e}"


def criterion_5():
    t0 = time.perf_counter()
    spec = preset_spec("bias")
    spec.trials, spec.master_seed = 2000, SEED
    res = run_experiment(spec, threads=os.cpu_count() or 1, write=False)
    prop, ols = res.mean_error("proposed"), res.mean_error("raw_ols")
    dt = time.perf_counter() - t0
    pairs = ", ".join(f"{v}: {a:.3f} vs {b:.3f}" for v, a, b in zip(spec.values, prop, ols))
    return bool(np.all(prop < ols)) and dt < 60, \
        f"mean error proposed vs raw_ols ({pairs}), {dt:.1f} s"


def criterion_6():
    spec = preset_spec("redundancy")
    spec.trials, spec.master_seed = 500, SEED
    res = run_experiment(spec, threads=os.cpu_count() or 1, write=False)
    a, b = res.errors["proposed"][-1], res.errors["naive"][-1]
    diff = float(np.nanmax(np.abs(a - b)))
    both = bool(np.array_equal(np.isfinite(a), np.isfinite(b)))
    curve = res.mean_error("proposed")
    ratio = float(curve.max() / curve.min())
    return diff <= 1e-8 and both and ratio > 1.05, \
        f"per-trial |proposed - naive| at 21 = {diff:.2e}, max/min mean error = {ratio:.3f}"


def criterion_7():
    rng = np.random.default_rng(SEED)
    sys_ = LinearSystem(_stable(rng, 2, 0.5, 0.9), rng.normal(size=2))
    nz = _noise()
    v = nz.variances()
    # 2k - m: -1 and 0 (neither branch), 1 (first split only), 2 and 3 (both)
    pairs = [(2, 5), (1, 2), (2, 3), (3, 4), (4, 5)]
    out, ok = [], True
    for k, m in pairs:
        mean, se = empirical_diff_moment(sys_, nz, k, m, 100000, master_seed=SEED)
        good, zmax, _, _ = _z_check(mean, se, expected_diff_moment(sys_, v, k, m))
        ok &= good
        out.append(f"({k},{m}) z={zmax:.2f}")
    return ok, "max |z| per pair: " + ", ".join(out)


def criterion_8():
    rng = np.random.default_rng(SEED)
    sys_ = LinearSystem(_stable(rng, 2))
    nz = NoiseModel(U(-1, 1), U(0, 1), U(-1, 1), offset=U(-0.5, 0.5))
    fam = IndexFamily(1, 3, {1: (2, 3), 2: (3,)})
    batch = simulate_trials(sys_, nz, 4, SEED, 100000)
    eta = build_eta_batch(batch, fam)
    prod = eta[:, :, None] * eta[:, None, :]
    mean = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(len(eta))
    C = build_cv(fam, nz.variances(), 2).C_v
    good, zmax, bad, total = _z_check(mean, se, C)
    lam = np.linalg.eigvalsh(C)
    psd = lam[0] >= -1e-10 * lam[-1]
    return good and psd, (f"max |z| = {zmax:.2f} ({bad} of {total} entries above 3), "
                          f"min eigenvalue {lam[0]:.2e}")


def criterion_9():
    rng = np.random.default_rng(SEED)
    sys_ = LinearSystem(_stable(rng, 2), rng.normal(size=2))
    nz = _noise()
    fam = IndexFamily(1, 4, {1: (2, 4), 2: (3,), 3: (4,)})
    batch = simulate_trials(sys_, nz, 5, SEED, 100000)
    m = np.array([t[0] for t in fam.tags()]) - 1
    q = np.array([t[1] for t in fam.tags()]) - 1
    X = batch.r[:, m] - batch.r[:, q]
    XX = np.einsum("tji,tjk->tik", X, X)
    mean = XX.mean(axis=0)
    se = XX.std(axis=0, ddof=1) / math.sqrt(len(XX))
    ms = gamma_and_M(sys_, nz.variances(), fam)
    good, zmax, _, _ = _z_check(mean, se, ms.Gamma)
    ortho = float(np.abs(ms.M.T @ ms.Gamma @ ms.M - np.eye(2)).max())
    return good and ortho <= 1e-10, f"max |z| = {zmax:.2f}, max |M'GM - I| = {ortho:.1e}"


def criterion_10():
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 3))
        p = k + int(rng.integers(1, 6))
        A = _stable(rng, n, 0.2, 1.2)
        v = NoiseVariances(*rng.uniform(0.01, 1.0, 4))
        fam = _mixed_family(rng, k, p)
        cfg = ComplexityConfig(n=n, k=k, p=p, family=fam, sigma_p2=v.sigma_p2,
                               sigma_o2=v.sigma_o2, sigma_i2=v.sigma_i2, sigma_a2=v.sigma_a2)
        ms = gamma_and_M(A, v, fam)
        worst = max(worst, stacked_norm_sq(A, ms.M, fam) / bound_set(cfg, A).p_bound)
    return worst <= 1.0, f"max stacked norm^2 / bound = {worst:.3f}"


def criterion_11():
    rng = np.random.default_rng(SEED)
    worst = {True: np.inf, False: np.inf}
    for _ in range(50):
        n = int(rng.integers(1, 5))
        A = _stable(rng, n, 0.2, 1.2)
        v = NoiseVariances(*rng.uniform(0.01, 1.0, 4))
        for k in (2, 3):
            for m in (k + 1, 2 * k, 2 * k + 1, 2 * k + 3):
                b = exact_bounds(A, k, m)
                lam = np.linalg.eigvalsh(expected_diff_moment(A, v, k, m))[0]
                key = m > 2 * k - 1
                worst[key] = min(worst[key], lam - f_pair(b, v, k, m))
    ok = worst[True] >= -1e-12 and worst[False] >= -1e-12
    return ok, (f"min (lambda_min - bound): m > 2k-1 {worst[True]:.3e}, "
                f"m <= 2k-1 {worst[False]:.3e}")


def criterion_12():
    rng = np.random.default_rng(SEED)
    grid = np.linspace(0, 0.5, 200001)
    peak = float(np.max((1 - 2 * grid) * (2 + grid) * grid))
    worst, roots, none_ok, nones = 0.0, 0, True, 0
    for _ in range(2000):
        a, b, n = rng.uniform(0.01, 5), rng.uniform(0, 1), int(rng.integers(1, 7))
        target = n * b / (2 * a)
        e = epsilon_opt(a, b, n)
        if e is None:
            nones += 1
            none_ok &= target > peak - 1e-12
        else:
            roots += 1
            worst = max(worst, abs((1 - 2 * e) * (2 + e) * e - target))
            none_ok &= target <= peak + 1e-12
    ok = worst < 1e-10 and none_ok and abs(CUBIC_MAX - peak) < 1e-9
    return ok, f"{roots} roots (max residual {worst:.1e}), {nones} no-root cases detected"


def criterion_13():
    spec = preset_spec("horizon")
    spec.trials, spec.master_seed = 2000, SEED
    demo = run_pac_demo(spec, threads=os.cpu_count() or 1, write=False)
    base = ComplexityConfig(n=4, k=1, p=2, family=chain_family(1, 2), phi=1.5,
                            delta=0.2811).with_noise(spec.noise)
    f2 = 2 * spec.noise.variances().sigma_o2
    roots = solve_rho3_for_l_up(base, f2, 140)
    lus = [math.ceil(l_up_value(base.replace(rho3=r), f2)) for r in roots]
    exists = any(130 <= lu <= 150 for lu in lus)
    past = [s for s in demo.success if s["past_bound"]]
    rates_ok = bool(past) and all(s["success_fraction"] >= 1 - 0.2811 for s in past)
    rates = ", ".join(f"T={s['terminal_time']}: {s['success_fraction']:.3f}" for s in past)
    # the other reading of the noise specification, reported but not judged
    alt = preset_spec("horizon_alt")
    alt.trials, alt.master_seed = 2000, SEED
    alt_demo = run_pac_demo(alt, threads=os.cpu_count() or 1, write=False)
    alt_rates = ", ".join(f"T={s['terminal_time']}: {s['success_fraction']:.3f}"
                          for s in alt_demo.success if s["past_bound"])
    return exists and rates_ok, (
        f"rho3 = {demo.rho3:.10f} gives l_up = {demo.bound_horizon}; pac status "
        f"{demo.outcome.status}; success past the bound ({rates}) vs target "
        f"{1 - 0.2811:.4f}; alternative noise reading: {alt_rates}")


def criterion_14():
    rng = np.random.default_rng(SEED)
    ratios, dominated = [], True
    for _ in range(50):
        n = int(rng.integers(1, 5))
        k = int(rng.integers(1, 3))
        p = k + int(rng.integers(1, 4))  # at most 6 pairs
        cfg = ComplexityConfig(n=n, k=k, p=p, family=chain_family(k, p),
                               rho3=rng.uniform(0.1, 0.9), eps=rng.uniform(0.01, 0.25),
                               sigma_p2=rng.uniform(0, 1), sigma_o2=rng.uniform(0.01, 1),
                               sigma_i2=rng.uniform(0, 1), sigma_a2=rng.uniform(0, 0.5))
        A = _stable(rng, n)
        ex = select(k, p, cfg, A, "exhaustive")
        gr = select(k, p, cfg, A, "greedy")
        dominated &= ex.objective_value >= gr.objective_value * (1 - 1e-12)
        ratios.append(gr.objective_value / ex.objective_value)
    ratios = np.array(ratios)
    passing = int(np.sum(ratios >= 0.9))
    return passing == 50 and dominated, (
        f"greedy >= 0.9 x exhaustive in {passing}/50 configs (min ratio {ratios.min():.3f}); "
        f"exhaustive >= greedy always: {dominated}")


def _cli(args, cwd):
    cmd = [sys.executable, "-m", "sysid.cli"] + args
    return subprocess.run(cmd, cwd=cwd, capture_output=True, check=True)


def _tree(path):
    out = {}
    for root, _, files in os.walk(path):
        for f in files:
            full = os.path.join(root, f)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, path)] = fh.read()
    return out


def criterion_15():
    with tempfile.TemporaryDirectory() as tmp:
        inputs = {
            "sim.json": {"system": "bias", "noise": "bias", "horizon": 15, "trials": 3},
            "bound.json": {"n": 4, "k": 1, "p": 6, "family": "full", "system": "bias",
                           "noise": "bias", "eps": 0.2},
            "pac.json": {"request": {"phi": 1.5, "delta": 0.2811, "rho3": 0.97},
                         "config": {"n": 4}, "noise": "horizon", "sigma_max_A": 1.004,
                         "limits": {"max_iter": 4}},
            "exp.json": {"preset": "bias", "trials": 300},
            "demo.json": {"preset": "horizon", "trials": 120, "values": [20, 80, 145]},
        }
        for name, obj in inputs.items():
            with open(os.path.join(tmp, name), "w") as fh:
                json.dump(obj, fh)
        runs = {}
        for tag, threads in (("a", 1), ("b", 1), ("c", 4)):
            out = os.path.join(tmp, tag)
            os.makedirs(out)
            th = ["--threads", str(threads)]
            _cli(th + ["simulate", "--config", "sim.json", "--out", f"{tag}/sim"], tmp)
            _cli(th + ["infer", "--traj", f"{tag}/sim/traj_0000.csv",
                       "--out", f"{tag}/infer.json"], tmp)
            _cli(th + ["bound", "--config", "bound.json", "--out", f"{tag}/bound.json"], tmp)
            _cli(th + ["pac", "--request", "pac.json", "--out", f"{tag}/pac.json"], tmp)
            _cli(th + ["experiment", "--spec", "exp.json", "--out", f"{tag}/exp"], tmp)
            _cli(th + ["experiment", "--spec", "demo.json", "--out", f"{tag}/demo"], tmp)
            runs[tag] = _tree(out)
    same_repeat = runs["a"] == runs["b"]
    same_threads = runs["a"] == runs["c"]
    return same_repeat and same_threads, (
        f"{len(runs['a'])} output files; identical across repeats: {same_repeat}, "
        f"across thread counts: {same_threads}")


CRITERIA = [(1, "exact inference under constant noise", criterion_1),
            (2, "data-matrix relation", criterion_2),
            (3, "feasibility equivalence", criterion_3),
            (4, "full family equals naive solution", criterion_4),
            (5, "proposed beats raw OLS under observation bias", criterion_5),
            (6, "redundant-pair sweep", criterion_6),
            (7, "difference second moments", criterion_7),
            (8, "stacked noise covariance", criterion_8),
            (9, "second moment and normalisation", criterion_9),
            (10, "stacked-map norm bound", criterion_10),
            (11, "pair eigenvalue lower bound", criterion_11),
            (12, "optimal epsilon root", criterion_12),
            (13, "sample-complexity reproduction", criterion_13),
            (14, "greedy selector quality", criterion_14),
            (15, "CLI determinism", criterion_15)]


def _run(number):
    _, name, fn = CRITERIA[number - 1]
    ok, detail = fn()
    RESULTS[number] = (name, ok, detail)
    return ok, detail


@pytest.mark.parametrize("number", [c[0] for c in CRITERIA],
                         ids=[f"criterion_{c[0]:02d}" for c in CRITERIA])
def test_criterion(number):
    ok, detail = _run(number)
    assert ok, detail


def format_line(number, name, ok, detail):
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"


if __name__ == "__main__":
    for number, name, _ in CRITERIA:
        ok, detail = _run(number)
        print(format_line(number, name, ok, detail), flush=True)
