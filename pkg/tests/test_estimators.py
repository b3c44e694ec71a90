import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sysid.data import IndexFamily, build_matrices, chain_family, full_family, star_family
from sysid.errors import DiagnosticUnavailableError, HorizonError, ConfigError
from sysid.estimators import (build_gram, compute_R, feasibility_report, model_error,
                              naive_infer, proposed_infer, raw_ols)
from sysid.simulation import (DistributionSpec, LinearSystem, NoiseModel, Trajectory,
                              scaled_system, simulate)
from conftest import U, unit_noise


def constant_noise_traj(system, p, f=0.3, w=2.0):
    nz = NoiseModel(DistributionSpec.constant(f), DistributionSpec.constant(w), U(-1, 1),
                    strict=False)
    return simulate(system, nz, p, seed=11)


def test_exact_recovery_constant_noise():
    sys_ = LinearSystem(scaled_system(0.5).A, np.array([0.1, -0.2, 0.3, 0.0]))
    tr = constant_noise_traj(sys_, 10)
    prop = proposed_infer(tr, chain_family(1, 9))
    assert prop.feasible and model_error(prop.A, sys_.A) < 1e-8
    nv = naive_infer(tr, 1, 10)
    assert model_error(nv.A, sys_.A) < 1e-8


def test_offset_recovered_without_noise():
    sys_ = LinearSystem(0.4 * np.eye(2) + 0.1, np.array([1.0, -1.0]))
    nz = NoiseModel(DistributionSpec.constant(0), DistributionSpec.constant(0), U(-3, 3))
    tr = simulate(sys_, nz, 8, seed=0)
    res = proposed_infer(tr, full_family(1, 7))
    assert np.allclose(res.a, sys_.a, atol=1e-9)


def test_critical_relation(rng):
    sys_ = LinearSystem(rng.normal(size=(3, 3)) * 0.5, rng.normal(size=3))
    tr = simulate(sys_, unit_noise(), 9, seed=5)
    fam = IndexFamily(1, 8, {1: (2, 5, 8), 3: (4, 6), 6: (7,)})
    dm = build_matrices(tr, fam)
    P, Q = build_gram(dm.X_base, dm.X_shift)
    R = compute_R(tr, fam, sys_)
    assert np.linalg.norm(sys_.A @ P - (Q - R)) <= 1e-9 * (1 + np.linalg.norm(Q))


def test_compute_R_needs_noise(stable4):
    tr = Trajectory(r=np.zeros((5, 4)))
    with pytest.raises(DiagnosticUnavailableError):
        compute_R(tr, chain_family(1, 3), stable4)


def test_full_family_matches_naive(rng):
    sys_ = LinearSystem(rng.normal(size=(2, 2)) * 0.5, rng.normal(size=2))
    tr = simulate(sys_, unit_noise(), 12, seed=9)
    prop = proposed_infer(tr, full_family(1, 11))
    nv = naive_infer(tr, 1, 12)
    assert np.allclose(prop.A, nv.A, atol=1e-10)
    assert np.allclose(prop.a, nv.a, atol=1e-10)


def test_infeasible_reported():
    tr = Trajectory(r=np.tile([[1.0, 2.0]], (6, 1)) * np.arange(1, 7)[:, None])
    res = proposed_infer(tr, chain_family(1, 5))
    assert not res.feasible and res.A is None and res.rank == 1
    d = res.to_dict()
    assert d["cond"] is None and d["A"] is None


def test_feasibility_agrees_on_rank_deficient_data():
    # observations confined to a line: both Gram matrices are singular
    base = np.arange(1.0, 8.0)[:, None] * np.array([[1.0, 1.0]])
    rep = feasibility_report(Trajectory(r=base), full_family(1, 6))
    assert not rep.proposed_feasible and not rep.naive_feasible and rep.agree
    assert rep.star_complete


def test_raw_ols_and_windows(stable4, noise):
    tr = simulate(stable4, noise, 10, seed=2)
    res = raw_ols(tr, 1, 10)
    assert res.feasible and res.a is None and res.A.shape == (4, 4)
    with pytest.raises(HorizonError):
        naive_infer(tr, 1, 11)
    with pytest.raises(ConfigError):
        raw_ols(tr, 4, 4)


def test_model_error_is_spectral():
    assert model_error(np.diag([3.0, 0.0]), np.zeros((2, 2))) == pytest.approx(3.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10**6))
def test_rank_equivalence_property(n, seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(2, 9))
    sys_ = LinearSystem(rng.normal(size=(n, n)) * 0.5, rng.normal(size=n))
    tr = simulate(sys_, unit_noise(), p + 1, seed=seed)
    if rng.random() < 0.5:
        # project onto a random subspace of lower dimension
        d = int(rng.integers(0, n))
        B = rng.normal(size=(n, d))
        shift = rng.normal(size=n)
        tr = Trajectory(r=(tr.r @ B) @ B.T + shift if d else np.tile(shift, (p + 1, 1)))
    rep = feasibility_report(tr, full_family(1, p))
    assert rep.agree


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10**6))
def test_critical_relation_property(n, seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(3, 10))
    sys_ = LinearSystem(rng.normal(size=(n, n)) * 0.5, rng.normal(size=n))
    tr = simulate(sys_, unit_noise(), p + 1, seed=seed)
    fam = [full_family(1, p), chain_family(1, p), star_family(1, p)][seed % 3]
    dm = build_matrices(tr, fam)
    P, Q = build_gram(dm.X_base, dm.X_shift)
    R = compute_R(tr, fam, sys_)
    assert np.linalg.norm(sys_.A @ P - (Q - R)) <= 1e-9 * (1 + np.linalg.norm(Q))
