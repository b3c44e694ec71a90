"""Least-squares estimators of (A, a) from one trajectory.

``proposed_infer`` fits A on differenced data, which cancels the offset and
the mean of the observation noise, then recovers a from the average
residual. ``naive_infer`` regresses r(t+1) on [r(t), 1]. ``raw_ols``
ignores the offset altogether and serves as the baseline.

Solves go through least squares on the data matrices rather than forming
an explicit inverse of the Gram matrix. The Gram matrices are still
reported (rank and condition number) since feasibility is defined on them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import IndexFamily, build_matrices, numeric_rank, rank_tolerance
from .errors import ConfigError, DiagnosticUnavailableError, HorizonError
from .simulation import LinearSystem, Trajectory


@dataclass
class InferenceResult:
    method: str
    feasible: bool
    A: Optional[np.ndarray]
    a: Optional[np.ndarray]
    rank: int
    cond: float

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "feasible": self.feasible,
            "A": None if self.A is None else self.A.tolist(),
            "a": None if self.a is None else self.a.tolist(),
            "rank": self.rank,
            "cond": self.cond if np.isfinite(self.cond) else None,
        }


def build_gram(X_base: np.ndarray, X_shift: np.ndarray):
    """P = X_base X_base^T and Q = X_shift X_base^T."""
    return X_base @ X_base.T, X_shift @ X_base.T


def _rank_cond(M: np.ndarray):
    """Numeric rank of M and the condition number of M M^T."""
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > rank_tolerance(M, sv)))
    if rank < min(M.shape) or sv[-1] == 0:
        return rank, float("inf")
    return rank, float((sv[0] / sv[-1]) ** 2)


def _infeasible(method: str, rank: int) -> InferenceResult:
    return InferenceResult(method, False, None, None, rank, float("inf"))


def proposed_infer(traj: Trajectory, family: IndexFamily) -> InferenceResult:
    """Estimate from differenced data; reads r(k..p+1) for a family on [k, p]."""
    dm = build_matrices(traj, family)
    n = traj.n
    rank, cond = _rank_cond(dm.X_base)
    if rank < n:
        return _infeasible("proposed", rank)
    # A = Q P^{-1} is the least-squares solution of A X_base = X_shift
    A = np.linalg.lstsq(dm.X_base.T, dm.X_shift.T, rcond=None)[0].T
    k, p = family.k, family.p
    r = traj.r
    resid = r[k:p + 1] - r[k - 1:p] @ A.T
    a = resid.mean(axis=0)
    return InferenceResult("proposed", True, A, a, rank, cond)


def _naive_design(traj: Trajectory, k: int, p: int):
    if not 1 <= k < p:
        raise ConfigError(f"naive window needs 1 <= k < p, got k={k}, p={p}")
    if traj.length < p:
        raise HorizonError(f"window r({k}..{p}) exceeds trajectory length {traj.length}")
    r = traj.r
    X = r[k - 1:p - 1]
    Y = r[k:p]
    return X, Y


def naive_infer(traj: Trajectory, k: int, p: int) -> InferenceResult:
    """Regress r(t+1) on [r(t), 1] over t = k..p-1."""
    X, Y = _naive_design(traj, k, p)
    Xh = np.hstack([X, np.ones((X.shape[0], 1))])
    rank, cond = _rank_cond(Xh)
    if rank < Xh.shape[1]:
        return _infeasible("naive", rank)
    theta = np.linalg.lstsq(Xh, Y, rcond=None)[0]
    return InferenceResult("naive", True, theta[:-1].T, theta[-1].copy(), rank, cond)


def raw_ols(traj: Trajectory, k: int, p: int) -> InferenceResult:
    """Regress r(t+1) on r(t) over t = k..p-1, with no offset."""
    X, Y = _naive_design(traj, k, p)
    rank, cond = _rank_cond(X)
    if rank < X.shape[1]:
        return _infeasible("raw_ols", rank)
    A = np.linalg.lstsq(X, Y, rcond=None)[0].T
    return InferenceResult("raw_ols", True, A, None, rank, cond)


def compute_R(traj: Trajectory, family: IndexFamily, system: LinearSystem) -> np.ndarray:
    """Noise cross term R with Q = A P + R, from the recorded noise.

    Uses the processed noise h(t+1) = a + f(t) + w(t+1) - A w(t); the
    offset cancels in every difference h(m+1) - h(q+1).
    """
    if not traj.has_noise:
        raise DiagnosticUnavailableError("compute_R needs a trajectory with recorded f and w")
    dm = build_matrices(traj, family)
    A = system.A
    f, w = traj.f, traj.w
    m = np.array([t[0] for t in dm.tags]) - 1
    q = np.array([t[1] for t in dm.tags]) - 1
    if f.shape[0] < family.p:
        raise HorizonError("recorded process noise is shorter than the family horizon")
    H = (f[m] - f[q]) + (w[m + 1] - w[q + 1]) - (w[m] - w[q]) @ A.T
    return H.T @ dm.X_base.T


@dataclass
class FeasibilityReport:
    proposed_feasible: bool
    naive_feasible: bool
    rank_P: int
    cond_P: float
    rank_naive: int
    star_complete: bool  # the first time point is paired with every later one

    @property
    def agree(self) -> bool:
        return self.proposed_feasible == self.naive_feasible


def feasibility_report(traj: Trajectory, family: IndexFamily) -> FeasibilityReport:
    """Compare invertibility of P with that of the naive design on r(k..p+1)."""
    prop = proposed_infer(traj, family)
    naive = naive_infer(traj, family.k, family.p + 1)
    star = len(family.sets.get(family.k, ())) == family.p - family.k
    return FeasibilityReport(prop.feasible, naive.feasible, prop.rank, prop.cond,
                             naive.rank, star)


def model_error(A_hat: np.ndarray, A: np.ndarray) -> float:
    """Spectral-norm error ||A_hat - A||."""
    return float(np.linalg.norm(np.asarray(A_hat) - np.asarray(A), 2))


ESTIMATORS = ("proposed", "naive", "raw_ols")
