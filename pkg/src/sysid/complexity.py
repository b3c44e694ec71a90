"""Second moments, stacked noise covariance and sample-complexity bounds.

Stacked noise vector layout
---------------------------
For a family with pairs (m, q) listed in (m asc, q asc) order, the stacked
vector has four segments, each running over all pairs in that order:

    x   one slot per pair:        x(1)
    w   one slot per pair:        w(m) - w(q)
    fb  m-1 slots per pair:       f(m-1-s) - f(q-1-s),   s = 0..m-2
    ft  q-m slots per pair:       f(q-m-u) + a,          u = 0..q-m-1

Each slot is an n-vector; coordinates are innermost. With this layout the
stacked map satisfies  Pi @ eta = vec(X_base)  (columns stacked), where the
blocks of pair (m, q) are A^(m-1) - A^(q-1), I, A^s and -A^(m-1+u).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .data import IndexFamily, Tag, resolve_family
from .errors import ConfigError, DegenerateMomentError, DiagnosticUnavailableError, DomainError
from .simulation import LinearSystem, NoiseModel, NoiseVariances, Trajectory

DEFAULT_C = 9.5
DEFAULT_KAPPA = 2.2 * math.sqrt(2.0)
DEFAULT_GAMMA = 0.0833
EIG_FLOOR = 1e-12


def _as_matrix(system_or_A) -> np.ndarray:
    if isinstance(system_or_A, LinearSystem):
        return system_or_A.A
    return np.atleast_2d(np.asarray(system_or_A, dtype=float))


def _as_variances(v) -> NoiseVariances:
    if isinstance(v, NoiseModel):
        return v.variances()
    return v


def matrix_powers(A: np.ndarray, K: int) -> List[np.ndarray]:
    """[A^0, A^1, ..., A^K] (empty list for K < 0)."""
    out = []
    P = np.eye(A.shape[0])
    for _ in range(K + 1):
        out.append(P)
        P = P @ A
    return out


def _gram_sum(pw, lo, hi):
    """sum_{i=lo}^{hi} A^i (A^i)^T; zero when the range is empty."""
    n = pw[0].shape[0]
    S = np.zeros((n, n))
    for i in range(max(lo, 0), hi + 1):
        S += pw[i] @ pw[i].T
    return S


def _cross_sum(pw, lo, hi, shift):
    """sum_{i=lo}^{hi} (A^i (A^(i+shift))^T + A^(i+shift) (A^i)^T)."""
    n = pw[0].shape[0]
    S = np.zeros((n, n))
    for i in range(max(lo, 0), hi + 1):
        S += pw[i] @ pw[i + shift].T + pw[i + shift] @ pw[i].T
    return S


# --------------------------------------------------------------------------
# second moment of one differenced observation

def expected_diff_moment(system, variances, k: int, m: int) -> np.ndarray:
    """E[(r(k) - r(m)) (r(k) - r(m))^T] for 1 <= k < m.

    The process-noise cross terms follow the case split on 2k - m. The
    offset contributes through S = sum_{i=k-1}^{m-2} A^i as S S^T var(a),
    plus the outer product of the mean difference when x(1) or a have
    nonzero mean.
    """
    if not 1 <= k < m:
        raise ConfigError(f"need 1 <= k < m, got k={k}, m={m}")
    v = _as_variances(variances)
    A = _as_matrix(system)
    n = A.shape[0]
    pw = matrix_powers(A, m - 1)
    I = np.eye(n)
    D = pw[k - 1] - pw[m - 1]
    S = sum((pw[i] for i in range(k - 1, m - 1)), np.zeros((n, n)))
    phi = (v.sigma_i2 * D @ D.T + 2.0 * v.sigma_o2 * I
           + v.sigma_p2 * _gram_sum(pw, k - 1, m - 2)
           + 2.0 * v.sigma_p2 * _gram_sum(pw, 0, k - 2)
           + v.sigma_a2 * S @ S.T)
    if 2 * k - m >= 1:
        # i runs over k-1..m-2 with partner power i-m+k; reindex to j = i-m+k
        omega = v.sigma_p2 * _cross_sum(pw, 2 * k - 1 - m, k - 2, m - k)
    else:
        omega = v.sigma_p2 * _cross_sum(pw, 0, k - 2, m - k)
    if 2 * k - m >= 2:
        theta = v.sigma_p2 * _cross_sum(pw, 0, 2 * k - m - 2, m - k)
    else:
        theta = np.zeros((n, n))
    out = phi - omega - theta
    a_mean = system.offset_or_zero() if isinstance(system, LinearSystem) else np.zeros(n)
    nu = v.mu * D @ np.ones(n) - S @ a_mean
    if np.any(nu):
        out = out + np.outer(nu, nu)
    return 0.5 * (out + out.T)


@dataclass
class MomentSet:
    Gamma: np.ndarray
    M: np.ndarray
    Upsilon_norm: float
    n_count: int

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.Gamma)[0])


def n_count(family: IndexFamily) -> int:
    """Number of n-vector slots in the stacked noise vector: sum of (q + 1)."""
    return int(sum(q + 1 for _, q in family.tags()))


def inverse_sqrt(G: np.ndarray) -> np.ndarray:
    G = 0.5 * (G + G.T)
    w, V = np.linalg.eigh(G)
    top = w[-1]
    if not top > 0 or w[0] < EIG_FLOOR * top:
        raise DegenerateMomentError(
            f"second-moment matrix is not positive definite: eigenvalues [{w[0]:.3e}, {top:.3e}]")
    return (V / np.sqrt(w)) @ V.T


def gamma_and_M(system, variances, family: IndexFamily) -> MomentSet:
    tags = family.tags()
    if not tags:
        raise DomainError("gamma_and_M needs a nonempty family")
    n = _as_matrix(system).shape[0]
    G = np.zeros((n, n))
    for m, q in tags:
        G += expected_diff_moment(system, variances, m, q)
    M = inverse_sqrt(G)
    return MomentSet(Gamma=G, M=M, Upsilon_norm=float(np.linalg.norm(M, 2)),
                     n_count=n_count(family))


# --------------------------------------------------------------------------
# stacked noise vector, its covariance and the stacked map

SEGMENTS = ("x", "w", "fb", "ft")


@dataclass
class EtaLayout:
    """Slot descriptors: segment code, pair (m, q) and in-pair index."""

    seg: np.ndarray
    pm: np.ndarray
    pq: np.ndarray
    idx: np.ndarray
    n: int

    @property
    def n_slots(self) -> int:
        return int(self.seg.size)

    @property
    def length(self) -> int:
        return self.n_slots * self.n

    def segment_lengths(self) -> Dict[str, int]:
        return {name: int(np.sum(self.seg == c)) * self.n for c, name in enumerate(SEGMENTS)}

    def describe(self) -> str:
        lines = [f"stacked vector: {self.n_slots} slots x {self.n} coordinates"]
        meaning = {0: "x(1)", 1: "w({m}) - w({q})", 2: "f({a}) - f({b})", 3: "f({c}) + a"}
        for i in range(self.n_slots):
            g, m, q, j = int(self.seg[i]), int(self.pm[i]), int(self.pq[i]), int(self.idx[i])
            text = meaning[g].format(m=m, q=q, a=m - 1 - j, b=q - 1 - j, c=q - m - j)
            lines.append(f"{i:5d}  {SEGMENTS[g]:>2}  pair ({m},{q})  {text}")
        return "\n".join(lines)


def eta_layout(family: IndexFamily, n: int) -> EtaLayout:
    tags = family.tags()
    seg, pm, pq, idx = [], [], [], []
    for code in range(4):
        for m, q in tags:
            count = {0: 1, 1: 1, 2: m - 1, 3: q - m}[code]
            for j in range(count):
                seg.append(code)
                pm.append(m)
                pq.append(q)
                idx.append(j)
    arr = lambda x: np.array(x, dtype=np.int64)
    return EtaLayout(arr(seg), arr(pm), arr(pq), arr(idx), int(n))


def build_eta(traj: Trajectory, family: IndexFamily) -> np.ndarray:
    """Stacked noise vector of one trajectory, from its recorded noise."""
    if not traj.has_noise or traj.x is None:
        raise DiagnosticUnavailableError("build_eta needs recorded states and noise")
    a = traj.a if traj.a is not None else np.zeros(traj.n)
    lay = eta_layout(family, traj.n)
    x1, f, w = traj.x[0], traj.f, traj.w
    out = np.empty((lay.n_slots, traj.n))
    for i in range(lay.n_slots):
        g, m, q, j = lay.seg[i], lay.pm[i], lay.pq[i], lay.idx[i]
        if g == 0:
            out[i] = x1
        elif g == 1:
            out[i] = w[m - 1] - w[q - 1]
        elif g == 2:
            out[i] = f[m - 2 - j] - f[q - 2 - j]
        else:
            out[i] = f[q - m - j - 1] + a
    return out.reshape(-1)


def build_eta_batch(batch, family: IndexFamily) -> np.ndarray:
    """Stacked noise vectors of every trial in a TrajectoryBatch, shape (T, length)."""
    lay = eta_layout(family, 1)
    T, _, n = batch.r.shape
    out = np.empty((T, lay.n_slots, n))
    seg, pm, pq, idx = lay.seg, lay.pm, lay.pq, lay.idx
    s = seg == 0
    out[:, s] = batch.x[:, :1]
    s = seg == 1
    out[:, s] = batch.w[:, pm[s] - 1] - batch.w[:, pq[s] - 1]
    s = seg == 2
    out[:, s] = batch.f[:, pm[s] - 2 - idx[s]] - batch.f[:, pq[s] - 2 - idx[s]]
    s = seg == 3
    out[:, s] = batch.f[:, pq[s] - pm[s] - idx[s] - 1] + batch.a[:, None]
    return out.reshape(T, -1)


@dataclass
class CovAssembly:
    """Covariance of the stacked vector, block by segment."""

    C_xx: np.ndarray
    C_ww: np.ndarray
    C_ff_breve: np.ndarray
    C_ff_tilde: np.ndarray
    C_cross: np.ndarray
    C_v: np.ndarray
    layout: EtaLayout

    @property
    def norm(self) -> float:
        return float(np.linalg.eigvalsh(self.C_v)[-1]) if self.C_v.size else 0.0


def _family_variances(config_or_family, variances=None, n=None):
    if isinstance(config_or_family, ComplexityConfig):
        c = config_or_family
        return c.family, c.variances, c.n
    if variances is None or n is None:
        raise ConfigError("build_cv needs a ComplexityConfig or (family, variances, n)")
    return config_or_family, _as_variances(variances), int(n)


def scalar_covariance(family: IndexFamily, variances) -> Tuple[np.ndarray, EtaLayout]:
    """Covariance of one coordinate of the stacked vector."""
    v = _as_variances(variances)
    lay = eta_layout(family, 1)
    C = _kernels.scalar_cov(lay.seg, lay.pm, lay.pq, lay.idx,
                            v.sigma_i2, v.sigma_o2, v.sigma_p2, v.sigma_a2)
    return C, lay


def build_cv(config_or_family, variances=None, n=None) -> CovAssembly:
    """Assemble the covariance from per-segment index-matching rules."""
    family, v, n = _family_variances(config_or_family, variances, n)
    Cs, lay1 = scalar_covariance(family, v)
    lay = eta_layout(family, n)
    I = np.eye(n)
    s = [np.nonzero(lay1.seg == c)[0] for c in range(4)]
    blk = lambda a, b: np.kron(Cs[np.ix_(s[a], s[b])], I)
    return CovAssembly(C_xx=blk(0, 0), C_ww=blk(1, 1), C_ff_breve=blk(2, 2),
                       C_ff_tilde=blk(3, 3), C_cross=blk(2, 3),
                       C_v=np.kron(Cs, I), layout=lay)


def cv_norm(family: IndexFamily, variances) -> float:
    """Spectral norm of the stacked covariance without assembling it.

    The covariance is L D L^T for the loading L from primitive noise terms;
    its norm equals the top eigenvalue of D^(1/2) L^T L D^(1/2), whose size
    grows with the horizon rather than with the number of slots.
    """
    v = _as_variances(variances)
    tags = family.tags()
    if not tags:
        return 0.0
    P = family.p
    ms = np.array([t[0] for t in tags], dtype=np.int64)
    qs = np.array([t[1] for t in tags], dtype=np.int64)
    G = _kernels.loading_gram(ms, qs, P)
    d = np.sqrt(np.concatenate([[v.sigma_i2, v.sigma_a2], np.full(P, v.sigma_o2),
                                np.full(P, v.sigma_p2)]))
    K = d[:, None] * G * d[None, :]
    return float(max(np.linalg.eigvalsh(K)[-1], 0.0))


def build_pi(system, family: IndexFamily) -> np.ndarray:
    """Dense stacked map with Pi @ eta = vec(X_base)."""
    A = _as_matrix(system)
    n = A.shape[0]
    tags = family.tags()
    pw = matrix_powers(A, family.p)
    lay = eta_layout(family, n)
    row_of = {t: j for j, t in enumerate(tags)}
    Pi = np.zeros((n * len(tags), lay.length))
    for i in range(lay.n_slots):
        g, m, q, j = int(lay.seg[i]), int(lay.pm[i]), int(lay.pq[i]), int(lay.idx[i])
        if g == 0:
            B = pw[m - 1] - pw[q - 1]
        elif g == 1:
            B = np.eye(n)
        elif g == 2:
            B = pw[j]
        else:
            B = -pw[m - 1 + j]
        r = row_of[(m, q)] * n
        Pi[r:r + n, i * n:(i + 1) * n] = B
    assert Pi.shape == (n * len(tags), lay.length)
    return Pi


def stacked_norm_sq(system, M: np.ndarray, family: IndexFamily) -> float:
    """||Pi^T Upsilon||^2 with Upsilon = blockdiag(M, ..., M), one copy per pair.

    Pi Pi^T is block diagonal by pair, with block
    D D^T + I + sum_{i=0}^{q-2} A^i (A^i)^T for D = A^(m-1) - A^(q-1),
    so the squared norm is the largest top eigenvalue of M^T B M.
    """
    A = _as_matrix(system)
    n = A.shape[0]
    pw = matrix_powers(A, family.p)
    grams = np.cumsum([P @ P.T for P in pw], axis=0)
    best = 0.0
    for m, q in family.tags():
        D = pw[m - 1] - pw[q - 1]
        B = D @ D.T + np.eye(n) + grams[q - 2]
        best = max(best, float(np.linalg.eigvalsh(M.T @ B @ M)[-1]))
    return best


# --------------------------------------------------------------------------
# spectral bounds and the bound set

@dataclass(frozen=True)
class SpectralBounds:
    sigma_min_A: float     # lower bound on the smallest singular value of A
    sigma_min_diff: float  # lower bound on sigma_min(A^d - I), d = 1..p-k
    sigma_max_A: float     # upper bound on ||A||
    sigma_max_diff: float  # upper bound on ||A^(m-1) - A^(q-1)|| over pairs

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"spectral bound {name} must be finite and nonnegative, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralBounds":
        try:
            return cls(**{k: float(d[k]) for k in ("sigma_min_A", "sigma_min_diff",
                                                    "sigma_max_A", "sigma_max_diff")})
        except KeyError as exc:
            raise ConfigError(f"spectral bounds missing field {exc}") from None


def exact_bounds(system, k: int, p: int) -> SpectralBounds:
    """Tightest valid bounds for a known A on the window [k, p]."""
    A = _as_matrix(system)
    n = A.shape[0]
    pw = matrix_powers(A, p)
    sv = np.linalg.svd(A, compute_uv=False)
    smin_diff = min(np.linalg.svd(pw[d] - np.eye(n), compute_uv=False)[-1]
                    for d in range(1, p - k + 1))
    smax_diff = max(np.linalg.norm(pw[m - 1] - pw[q - 1], 2)
                    for m in range(k, p) for q in range(m + 1, p + 1))
    return SpectralBounds(float(sv[-1]), float(smin_diff), float(sv[0]), float(smax_diff))


def norm_only_bounds(sigma_max_A: float, k: int, p: int) -> SpectralBounds:
    """Bounds when only ||A|| <= sigma_max_A is known."""
    s = float(sigma_max_A)
    # ||A^(m-1) - A^(q-1)|| <= s^(m-1) + s^(q-1), maximised at the window edge
    diff = s ** (p - 2) + s ** (p - 1) if s >= 1 else s ** (k - 1) + s ** k
    return SpectralBounds(0.0, 0.0, s, float(diff))


def _geom(s: float, lo: int, hi: int) -> float:
    """sum_{i=lo}^{hi} s^i as a finite sum (0 when empty)."""
    return float(sum(s ** i for i in range(max(lo, 0), hi + 1)))


def f_values(bounds: SpectralBounds, v: NoiseVariances, k: int) -> Tuple[float, float]:
    """(f1, f2) for a window starting at k; f1 adds the process-noise term."""
    base = bounds.sigma_min_A ** (2 * k - 2)
    f2 = base * bounds.sigma_min_diff ** 2 * v.sigma_i2 + 2.0 * v.sigma_o2
    return f2 + base * v.sigma_p2, f2


def f_pair(bounds: SpectralBounds, v: NoiseVariances, r: int, q: int) -> float:
    """Lower bound on the smallest eigenvalue of the pair's second moment."""
    f1, f2 = f_values(bounds, v, r)
    return f1 if q > 2 * r - 1 else f2


def g_factor(bounds: SpectralBounds, k: int, p: int) -> float:
    """Triangle-inequality bound on the norm of the stacked map over [k, p]."""
    s = bounds.sigma_max_A
    power_blocks = _geom(s, 0, p - 3)        # [I, A, ..., A^(m-2)], m <= p-1
    tail_blocks = _geom(s, k - 1, p - 2)     # [A^(m-1) .. A^(q-2)], k <= m < q <= p
    return 1.0 + bounds.sigma_max_diff + power_blocks + tail_blocks


@dataclass
class BoundSet:
    C_under: Optional[np.ndarray]
    C_over: Optional[np.ndarray]
    h_under: Optional[float]
    h_over: Optional[float]
    f1: float
    f2: float
    g_factor: float
    p_bound: float
    f_km: Dict[Tag, float] = field(default_factory=dict)

    @property
    def f_sum(self) -> float:
        return float(sum(self.f_km.values()))


def _unit(i: int) -> float:
    return 1.0 if i > 0 else 0.0


def mean_bounds(A: np.ndarray, v: NoiseVariances, k: int, p: int):
    """C_under, C_over, h_under, h_over for the window [k, p]."""
    n = A.shape[0]
    L = p - k
    pw = matrix_powers(A, max(p, 1))
    I = np.eye(n)
    Sx = sum((pw[m - 1] for m in range(k, p)), np.zeros((n, n)))
    Sa = sum((pw[i] for m in range(k, p) for i in range(0, m - 1)), np.zeros((n, n)))
    Cf = np.zeros((n, n))
    hf = 0.0
    for m in range(1, p - 1):
        T = sum((_unit(i) * pw[i] for i in range(max(k - 1 - m, 0), p - 1 - m)), np.zeros((n, n)))
        Cf += T @ T.T
        hf += float(np.sum(T * T))
    C_under = (v.sigma_o2 * I / L + v.sigma_i2 * Sx @ Sx.T / L ** 2
               + v.sigma_p2 * Cf / L ** 2 + v.sigma_a2 * Sa @ Sa.T / L ** 2)
    C_over = (((v.sigma_p2 + v.sigma_o2) * I + v.sigma_o2 * A @ A.T) / L
              - (L - 1) * v.sigma_o2 * (A + A.T) / L ** 2)
    h_under = ((n * (v.sigma_p2 + v.sigma_o2) + np.sum(A * A) * v.sigma_o2) / L
               - 2 * (L - 1) * v.sigma_o2 * np.trace(A) / L ** 2)
    h_over = (v.sigma_i2 * np.sum(Sx * Sx) / L ** 2 + v.sigma_a2 * np.sum(Sa * Sa) / L ** 2
              + v.sigma_p2 * hf / L ** 2 + n * v.sigma_o2 / L)
    return C_under, C_over, float(h_under), float(h_over)


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ComplexityConfig:
    n: int
    k: int
    p: int
    family: IndexFamily
    rho1: float = 0.5
    rho2: float = 0.5
    rho3: float = 0.5
    eps: float = 0.25
    phi: float = 1.0
    delta: float = 0.1
    gamma: float = DEFAULT_GAMMA
    kappa: float = DEFAULT_KAPPA
    c_universal: float = DEFAULT_C
    mu: float = 0.0
    sigma_p2: float = 0.0
    sigma_o2: float = 0.0
    sigma_i2: float = 0.0
    sigma_a2: float = 0.0
    bounds: Optional[SpectralBounds] = None

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.p <= self.k:
            raise ConfigError(f"need n >= 1 and 1 <= k < p, got n={self.n}, k={self.k}, p={self.p}")
        if self.family.k < self.k or self.family.p > self.p:
            raise ConfigError(f"family on [{self.family.k}, {self.family.p}] outside [{self.k}, {self.p}]")
        for name in ("rho1", "rho2", "rho3"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if not 0 <= self.eps < 0.5:
            raise ConfigError(f"eps must lie in [0, 0.5), got {self.eps}")
        if not self.phi > 0:
            raise ConfigError(f"phi must be positive, got {self.phi}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("gamma", "kappa", "c_universal"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        self.variances  # validates the variances

    @property
    def variances(self) -> NoiseVariances:
        return NoiseVariances(self.sigma_p2, self.sigma_o2, self.sigma_i2, self.sigma_a2, self.mu)

    def replace(self, **kw) -> "ComplexityConfig":
        return replace(self, **kw)

    def with_noise(self, noise: NoiseModel) -> "ComplexityConfig":
        v = noise.variances()
        return self.replace(sigma_p2=v.sigma_p2, sigma_o2=v.sigma_o2, sigma_i2=v.sigma_i2,
                            sigma_a2=v.sigma_a2, mu=v.mu)

    def to_dict(self) -> dict:
        d = {f: getattr(self, f) for f in self.__dataclass_fields__ if f not in ("family", "bounds")}
        d["family"] = self.family.to_dict()
        d["bounds"] = None if self.bounds is None else asdict(self.bounds)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ComplexityConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ComplexityConfig fields: {sorted(unknown)}")
        for req in ("n", "k", "p"):
            if req not in d:
                raise ConfigError(f"ComplexityConfig needs field {req!r}")
        d["family"] = resolve_family(d.get("family", "chain"), d["k"], d["p"])
        if d.get("bounds") is not None:
            d["bounds"] = SpectralBounds.from_dict(d["bounds"])
        for key in ("n", "k", "p"):
            d[key] = int(d[key])
        return cls(**d)


def _bounds_of(config: ComplexityConfig, system_or_bounds) -> Tuple[SpectralBounds, Optional[np.ndarray]]:
    if isinstance(system_or_bounds, SpectralBounds):
        return system_or_bounds, None
    if system_or_bounds is None:
        if config.bounds is None:
            raise ConfigError("no spectral bounds: pass a system or set config.bounds")
        return config.bounds, None
    A = _as_matrix(system_or_bounds)
    return exact_bounds(A, config.k, config.p), A


def bound_set(config: ComplexityConfig, system_or_bounds=None) -> BoundSet:
    """Spectral bound functions, the pair table and the stacked-map bound.

    With a system, the spectral bounds are computed exactly from A and the
    mean-estimation bounds are filled in; with bounds only those are None.
    """
    bounds, A = _bounds_of(config, system_or_bounds)
    v = config.variances
    k, p = config.k, config.p
    f1, f2 = f_values(bounds, v, k)
    table = {(r, q): f_pair(bounds, v, r, q) for r, q in config.family.tags()}
    g = g_factor(bounds, k, p)
    fsum = sum(table.values())
    pb = g * g / fsum if fsum > 0 else float("inf")
    Cu = Co = hu = ho = None
    if A is not None:
        Cu, Co, hu, ho = mean_bounds(A, v, k, p)
    return BoundSet(Cu, Co, hu, ho, float(f1), float(f2), float(g), float(pb), table)


# --------------------------------------------------------------------------
# conditions, sample-complexity bounds and the optimal epsilon

def _check_eps(eps: float):
    if not eps > 0:
        raise DomainError("eps = 0 makes (2/eps + 1) undefined; choose eps in (0, 0.5)")


def _log_term(config: ComplexityConfig) -> float:
    """ln(((1 - rho3)/2)^(n/2) * 2 * 5^n / delta), computed in log space."""
    n = config.n
    return (0.5 * n * math.log((1 - config.rho3) / 2) + math.log(2.0) + n * math.log(5.0)
            - math.log(config.delta))


def rhs_concentration(config: ComplexityConfig) -> float:
    """(gamma^2 / 2) ln(4 (2/eps + 1)^n / delta)."""
    _check_eps(config.eps)
    e = config.eps
    return 0.5 * config.gamma ** 2 * (math.log(4.0) + config.n * math.log(2.0 / e + 1.0)
                                      - math.log(config.delta))


def lhs_concentration(config: ComplexityConfig, s2: float, n_slots: int, cvn: float) -> float:
    """min{(1-2e)^2 rho3^2 / (n_slots s2^2 ||C_v||), (1-2e) rho3 / s2}."""
    a = 1 - 2 * config.eps
    t2 = a * config.rho3 / s2
    denom = n_slots * s2 * s2 * cvn
    t1 = a * a * config.rho3 ** 2 / denom if denom > 0 else float("inf")
    return min(t1, t2)


def rhs_min_eig(config: ComplexityConfig) -> float:
    return (32 * config.c_universal * config.kappa ** 2
            / (config.phi ** 2 * (1 - config.rho3)) * _log_term(config))


def l_up_value(config: ComplexityConfig, f2: float) -> float:
    """Pre-ceiling sample-complexity bound (may be < 1 when the log is negative)."""
    if not f2 > 0:
        raise DomainError(f"f2 must be positive, got {f2}")
    return (32 * config.c_universal * config.kappa ** 2
            / ((1 - config.rho3) * config.phi ** 2 * f2) * _log_term(config) + 1.0)


def l_up(config: ComplexityConfig, f2: float) -> int:
    """Number of observations sufficient for the requested accuracy/confidence."""
    if _log_term(config) <= 0:
        raise DomainError(
            f"log term is nonpositive for rho3={config.rho3}, delta={config.delta}: "
            "the bound is vacuous; decrease rho3 or delta")
    return int(math.ceil(l_up_value(config, f2)))


def m_lo(config: ComplexityConfig, f2: float, l_up_count: int) -> float:
    """High-probability lower bound on the model error after l_up_count observations."""
    L = _log_term(config)
    if L <= 0:
        raise DomainError("log term is nonpositive: rho3/delta inconsistent")
    if not (f2 > 0 and l_up_count > 0):
        raise DomainError("m_lo needs f2 > 0 and a positive observation count")
    return math.sqrt(32 * config.c_universal * config.kappa ** 2
                     / (f2 * l_up_count * (1 - config.rho3)) * L)


def _cubic(e: float) -> float:
    return (1 - 2 * e) * (2 + e) * e


# stationary point of the cubic on [0, 1/2): root of 1 - 3e - 3e^2 = 0
EPS_PEAK = (-1.0 + math.sqrt(1.0 + 4.0 / 3.0)) / 2.0
CUBIC_MAX = _cubic(EPS_PEAK)


def epsilon_opt(a: float, b: float, n: int) -> Optional[float]:
    """Smallest root of (1-2e)(2+e)e = n b / (2a) in [0, 1/2), or None if none exists."""
    if not (a > 0 and b >= 0):
        raise DomainError(f"epsilon_opt needs a > 0 and b >= 0, got a={a}, b={b}")
    target = n * b / (2 * a)
    if target == 0:
        return 0.0
    if target > CUBIC_MAX:
        return None
    if target == CUBIC_MAX:
        return EPS_PEAK
    return float(brentq(lambda e: _cubic(e) - target, 0.0, EPS_PEAK, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def phi_hat(config: ComplexityConfig, A_or_bounds, h_over: float, h_under: float) -> float:
    """Error bound on the offset estimate implied by matrix accuracy phi."""
    r1 = config.rho1 + h_over
    r2 = config.rho2 + h_under
    if r1 < 0 or r2 < 0:
        raise DomainError(f"negative radicand in phi_hat ({r1:.3g}, {r2:.3g})")
    n, mu = config.n, config.mu
    ones = np.ones(n)
    if isinstance(A_or_bounds, SpectralBounds):
        drift = abs(mu) * math.sqrt(n) * (1 + A_or_bounds.sigma_max_A)
    else:
        A = _as_matrix(A_or_bounds)
        drift = float(np.linalg.norm(mu * ones - A @ (mu * ones)))
    return (math.sqrt(r1) + math.sqrt(n) * mu) * config.phi + math.sqrt(r2) + drift


def prop1_rhs(config: ComplexityConfig, s2: float, n_slots: int, cvn: float) -> float:
    """Tail bound on ||M^T X X^T M - I|| > rho3 (capped at 1)."""
    _check_eps(config.eps)
    expo = -lhs_concentration(config, s2, n_slots, cvn) / (config.c_universal * config.kappa ** 2)
    log_val = math.log(2.0) + config.n * math.log(2 / config.eps + 1) + expo
    return 1.0 if log_val >= 0 else math.exp(log_val)


@dataclass
class ConditionResult:
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def holds(self) -> bool:
        return self.margin >= 0

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "margin": self.margin, "holds": self.holds}


@dataclass
class ConditionReport:
    exact_concentration: Optional[ConditionResult]  # uses the exact stacked norm
    min_eigenvalue: ConditionResult                 # of the summed second moment
    bound_concentration: ConditionResult            # uses the bound on the stacked norm
    horizon_check: ConditionResult                  # horizon versus l_up

    def items(self):
        return [("exact_concentration", self.exact_concentration),
                ("min_eigenvalue", self.min_eigenvalue),
                ("bound_concentration", self.bound_concentration),
                ("horizon_check", self.horizon_check)]

    @property
    def all_hold(self) -> bool:
        return all(c.holds for _, c in self.items() if c is not None)

    def to_dict(self) -> dict:
        return {name: None if c is None else c.to_dict() for name, c in self.items()}


@dataclass
class FamilyStats:
    """Family-dependent quantities that the conditions need."""

    n_slots: int
    cv_norm: float
    bounds: BoundSet
    lambda_min: Optional[float] = None   # exact, when A is known
    stacked_sq: Optional[float] = None   # exact, when A is known


def family_stats(config: ComplexityConfig, system_or_bounds=None) -> FamilyStats:
    bs = bound_set(config, system_or_bounds)
    stats = FamilyStats(n_count(config.family), cv_norm(config.family, config.variances), bs)
    if system_or_bounds is not None and not isinstance(system_or_bounds, SpectralBounds):
        ms = gamma_and_M(system_or_bounds, config.variances, config.family)
        stats.lambda_min = ms.lambda_min
        stats.stacked_sq = stacked_norm_sq(system_or_bounds, ms.M, config.family)
    return stats


def conditions_from_stats(config: ComplexityConfig, stats: FamilyStats) -> ConditionReport:
    rhs = rhs_concentration(config)
    c29 = None
    if stats.stacked_sq is not None:
        c29 = ConditionResult(lhs_concentration(config, stats.stacked_sq, stats.n_slots,
                                                stats.cv_norm), rhs)
    c34 = ConditionResult(lhs_concentration(config, stats.bounds.p_bound, stats.n_slots,
                                            stats.cv_norm), rhs)
    lam = stats.lambda_min if stats.lambda_min is not None else stats.bounds.f_sum
    c30 = ConditionResult(lam, rhs_min_eig(config))
    c41 = ConditionResult(float(config.p - config.k + 1), l_up_value(config, stats.bounds.f2))
    return ConditionReport(c29, c30, c34, c41)


def check_conditions(config: ComplexityConfig, system_or_bounds=None) -> ConditionReport:
    """Evaluate the four sufficient conditions with signed margins.

    With a known system the exact second moment and stacked norm are used;
    with bounds only the exact concentration condition is not evaluated and
    the minimum eigenvalue is replaced by the sum of the pair lower bounds.
    """
    _check_eps(config.eps)
    return conditions_from_stats(config, family_stats(config, system_or_bounds))


def bound_report(config: ComplexityConfig, system_or_bounds=None) -> dict:
    """JSON-ready summary used by the CLI."""
    stats = family_stats(config, system_or_bounds)
    bs = stats.bounds
    rep = conditions_from_stats(config, stats)
    out = {
        "n_count": stats.n_slots,
        "cv_norm": stats.cv_norm,
        "f1": bs.f1, "f2": bs.f2, "g_factor": bs.g_factor, "p_bound": bs.p_bound,
        "f_sum": bs.f_sum,
        "conditions": rep.to_dict(),
        "all_hold": rep.all_hold,
    }
    if stats.lambda_min is not None:
        out["lambda_min_gamma"] = stats.lambda_min
        out["stacked_norm_sq"] = stats.stacked_sq
    try:
        lu = l_up(config, bs.f2)
        out["l_up"] = lu
        out["m_lo"] = m_lo(config, bs.f2, lu)
    except DomainError as exc:
        out["l_up"] = None
        out["l_up_note"] = str(exc)
    if bs.h_over is not None:
        out["h_over"], out["h_under"] = bs.h_over, bs.h_under
        A = system_or_bounds if not isinstance(system_or_bounds, SpectralBounds) else None
        out["phi_hat"] = phi_hat(config, A, bs.h_over, bs.h_under)
    a = config.rho3 ** 2 / (stats.n_slots * bs.p_bound ** 2 * stats.cv_norm) if stats.cv_norm > 0 else None
    if a:
        out["eps_opt"] = epsilon_opt(a, config.gamma ** 2 / 2, config.n)
    return out
