"""Stochastic linear system with offset, and its Monte Carlo simulator.

    x(t+1) = A x(t) + a + f(t),    r(t) = x(t) + w(t),    t = 1, 2, ...

Every trial draws one block of uniforms from its own generator and maps it
through the distribution specs, in the fixed order x(1), a, f(1..p),
w(1..p). Trial generators come from ``trial_seed(master, t)``, so a batch
is reproducible no matter how trials are split across workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from . import _kernels
from .errors import ConfigError, SimulationOverflowError

OVERFLOW_LIMIT = 1e150
_KINDS = ("uniform", "gaussian", "constant")


@dataclass(frozen=True)
class DistributionSpec:
    """Per-coordinate i.i.d. distribution.

    uniform: params (lo, hi); gaussian: (mean, std); constant: (value,).
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown distribution kind {self.kind!r}; expected one of {_KINDS}")
        params = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", params)
        need = 1 if self.kind == "constant" else 2
        if len(params) != need:
            raise ConfigError(f"{self.kind} distribution takes {need} parameter(s), got {len(params)}")
        if not all(np.isfinite(params)):
            raise ConfigError(f"{self.kind} distribution has non-finite parameters {params}")
        if self.kind == "uniform" and not params[0] < params[1]:
            raise ConfigError(f"uniform distribution needs lo < hi, got {params}")
        if self.kind == "gaussian" and params[1] < 0:
            raise ConfigError(f"gaussian distribution needs std >= 0, got {params[1]}")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "DistributionSpec":
        return cls("uniform", (lo, hi))

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "DistributionSpec":
        return cls("gaussian", (mean, std))

    @classmethod
    def constant(cls, value: float) -> "DistributionSpec":
        return cls("constant", (value,))

    @property
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.params[0] + self.params[1])
        return self.params[0]

    @property
    def variance(self) -> float:
        if self.kind == "uniform":
            return (self.params[1] - self.params[0]) ** 2 / 12.0
        if self.kind == "gaussian":
            return self.params[1] ** 2
        return 0.0

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to samples of this distribution."""
        if self.kind == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * u
        if self.kind == "gaussian":
            # shift by half an ulp of the 53-bit grid so 0 maps to a finite value
            return self.params[0] + self.params[1] * ndtri(u + 2.0 ** -54)
        return np.full_like(u, self.params[0])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d) -> "DistributionSpec":
        if not isinstance(d, dict) or "kind" not in d or "params" not in d:
            raise ConfigError(f"distribution must be an object with 'kind' and 'params', got {d!r}")
        return cls(str(d["kind"]), tuple(d["params"]))


@dataclass(frozen=True)
class NoiseVariances:
    """Scalar second-order statistics used by the complexity bounds."""

    sigma_p2: float  # process noise variance
    sigma_o2: float  # observation noise variance
    sigma_i2: float  # initial state variance
    sigma_a2: float = 0.0  # offset variance (0 for a fixed offset)
    mu: float = 0.0  # initial state mean

    def __post_init__(self):
        for name in ("sigma_p2", "sigma_o2", "sigma_i2", "sigma_a2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a finite non-negative number, got {v}")


@dataclass(frozen=True)
class NoiseModel:
    """Distributions of the process noise f, observation noise w, x(1) and a.

    ``offset`` is either None (use the system's fixed offset), or a
    DistributionSpec drawn once per trial. ``strict`` requires zero-mean
    process noise; switch it off to simulate e.g. constant nonzero f.
    """

    process: DistributionSpec
    observation: DistributionSpec
    initial: DistributionSpec
    offset: Optional[DistributionSpec] = None
    strict: bool = True

    def __post_init__(self):
        if self.strict and abs(self.process.mean) > 1e-12:
            raise ConfigError(
                f"process noise must have zero mean, got mean {self.process.mean}; "
                "pass strict=False to allow it")

    def variances(self) -> NoiseVariances:
        return NoiseVariances(
            sigma_p2=self.process.variance,
            sigma_o2=self.observation.variance,
            sigma_i2=self.initial.variance,
            sigma_a2=0.0 if self.offset is None else self.offset.variance,
            mu=self.initial.mean,
        )

    def to_dict(self) -> dict:
        d = {"process": self.process.to_dict(), "observation": self.observation.to_dict(),
             "initial": self.initial.to_dict(), "strict": self.strict}
        if self.offset is not None:
            d["offset"] = self.offset.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        if "preset" in d:
            return noise_preset(d["preset"])
        try:
            off = d.get("offset")
            return cls(
                process=DistributionSpec.from_dict(d["process"]),
                observation=DistributionSpec.from_dict(d["observation"]),
                initial=DistributionSpec.from_dict(d["initial"]),
                offset=None if off is None else DistributionSpec.from_dict(off),
                strict=bool(d.get("strict", True)),
            )
        except KeyError as exc:
            raise ConfigError(f"noise model is missing field {exc}") from None


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    a: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
            raise ConfigError(f"A must be a nonempty square matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ConfigError("A has non-finite entries")
        object.__setattr__(self, "A", A)
        if self.a is not None:
            a = np.array(self.a, dtype=float).reshape(-1)
            if a.shape != (A.shape[0],):
                raise ConfigError(f"offset a must have length {A.shape[0]}, got {a.shape}")
            object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def offset_or_zero(self) -> np.ndarray:
        return np.zeros(self.n) if self.a is None else self.a

    def to_dict(self) -> dict:
        d = {"A": self.A.tolist()}
        if self.a is not None:
            d["a"] = self.a.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSystem":
        if "preset" in d:
            return system_preset(d["preset"])
        if "A" not in d:
            raise ConfigError("system needs 'A' or 'preset'")
        return cls(np.asarray(d["A"], dtype=float), None if d.get("a") is None else d["a"])


@dataclass
class Trajectory:
    """Observations r(1..p); states and noise are present when recorded.

    Row t-1 of every array holds time t.
    """

    r: np.ndarray
    x: Optional[np.ndarray] = None
    f: Optional[np.ndarray] = None
    w: Optional[np.ndarray] = None
    a: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return self.r.shape[0]

    @property
    def n(self) -> int:
        return self.r.shape[1]

    @property
    def has_noise(self) -> bool:
        return self.f is not None and self.w is not None


@dataclass
class TrajectoryBatch:
    """Stacked trials; arrays have a leading trial axis."""

    r: np.ndarray
    x: np.ndarray
    f: np.ndarray
    w: np.ndarray
    a: np.ndarray
    seeds: list = field(default_factory=list)

    def __len__(self) -> int:
        return self.r.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(r=self.r[i], x=self.x[i], f=self.f[i], w=self.w[i], a=self.a[i])


SeedLike = Union[int, np.random.SeedSequence, None]


def trial_seed(master_seed: int, trial: int) -> np.random.SeedSequence:
    """Seed of trial ``trial``; depends only on the master seed and the index."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial),))


def _draw(system: LinearSystem, noise: NoiseModel, p: int, seed: SeedLike):
    n = system.n
    if noise.offset is not None and system.a is not None:
        raise ConfigError("give the offset either as system.a or as a noise distribution, not both")
    u = np.random.default_rng(seed).random(2 * n + 2 * p * n)
    x1 = noise.initial.transform(u[:n])
    if noise.offset is not None:
        a = noise.offset.transform(u[n:2 * n])
    else:
        a = system.offset_or_zero().copy()
    body = u[2 * n:].reshape(2, p, n)
    return x1, a, noise.process.transform(body[0]), noise.observation.transform(body[1])


def _check_horizon(p: int):
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ConfigError(f"horizon p must be a positive integer, got {p!r}")


def simulate_batch(system: LinearSystem, noise: NoiseModel, p: int,
                   seeds: Sequence[SeedLike]) -> TrajectoryBatch:
    """Simulate one trajectory of length p per seed."""
    _check_horizon(p)
    draws = [_draw(system, noise, p, s) for s in seeds]
    n = system.n
    T = len(draws)
    x1 = np.array([d[0] for d in draws]).reshape(T, n)
    a = np.array([d[1] for d in draws]).reshape(T, n)
    f = np.array([d[2] for d in draws]).reshape(T, p, n)
    w = np.array([d[3] for d in draws]).reshape(T, p, n)
    x, bad = _kernels.propagate(system.A, a, x1, f, OVERFLOW_LIMIT)
    if bad:
        raise SimulationOverflowError(bad, OVERFLOW_LIMIT)
    return TrajectoryBatch(r=x + w, x=x, f=f, w=w, a=a, seeds=list(seeds))


def simulate_trials(system: LinearSystem, noise: NoiseModel, p: int, master_seed: int,
                    trials: int, start: int = 0) -> TrajectoryBatch:
    """Trials ``start .. start+trials-1`` of the stream rooted at ``master_seed``."""
    return simulate_batch(system, noise, p, [trial_seed(master_seed, t)
                                             for t in range(start, start + trials)])


def simulate(system: LinearSystem, noise: NoiseModel, p: int, seed: SeedLike = None,
             record_noise: bool = True) -> Trajectory:
    """Simulate r(1..p). f is drawn for all p rows so recorded arrays stay aligned."""
    traj = simulate_batch(system, noise, p, [seed]).trajectory(0)
    if not record_noise:
        return Trajectory(r=traj.r)
    return traj


def empirical_diff_moment(system: LinearSystem, noise: NoiseModel, k: int, m: int,
                          trials: int, master_seed: int = 0, chunk: int = 20000):
    """Monte Carlo mean and standard error of (r(k) - r(m))(r(k) - r(m))^T."""
    if not 1 <= k < m:
        raise ConfigError(f"need 1 <= k < m, got k={k}, m={m}")
    n = system.n
    s1 = np.zeros((n, n))
    s2 = np.zeros((n, n))
    for start in range(0, trials, chunk):
        b = simulate_trials(system, noise, m, master_seed, min(chunk, trials - start), start)
        d = b.r[:, k - 1] - b.r[:, m - 1]
        prod = d[:, :, None] * d[:, None, :]
        s1 += prod.sum(axis=0)
        s2 += (prod ** 2).sum(axis=0)
    mean = s1 / trials
    var = np.maximum(s2 / trials - mean ** 2, 0.0) * trials / max(trials - 1, 1)
    return mean, np.sqrt(var / trials)


# --------------------------------------------------------------------------
# presets used in the numerical study

BASE_MATRIX = np.array([[1.0, 0.0, 0.0, 1.0],
                        [0.0, 1.0, 0.0, 1.0],
                        [1.0, 0.0, 1.0, 0.0],
                        [1.0, 0.0, 1.0, 1.0]])

_SYSTEM_ALPHA = {"bias": 0.5, "redundancy": 1.0, "horizon": 0.44, "horizon_alt": 0.44}

_U = DistributionSpec.uniform
_NOISE = {
    "bias": dict(process=_U(-1, 1), observation=_U(0, 1), initial=_U(-1, 1)),
    "redundancy": dict(process=_U(-10, 10), observation=_U(0, 2), initial=_U(-1, 1)),
    # the two readings of the last study's noise specification
    "horizon": dict(process=_U(-0.05, 0.05), observation=_U(0, 1), initial=_U(-0.05, 0.05)),
    "horizon_alt": dict(process=_U(-0.5, 0.5), observation=_U(-0.05, 0.05),
                        initial=_U(-0.05, 0.05)),
}


def scaled_system(alpha: float) -> LinearSystem:
    return LinearSystem(alpha * BASE_MATRIX)


def system_preset(name: str) -> LinearSystem:
    if name not in _SYSTEM_ALPHA:
        raise ConfigError(f"unknown system preset {name!r}; known: {sorted(_SYSTEM_ALPHA)}")
    return scaled_system(_SYSTEM_ALPHA[name])


def noise_preset(name: str) -> NoiseModel:
    if name not in _NOISE:
        raise ConfigError(f"unknown noise preset {name!r}; known: {sorted(_NOISE)}")
    return NoiseModel(**_NOISE[name])


PRESET_NAMES = tuple(sorted(_NOISE))
