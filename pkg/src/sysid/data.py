"""Index families, differenced observations and the data matrices.

A tag (m, q) with m < q names the difference r(m) - r(q). An index family
on [k, p] assigns to each m in [k, p-1] a set of partners q in (m, p].
Columns of the data matrices follow (m ascending, q ascending); the shifted
matrix holds r(m+1) - r(q+1), so a family on [k, p] reads r(k..p+1).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (ConfigError, HorizonError, IndexRangeError, OrderingError,
                     SchemaError)
from .simulation import Trajectory

Tag = Tuple[int, int]


@dataclass(frozen=True)
class IndexFamily:
    k: int
    p: int
    sets: Dict[int, Tuple[int, ...]]

    def __post_init__(self):
        k, p = int(self.k), int(self.p)
        if k < 1 or p <= k:
            raise ConfigError(f"index family needs 1 <= k < p, got k={k}, p={p}")
        clean = {}
        for m, qs in self.sets.items():
            m = int(m)
            if not k <= m <= p - 1:
                raise IndexRangeError(f"family key m={m} outside [{k}, {p - 1}]")
            qs = tuple(sorted({int(q) for q in qs}))
            for q in qs:
                if q <= m:
                    raise OrderingError(f"tag ({m}, {q}) violates m < q")
                if q > p:
                    raise IndexRangeError(f"tag ({m}, {q}) exceeds horizon p={p}")
            if qs:
                clean[m] = qs
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sets", dict(sorted(clean.items())))

    @classmethod
    def from_tags(cls, k: int, p: int, tags: Iterable[Tag]) -> "IndexFamily":
        sets: Dict[int, set] = {}
        for m, q in tags:
            if m >= q:
                raise OrderingError(f"tag ({m}, {q}) violates m < q")
            sets.setdefault(int(m), set()).add(int(q))
        return cls(k, p, {m: tuple(v) for m, v in sets.items()})

    def tags(self) -> List[Tag]:
        return [(m, q) for m, qs in self.sets.items() for q in qs]

    def __len__(self) -> int:
        return sum(len(v) for v in self.sets.values())

    def to_dict(self) -> dict:
        return {"k": self.k, "p": self.p,
                "sets": {str(m): list(qs) for m, qs in self.sets.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "IndexFamily":
        try:
            return cls(int(d["k"]), int(d["p"]),
                       {int(m): tuple(qs) for m, qs in d["sets"].items()})
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SchemaError(f"malformed index family: {exc}") from None


def full_family(k: int, p: int) -> IndexFamily:
    """Every pair k <= m < q <= p."""
    return IndexFamily(k, p, {m: tuple(range(m + 1, p + 1)) for m in range(k, p)})


def chain_family(k: int, p: int) -> IndexFamily:
    """Consecutive pairs (m, m+1)."""
    return IndexFamily(k, p, {m: (m + 1,) for m in range(k, p)})


def star_family(k: int, p: int) -> IndexFamily:
    """Pairs (k, q): every observation differenced against r(k)."""
    return IndexFamily(k, p, {k: tuple(range(k + 1, p + 1))})


def all_tags(k: int, p: int) -> List[Tag]:
    return full_family(k, p).tags()


def resolve_family(spec, k: Optional[int] = None, p: Optional[int] = None) -> IndexFamily:
    """Family from a preset name ('full', 'chain', 'star'), a dict, or a family."""
    if isinstance(spec, IndexFamily):
        return spec
    if isinstance(spec, dict):
        return IndexFamily.from_dict(spec)
    presets = {"full": full_family, "chain": chain_family, "star": star_family}
    if spec not in presets:
        raise ConfigError(f"unknown family {spec!r}; use one of {sorted(presets)} or a JSON object")
    if k is None or p is None:
        raise ConfigError(f"family preset {spec!r} needs k and p")
    return presets[spec](int(k), int(p))


def difference(traj: Trajectory, m: int, q: int) -> np.ndarray:
    """r(m) - r(q), 1-based times."""
    if m >= q:
        raise OrderingError(f"difference needs m < q, got ({m}, {q})")
    if m < 1 or q > traj.length:
        raise IndexRangeError(f"pair ({m}, {q}) outside trajectory of length {traj.length}")
    return traj.r[m - 1] - traj.r[q - 1]


@dataclass
class DataMatrices:
    X_base: np.ndarray   # n x N, columns r(m) - r(q)
    X_shift: np.ndarray  # n x N, columns r(m+1) - r(q+1)
    tags: List[Tag]


def build_matrices(traj: Trajectory, family: IndexFamily) -> DataMatrices:
    if traj.length < family.p + 1:
        raise HorizonError(
            f"family on [{family.k}, {family.p}] needs r({family.k}..{family.p + 1}) "
            f"but the trajectory has length {traj.length}")
    tags = family.tags()
    if not tags:
        raise ConfigError("index family is empty")
    m = np.array([t[0] for t in tags]) - 1
    q = np.array([t[1] for t in tags]) - 1
    r = traj.r
    return DataMatrices(X_base=(r[m] - r[q]).T, X_shift=(r[m + 1] - r[q + 1]).T, tags=tags)


def rank_tolerance(M: np.ndarray, sv: Optional[np.ndarray] = None) -> float:
    """Shared numeric-rank threshold max(rows, cols) * eps * sigma_max."""
    if sv is None:
        sv = np.linalg.svd(M, compute_uv=False)
    smax = sv[0] if sv.size else 0.0
    return max(M.shape) * np.finfo(float).eps * smax


def numeric_rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > rank_tolerance(M, sv)))


@dataclass
class Classification:
    basis: List[Tag]
    redundant: List[Tag]


def _incidence(k: int, p: int, tag: Tag) -> np.ndarray:
    v = np.zeros(p - k + 1)
    v[tag[0] - k] = 1.0
    v[tag[1] - k] = -1.0
    return v


def classify(traj: Optional[Trajectory], k: int, p: int, candidates: Sequence[Tag],
             mode: str = "numeric") -> Classification:
    """Split candidate tags into basis and redundant data.

    Scans tags in (m, q) order and keeps one whenever it raises the rank of
    the kept set. ``numeric`` judges rank on the observed difference
    vectors; ``formal`` judges it on the difference of time indicators, so
    the basis is a spanning forest of the time points (independent of data).
    """
    if mode not in ("numeric", "formal"):
        raise ConfigError(f"classify mode must be 'numeric' or 'formal', got {mode!r}")
    tags = sorted({(int(m), int(q)) for m, q in candidates})
    for m, q in tags:
        if m >= q:
            raise OrderingError(f"tag ({m}, {q}) violates m < q")
        if m < k or q > p:
            raise IndexRangeError(f"tag ({m}, {q}) outside [{k}, {p}]")
    if mode == "numeric" and traj is None:
        raise ConfigError("numeric classification needs a trajectory")
    basis: List[Tag] = []
    kept: List[np.ndarray] = []
    rank = 0
    for tag in tags:
        if rank >= p - k:
            break
        v = difference(traj, *tag) if mode == "numeric" else _incidence(k, p, tag)
        trial = np.column_stack(kept + [v])
        r = numeric_rank(trial)
        if r > rank:
            basis.append(tag)
            kept.append(v)
            rank = r
    basis_set = set(basis)
    return Classification(basis=basis, redundant=[t for t in tags if t not in basis_set])


def family_to_json(family: IndexFamily, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(family.to_json() + "\n")


def family_from_json(path: str) -> IndexFamily:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return IndexFamily.from_dict(d)
