"""Choose which differenced pairs feed the estimator.

The score of a set of pairs is the left side of the bounds-only
concentration condition,

    min{ (1-2e)^2 rho3^2 / (n_slots * pb^2 * ||C_v||),  (1-2e) rho3 / pb },

with pb = g^2 / sum of pair lower bounds. It needs spectral bounds on A,
never A itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels
from .complexity import (ComplexityConfig, SpectralBounds, _bounds_of, f_pair, g_factor)
from .data import IndexFamily, Tag, all_tags, chain_family
from .errors import BudgetError, ConfigError, DomainError


@dataclass
class SelectionResult:
    chosen_tags: List[Tag]
    objective_value: float
    strategy: str
    evaluations: int
    k: int
    p: int
    trace: List[dict] = field(default_factory=list)

    @property
    def family(self) -> IndexFamily:
        return IndexFamily.from_tags(self.k, self.p, self.chosen_tags)

    def to_dict(self) -> dict:
        return {"chosen_tags": [list(t) for t in self.chosen_tags],
                "objective_value": self.objective_value, "strategy": self.strategy,
                "evaluations": self.evaluations, "k": self.k, "p": self.p, "trace": self.trace}


class _Scorer:
    """Evaluates the score of tag sets on a fixed window [k, p]."""

    def __init__(self, config: ComplexityConfig, k: int, p: int, bounds: SpectralBounds):
        self.k, self.p = k, p
        v = config.variances
        self.v = v
        self.a = 1 - 2 * config.eps
        self.rho3 = config.rho3
        self.g = g_factor(bounds, k, p)
        self.bounds = bounds
        self.d = np.sqrt(np.concatenate([[v.sigma_i2, v.sigma_a2], np.full(p, v.sigma_o2),
                                         np.full(p, v.sigma_p2)]))
        self.evaluations = 0

    def tag_gram(self, tag: Tag) -> np.ndarray:
        ms = np.array([tag[0]], dtype=np.int64)
        qs = np.array([tag[1]], dtype=np.int64)
        return _kernels.loading_gram(ms, qs, self.p)

    def score_parts(self, G: np.ndarray, fsum: float, slots: int) -> float:
        self.evaluations += 1
        if fsum <= 0:
            return 0.0
        pb = self.g * self.g / fsum
        K = self.d[:, None] * G * self.d[None, :]
        cvn = max(float(np.linalg.eigvalsh(K)[-1]), 0.0)
        t2 = self.a * self.rho3 / pb
        denom = slots * pb * pb * cvn
        t1 = self.a * self.a * self.rho3 ** 2 / denom if denom > 0 else float("inf")
        return min(t1, t2)

    def f(self, tag: Tag) -> float:
        return f_pair(self.bounds, self.v, tag[0], tag[1])

    def score(self, tags: Sequence[Tag]) -> float:
        if not tags:
            raise DomainError("objective needs a nonempty set of pairs")
        ms = np.array([t[0] for t in tags], dtype=np.int64)
        qs = np.array([t[1] for t in tags], dtype=np.int64)
        G = _kernels.loading_gram(ms, qs, self.p)
        return self.score_parts(G, sum(self.f(t) for t in tags), sum(q + 1 for _, q in tags))


def _validate_tags(tags: Sequence[Tag], k: int, p: int) -> List[Tag]:
    out = sorted({(int(m), int(q)) for m, q in tags})
    IndexFamily.from_tags(k, p, out)  # raises on bad ordering or range
    return out


def objective(tags: Sequence[Tag], config: ComplexityConfig, system_or_bounds=None) -> float:
    """Score of the family induced by ``tags`` on the window [config.k, config.p]."""
    tags = _validate_tags(tags, config.k, config.p)
    if not tags:
        raise DomainError("objective needs a nonempty set of pairs")
    bounds, _ = _bounds_of(config, system_or_bounds)
    return _Scorer(config, config.k, config.p, bounds).score(tags)


def _window_config(config: ComplexityConfig, k: int, p: int) -> ComplexityConfig:
    return config.replace(k=k, p=p, family=chain_family(k, p))


def select(k: int, p: int, config: ComplexityConfig, system_or_bounds=None,
           strategy: str = "greedy", pool_cap: int = 12,
           candidate_cap: Optional[int] = None, max_steps: Optional[int] = None) -> SelectionResult:
    """Pick pairs from the pool {(r, q): k <= r < q <= p}.

    exhaustive: best nonempty subset (pool size limited by ``pool_cap``).
    greedy: start from the consecutive pairs and add the single pair with
    the largest improvement until none improves. ``candidate_cap`` limits
    the candidates to the first pairs in (gap, m) order and ``max_steps``
    bounds the number of additions; both default to no limit.
    """
    if not 1 <= k < p:
        raise ConfigError(f"selection needs 1 <= k < p, got k={k}, p={p}")
    if strategy not in ("exhaustive", "greedy"):
        raise ConfigError(f"strategy must be 'exhaustive' or 'greedy', got {strategy!r}")
    cfg = _window_config(config, k, p)
    bounds, _ = _bounds_of(cfg, system_or_bounds)
    sc = _Scorer(cfg, k, p, bounds)
    pool = all_tags(k, p)
    if strategy == "exhaustive":
        return _exhaustive(sc, pool, pool_cap)
    return _greedy(sc, pool, candidate_cap, max_steps)


def _exhaustive(sc: _Scorer, pool: List[Tag], pool_cap: int) -> SelectionResult:
    if len(pool) > pool_cap:
        raise BudgetError(f"exhaustive search over {len(pool)} pairs exceeds pool_cap={pool_cap}")
    grams = [sc.tag_gram(t) for t in pool]
    fs = [sc.f(t) for t in pool]
    best, best_set = -np.inf, None
    # subsets by size, then lexicographically, so ties resolve to the smallest set
    for size in range(1, len(pool) + 1):
        for combo in combinations(range(len(pool)), size):
            G = sum((grams[i] for i in combo[1:]), grams[combo[0]].copy())
            val = sc.score_parts(G, sum(fs[i] for i in combo), sum(pool[i][1] + 1 for i in combo))
            if val > best:
                best, best_set = val, combo
    chosen = [pool[i] for i in best_set]
    return SelectionResult(chosen, sc.score(chosen), "exhaustive", sc.evaluations - 1,
                           sc.k, sc.p)


def _greedy(sc: _Scorer, pool: List[Tag], candidate_cap, max_steps) -> SelectionResult:
    chosen = [(m, m + 1) for m in range(sc.k, sc.p)]
    G = sum((sc.tag_gram(t) for t in chosen[1:]), sc.tag_gram(chosen[0]))
    fsum = sum(sc.f(t) for t in chosen)
    slots = sum(q + 1 for _, q in chosen)
    current = sc.score_parts(G, fsum, slots)
    trace = [{"step": 0, "added": None, "objective": current}]
    taken = set(chosen)
    cands = [t for t in pool if t not in taken]
    if candidate_cap is not None:
        cands = sorted(cands, key=lambda t: (t[1] - t[0], t[0]))[:candidate_cap]
    cands.sort()
    step = 0
    while cands and (max_steps is None or step < max_steps):
        best_val, best_i, best_G = current, None, None
        for i, t in enumerate(cands):
            Gt = G + sc.tag_gram(t)
            val = sc.score_parts(Gt, fsum + sc.f(t), slots + t[1] + 1)
            if val > best_val:
                best_val, best_i, best_G = val, i, Gt
        if best_i is None:
            break
        t = cands.pop(best_i)
        chosen.append(t)
        G, fsum, slots, current = best_G, fsum + sc.f(t), slots + t[1] + 1, best_val
        step += 1
        trace.append({"step": step, "added": list(t), "objective": current})
    chosen.sort()
    evaluations = sc.evaluations
    return SelectionResult(chosen, sc.score(chosen), "greedy", evaluations, sc.k, sc.p, trace)
