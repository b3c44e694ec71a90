"""Accuracy/confidence verification loop.

Each iteration computes the observation bound l_up, selects data on the
window [k, k + l_up - 1], and evaluates the sufficient conditions. When the
concentration condition fails, a (rho3, eps) grid is searched for a point
where every condition holds; when none exists, phi or delta is relaxed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .complexity import (ComplexityConfig, SpectralBounds, _as_matrix, _log_term,
                         conditions_from_stats, epsilon_opt, exact_bounds,
                         f_values, family_stats, l_up_value, norm_only_bounds)
from .data import chain_family
from .errors import BudgetError, ConfigError
from .selection import SelectionResult, select

RHO_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
EPS_GRID = tuple(round(0.01 + 0.02 * i, 2) for i in range(25))


@dataclass
class PacRequest:
    phi: float
    delta: float
    rho3: float = 0.5
    eps: float = 0.25
    k: int = 1

    def __post_init__(self):
        if not self.phi > 0:
            raise ConfigError(f"phi must be positive, got {self.phi}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 < self.rho3 < 1:
            raise ConfigError(f"rho3 must lie in (0, 1), got {self.rho3}")
        if not 0 < self.eps < 0.5:
            raise ConfigError(f"eps must lie in (0, 0.5), got {self.eps}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass
class PacLimits:
    max_iter: int = 30
    phi_factor: float = 1.25
    delta_factor: float = 1.15
    delta_cap: float = 0.99
    relax_order: Tuple[str, ...] = ("phi", "delta")
    max_horizon: int = 400
    strategy: str = "greedy"
    candidate_cap: Optional[int] = 20
    max_steps: Optional[int] = 5

    def __post_init__(self):
        if self.max_iter < 1 or self.max_horizon < 2:
            raise ConfigError("max_iter and max_horizon must be positive")
        if not (self.phi_factor > 1 and self.delta_factor > 1):
            raise ConfigError("relax factors must exceed 1")
        if not 0 < self.delta_cap < 1:
            raise ConfigError("delta_cap must lie in (0, 1)")
        if not self.relax_order or set(self.relax_order) - {"phi", "delta"}:
            raise ConfigError("relax_order must list 'phi' and/or 'delta'")


@dataclass
class PacOutcome:
    status: str
    final_phi: float
    final_delta: float
    final_rho3: float
    final_eps: float
    final_l_up: Optional[int]
    selection: Optional[SelectionResult]
    condition_report: Optional[dict]
    iterations: int
    trace: List[dict] = field(default_factory=list)

    @property
    def horizon(self) -> Optional[int]:
        """Terminal index p = k + l_up - 1 of the final window."""
        return None if self.selection is None else self.selection.p

    def to_dict(self) -> dict:
        return {
            "status": self.status, "final_phi": self.final_phi, "final_delta": self.final_delta,
            "final_rho3": self.final_rho3, "final_eps": self.final_eps,
            "final_l_up": self.final_l_up, "horizon": self.horizon,
            "selection": None if self.selection is None else self.selection.to_dict(),
            "condition_report": self.condition_report, "iterations": self.iterations,
            "trace": self.trace,
        }


class BoundsProvider:
    """Spectral bounds per window, from a known A, fixed bounds or a callable."""

    def __init__(self, source, config: Optional[ComplexityConfig] = None):
        self.A = None
        if isinstance(source, SpectralBounds):
            self._fn = lambda k, p: source
        elif source is None:
            if config is None or config.bounds is None:
                raise ConfigError("no spectral bounds: pass a system, bounds or a provider")
            fixed = config.bounds
            self._fn = lambda k, p: fixed
        elif callable(source):
            self._fn = source
        else:
            A = _as_matrix(source)
            self.A = A
            self._fn = lambda k, p: exact_bounds(A, k, p)

    @classmethod
    def norm_only(cls, sigma_max_A: float) -> "BoundsProvider":
        return cls(lambda k, p: norm_only_bounds(sigma_max_A, k, p))

    def __call__(self, k: int, p: int) -> SpectralBounds:
        return self._fn(k, p)

    def system_or_bounds(self, k: int, p: int):
        return self.A if self.A is not None else self(k, p)


def epsilon_rho_grid(config: ComplexityConfig, system_or_bounds=None, stats=None) -> List[Tuple[float, float]]:
    """Candidate (rho3, eps) pairs: optimal-eps points first, then the fixed grid.

    The fixed grid is rho3 in {0.05, ..., 0.95} x eps in {0.01, 0.03, ..., 0.49}.
    For each rho3 the root eps_opt of the concentration trade-off is
    prepended when it exists (it needs the family statistics).
    """
    grid = [(r, e) for r in RHO_GRID for e in EPS_GRID]
    if stats is None and system_or_bounds is None and config.bounds is None:
        return grid
    if stats is None:
        stats = family_stats(config, system_or_bounds)
    denom = stats.n_slots * stats.bounds.p_bound ** 2 * stats.cv_norm
    head = []
    if denom > 0 and np.isfinite(denom):
        b = config.gamma ** 2 / 2
        for r in RHO_GRID:
            e = epsilon_opt(r * r / denom, b, config.n)
            if e is not None and 0 < e < 0.5:
                head.append((r, e))
    return head + grid


def solve_rho3_for_l_up(config: ComplexityConfig, f2: float, target: float) -> List[float]:
    """All rho3 in (0, 1) at which the pre-ceiling l_up equals ``target``.

    As a function of u = 1 - rho3 the bound is proportional to L(u)/u, which
    rises while L > n/2 and then falls to zero where L = 0, so there are at
    most two roots.
    """
    def g(r):
        return l_up_value(config.replace(rho3=r), f2) - target

    n = config.n
    # L(u) = (n/2) ln u + C; zero at u0, peak of L/u at L = n/2
    C = _log_term(config.replace(rho3=0.5)) - 0.5 * n * math.log(0.5)
    u_zero = math.exp(-2 * C / n)
    u_peak = math.exp(1 - 2 * C / n)
    r_zero = 1 - u_zero if u_zero < 1 else 0.0
    r_peak = min(max(1 - u_peak, 0.0), r_zero)
    lo_edge, hi_edge = 1e-12, 1 - 1e-12
    roots = []
    segments = [(lo_edge, r_peak), (r_peak, min(r_zero, hi_edge))]
    for a, b in segments:
        if b <= a:
            continue
        ga, gb = g(a), g(b)
        if ga == 0:
            roots.append(a)
        elif ga * gb < 0:
            roots.append(float(brentq(g, a, b, xtol=1e-14)))
    return sorted(set(roots))


def _window_config(base: ComplexityConfig, req: PacRequest, p: int, family=None) -> ComplexityConfig:
    return base.replace(k=req.k, p=p, family=family or chain_family(req.k, p),
                        rho3=req.rho3, eps=req.eps, phi=req.phi, delta=req.delta, bounds=None)


def _self_consistent_l_up(base, req, provider, limits) -> Tuple[Optional[int], Optional[str]]:
    """Fixed point of l_up -> p = k + l_up - 1 -> bounds on [k, p] -> l_up."""
    k = req.k
    p = k + 1
    seen = set()
    for _ in range(limits.max_horizon + 2):
        cfg = _window_config(base, req, p)
        _, f2 = f_values(provider(k, p), cfg.variances, k)
        if _log_term(cfg) <= 0:
            # the bound is vacuous, any window with one pair satisfies it
            lu = 2
        else:
            lu = max(int(math.ceil(l_up_value(cfg, f2))), 2)
        new_p = k + lu - 1
        if new_p > limits.max_horizon:
            return lu, "over_budget"
        if new_p == p or new_p in seen:
            return lu, None
        seen.add(p)
        p = max(new_p, p)
    return None, "no_fixed_point"


def _relax(req: PacRequest, limits: PacLimits, count: int) -> Tuple[PacRequest, str]:
    order = limits.relax_order
    which = order[count % len(order)]
    if which == "delta" and req.delta >= limits.delta_cap:
        which = "phi" if "phi" in order else "delta"
    if which == "phi":
        return PacRequest(req.phi * limits.phi_factor, req.delta, req.rho3, req.eps, req.k), "relax_phi"
    d = min(req.delta * limits.delta_factor, limits.delta_cap)
    return PacRequest(req.phi, d, req.rho3, req.eps, req.k), "relax_delta"


def _margins(report) -> dict:
    return {name: None if c is None else c.margin for name, c in report.items()}


def run_pac(request: PacRequest, config: ComplexityConfig, system_or_bounds=None,
            limits: Optional[PacLimits] = None) -> PacOutcome:
    limits = limits or PacLimits()
    provider = system_or_bounds if isinstance(system_or_bounds, BoundsProvider) \
        else BoundsProvider(system_or_bounds, config)
    req = request
    trace: List[dict] = []
    relax_count = 0
    last = None
    for it in range(1, limits.max_iter + 1):
        entry = {"iteration": it, "phi": req.phi, "delta": req.delta,
                 "rho3": req.rho3, "eps": req.eps}
        lu, issue = _self_consistent_l_up(config, req, provider, limits)
        entry["l_up"] = lu
        if issue is not None:
            req, action = _relax(req, limits, relax_count)
            relax_count += 1
            entry.update(p=None, action=f"{issue}:{action}")
            trace.append(entry)
            continue
        k = req.k
        p = k + lu - 1
        sob = provider.system_or_bounds(k, p)
        cfg = _window_config(config, req, p)
        try:
            sel = select(k, p, cfg, sob, strategy=limits.strategy,
                         candidate_cap=limits.candidate_cap, max_steps=limits.max_steps)
        except BudgetError:
            sel = select(k, p, cfg, sob, strategy="greedy",
                         candidate_cap=limits.candidate_cap, max_steps=limits.max_steps)
        cfg = cfg.replace(family=sel.family)
        stats = family_stats(cfg, sob)
        report = conditions_from_stats(cfg, stats)
        entry.update(p=p, n_tags=len(sel.chosen_tags), objective=sel.objective_value,
                     margins=_margins(report))
        last = (req, lu, sel, report)
        if report.all_hold:
            entry["action"] = "break"
            trace.append(entry)
            return _finish(request, req, lu, sel, report, it, trace)
        # search (rho3, eps) for a point where every condition holds
        found = None
        for r, e in epsilon_rho_grid(cfg, sob, stats):
            cand = cfg.replace(rho3=r, eps=e)
            rep = conditions_from_stats(cand, stats)
            if rep.all_hold:
                found = (r, e)
                break
        if found is not None and found != (req.rho3, req.eps):
            req = PacRequest(req.phi, req.delta, found[0], found[1], req.k)
            entry["action"] = "adjust"
        else:
            req, action = _relax(req, limits, relax_count)
            relax_count += 1
            entry["action"] = action
        trace.append(entry)
    if last is None:
        return PacOutcome("failed", req.phi, req.delta, req.rho3, req.eps, None, None, None,
                          limits.max_iter, trace)
    lreq, lu, sel, report = last
    return PacOutcome("failed", lreq.phi, lreq.delta, lreq.rho3, lreq.eps, lu, sel,
                      report.to_dict(), limits.max_iter, trace)


def _finish(original: PacRequest, req: PacRequest, lu: int, sel, report, it, trace) -> PacOutcome:
    if (req.phi, req.delta) != (original.phi, original.delta):
        status = "relaxed"
    elif (req.rho3, req.eps) != (original.rho3, original.eps):
        status = "adjusted"
    else:
        status = "certified"
    return PacOutcome(status, req.phi, req.delta, req.rho3, req.eps, lu, sel,
                      report.to_dict(), it, trace)


def request_from_dict(d: dict) -> PacRequest:
    allowed = {f for f in PacRequest.__dataclass_fields__}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown pac request fields: {sorted(unknown)}")
    try:
        return PacRequest(**{k: (int(v) if k == "k" else float(v)) for k, v in d.items()})
    except TypeError as exc:
        raise ConfigError(f"malformed pac request: {exc}") from None


def limits_from_dict(d: Optional[dict]) -> PacLimits:
    d = dict(d or {})
    unknown = set(d) - set(PacLimits.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown pac limits fields: {sorted(unknown)}")
    if "relax_order" in d:
        d["relax_order"] = tuple(d["relax_order"])
    return PacLimits(**d)


def limits_to_dict(limits: PacLimits) -> dict:
    d = asdict(limits)
    d["relax_order"] = list(d["relax_order"])
    return d
