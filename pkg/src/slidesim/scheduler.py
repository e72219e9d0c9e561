"""User admission and bandwidth allocation across all users.

``solve_slide`` is the ascending-minimum-bandwidth greedy: every user gets its
smallest feasible share, and users are admitted cheapest first until the band
is exhausted. The other solvers are the baselines compared against it.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

from .layer_solver import SolverConfig
from .min_bandwidth import (
    EQUAL_ENERGY,
    OPTIMAL,
    MinBandwidthResult,
    UserEvaluator,
    min_feasible_bandwidth,
)
from .scenario import Scenario
from .timeline import DAI, DAI_STRICT, SLIDE, LayerAllocation, ScheduleTimeline, evaluate, layer_costs

log = logging.getLogger(__name__)

METHODS = ("slide", "dai", "eba", "gbmp", "eecra")


@dataclass(frozen=True)
class SchedulerConfig:
    eps: float = 1e-4
    solver: SolverConfig = field(default_factory=SolverConfig)
    jobs: int = 1
    # hand the unused band to served users after admission (never changes who is served)
    redistribute_leftover: bool = False
    dai_strict: bool = False


@dataclass(frozen=True)
class Allocation:
    user_id: int
    served: bool
    y: float = 0.0
    model_id: str | None = None
    alloc: LayerAllocation = LayerAllocation(())
    e2e_latency_s: float = math.inf
    energy_j: float = 0.0
    timeline: ScheduleTimeline | None = None
    weight: float = 1.0


@dataclass(frozen=True)
class SolveResult:
    method_tag: str
    num_users: int
    served_users: tuple[int, ...]
    per_user: dict
    total_bandwidth_used: float
    wall_time_s: float
    # per-user minimum feasible shares from the first phase, when computed
    min_bandwidth: dict = field(default_factory=dict, repr=False)

    @property
    def throughput(self) -> int:
        return len(self.served_users)

    @property
    def served_ratio(self) -> float:
        return self.throughput / self.num_users if self.num_users else 0.0

    @property
    def mean_latency_s(self) -> float:
        lats = [self.per_user[k].e2e_latency_s for k in self.served_users]
        return math.fsum(lats) / len(lats) if lats else math.nan

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.min_bandwidth.values())

    def summary(self, timing: bool = True) -> dict:
        out = {
            "method": self.method_tag,
            "num_users": self.num_users,
            "throughput": self.throughput,
            "served_ratio": self.served_ratio,
            "served_users": list(self.served_users),
            "total_bandwidth_used": self.total_bandwidth_used,
            "mean_latency_s": None if math.isnan(self.mean_latency_s) else self.mean_latency_s,
        }
        if timing:
            out["wall_time_s"] = self.wall_time_s
        return out

    def to_dict(self, timing: bool = True) -> dict:
        out = self.summary(timing)
        out["per_user"] = [_alloc_to_dict(self.per_user[k]) for k in sorted(self.per_user)]
        return out


def _alloc_to_dict(a: Allocation) -> dict:
    return {
        "user_id": a.user_id,
        "served": a.served,
        "weight": a.weight,
        "y": a.y,
        "model_id": a.model_id,
        "gpu_scale": list(a.alloc.gpu_scale),
        "e2e_latency_s": a.e2e_latency_s if a.served else None,
        "energy_j": a.energy_j,
    }


# --------------------------------------------------------------------------
# phase 1: per-user work, optionally in a process pool

def _map_users(fn: Callable, tasks: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps input order, so the result does not depend on scheduling
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _min_bw_task(args) -> MinBandwidthResult:
    user, ch, models, bs, eps, solver, latency_model, alloc_rule, restrict = args
    return min_feasible_bandwidth(user, models, bs, ch, eps, solver, latency_model,
                                  alloc_rule, restrict)


def _latency_model(method: str, cfg: SchedulerConfig) -> str:
    if method == "dai":
        return DAI_STRICT if cfg.dai_strict else DAI
    return SLIDE


def _min_bandwidths(scn: Scenario, cfg: SchedulerConfig, latency_model: str,
                    alloc_rule: str = OPTIMAL, restrict=None) -> dict[int, MinBandwidthResult]:
    models = scn.models()
    tasks = []
    for user, ch in zip(scn.users, scn.channels):
        sub = {m: models[m] for m in user.compatible_models}
        only = restrict(user, sub) if restrict else None
        tasks.append((user, ch, sub, scn.bs, cfg.eps, cfg.solver, latency_model, alloc_rule, only))
    results = _map_users(_min_bw_task, tasks, cfg.jobs)
    return {r.user_id: r for r in results}


# --------------------------------------------------------------------------
# phase 2: greedy admission

def admit_greedy(y_min: dict[int, float]) -> list[int]:
    """Admit users by ascending share (ties: smaller id) while the shares fit in 1.

    Users with a non-positive share are infeasible and never admitted. Sums are
    exact-rounded so the check ``sum <= 1`` does not drift with the order.
    """
    order = sorted((y, k) for k, y in y_min.items() if y > 0)
    admitted, shares = [], []
    for y, k in order:
        if math.fsum(shares + [y]) > 1.0:
            break
        shares.append(y)
        admitted.append(k)
    return admitted


def _served_alloc(scn: Scenario, user_id: int, y: float, model_id: str, alloc: LayerAllocation,
                  latency_model: str) -> Allocation:
    user = next(u for u in scn.users if u.user_id == user_id)
    costs = layer_costs(user, scn.models()[model_id], scn.bs, scn.channel_of(user_id))
    tl = evaluate(costs, y, alloc.as_array(), latency_model)
    return Allocation(user_id, True, y, model_id, alloc, tl.e2e_latency_s, tl.energy_j, tl,
                      user.weight)


def _assemble(scn: Scenario, method: str, served: dict[int, Allocation],
              mins: dict, t_start: float) -> SolveResult:
    per_user = {}
    for u in scn.users:
        per_user[u.user_id] = served.get(u.user_id) or Allocation(u.user_id, False, weight=u.weight)
    order = tuple(sorted(served))
    return SolveResult(
        method_tag=method,
        num_users=scn.num_users,
        served_users=order,
        per_user=per_user,
        total_bandwidth_used=math.fsum(served[k].y for k in order),
        wall_time_s=time.perf_counter() - t_start,
        min_bandwidth=mins,
    )


def _greedy_pipeline(scn: Scenario, cfg: SchedulerConfig, method: str,
                     alloc_rule: str = OPTIMAL, restrict=None) -> SolveResult:
    t_start = time.perf_counter()
    lm = _latency_model(method, cfg)
    mins = _min_bandwidths(scn, cfg, lm, alloc_rule, restrict)
    admitted = admit_greedy({k: r.y_min for k, r in mins.items() if r.feasible})
    served = {}
    for k in admitted:
        r = mins[k]
        served[k] = _served_alloc(scn, k, r.y_min, r.model_choice, r.alloc, lm)
    if cfg.redistribute_leftover and served:
        served = _redistribute(scn, cfg, served, lm, alloc_rule)
    log.debug("%s: %d/%d users admitted", method, len(served), scn.num_users)
    return _assemble(scn, method, served, mins, t_start)


def _redistribute(scn: Scenario, cfg: SchedulerConfig, served: dict[int, Allocation],
                  latency_model: str, alloc_rule: str) -> dict[int, Allocation]:
    leftover = 1.0 - math.fsum(a.y for a in served.values())
    if leftover <= 0:
        return served
    bonus = leftover / len(served)
    while bonus > 0 and math.fsum(a.y + bonus for a in served.values()) > 1.0:
        bonus = math.nextafter(bonus, 0.0)
    models = scn.models()
    out = {}
    for k, a in served.items():
        y = a.y + bonus
        user = next(u for u in scn.users if u.user_id == k)
        ev = UserEvaluator(user, [models[a.model_id]], scn.bs, scn.channel_of(k), cfg.solver,
                           latency_model, alloc_rule)
        res = ev.solve(a.model_id, y)
        if res.e2e_latency_s <= a.e2e_latency_s:
            out[k] = _served_alloc(scn, k, y, a.model_id, res.alloc, latency_model)
        else:
            out[k] = replace(a, y=y)
    return out


# --------------------------------------------------------------------------
# public solvers

def solve_slide(scn: Scenario, cfg: SchedulerConfig | None = None) -> SolveResult:
    return _greedy_pipeline(scn, cfg or SchedulerConfig(), "slide")


def solve_dai(scn: Scenario, cfg: SchedulerConfig | None = None) -> SolveResult:
    """Same pipeline with download-then-infer latency everywhere."""
    return _greedy_pipeline(scn, cfg or SchedulerConfig(), "dai")


def _smallest_model(user, models) -> list[str]:
    return [min(models.values(), key=lambda m: (m.total_size_bits, m.model_id)).model_id]


def solve_gbmp(scn: Scenario, cfg: SchedulerConfig | None = None) -> SolveResult:
    """Greedy pipeline with each user pinned to its smallest compatible model."""
    return _greedy_pipeline(scn, cfg or SchedulerConfig(), "gbmp", restrict=_smallest_model)


def solve_eecra(scn: Scenario, cfg: SchedulerConfig | None = None) -> SolveResult:
    """Greedy pipeline with the compute budget split evenly over layers."""
    return _greedy_pipeline(scn, cfg or SchedulerConfig(), "eecra", alloc_rule=EQUAL_ENERGY)


def _eba_task(args):
    user, ch, models, bs, solver, y = args
    ev = UserEvaluator(user, list(models.values()), bs, ch, solver, SLIDE, OPTIMAL)
    # cheap certified screen first; the full argmin only for servable users
    if not ev.any_feasible(y):
        return user.user_id, None
    return user.user_id, ev.choose(y) or None


def solve_eba(scn: Scenario, cfg: SchedulerConfig | None = None) -> SolveResult:
    """Every user gets 1/K of the band and is served iff some model fits in it."""
    cfg = cfg or SchedulerConfig()
    t_start = time.perf_counter()
    y = 1.0 / scn.num_users if scn.num_users else 0.0
    models = scn.models()
    tasks = [(u, ch, {m: models[m] for m in u.compatible_models}, scn.bs, cfg.solver, y)
             for u, ch in zip(scn.users, scn.channels)]
    served = {}
    for k, choice in _map_users(_eba_task, tasks, cfg.jobs):
        if choice:
            served[k] = _served_alloc(scn, k, y, choice.model_id, choice.result.alloc, SLIDE)
    return _assemble(scn, "eba", served, {}, t_start)


SOLVERS = {
    "slide": solve_slide,
    "dai": solve_dai,
    "eba": solve_eba,
    "gbmp": solve_gbmp,
    "eecra": solve_eecra,
}


def solve(scn: Scenario, method: str, cfg: SchedulerConfig | None = None) -> SolveResult:
    try:
        fn = SOLVERS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}") from None
    return fn(scn, cfg)
