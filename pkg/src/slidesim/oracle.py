"""Brute-force reference solvers for tiny instances.

``grid_p2`` scans a uniform grid of GPU scales; ``exhaustive_p1`` enumerates
every user subset and model assignment. Both exist to certify the fast
solvers, not to compete with them.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .channel import BsConfig, ChannelState
from .layer_solver import SolverConfig
from .min_bandwidth import min_feasible_bandwidth
from .profiles import ModelProfile, UserSpec
from .scenario import Scenario
from .scheduler import SchedulerConfig, SolveResult, _assemble, _served_alloc
from .timeline import SLIDE, LayerAllocation, layer_costs

ENUMERATE = "enumerate"
BRANCH_AND_BOUND = "bnb"


class OracleError(ValueError):
    pass


class OracleInfeasible(OracleError):
    """No grid point satisfies the energy budget."""


@dataclass(frozen=True)
class OracleConfig:
    z_grid_points: int = 60
    y_grid_points: int = 200
    max_users: int = 6
    max_models: int = 6
    max_layers: int = 3
    z_floor: float = 1e-3
    time_budget_s: float = 60.0

    def __post_init__(self):
        if self.z_grid_points < 2 or self.y_grid_points < 2:
            raise OracleError("grids need at least 2 points")
        if self.max_users < 1 or self.max_models < 1:
            raise OracleError("caps must be >= 1")


def grid_p2(user: UserSpec, model: ModelProfile, y: float, bs: BsConfig, ch: ChannelState,
            cfg: OracleConfig | None = None) -> tuple[LayerAllocation, float]:
    """Best energy-feasible point of a uniform ``[z_floor, 1]^L`` grid."""
    cfg = cfg or OracleConfig()
    if model.num_layers > cfg.max_layers:
        raise OracleError(f"grid oracle limited to {cfg.max_layers} layers, got {model.num_layers}")
    if y <= 0:
        raise OracleError("grid oracle needs y > 0")
    c = layer_costs(user, model, bs, ch)
    n = c.num_layers
    axis = np.linspace(cfg.z_floor, 1.0, cfg.z_grid_points)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    z = np.stack([m.ravel() for m in mesh], axis=1)
    energy = c.e1 + c.energy_scale * ((z * z) @ c.gamma)
    z = z[energy <= c.budget_j]
    if len(z) == 0:
        raise OracleInfeasible("no grid point meets the energy budget")
    done = np.cumsum(c.download(y))
    comp = c.memcpy + c.gamma / z
    t = np.full(len(z), c.t0)
    for l in range(n):
        t = np.maximum(done[l], t) + comp[:, l]
    i = int(np.argmin(t))
    return LayerAllocation.of(z[i]), float(t[i])


def _check_caps(scn: Scenario, cfg: OracleConfig) -> None:
    if scn.num_users > cfg.max_users:
        raise OracleError(f"exhaustive oracle limited to {cfg.max_users} users, got {scn.num_users}")
    biggest = max((len(u.compatible_models) for u in scn.users), default=0)
    if biggest > cfg.max_models:
        raise OracleError(f"exhaustive oracle limited to {cfg.max_models} models per user, got {biggest}")


class _NeedTable:
    """Per (user, model) minimum share, computed lazily and optionally cached."""

    def __init__(self, scn: Scenario, eps: float, solver: SolverConfig, latency_model: str,
                 cache: bool):
        self.scn = scn
        self.eps = eps
        self.solver = solver
        self.latency_model = latency_model
        self.cache = cache
        self._memo: dict = {}
        self.calls = 0
        self._models = scn.models()

    def get(self, pos: int, model_id: str):
        key = (pos, model_id)
        if self.cache and key in self._memo:
            return self._memo[key]
        self.calls += 1
        user, ch = self.scn.users[pos], self.scn.channels[pos]
        sub = {m: self._models[m] for m in user.compatible_models}
        r = min_feasible_bandwidth(user, sub, self.scn.bs, ch, self.eps, self.solver,
                                   self.latency_model, restrict_to=[model_id])
        if self.cache:
            self._memo[key] = r
        return r


def exhaustive_p1(scn: Scenario, cfg: OracleConfig | None = None,
                  sched: SchedulerConfig | None = None, mode: str = ENUMERATE,
                  cache: bool = True, latency_model: str = SLIDE) -> SolveResult:
    """Maximum number of users whose per-model minimum shares fit in the band.

    For a fixed assignment, the users are jointly feasible iff their minimum
    shares sum to at most 1, so the search is over assignments only. Among
    assignments serving the most users the lexicographically smallest served
    set wins, and each served user keeps its cheapest feasible model.
    """
    cfg = cfg or OracleConfig()
    sched = sched or SchedulerConfig()
    _check_caps(scn, cfg)
    t_start = time.perf_counter()
    table = _NeedTable(scn, sched.eps, sched.solver, latency_model, cache)
    if mode == ENUMERATE:
        best = _enumerate(scn, table)
    elif mode == BRANCH_AND_BOUND:
        best = _branch_and_bound(scn, table)
    else:
        raise OracleError(f"unknown mode {mode!r}")
    served = {}
    for pos, mid in best:
        r = table.get(pos, mid)
        uid = scn.users[pos].user_id
        served[uid] = _served_alloc(scn, uid, r.y_min, mid, r.alloc, latency_model)
    return _assemble(scn, f"oracle_{mode}", served, {}, t_start)


def _options(scn: Scenario, table: _NeedTable, pos: int):
    """Feasible (share, model) pairs of one user, cheapest first."""
    out = []
    for mid in sorted(scn.users[pos].compatible_models):
        r = table.get(pos, mid)
        if r.feasible:
            out.append((r.y_min, mid))
    return sorted(out)


def _key(assignment, scn: Scenario):
    """Ranking: more users first, then the smaller served-id tuple."""
    ids = tuple(sorted(scn.users[p].user_id for p, _ in assignment))
    return (-len(ids), ids)


def _enumerate(scn: Scenario, table: _NeedTable):
    k = scn.num_users
    per_user = [[(None, None)] + _options(scn, table, p) for p in range(k)]
    best, best_key = [], _key([], scn)
    for combo in itertools.product(*per_user):
        shares = [y for y, _ in combo if y is not None]
        if math.fsum(shares) > 1.0:
            continue
        chosen = [(p, m) for p, (y, m) in enumerate(combo) if m is not None]
        key = _key(chosen, scn)
        if key < best_key or (key == best_key and _cost(chosen, table) < _cost(best, table)):
            best, best_key = chosen, key
    return best


def _cost(assignment, table: _NeedTable) -> float:
    return math.fsum(table.get(p, m).y_min for p, m in assignment)


def _branch_and_bound(scn: Scenario, table: _NeedTable):
    """Depth-first search over users, pruning on the served-count bound.

    Each node checks its partial assignment by looking up the share of every
    assigned user. With caching off those lookups are fresh bisections, so a
    node costs what re-solving its relaxation from scratch would.
    """
    k = scn.num_users
    best: list = []
    best_key = _key([], scn)

    def visit(pos, chosen):
        nonlocal best, best_key
        if len(chosen) + (k - pos) < len(best):
            return
        if pos == k:
            key = _key(chosen, scn)
            if key < best_key or (key == best_key and _cost(chosen, table) < _cost(best, table)):
                best, best_key = list(chosen), key
            return
        for mid in sorted(scn.users[pos].compatible_models):
            chosen.append((pos, mid))
            needs = [table.get(p, m) for p, m in chosen]
            if all(r.feasible for r in needs) and math.fsum(r.y_min for r in needs) <= 1.0:
                visit(pos + 1, chosen)
            chosen.pop()
        visit(pos + 1, chosen)

    visit(0, [])
    return best
