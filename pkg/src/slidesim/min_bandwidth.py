"""Smallest bandwidth share under which a user can still meet its deadline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .channel import BsConfig, ChannelState
from .layer_solver import (
    InfeasibleBudgetError,
    LayerSolveResult,
    SolverConfig,
    solve_costs,
    solve_equal_energy,
)
from .profiles import ModelProfile, UserSpec
from .timeline import SLIDE, LayerAllocation, layer_costs

OPTIMAL = "optimal"
EQUAL_ENERGY = "equal_energy"


@dataclass(frozen=True)
class ModelChoice:
    model_id: str | None
    result: LayerSolveResult | None

    @property
    def latency(self) -> float:
        return self.result.e2e_latency_s if self.result is not None else float("inf")

    def __bool__(self) -> bool:
        return self.model_id is not None


NO_CHOICE = ModelChoice(None, None)


@dataclass(frozen=True)
class MinBandwidthResult:
    user_id: int
    y_min: float
    model_choice: str | None
    alloc: LayerAllocation
    e2e_latency_s: float
    energy_j: float
    feasible: bool
    bisection_iters: int
    bracket: tuple[float, float]
    case_tag: str | None = None
    converged: bool = True

    @property
    def bracket_width(self) -> float:
        return self.bracket[1] - self.bracket[0]


class UserEvaluator:
    """Solves the per-layer problem for every candidate model of one user.

    Keeps the per-model constants and the last dual multipliers so that
    successive bandwidth probes can warm start.
    """

    def __init__(self, user: UserSpec, models: Sequence[ModelProfile], bs: BsConfig,
                 ch: ChannelState, solver_cfg: SolverConfig | None = None,
                 latency_model: str = SLIDE, alloc_rule: str = OPTIMAL):
        self.user = user
        self.cfg = solver_cfg or SolverConfig()
        self.latency_model = latency_model
        self.alloc_rule = alloc_rule
        self.costs = {}
        for m in sorted(models, key=lambda m: m.model_id):
            c = layer_costs(user, m, bs, ch)
            if c.budget_j > c.e1:
                self.costs[m.model_id] = c
        self._warm: dict[str, tuple[float, ...]] = {}

    def solve(self, model_id: str, y: float, decide: bool = False) -> LayerSolveResult:
        costs = self.costs[model_id]
        if self.alloc_rule == EQUAL_ENERGY:
            return solve_equal_energy(costs, y, self.latency_model)
        warm = self._warm.get(model_id) if self.cfg.warm_start else None
        target = self.user.deadline_s if decide else None
        res = solve_costs(costs, y, self.cfg, self.latency_model, warm, target)
        if res.multipliers:
            self._warm[model_id] = res.multipliers
        return res

    def choose(self, y: float) -> ModelChoice:
        """Fastest deadline-meeting model at share ``y``; ties go to the smaller id."""
        if y <= 0:
            return NO_CHOICE
        best = NO_CHOICE
        for mid in self.costs:
            res = self.solve(mid, y)
            if res.e2e_latency_s <= self.user.deadline_s and res.e2e_latency_s < best.latency:
                best = ModelChoice(mid, res)
        return best

    def any_feasible(self, y: float) -> ModelChoice:
        """First model (by id) that provably meets the deadline at ``y``.

        Only the yes/no answer is exact; the allocation may be suboptimal.
        """
        if y <= 0:
            return NO_CHOICE
        for mid in self.costs:
            res = self.solve(mid, y, decide=True)
            if res.e2e_latency_s <= self.user.deadline_s:
                return ModelChoice(mid, res)
        return NO_CHOICE


def _candidates(user: UserSpec, catalog: Mapping[str, ModelProfile] | Sequence[ModelProfile]):
    index = catalog if isinstance(catalog, Mapping) else {m.model_id: m for m in catalog}
    return [index[m] for m in user.compatible_models]


def select_model_at_bandwidth(user: UserSpec, catalog, y: float, bs: BsConfig, ch: ChannelState,
                              solver_cfg: SolverConfig | None = None,
                              latency_model: str = SLIDE,
                              alloc_rule: str = OPTIMAL) -> ModelChoice:
    return UserEvaluator(user, _candidates(user, catalog), bs, ch, solver_cfg,
                         latency_model, alloc_rule).choose(y)


def lower_bracket(user: UserSpec, models: Sequence[ModelProfile], bs: BsConfig,
                  ch: ChannelState) -> float:
    """Share needed just to download the smallest model before the deadline."""
    rate = bs.total_bandwidth_hz * ch.spectral_efficiency
    if rate <= 0:
        return float("inf")
    return min(m.total_size_bits for m in models) / (user.deadline_s * rate)


def min_feasible_bandwidth(user: UserSpec, catalog, bs: BsConfig, ch: ChannelState,
                           eps: float = 1e-4, solver_cfg: SolverConfig | None = None,
                           latency_model: str = SLIDE, alloc_rule: str = OPTIMAL,
                           restrict_to: Sequence[str] | None = None) -> MinBandwidthResult:
    """Bisection on the bandwidth share.

    The bracket starts at ``[smallest model size / (deadline * B * R), 1]``.
    At each midpoint every candidate model gets its latency-optimal GPU
    scaling; the bracket top moves down whenever some model meets the
    deadline. ``restrict_to`` narrows the candidate models but keeps the
    bracket of the full compatibility set, so per-model results bisect on the
    same grid of midpoints as the joint search.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    models = _candidates(user, catalog)
    lo = lower_bracket(user, models, bs, ch)
    if restrict_to is not None:
        keep = set(restrict_to)
        models = [m for m in models if m.model_id in keep]
    evaluator = UserEvaluator(user, models, bs, ch, solver_cfg, latency_model, alloc_rule)
    return _bisect(user, evaluator, lo, eps)


def _bisect(user: UserSpec, evaluator: UserEvaluator, lo: float, eps: float) -> MinBandwidthResult:
    hi = 1.0
    if not lo <= 1.0 or not evaluator.costs:
        return _infeasible(user, (min(lo, 1.0), hi), 0)
    witness: ModelChoice | None = None
    iters = 0
    while abs(hi - lo) >= eps:
        mid = (lo + hi) / 2.0
        iters += 1
        choice = evaluator.any_feasible(mid)
        if choice:
            hi, witness = mid, choice
        else:
            lo = mid
    if witness is None:
        # no midpoint was feasible; hi is still the untested full band
        witness = evaluator.any_feasible(hi) or None
    if witness is None:
        return _infeasible(user, (lo, hi), iters)
    # optimal model and allocation at the final share
    found = evaluator.choose(hi) or witness
    res = found.result
    return MinBandwidthResult(
        user_id=user.user_id,
        y_min=hi,
        model_choice=found.model_id,
        alloc=res.alloc,
        e2e_latency_s=res.e2e_latency_s,
        energy_j=res.energy_j,
        feasible=True,
        bisection_iters=iters,
        bracket=(lo, hi),
        case_tag=res.case_tag,
        converged=res.converged,
    )


def _infeasible(user: UserSpec, bracket, iters: int) -> MinBandwidthResult:
    return MinBandwidthResult(
        user_id=user.user_id,
        y_min=0.0,
        model_choice=None,
        alloc=LayerAllocation(()),
        e2e_latency_s=float("inf"),
        energy_j=0.0,
        feasible=False,
        bisection_iters=iters,
        bracket=bracket,
    )


__all__ = [
    "InfeasibleBudgetError",
    "MinBandwidthResult",
    "ModelChoice",
    "UserEvaluator",
    "lower_bracket",
    "min_feasible_bandwidth",
    "select_model_at_bandwidth",
]
