"""Per-layer GPU scaling that minimizes end-to-end latency for a fixed bandwidth.

For a fixed (user, model, y) the allocation falls into one of four regimes:

* ``zero_bandwidth``: nothing is downloaded, every scale is 0.
* ``full_speed``: running every layer at the maximum clock fits the energy
  budget.
* ``dual_eta_zero``: the just-in-time allocation (each layer finishes exactly
  when the next one has arrived) fits the budget, so the energy constraint is
  slack at the optimum.
* ``dual_eta_positive``: the budget binds. The convex reformulation with
  no-idle constraints is solved by projected gradient ascent on its dual; per
  layer scales follow the cube-root law ``z = (rho / 2 eta) ** (1/3)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .channel import BsConfig, ChannelState
from .profiles import ModelProfile, UserSpec
from .timeline import (
    DAI,
    DAI_STRICT,
    LATENCY_MODELS,
    SLIDE,
    LayerAllocation,
    LayerCosts,
    e2e_latency,
    layer_costs,
)

log = logging.getLogger(__name__)

ZERO_BANDWIDTH = "zero_bandwidth"
FULL_SPEED = "full_speed"
DUAL_ETA_ZERO = "dual_eta_zero"
DUAL_ETA_POSITIVE = "dual_eta_positive"
EQUAL_ENERGY = "equal_energy"
CASE_TAGS = (ZERO_BANDWIDTH, FULL_SPEED, DUAL_ETA_ZERO, DUAL_ETA_POSITIVE)
STEP_RULES = ("lbfgsb", "armijo", "diminishing")


class InfeasibleBudgetError(ValueError):
    """The energy budget does not even cover model instantiation."""


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    dual_tol: float = 1e-7
    # relative duality gap at which the dual ascent stops
    gap_tol: float = 1e-9
    max_iters: int = 20000
    # "lbfgsb" (quasi-Newton on the dual, finished by armijo steps),
    # "armijo" (adaptive, backtracking) or "diminishing" (step0 / sqrt(m))
    step_rule: str = "lbfgsb"
    step0: float = 1.0
    eta_bracket: tuple[float, float] = (1e-9, 1e9)
    # "exact" (piecewise closed form) or "bisect"
    eta_method: str = "exact"
    z_floor: float = 1e-6
    fill_idle: bool = True
    warm_start: bool = True

    def __post_init__(self):
        if not self.dual_tol > 0:
            raise SolverError("dual_tol must be > 0")
        if not 0 < self.z_floor <= 1:
            raise SolverError("z_floor must lie in (0, 1]")
        if self.step_rule not in STEP_RULES:
            raise SolverError(f"unknown step rule {self.step_rule!r}")
        if self.eta_method not in ("exact", "bisect"):
            raise SolverError(f"unknown eta method {self.eta_method!r}")


@dataclass(frozen=True)
class LayerSolveResult:
    alloc: LayerAllocation
    e2e_latency_s: float
    energy_j: float
    case_tag: str
    iterations: int = 0
    converged: bool = True
    multipliers: tuple[float, ...] = field(default=(), repr=False)
    eta: float = 0.0
    duality_gap_s: float = 0.0

    @property
    def feasible_latency(self) -> bool:
        return self.case_tag != ZERO_BANDWIDTH


# --------------------------------------------------------------------------
# eta inversion

def _energy_at(eta: float, rho: np.ndarray, gamma: np.ndarray, z_floor: float) -> float:
    return float(np.dot(gamma, _scales(rho, eta, z_floor) ** 2))


def _scales(rho: np.ndarray, eta: float, z_floor: float) -> np.ndarray:
    """Lagrangian minimizer over [z_floor, 1] for fixed multipliers."""
    if eta <= 0:
        return np.where(rho > 0, 1.0, z_floor)
    z = np.cbrt(np.maximum(rho, 0.0) / (2.0 * eta))
    return np.clip(z, z_floor, 1.0)


def _eta_exact(rho: np.ndarray, gamma: np.ndarray, q_prime: float, z_floor: float) -> float:
    pos = rho > 0
    floor_sq = z_floor * z_floor
    e_top = float(gamma[pos].sum() + floor_sq * gamma[~pos].sum())
    if q_prime >= e_top:
        return 0.0
    if q_prime <= floor_sq * float(gamma.sum()):
        raise SolverError("energy budget below the z_floor allocation")
    rp, gp = rho[pos], gamma[pos]
    cap = rp / 2.0                       # eta <= cap: layer saturates at 1
    flo = rp / (2.0 * z_floor ** 3)      # eta >= flo: layer sits on the floor
    bps = np.sort(np.concatenate([cap, flo]))
    base = floor_sq * float(gamma[~pos].sum())
    # energy at each breakpoint; non-increasing in eta
    zs = np.clip(np.cbrt(rp[None, :] / (2.0 * bps[:, None])), z_floor, 1.0)
    e_bp = base + (zs * zs) @ gp
    j = int(np.searchsorted(-e_bp, -q_prime, side="left"))
    lo = bps[j - 1] if j > 0 else 0.0
    hi = bps[j] if j < len(bps) else math.inf
    mid = (lo + hi) / 2.0 if math.isfinite(hi) else 2.0 * lo + 1.0
    capped = cap >= mid
    floored = flo <= mid
    free = ~(capped | floored)
    const = base + float(gp[capped].sum()) + floor_sq * float(gp[floored].sum())
    coef = float(np.dot(gp[free], np.cbrt(cap[free]) ** 2))
    eta = (coef / (q_prime - const)) ** 1.5
    return min(max(eta, lo), hi)


def _eta_bisect(rho: np.ndarray, gamma: np.ndarray, q_prime: float, z_floor: float,
                bracket: tuple[float, float]) -> float:
    lo, hi = bracket
    if _energy_at(lo, rho, gamma, z_floor) <= q_prime:
        while lo > 1e-300 and _energy_at(lo, rho, gamma, z_floor) <= q_prime:
            lo /= 16.0
        if _energy_at(lo, rho, gamma, z_floor) <= q_prime:
            return 0.0
    while _energy_at(hi, rho, gamma, z_floor) > q_prime:
        hi *= 16.0
        if hi > 1e300:
            raise SolverError("eta bracket expansion failed")
    for _ in range(400):
        mid = math.sqrt(lo * hi)
        if _energy_at(mid, rho, gamma, z_floor) > q_prime:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return hi


def _rho(mu: np.ndarray) -> np.ndarray:
    """rho_l = 1 - sum_{l' >= l} mu_l' with the last multiplier pinned to 0."""
    full = np.append(mu, 0.0)
    return 1.0 - np.cumsum(full[::-1])[::-1]


def invert_eta(mu, q_prime: float, gammas, cfg: SolverConfig | None = None) -> float:
    """Energy multiplier that makes the cube-root allocation spend exactly ``q_prime``.

    ``mu`` holds the no-idle multipliers, either L-1 entries or L entries with a
    trailing zero. ``q_prime`` is the compute budget in units of full-speed
    compute seconds, i.e. ``(Q - e1) / (psi * f**3)``.
    """
    cfg = cfg or SolverConfig()
    gamma = np.asarray(gammas, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if len(mu) == len(gamma):
        if mu[-1] != 0:
            raise SolverError("the last multiplier must be 0")
        mu = mu[:-1]
    if len(mu) != len(gamma) - 1:
        raise SolverError("multiplier vector does not match the layer count")
    if q_prime <= 0:
        raise SolverError("q_prime must be > 0")
    if q_prime >= gamma.sum():
        raise SolverError("q_prime covers full-speed execution; no binding energy multiplier")
    rho = _rho(mu)
    if not np.any(rho > 0):
        raise SolverError("at least one rho must be positive")
    if cfg.eta_method == "exact":
        return _eta_exact(rho, gamma, q_prime, cfg.z_floor)
    return _eta_bisect(rho, gamma, q_prime, cfg.z_floor, cfg.eta_bracket)


# --------------------------------------------------------------------------
# closed-form regimes

def _zdot(costs: LayerCosts, y: float) -> np.ndarray:
    tau = costs.download(y)
    n = costs.num_layers
    z = np.ones(n)
    if n == 1:
        return z
    s1 = max(tau[0], costs.t0)
    den = np.empty(n - 1)
    den[0] = tau[0] + tau[1] - s1 - costs.memcpy[0]
    den[1:] = tau[2:] - costs.memcpy[1:n - 1]
    with np.errstate(divide="ignore"):
        z[:-1] = np.where(den > 0, costs.gamma[:-1] / np.where(den > 0, den, 1.0), np.inf)
    return z


def zdot_closed_form(user: UserSpec, model: ModelProfile, y: float, bs: BsConfig,
                     ch: ChannelState) -> LayerAllocation | None:
    """Just-in-time scales: layer l ends exactly when layer l+1 finishes downloading.

    Returns ``None`` when some entry falls outside [0, 1] (including entries
    whose denominator is not positive); use :func:`zdot_values` for the raw
    vector.
    """
    z = zdot_values(user, model, y, bs, ch)
    if np.all(np.isfinite(z)) and np.all((z > 0) & (z <= 1)):
        return LayerAllocation.of(z)
    return None


def zdot_values(user: UserSpec, model: ModelProfile, y: float, bs: BsConfig,
                ch: ChannelState) -> np.ndarray:
    if y <= 0:
        raise SolverError("zdot needs y > 0")
    return _zdot(layer_costs(user, model, bs, ch), y)


def _fill_idle(costs: LayerCosts, y: float, z: np.ndarray, z_floor: float) -> np.ndarray:
    """Slow down layers that would otherwise wait for the next download.

    The stretched layer finishes no earlier than the next layer's arrival, so
    the start of every later layer and hence the latency are unchanged while
    energy drops.
    """
    z = z.copy()
    done = np.cumsum(costs.download(y)).tolist()
    prev = costs.t0
    n = len(z)
    for l in range(n):
        start = done[l] if done[l] > prev else prev
        # same association as the timeline so the comparison is exact
        finish = start + (costs.memcpy[l] + costs.gamma[l] / z[l])
        if l + 1 < n and finish < done[l + 1]:
            room = done[l + 1] - start - costs.memcpy[l]
            zl = max(costs.gamma[l] / room, z_floor)
            while zl > z_floor and start + (costs.memcpy[l] + costs.gamma[l] / zl) < done[l + 1]:
                zl = np.nextafter(zl, 0.0)
            z[l] = min(z[l], zl)
            finish = start + (costs.memcpy[l] + costs.gamma[l] / z[l])
        prev = finish
    return z


def equal_energy_scales(costs: LayerCosts) -> np.ndarray:
    """Split the compute budget evenly across layers."""
    n = costs.num_layers
    return np.minimum(1.0, np.sqrt(costs.q_prime / (n * costs.gamma)))


def _result(costs, y, z, case, latency_model, **extra) -> LayerSolveResult:
    return LayerSolveResult(
        alloc=LayerAllocation.of(z),
        e2e_latency_s=e2e_latency(costs, y, z, latency_model),
        energy_j=costs.energy(z),
        case_tag=case,
        **extra,
    )


def _zero_result(costs: LayerCosts) -> LayerSolveResult:
    return LayerSolveResult(
        alloc=LayerAllocation.full(costs.num_layers, 0.0),
        e2e_latency_s=math.inf,
        energy_j=0.0,
        case_tag=ZERO_BANDWIDTH,
    )


# --------------------------------------------------------------------------
# dual ascent

def _suffix_bound(costs: LayerCosts, done: np.ndarray, s1: float, q_prime: float) -> float:
    """Latency lower bound from relaxing everything before each layer.

    Layer ``l`` cannot start before it is downloaded, and the layers from ``l``
    on cannot run faster than the whole budget spent uniformly on them. When
    the schedule is download-bound this bound is tight while the dual bound
    converges slowly.
    """
    g_suf = np.cumsum(costs.gamma[::-1])[::-1]
    v_suf = np.cumsum(costs.memcpy[::-1])[::-1]
    z = np.minimum(1.0, np.sqrt(q_prime / g_suf))
    start = done.copy()
    start[0] = s1
    return float(np.max(start + v_suf + g_suf / z))


def _dual(costs: LayerCosts, y: float, cfg: SolverConfig, mu0=None,
          target_s: float | None = None) -> LayerSolveResult:
    n = costs.num_layers
    gamma, memcpy = costs.gamma, costs.memcpy
    zf = cfg.z_floor
    tau = costs.download(y)
    done = np.cumsum(tau)
    done_list = done.tolist()
    s1 = max(tau[0], costs.t0)
    cum_v = np.cumsum(memcpy)
    # no-idle constraint l (1..L-1): s1 + sum_{l'<=l} (V + gamma/z) >= done[l+1]
    c = done[1:] - s1 - cum_v[:-1]
    qp = costs.q_prime
    if qp <= 0:
        raise InfeasibleBudgetError("energy budget does not exceed instantiation energy")
    const = s1 + float(cum_v[-1])
    scale = const + float(gamma.sum())

    def primal(mu):
        rho = _rho(mu)
        if cfg.eta_method == "exact":
            eta = _eta_exact(rho, gamma, qp, zf)
        else:
            eta = _eta_bisect(rho, gamma, qp, zf, cfg.eta_bracket)
        z = _scales(rho, eta, zf)
        comp_t = gamma / z
        phi = const + float(np.dot(rho, comp_t)) + eta * (float(np.dot(gamma, z * z)) - qp) \
            + float(np.dot(mu, c))
        grad = c - np.cumsum(comp_t)[:-1]
        return z, eta, phi, grad, comp_t

    def true_latency(comp_t):
        prev = costs.t0
        for d, v, ct in zip(done_list, memcpy, comp_t):
            prev = (d if d > prev else prev) + v + ct
        return prev

    if mu0 is not None and len(mu0) == n - 1:
        mu = np.maximum(np.asarray(mu0, dtype=float), 0.0)
    else:
        mu = np.zeros(n - 1)

    best = (math.inf, None, 0.0, mu)
    lower = _suffix_bound(costs, done, s1, qp)

    def visit(m):
        nonlocal best, lower
        out = primal(m)
        lower = max(lower, out[2])
        lat = true_latency(out[4])
        if lat < best[0]:
            best = (lat, out[0], out[1], m.copy())
        return out

    def gap_ok(tol):
        if target_s is not None and (best[0] <= target_s or lower > target_s):
            # the deadline verdict is already certified by primal or dual side
            return True
        return best[0] - lower <= tol * best[0]

    # uniform scales (all multipliers zero) are always a candidate
    if np.any(mu):
        visit(np.zeros(n - 1))
    z, eta, phi, grad, comp_t = visit(mu)

    it = 0
    if cfg.step_rule == "lbfgsb" and n > 1 and not gap_ok(cfg.gap_tol):
        def neg_dual(m):
            out = visit(m)
            return -out[2] / scale, -out[3] / scale

        opt = minimize(neg_dual, mu, jac=True, method="L-BFGS-B",
                       bounds=[(0.0, None)] * (n - 1),
                       options={"maxiter": cfg.max_iters, "ftol": 1e-15, "gtol": 1e-13})
        it = int(opt.nit)
        mu = best[3]
        z, eta, phi, grad, comp_t = primal(mu)

    step = cfg.step0
    converged = n == 1 or gap_ok(cfg.gap_tol)
    while not converged and it < cfg.max_iters:
        it += 1
        if cfg.step_rule == "diminishing":
            mu_new = np.maximum(0.0, mu + (cfg.step0 / math.sqrt(it)) * grad / scale)
            z_n, eta_n, phi_n, grad_n, ct_n = visit(mu_new)
        else:
            while True:
                mu_new = np.maximum(0.0, mu + step * grad / scale)
                z_n, eta_n, phi_n, grad_n, ct_n = visit(mu_new)
                if phi_n >= phi + 1e-4 * float(np.dot(grad, mu_new - mu)) or step < 1e-14:
                    break
                step *= 0.5
            step = min(step * 2.0, 1e8)
        move = float(np.max(np.abs(mu_new - mu)))
        mu, z, eta, phi, grad = mu_new, z_n, eta_n, phi_n, grad_n
        if gap_ok(cfg.gap_tol):
            converged = True
        elif move < cfg.dual_tol:
            converged = gap_ok(max(cfg.gap_tol, 1e-6))
            break
    if not converged:
        log.debug("dual ascent stopped after %d iterations (gap %.3e s)", it, best[0] - lower)

    _, z, eta, mu_best = best
    # report the timeline's own value so callers can compare exactly
    lat = e2e_latency(costs, y, z, SLIDE)
    return LayerSolveResult(
        alloc=LayerAllocation.of(z),
        e2e_latency_s=lat,
        energy_j=costs.energy(z),
        case_tag=DUAL_ETA_POSITIVE,
        iterations=it,
        converged=converged,
        multipliers=tuple(float(v) for v in mu_best),
        eta=eta,
        duality_gap_s=max(lat - lower, 0.0),
    )


def dual_iteration(user: UserSpec, model: ModelProfile, y: float, bs: BsConfig,
                   ch: ChannelState, cfg: SolverConfig | None = None, mu0=None) -> LayerSolveResult:
    """Run the multiplier iteration directly, skipping the case dispatch."""
    cfg = cfg or SolverConfig()
    if y <= 0:
        raise SolverError("dual iteration needs y > 0")
    return _dual(layer_costs(user, model, bs, ch), y, cfg, mu0)


# --------------------------------------------------------------------------
# dispatch

def solve_costs(costs: LayerCosts, y: float, cfg: SolverConfig,
                latency_model: str = SLIDE, mu0=None,
                target_s: float | None = None) -> LayerSolveResult:
    """Dispatch on the four regimes.

    With ``target_s`` set the dual ascent may stop as soon as it can certify
    whether the optimum is within ``target_s`` (a feasible iterate at or below
    it, or a dual bound above it); the returned allocation is then feasible
    but not necessarily optimal.
    """
    if latency_model not in LATENCY_MODELS:
        raise ValueError(f"unknown latency model {latency_model!r}")
    if costs.budget_j <= costs.e1:
        raise InfeasibleBudgetError(
            f"energy budget {costs.budget_j} J does not exceed instantiation energy {costs.e1} J")
    if y <= 0:
        return _zero_result(costs)
    n = costs.num_layers
    ones = np.ones(n)
    if costs.energy(ones) <= costs.budget_j:
        z = ones
        if latency_model == SLIDE and cfg.fill_idle:
            z = _fill_idle(costs, y, ones, cfg.z_floor)
        return _result(costs, y, z, FULL_SPEED, latency_model)
    if latency_model in (DAI, DAI_STRICT):
        # sequential execution: only the total compute time matters, so the
        # budget is spread evenly over layers at a common scale
        z = np.full(n, math.sqrt(costs.q_prime / float(costs.gamma.sum())))
        eta = 1.0 / (2.0 * z[0] ** 3)
        return _result(costs, y, z, DUAL_ETA_POSITIVE, latency_model, eta=eta)
    zd = _zdot(costs, y)
    if np.all(np.isfinite(zd)) and np.all((zd > 0) & (zd <= 1)) and costs.energy(zd) <= costs.budget_j:
        return _result(costs, y, zd, DUAL_ETA_ZERO, latency_model)
    return _dual(costs, y, cfg, mu0 if cfg.warm_start else None, target_s)


def solve_p2(user: UserSpec, model: ModelProfile, y: float, bs: BsConfig, ch: ChannelState,
             cfg: SolverConfig | None = None, latency_model: str = SLIDE,
             mu0=None) -> LayerSolveResult:
    """Latency-optimal per-layer GPU scales for one user, model and bandwidth share."""
    if model.model_id not in user.compatible_models:
        raise SolverError(f"model {model.model_id!r} is not compatible with user {user.user_id}")
    return solve_costs(layer_costs(user, model, bs, ch), y, cfg or SolverConfig(),
                       latency_model, mu0)


def solve_equal_energy(costs: LayerCosts, y: float, latency_model: str = SLIDE) -> LayerSolveResult:
    """Baseline allocation spending the same energy on every layer."""
    if costs.budget_j <= costs.e1:
        raise InfeasibleBudgetError("energy budget does not exceed instantiation energy")
    if y <= 0:
        return _zero_result(costs)
    return _result(costs, y, equal_energy_scales(costs), EQUAL_ENERGY, latency_model)
