"""Scenario generation, Monte Carlo sweeps and result tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .channel import BsConfig, worst_case_channel
from .profiles import (
    DeviceProfile,
    LayerProfile,
    ModelProfile,
    ProfileError,
    UserSpec,
    default_catalog_path,
    default_devices_path,
    load_catalog,
    load_devices,
)
from .scenario import Scenario
from .scheduler import METHODS, SchedulerConfig, solve

log = logging.getLogger(__name__)

MOBILITY_SPEEDS = {"static": 0.0, "slow": 1.5, "fast": 15.0}
# fixed ids so that each sub-stream is independent of what the others draw
STREAMS = {"positions": 1, "channel": 2, "tasks": 3, "devices": 4, "deadlines": 5}
CSV_COLUMNS = ("axis", "value", "trial", "method", "served_ratio", "throughput",
               "mean_latency_s", "bw_used", "wall_time_s", "error")


class ConfigError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name]])


@dataclass(frozen=True)
class ScenarioConfig:
    num_users: int = 80
    bandwidth_hz: float = 400e6
    deadline_range_s: tuple[float, float] = (0.6, 1.0)
    nano_fraction: float = 0.6
    energy_scale: float = 0.26
    mobility: str = "static"
    seed: int = 0
    # (strong, weak) device names in the device file
    device_pair: tuple[str, str] = ("nx", "nano")
    accuracy_range: tuple[float, float] = (0.8, 0.9)
    compat_size_range: tuple[int, int] = (1, 4)
    num_task_types: int = 10
    batch_sizes: tuple[int, ...] = (1, 2, 3, 4)
    # empty means every precision in the catalog
    precisions: tuple[str, ...] = ()
    coverage_radius_m: float = 200.0
    tx_psd_dbm_per_hz: float = -29.0
    noise_psd_dbm_per_hz: float = -174.0

    def __post_init__(self):
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if not self.bandwidth_hz > 0:
            raise ConfigError("bandwidth_hz must be > 0")
        lo, hi = self.deadline_range_s
        if not 0 < lo <= hi:
            raise ConfigError("deadline_range_s must satisfy 0 < min <= max")
        if not 0 <= self.nano_fraction <= 1:
            raise ConfigError("nano_fraction must lie in [0, 1]")
        if not 0 <= self.energy_scale <= 1:
            raise ConfigError("energy_scale must lie in [0, 1]")
        if self.mobility not in MOBILITY_SPEEDS:
            raise ConfigError(f"mobility must be one of {sorted(MOBILITY_SPEEDS)}")
        a, b = self.compat_size_range
        if not 1 <= a <= b:
            raise ConfigError("compat_size_range must satisfy 1 <= min <= max")
        if not self.batch_sizes or min(self.batch_sizes) < 1:
            raise ConfigError("batch_sizes must be non-empty and >= 1")

    def bs(self) -> BsConfig:
        return BsConfig(total_bandwidth_hz=self.bandwidth_hz,
                        tx_psd_dbm_per_hz=self.tx_psd_dbm_per_hz,
                        noise_psd_dbm_per_hz=self.noise_psd_dbm_per_hz,
                        coverage_radius_m=self.coverage_radius_m)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ScenarioConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        kw = {}
        for k, v in raw.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return ScenarioConfig.from_dict(raw)


def load_defaults(catalog_path=None, devices_path=None):
    catalog = load_catalog(catalog_path or default_catalog_path())
    devices = load_devices(devices_path or default_devices_path())
    return catalog, devices


# --------------------------------------------------------------------------
# scenario generation

def _task_domains(catalog: Sequence[ModelProfile]) -> list[str]:
    return sorted({m.model_id.split("-", 1)[0] for m in catalog})


def _compatible_set(rng, catalog, domain: str, cfg: ScenarioConfig) -> tuple[str, ...]:
    lo, hi = cfg.accuracy_range
    for _ in range(32):
        need = rng.uniform(lo, hi)
        pool = sorted(m.model_id for m in catalog
                      if m.model_id.split("-", 1)[0] == domain and m.accuracy >= need)
        size = int(rng.integers(cfg.compat_size_range[0], cfg.compat_size_range[1] + 1))
        if pool:
            picked = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
            return tuple(pool[i] for i in sorted(picked))
    raise ConfigError(f"no model in domain {domain!r} meets accuracy range {cfg.accuracy_range}")


def generate_scenario(cfg: ScenarioConfig, catalog: Sequence[ModelProfile],
                      devices: Mapping[str, DeviceProfile]) -> Scenario:
    """Draw users, devices, deadlines, tasks and channels for one snapshot.

    Every quantity comes from its own sub-stream and users are drawn one at a
    time, so the first K users of a larger scenario match a smaller one drawn
    with the same seed.
    """
    if cfg.precisions:
        catalog = [m for m in catalog if m.precision_tag in cfg.precisions]
    if not catalog:
        raise ConfigError("catalog is empty after the precision filter")
    try:
        strong, weak = (devices[n] for n in cfg.device_pair)
    except KeyError as exc:
        raise ConfigError(f"unknown device {exc.args[0]!r}") from exc
    bs = cfg.bs()
    r_pos, r_ch = substream(cfg.seed, "positions"), substream(cfg.seed, "channel")
    r_task, r_dev = substream(cfg.seed, "tasks"), substream(cfg.seed, "devices")
    r_dl = substream(cfg.seed, "deadlines")
    domains = _task_domains(catalog)
    speed = MOBILITY_SPEEDS[cfg.mobility]
    users, channels = [], []
    for k in range(cfg.num_users):
        radius = bs.coverage_radius_m * math.sqrt(r_pos.uniform(1e-6, 1.0))
        angle = r_pos.uniform(0.0, 2.0 * math.pi)
        device = weak if r_dev.random() < cfg.nano_fraction else strong
        deadline = float(r_dl.uniform(*cfg.deadline_range_s))
        task = int(r_task.integers(cfg.num_task_types))
        batch = int(r_task.choice(cfg.batch_sizes))
        compat = _compatible_set(r_task, catalog, domains[task % len(domains)], cfg)
        power = device.rated_power_w if device.rated_power_w is not None else 1.0
        user = UserSpec(
            user_id=k,
            device=device,
            batch_size=batch,
            deadline_s=deadline,
            energy_budget_j=cfg.energy_scale * power * deadline,
            compatible_models=compat,
            position_m=(radius * math.cos(angle), radius * math.sin(angle)),
            speed_mps=speed,
        )
        users.append(user)
        channels.append(worst_case_channel(bs, user, deadline, r_ch))
    used = sorted({m for u in users for m in u.compatible_models})
    index = {m.model_id: m for m in catalog}
    return Scenario(bs, tuple(users), tuple(channels), tuple(index[m] for m in used),
                    seed=cfg.seed, config=cfg.to_dict())


def generate_small_scenario(seed: int, num_users: int, num_models: int, max_layers: int = 3,
                            bandwidth_hz: float = 200e6, full_compat: bool = False) -> Scenario:
    """Tiny random instance for oracle certification and benchmarking.

    Model sizes are drawn so that single-user shares spread over roughly
    [0.05, 0.5]; admission then hinges on how the shares pack into 1. With
    ``full_compat`` every user may run every model.
    """
    rng = np.random.default_rng([int(seed), 99])
    bs = BsConfig(total_bandwidth_hz=bandwidth_hz)
    _, devices = load_defaults()
    models = []
    for i in range(num_models):
        n = int(rng.integers(1, max_layers + 1))
        sizes = rng.dirichlet(np.ones(n)) * rng.uniform(1e8, 8e8)
        flops = rng.dirichlet(np.ones(n)) * rng.uniform(0.5e9, 8e9)
        layers = tuple(LayerProfile(l + 1, float(sizes[l]), float(flops[l])) for l in range(n))
        models.append(ModelProfile(f"m{i}", layers))
    users, channels = [], []
    names = sorted(devices)
    for k in range(num_users):
        device = devices[names[int(rng.integers(len(names)))]]
        deadline = float(rng.uniform(0.5, 1.0))
        size = num_models if full_compat else int(rng.integers(1, num_models + 1))
        compat = tuple(sorted(f"m{i}" for i in rng.choice(num_models, size=size, replace=False)))
        d = float(rng.uniform(20.0, bs.coverage_radius_m))
        user = UserSpec(k, device, int(rng.integers(1, 3)), deadline,
                        float(rng.uniform(0.1, 0.6)) * device.rated_power_w * deadline,
                        compat, (d, 0.0))
        users.append(user)
        channels.append(worst_case_channel(bs, user, deadline, rng))
    return Scenario(bs, tuple(users), tuple(channels), tuple(models), seed=seed)


# --------------------------------------------------------------------------
# sweeps

AXES = ("bandwidth_mhz", "num_users", "deadline_s", "nano_fraction", "energy_scale",
        "mobility", "precision")


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    trials_per_point: int = 20
    methods: tuple[str, ...] = ("slide", "dai")

    def __post_init__(self):
        if self.axis not in AXES:
            raise ConfigError(f"unknown axis {self.axis!r}; choose from {', '.join(AXES)}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        if self.trials_per_point < 1:
            raise ConfigError("trials_per_point must be >= 1")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")


def apply_axis(cfg: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    if axis == "bandwidth_mhz":
        return replace(cfg, bandwidth_hz=float(value) * 1e6)
    if axis == "num_users":
        return replace(cfg, num_users=int(value))
    if axis == "deadline_s":
        return replace(cfg, deadline_range_s=(float(value), float(value)))
    if axis == "nano_fraction":
        return replace(cfg, nano_fraction=float(value))
    if axis == "energy_scale":
        return replace(cfg, energy_scale=float(value))
    if axis == "mobility":
        return replace(cfg, mobility=str(value))
    if axis == "precision":
        return replace(cfg, precisions=() if value in ("mixed", "all") else (str(value),))
    raise ConfigError(f"unknown axis {axis!r}")


def trial_seed(base_seed: int, trial: int) -> int:
    """Seed of one Monte Carlo trial; shared by every axis value (common random numbers)."""
    return int(np.random.SeedSequence([int(base_seed), int(trial)]).generate_state(1)[0])


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: object
    trial: int
    method: str
    served_ratio: float = math.nan
    throughput: int = 0
    mean_latency_s: float = math.nan
    bw_used: float = 0.0
    wall_time_s: float = 0.0
    error: str = ""


def _run_point(args) -> list[SweepRow]:
    spec, cfg, catalog, devices, sched, vi, trial = args
    value = spec.values[vi]
    rows = []
    try:
        point = apply_axis(replace(cfg, seed=trial_seed(cfg.seed, trial)), spec.axis, value)
        scn = generate_scenario(point, catalog, devices)
    except Exception as exc:  # recorded, the sweep goes on
        return [SweepRow(spec.axis, value, trial, m, error=f"{type(exc).__name__}: {exc}")
                for m in spec.methods]
    for method in spec.methods:
        t = time.perf_counter()
        try:
            res = solve(scn, method, sched)
        except Exception as exc:
            log.warning("trial %d %s=%s %s failed: %s", trial, spec.axis, value, method, exc)
            rows.append(SweepRow(spec.axis, value, trial, method,
                                 wall_time_s=time.perf_counter() - t,
                                 error=f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(SweepRow(spec.axis, value, trial, method, res.served_ratio, res.throughput,
                             res.mean_latency_s, res.total_bandwidth_used, res.wall_time_s))
    return rows


def run_sweep(spec: SweepSpec, base_cfg: ScenarioConfig, catalog: Sequence[ModelProfile],
              devices: Mapping[str, DeviceProfile], sched: SchedulerConfig | None = None,
              jobs: int = 1) -> list[SweepRow]:
    """Solve every (axis value, trial, method) combination.

    Trials run in a process pool when ``jobs > 1``; each trial's scheduler runs
    single-process. Rows come back ordered by (value index, trial, method).
    """
    sched = replace(sched or SchedulerConfig(), jobs=1)
    tasks = [(spec, base_cfg, catalog, devices, sched, vi, t)
             for vi in range(len(spec.values)) for t in range(spec.trials_per_point)]
    if jobs <= 1:
        chunks = [_run_point(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_point, tasks))
    return [row for chunk in chunks for row in chunk]


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def rows_to_csv(rows: Sequence[SweepRow], header: Mapping | None = None,
                timing: bool = True) -> str:
    buf = io.StringIO()
    if header:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        rec = asdict(r)
        if not timing:
            rec["wall_time_s"] = 0.0
        w.writerow([_fmt(rec[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


@dataclass(frozen=True)
class PointStats:
    axis: str
    value: object
    method: str
    trials: int
    errors: int
    served_ratio_mean: float
    served_ratio_std: float
    mean_latency_s: float
    bw_used_mean: float
    wall_time_mean_s: float


def aggregate(rows: Sequence[SweepRow]) -> list[PointStats]:
    """Mean and standard deviation per (value, method), in first-seen order.

    Trials are sorted before summing, so the result does not depend on the
    order in which trials finished.
    """
    groups: dict = {}
    for r in rows:
        groups.setdefault((_fmt(r.value), r.method), []).append(r)
    out = []
    for (_, method), rs in groups.items():
        rs = sorted(rs, key=lambda r: r.trial)
        ok = [r for r in rs if not r.error]
        ratios = np.array([r.served_ratio for r in ok], dtype=float)
        lats = [r.mean_latency_s for r in ok if not math.isnan(r.mean_latency_s)]
        out.append(PointStats(
            axis=rs[0].axis,
            value=rs[0].value,
            method=method,
            trials=len(rs),
            errors=len(rs) - len(ok),
            served_ratio_mean=math.fsum(ratios) / len(ratios) if len(ratios) else math.nan,
            served_ratio_std=float(ratios.std()) if len(ratios) else math.nan,
            mean_latency_s=math.fsum(lats) / len(lats) if lats else math.nan,
            bw_used_mean=math.fsum(r.bw_used for r in ok) / len(ok) if ok else math.nan,
            wall_time_mean_s=math.fsum(r.wall_time_s for r in ok) / len(ok) if ok else math.nan,
        ))
    return out


def stats_to_csv(stats: Sequence[PointStats], timing: bool = True) -> str:
    buf = io.StringIO()
    cols = [f.name for f in fields(PointStats)]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for s in stats:
        rec = asdict(s)
        if not timing:
            rec["wall_time_mean_s"] = 0.0
        w.writerow([_fmt(rec[c]) for c in cols])
    return buf.getvalue()


def ensure_catalog(path) -> list[ModelProfile]:
    """Load a catalog, turning a missing file into a config error."""
    try:
        return load_catalog(path)
    except FileNotFoundError as exc:
        raise ProfileError(f"catalog not found: {path}") from exc


def random_p2_instance(seed: int, max_layers: int = 3, tight: bool = True):
    """One (user, model, y, bs, channel) tuple with an energy-binding budget.

    The budget sits strictly between the instantiation energy and the energy
    of running every layer at full speed, so the solver has to trade latency
    for energy. With ``tight=False`` the budget is drawn up to twice the
    full-speed energy.
    """
    from .timeline import layer_costs

    scn = generate_small_scenario(seed, 1, 1, max_layers=max_layers)
    rng = np.random.default_rng([int(seed), 7])
    user, ch, model = scn.users[0], scn.channels[0], scn.catalog[0]
    costs = layer_costs(user, model, scn.bs, ch)
    full = costs.energy(np.ones(model.num_layers))
    frac = rng.uniform(0.05, 0.95) if tight else rng.uniform(0.05, 2.0)
    user = replace(user, energy_budget_j=costs.e1 + frac * (full - costs.e1))
    y = float(rng.uniform(0.02, 1.0))
    return user, model, y, scn.bs, ch
