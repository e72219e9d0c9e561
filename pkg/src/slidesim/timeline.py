"""Latency and energy engine for per-layer downloading and inference."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import BsConfig, ChannelState
from .profiles import DeviceProfile, LayerProfile, ModelProfile, UserSpec, memcpy_latency

SLIDE = "slide"
DAI = "dai"
DAI_STRICT = "dai_strict"
LATENCY_MODELS = (SLIDE, DAI, DAI_STRICT)


class TimelineError(ValueError):
    """Domain error: zero bandwidth, zero rate, or zero GPU scale."""


@dataclass(frozen=True)
class LayerAllocation:
    gpu_scale: tuple[float, ...]

    def __post_init__(self):
        for z in self.gpu_scale:
            if not 0.0 <= z <= 1.0:
                raise TimelineError(f"gpu_scale entries must lie in [0, 1], got {z}")

    @classmethod
    def of(cls, values: Sequence[float]) -> "LayerAllocation":
        return cls(tuple(float(v) for v in values))

    @classmethod
    def full(cls, num_layers: int, value: float = 1.0) -> "LayerAllocation":
        return cls((float(value),) * num_layers)

    def as_array(self) -> np.ndarray:
        return np.array(self.gpu_scale, dtype=float)

    def __len__(self) -> int:
        return len(self.gpu_scale)


@dataclass(frozen=True)
class ScheduleTimeline:
    download_done_s: tuple[float, ...]
    inference_start_s: tuple[float, ...]
    inference_done_s: tuple[float, ...]
    e2e_latency_s: float
    energy_j: float


def layer_download_time(layer: LayerProfile, y: float, bs: BsConfig, ch: ChannelState) -> float:
    if y <= 0:
        raise TimelineError("bandwidth fraction must be > 0")
    rate = y * bs.total_bandwidth_hz * ch.spectral_efficiency
    if rate <= 0:
        raise TimelineError("zero downlink rate")
    return layer.size_bits / rate


def layer_inference_time(device: DeviceProfile, layer: LayerProfile, batch_size: int,
                         gpu_scale: float) -> float:
    if gpu_scale <= 0:
        raise TimelineError("gpu_scale must be > 0")
    compute = batch_size * layer.flops * device.cycles_per_flop / (gpu_scale * device.gpu_freq_hz)
    return memcpy_latency(device, layer) + compute


@dataclass(frozen=True)
class LayerCosts:
    """Per (user, model, channel) constants consumed by the solvers.

    ``gamma`` is the full-speed compute time of each layer, ``memcpy`` its
    host-to-GPU transfer time and ``energy_scale`` converts ``sum(gamma*z**2)``
    into joules.
    """

    sizes: np.ndarray
    memcpy: np.ndarray
    gamma: np.ndarray
    t0: float
    e1: float
    energy_scale: float
    link_rate_bps: float
    budget_j: float
    deadline_s: float

    @property
    def num_layers(self) -> int:
        return len(self.sizes)

    @property
    def q_prime(self) -> float:
        return (self.budget_j - self.e1) / self.energy_scale

    def download(self, y: float) -> np.ndarray:
        if y <= 0:
            raise TimelineError("bandwidth fraction must be > 0")
        if self.link_rate_bps <= 0:
            raise TimelineError("zero downlink rate")
        return self.sizes / (y * self.link_rate_bps)

    def compute(self, z: np.ndarray) -> np.ndarray:
        if np.any(z <= 0):
            raise TimelineError("gpu_scale must be > 0 on every layer")
        return self.memcpy + self.gamma / z

    def energy(self, z: np.ndarray) -> float:
        return self.e1 + self.energy_scale * float(np.dot(self.gamma, z * z))


def layer_costs(user: UserSpec, model: ModelProfile, bs: BsConfig, ch: ChannelState) -> LayerCosts:
    dev = user.device
    return LayerCosts(
        sizes=model.sizes,
        memcpy=model.sizes / dev.mem_to_gpu_rate_bps,
        gamma=user.batch_size * model.workloads * dev.cycles_per_flop / dev.gpu_freq_hz,
        t0=dev.instantiation_latency(model.model_id),
        e1=dev.instantiation_energy(model.model_id),
        energy_scale=dev.power_coeff * dev.gpu_freq_hz ** 3,
        link_rate_bps=bs.total_bandwidth_hz * ch.spectral_efficiency,
        budget_j=user.energy_budget_j,
        deadline_s=user.deadline_s,
    )


def slide_chain(done_dl: Sequence[float], compute: Sequence[float], t0: float):
    """Run the overlapped recursion; returns (starts, finishes)."""
    starts, finishes = [], []
    prev = t0
    for d, c in zip(done_dl, compute):
        s = d if d > prev else prev
        prev = s + c
        starts.append(s)
        finishes.append(prev)
    return starts, finishes


def dai_chain(done_dl: Sequence[float], compute: Sequence[float], t0: float, strict: bool = False):
    prev = done_dl[-1] if strict else max(done_dl[-1], t0)
    starts, finishes = [], []
    for c in compute:
        starts.append(prev)
        prev = prev + c
        finishes.append(prev)
    return starts, finishes


def e2e_latency(costs: LayerCosts, y: float, z: np.ndarray, latency_model: str = SLIDE) -> float:
    """End-to-end latency only, without building a timeline record."""
    done = np.cumsum(costs.download(y)).tolist()
    comp = costs.compute(z).tolist()
    if latency_model == SLIDE:
        prev = costs.t0
        for d, c in zip(done, comp):
            prev = (d if d > prev else prev) + c
        return prev
    start = done[-1] if latency_model == DAI_STRICT else max(done[-1], costs.t0)
    return start + math.fsum(comp)


def evaluate(costs: LayerCosts, y: float, z: np.ndarray, latency_model: str = SLIDE) -> ScheduleTimeline:
    if latency_model not in LATENCY_MODELS:
        raise ValueError(f"unknown latency model {latency_model!r}")
    done = np.cumsum(costs.download(y)).tolist()
    comp = costs.compute(z).tolist()
    if latency_model == SLIDE:
        starts, finishes = slide_chain(done, comp, costs.t0)
    else:
        starts, finishes = dai_chain(done, comp, costs.t0, strict=latency_model == DAI_STRICT)
    return ScheduleTimeline(
        download_done_s=tuple(done),
        inference_start_s=tuple(starts),
        inference_done_s=tuple(finishes),
        e2e_latency_s=finishes[-1],
        energy_j=costs.energy(z),
    )


def slide_timeline(user: UserSpec, model: ModelProfile, y: float, alloc: LayerAllocation,
                   bs: BsConfig, ch: ChannelState) -> ScheduleTimeline:
    """Overlapped downloading/inference timeline.

    Layer ``l`` starts once it is fully downloaded and layer ``l-1`` is done;
    layer 1 additionally waits for instantiation, which runs from time 0 in
    parallel with the first download.
    """
    _check_alloc(model, alloc)
    return evaluate(layer_costs(user, model, bs, ch), y, alloc.as_array(), SLIDE)


def dai_timeline(user: UserSpec, model: ModelProfile, y: float, alloc: LayerAllocation,
                 bs: BsConfig, ch: ChannelState, strict: bool = False) -> ScheduleTimeline:
    """Download the whole model first, then run all layers back to back.

    Instantiation overlaps the download unless ``strict`` is set, in which case
    the latency is the plain sum of download and inference times.
    """
    _check_alloc(model, alloc)
    mode = DAI_STRICT if strict else DAI
    return evaluate(layer_costs(user, model, bs, ch), y, alloc.as_array(), mode)


def inference_energy(user: UserSpec, model: ModelProfile, alloc: LayerAllocation) -> float:
    _check_alloc(model, alloc)
    dev = user.device
    z = alloc.as_array()
    e1 = dev.instantiation_energy(model.model_id)
    per_layer = dev.power_coeff * dev.gpu_freq_hz ** 2 * dev.cycles_per_flop * user.batch_size
    return e1 + per_layer * float(np.dot(model.workloads, z * z))


def _check_alloc(model: ModelProfile, alloc: LayerAllocation) -> None:
    if len(alloc) != model.num_layers:
        raise TimelineError(
            f"allocation has {len(alloc)} entries, model {model.model_id!r} has {model.num_layers} layers")
