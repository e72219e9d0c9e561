"""Model catalog and device profiles.

Units are canonical everywhere: sizes in bits, workloads in FLOPs per
sample, times in seconds, energy in joules, frequencies in cycles/s.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class ProfileError(ValueError):
    """Raised when a catalog or device file violates the schema."""


@dataclass(frozen=True)
class LayerProfile:
    index: int
    size_bits: float
    flops: float


@dataclass(frozen=True)
class ModelProfile:
    model_id: str
    layers: tuple[LayerProfile, ...]
    precision_tag: str = "fp32"
    accuracy: float = 1.0

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([layer.size_bits for layer in self.layers], dtype=float)

    @cached_property
    def workloads(self) -> np.ndarray:
        return np.array([layer.flops for layer in self.layers], dtype=float)

    @cached_property
    def total_size_bits(self) -> float:
        return math.fsum(layer.size_bits for layer in self.layers)

    @cached_property
    def total_flops(self) -> float:
        return math.fsum(layer.flops for layer in self.layers)


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    gpu_freq_hz: float
    cycles_per_flop: float
    power_coeff: float
    mem_to_gpu_rate_bps: float
    instantiation_latency_s: float = 0.0
    instantiation_energy_j: float = 0.0
    rated_power_w: float | None = None
    # model_id -> {"latency_s": ..., "energy_j": ...}
    instantiation_overrides: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def instantiation_latency(self, model_id: str) -> float:
        override = self.instantiation_overrides.get(model_id, {})
        return float(override.get("latency_s", self.instantiation_latency_s))

    def instantiation_energy(self, model_id: str) -> float:
        override = self.instantiation_overrides.get(model_id, {})
        return float(override.get("energy_j", self.instantiation_energy_j))

    def with_frequency(self, gpu_freq_hz: float) -> "DeviceProfile":
        """Same device clocked differently; the power coefficient is kept."""
        return DeviceProfile(
            name=self.name,
            gpu_freq_hz=gpu_freq_hz,
            cycles_per_flop=self.cycles_per_flop,
            power_coeff=self.power_coeff,
            mem_to_gpu_rate_bps=self.mem_to_gpu_rate_bps,
            instantiation_latency_s=self.instantiation_latency_s,
            instantiation_energy_j=self.instantiation_energy_j,
            rated_power_w=self.rated_power_w,
            instantiation_overrides=dict(self.instantiation_overrides),
        )


@dataclass(frozen=True)
class UserSpec:
    user_id: int
    device: DeviceProfile
    batch_size: int
    deadline_s: float
    energy_budget_j: float
    compatible_models: tuple[str, ...]
    position_m: tuple[float, float] = (0.0, 0.0)
    speed_mps: float = 0.0
    weight: float = 1.0

    @property
    def distance_m(self) -> float:
        return math.hypot(*self.position_m)


def memcpy_latency(device: DeviceProfile, layer: LayerProfile) -> float:
    """Time to move one layer from system memory into GPU memory."""
    return layer.size_bits / device.mem_to_gpu_rate_bps


def memcpy_latencies(device: DeviceProfile, model: ModelProfile) -> np.ndarray:
    return model.sizes / device.mem_to_gpu_rate_bps


# --------------------------------------------------------------------------
# validation

def _require(cond: bool, what: str, where: str) -> None:
    if not cond:
        raise ProfileError(f"{where}: invalid {what}")


def _number(raw: Mapping, key: str, where: str) -> float:
    if key not in raw:
        raise ProfileError(f"{where}: missing field {key}")
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ProfileError(f"{where}: field {key} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ProfileError(f"{where}: field {key} must be finite")
    return float(value)


def validate_model(model: ModelProfile) -> ModelProfile:
    where = f"model {model.model_id!r}"
    _require(len(model.layers) > 0, "layers (empty)", where)
    _require(0.0 <= model.accuracy <= 1.0, "accuracy (outside [0, 1])", where)
    for pos, layer in enumerate(model.layers, start=1):
        lw = f"{where} layer {pos}"
        _require(layer.index == pos, "index (not contiguous 1..L)", lw)
        _require(layer.size_bits > 0, "size_bits (must be > 0)", lw)
        _require(layer.flops > 0, "flops (must be > 0)", lw)
    return model


def validate_device(device: DeviceProfile) -> DeviceProfile:
    where = f"device {device.name!r}"
    for name in ("gpu_freq_hz", "cycles_per_flop", "power_coeff", "mem_to_gpu_rate_bps"):
        _require(getattr(device, name) > 0, f"{name} (must be > 0)", where)
    for name in ("instantiation_latency_s", "instantiation_energy_j"):
        _require(getattr(device, name) >= 0, f"{name} (must be >= 0)", where)
    if device.rated_power_w is not None:
        _require(device.rated_power_w > 0, "rated_power_w (must be > 0)", where)
    return device


def validate_user(user: UserSpec, catalog: Mapping[str, ModelProfile]) -> UserSpec:
    where = f"user {user.user_id}"
    _require(user.deadline_s > 0, "deadline_s (must be > 0)", where)
    _require(user.batch_size >= 1, "batch_size (must be >= 1)", where)
    _require(user.energy_budget_j > 0, "energy_budget_j (must be > 0)", where)
    _require(len(user.compatible_models) > 0, "compatible_models (empty)", where)
    for mid in user.compatible_models:
        _require(mid in catalog, f"compatible_models (unknown model {mid!r})", where)
    validate_device(user.device)
    return user


def prune_unservable(user: UserSpec) -> UserSpec:
    """Drop models whose instantiation energy alone exhausts the budget."""
    keep = tuple(m for m in user.compatible_models
                 if user.energy_budget_j > user.device.instantiation_energy(m))
    if keep == user.compatible_models:
        return user
    if not keep:
        raise ProfileError(
            f"user {user.user_id}: energy_budget_j {user.energy_budget_j} does not "
            "cover the instantiation energy of any compatible model")
    return replace(user, compatible_models=keep)


# --------------------------------------------------------------------------
# (de)serialization

def model_from_dict(raw: Mapping) -> ModelProfile:
    if "id" not in raw:
        raise ProfileError("model entry without id")
    where = f"model {raw['id']!r}"
    layers_raw = raw.get("layers")
    if not isinstance(layers_raw, list):
        raise ProfileError(f"{where}: layers must be a list")
    layers = tuple(
        LayerProfile(index=pos,
                     size_bits=_number(lr, "size_bits", f"{where} layer {pos}"),
                     flops=_number(lr, "flops", f"{where} layer {pos}"))
        for pos, lr in enumerate(layers_raw, start=1)
    )
    model = ModelProfile(
        model_id=str(raw["id"]),
        layers=layers,
        precision_tag=str(raw.get("precision", "fp32")),
        accuracy=_number(raw, "accuracy", where) if "accuracy" in raw else 1.0,
    )
    return validate_model(model)


def model_to_dict(model: ModelProfile) -> dict:
    return {
        "id": model.model_id,
        "precision": model.precision_tag,
        "accuracy": model.accuracy,
        "layers": [{"size_bits": l.size_bits, "flops": l.flops} for l in model.layers],
    }


def device_from_dict(raw: Mapping, name: str | None = None) -> DeviceProfile:
    name = str(raw.get("name", name or "device"))
    where = f"device {name!r}"
    overrides = raw.get("instantiation_overrides", {}) or {}
    device = DeviceProfile(
        name=name,
        gpu_freq_hz=_number(raw, "gpu_freq_hz", where),
        cycles_per_flop=_number(raw, "cycles_per_flop", where),
        power_coeff=_number(raw, "power_coeff", where),
        mem_to_gpu_rate_bps=_number(raw, "mem_to_gpu_rate_bps", where),
        instantiation_latency_s=_number(raw, "instantiation_latency_s", where),
        instantiation_energy_j=_number(raw, "instantiation_energy_j", where),
        rated_power_w=_number(raw, "rated_power_w", where) if "rated_power_w" in raw else None,
        instantiation_overrides={str(k): dict(v) for k, v in overrides.items()},
    )
    return validate_device(device)


def device_to_dict(device: DeviceProfile) -> dict:
    out = {
        "name": device.name,
        "gpu_freq_hz": device.gpu_freq_hz,
        "cycles_per_flop": device.cycles_per_flop,
        "power_coeff": device.power_coeff,
        "mem_to_gpu_rate_bps": device.mem_to_gpu_rate_bps,
        "instantiation_latency_s": device.instantiation_latency_s,
        "instantiation_energy_j": device.instantiation_energy_j,
    }
    if device.rated_power_w is not None:
        out["rated_power_w"] = device.rated_power_w
    if device.instantiation_overrides:
        out["instantiation_overrides"] = {k: dict(v) for k, v in device.instantiation_overrides.items()}
    return out


def _read_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ProfileError(f"{path}: cannot read ({exc})") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: parse error: {exc}") from exc


def catalog_from_dict(raw: Mapping) -> list[ModelProfile]:
    entries = raw.get("models") if isinstance(raw, Mapping) else None
    if not isinstance(entries, list):
        raise ProfileError("catalog must be an object with a 'models' list")
    models = [model_from_dict(entry) for entry in entries]
    ids = [m.model_id for m in models]
    if len(set(ids)) != len(ids):
        raise ProfileError("catalog: duplicate model ids")
    return models


def load_catalog(path: str | Path) -> list[ModelProfile]:
    """Read and validate a model catalog file."""
    return catalog_from_dict(_read_json(path))


def dump_catalog(models: Iterable[ModelProfile], path: str | Path) -> None:
    payload = {"models": [model_to_dict(m) for m in models]}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_devices(path: str | Path) -> dict[str, DeviceProfile]:
    raw = _read_json(path)
    entries = raw.get("devices") if isinstance(raw, Mapping) else None
    if not isinstance(entries, Mapping):
        raise ProfileError("device file must be an object with a 'devices' mapping")
    return {name: device_from_dict(entry, name) for name, entry in entries.items()}


def dump_devices(devices: Mapping[str, DeviceProfile], path: str | Path) -> None:
    payload = {"devices": {k: device_to_dict(v) for k, v in devices.items()}}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def catalog_index(models: Iterable[ModelProfile]) -> dict[str, ModelProfile]:
    return {m.model_id: m for m in models}


_DATA = Path(__file__).with_name("data")


def default_catalog_path() -> Path:
    return _DATA / "catalog.json"


def default_devices_path() -> Path:
    return _DATA / "devices.json"
