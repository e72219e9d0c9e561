"""A single problem snapshot: base station, users, their channels and the catalog."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

from .channel import BsConfig, ChannelState
from .profiles import (
    ModelProfile,
    ProfileError,
    UserSpec,
    catalog_from_dict,
    catalog_index,
    device_from_dict,
    device_to_dict,
    model_to_dict,
    validate_user,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    bs: BsConfig
    users: tuple[UserSpec, ...]
    channels: tuple[ChannelState, ...]
    catalog: tuple[ModelProfile, ...]
    seed: int | None = None
    config: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if len(self.users) != len(self.channels):
            raise ProfileError("scenario: users and channels differ in length")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ProfileError("scenario: duplicate user ids")

    @property
    def num_users(self) -> int:
        return len(self.users)

    def models(self) -> dict[str, ModelProfile]:
        return catalog_index(self.catalog)

    def channel_of(self, user_id: int) -> ChannelState:
        for u, ch in zip(self.users, self.channels):
            if u.user_id == user_id:
                return ch
        raise KeyError(user_id)

    def validate(self) -> "Scenario":
        index = self.models()
        for u in self.users:
            validate_user(u, index)
        return self

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "seed": self.seed,
            "config": dict(self.config),
            "bs": asdict(self.bs),
            "users": [_user_to_dict(u, ch) for u, ch in zip(self.users, self.channels)],
            "models": [model_to_dict(m) for m in self.catalog],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _user_to_dict(user: UserSpec, ch: ChannelState) -> dict:
    return {
        "id": user.user_id,
        "device": device_to_dict(user.device),
        "batch_size": user.batch_size,
        "deadline_s": user.deadline_s,
        "energy_budget_j": user.energy_budget_j,
        "compatible_models": list(user.compatible_models),
        "position_m": list(user.position_m),
        "speed_mps": user.speed_mps,
        "weight": user.weight,
        "channel": {"gain_linear": ch.gain_linear,
                    "spectral_efficiency": ch.spectral_efficiency,
                    "clamped": ch.clamped},
    }


def _user_from_dict(raw: Mapping) -> tuple[UserSpec, ChannelState]:
    try:
        user = UserSpec(
            user_id=int(raw["id"]),
            device=device_from_dict(raw["device"]),
            batch_size=int(raw["batch_size"]),
            deadline_s=float(raw["deadline_s"]),
            energy_budget_j=float(raw["energy_budget_j"]),
            compatible_models=tuple(str(m) for m in raw["compatible_models"]),
            position_m=tuple(float(v) for v in raw.get("position_m", (0.0, 0.0))),
            speed_mps=float(raw.get("speed_mps", 0.0)),
            weight=float(raw.get("weight", 1.0)),
        )
        ch_raw = raw["channel"]
        ch = ChannelState(float(ch_raw["gain_linear"]), float(ch_raw["spectral_efficiency"]),
                          bool(ch_raw.get("clamped", False)))
    except KeyError as exc:
        raise ProfileError(f"user {raw.get('id', '?')}: missing field {exc.args[0]}") from exc
    except (TypeError, ValueError) as exc:
        raise ProfileError(f"user {raw.get('id', '?')}: {exc}") from exc
    return user, ch


def scenario_from_dict(raw: Mapping) -> Scenario:
    if not isinstance(raw, Mapping) or "users" not in raw:
        raise ProfileError("scenario must be an object with 'users'")
    pairs = [_user_from_dict(u) for u in raw["users"]]
    try:
        bs = BsConfig(**raw.get("bs", {}))
    except TypeError as exc:
        raise ProfileError(f"bs: {exc}") from exc
    scn = Scenario(
        bs=bs,
        users=tuple(p[0] for p in pairs),
        channels=tuple(p[1] for p in pairs),
        catalog=tuple(catalog_from_dict(raw)),
        seed=raw.get("seed"),
        config=raw.get("config", {}) or {},
    )
    return scn.validate()


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: parse error: {exc}") from exc
    return scenario_from_dict(raw)


def save_scenario(scn: Scenario, path: str | Path) -> None:
    Path(path).write_text(scn.to_json())
