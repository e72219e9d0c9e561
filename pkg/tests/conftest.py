"""Small hand-built instances shared by the unit tests."""

import numpy as np
import pytest

from slidesim.channel import BsConfig, ChannelState
from slidesim.harness import load_defaults
from slidesim.profiles import DeviceProfile, LayerProfile, ModelProfile, UserSpec
from slidesim.scenario import Scenario


def make_device(f=1e9, kappa=2.0, psi=1e-27, rate=8e10, t0=0.0, e1=0.0, rated=10.0, name="dev"):
    return DeviceProfile(name, f, kappa, psi, rate, t0, e1, rated)


def make_model(mid, sizes, flops, precision="fp32", accuracy=0.9):
    layers = tuple(LayerProfile(i + 1, float(s), float(w))
                   for i, (s, w) in enumerate(zip(sizes, flops)))
    return ModelProfile(mid, layers, precision, accuracy)


def make_user(uid=0, device=None, models=("m",), deadline=1.0, budget=100.0, batch=1):
    return UserSpec(uid, device or make_device(), batch, deadline, budget, tuple(models), (10.0, 0.0))


def unit_link(bandwidth_hz=1e8, r=2.0):
    """Base station and channel with ``B * R`` chosen by hand."""
    return BsConfig(total_bandwidth_hz=bandwidth_hz), ChannelState(1.0, r)


def scenario_of(users, models, bandwidth_hz=1e8, r=2.0, seed=None):
    bs, ch = unit_link(bandwidth_hz, r)
    return Scenario(bs, tuple(users), tuple(ch for _ in users), tuple(models), seed=seed)


@pytest.fixture(scope="session")
def defaults():
    return load_defaults()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def hand_scenario():
    """Three users whose minimum shares are 0.4, 0.3 and 0.5.

    One single-layer model per user with negligible compute, deadline 1 s and
    ``B * R = 2e8`` bit/s, so the share is just ``size / 2e8``.
    """
    dev = make_device(rate=1e30)
    models = [make_model(f"m{k}", [s], [1.0]) for k, s in enumerate((0.8e8, 0.6e8, 1.0e8))]
    users = [make_user(k, dev, (f"m{k}",), deadline=1.0) for k in range(3)]
    return scenario_of(users, models, bandwidth_hz=1e8, r=2.0, seed=0)


def overlap_scenario():
    """User 0 meets its deadline only when downloads overlap inference.

    At y = 1 the two layers take 0.5 s each to download. SLIDE finishes in
    1.05 s, DAI in 1.55 s, and the deadline is 1.2 s. User 1 is cheap under both.
    """
    dev = make_device(f=1e9, kappa=1.0, rate=1e30)
    big = make_model("big", [1e8, 1e8], [0.5e9, 0.05e9])
    small = make_model("small", [2e6], [0.01e9])
    users = [make_user(0, dev, ("big",), deadline=1.2), make_user(1, dev, ("small",), deadline=1.0)]
    return scenario_of(users, [big, small], bandwidth_hz=1e8, r=2.0, seed=0)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
