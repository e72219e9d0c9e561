import json

import pytest
from hypothesis import given, strategies as st

from slidesim.profiles import (
    LayerProfile,
    ProfileError,
    dump_catalog,
    dump_devices,
    load_catalog,
    load_devices,
    memcpy_latency,
    prune_unservable,
    validate_user,
)

from conftest import make_device, make_model, make_user


def _write(tmp_path, payload, name="catalog.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


class TestLoadCatalog:
    def test_two_layer_model(self, tmp_path):
        p = _write(tmp_path, {"models": [{"id": "a", "precision": "fp16", "accuracy": 0.8,
                                          "layers": [{"size_bits": 8e6, "flops": 1e8},
                                                     {"size_bits": 4e6, "flops": 5e7}]}]})
        (m,) = load_catalog(p)
        assert m.num_layers == 2
        assert [l.index for l in m.layers] == [1, 2]
        assert m.total_size_bits == 12e6
        assert m.precision_tag == "fp16"

    def test_zero_size_layer_names_field(self, tmp_path):
        p = _write(tmp_path, {"models": [{"id": "a", "layers": [{"size_bits": 0, "flops": 1e8}]}]})
        with pytest.raises(ProfileError, match="size_bits"):
            load_catalog(p)

    @pytest.mark.parametrize("raw, field", [
        ({"id": "a", "layers": []}, "layers"),
        ({"id": "a", "accuracy": 1.5, "layers": [{"size_bits": 1, "flops": 1}]}, "accuracy"),
        ({"id": "a", "layers": [{"size_bits": 1}]}, "flops"),
        ({"id": "a", "layers": [{"size_bits": "x", "flops": 1}]}, "size_bits"),
    ])
    def test_invalid_entries(self, tmp_path, raw, field):
        with pytest.raises(ProfileError, match=field):
            load_catalog(_write(tmp_path, {"models": [raw]}))

    def test_parse_error(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ProfileError, match="parse error"):
            load_catalog(p)

    def test_duplicate_ids(self, tmp_path):
        entry = {"id": "a", "layers": [{"size_bits": 1, "flops": 1}]}
        with pytest.raises(ProfileError, match="duplicate"):
            load_catalog(_write(tmp_path, {"models": [entry, entry]}))

    def test_shipped_catalog_has_48_models(self, defaults):
        catalog, _ = defaults
        assert len(catalog) == 48
        assert {m.precision_tag for m in catalog} == {"fp32", "fp16", "int8"}
        assert len({m.model_id for m in catalog}) == 48

    def test_round_trip_is_identical(self, tmp_path, defaults):
        catalog, devices = defaults
        dump_catalog(catalog, tmp_path / "c.json")
        dump_devices(devices, tmp_path / "d.json")
        assert load_catalog(tmp_path / "c.json") == catalog
        assert load_devices(tmp_path / "d.json") == devices


class TestDevices:
    def test_shipped_devices(self, defaults):
        _, devices = defaults
        assert devices["nano"].gpu_freq_hz == 624.75e6
        assert devices["nx"].gpu_freq_hz == 918e6
        assert devices["nx"].rated_power_w == 10.0
        assert devices["nano"].rated_power_w == 5.0

    def test_negative_latency_rejected(self, tmp_path):
        raw = {"devices": {"d": {"gpu_freq_hz": 1e9, "cycles_per_flop": 1, "power_coeff": 1e-27,
                                 "mem_to_gpu_rate_bps": 1e10, "instantiation_latency_s": -1,
                                 "instantiation_energy_j": 0}}}
        with pytest.raises(ProfileError, match="instantiation_latency_s"):
            load_devices(_write(tmp_path, raw, "d.json"))

    def test_override_table(self):
        dev = make_device(t0=0.1, e1=0.2)
        dev = type(dev)(**{**dev.__dict__, "instantiation_overrides": {"m": {"energy_j": 0.5}}})
        assert dev.instantiation_energy("m") == 0.5
        assert dev.instantiation_energy("other") == 0.2
        assert dev.instantiation_latency("m") == 0.1


class TestMemcpy:
    def test_hand_values(self):
        dev = make_device(rate=8e10)
        assert memcpy_latency(dev, LayerProfile(1, 8e9, 1.0)) == pytest.approx(0.1)
        dev = make_device(rate=3.2e10)
        assert memcpy_latency(dev, LayerProfile(1, 3.744e8, 1.0)) == pytest.approx(0.0117)

    def test_zero_size(self):
        assert memcpy_latency(make_device(), LayerProfile(1, 0.0, 1.0)) == 0.0

    @given(st.floats(1e3, 1e10), st.floats(1e8, 1e11), st.floats(0.1, 10))
    def test_linear_scaling(self, size, rate, c):
        base = memcpy_latency(make_device(rate=rate), LayerProfile(1, size, 1.0))
        assert memcpy_latency(make_device(rate=rate), LayerProfile(1, c * size, 1.0)) == pytest.approx(c * base)
        assert memcpy_latency(make_device(rate=c * rate), LayerProfile(1, size, 1.0)) == pytest.approx(base / c)


class TestUsers:
    def test_prune_unservable(self):
        dev = make_device(e1=1.0)
        dev = type(dev)(**{**dev.__dict__, "instantiation_overrides": {"big": {"energy_j": 5.0}}})
        user = make_user(device=dev, models=("big", "small"), budget=2.0)
        assert prune_unservable(user).compatible_models == ("small",)

    def test_prune_everything_raises(self):
        user = make_user(device=make_device(e1=3.0), budget=2.0)
        with pytest.raises(ProfileError):
            prune_unservable(user)

    def test_unknown_model(self):
        with pytest.raises(ProfileError, match="unknown model"):
            validate_user(make_user(models=("zz",)), {"m": make_model("m", [1], [1])})
