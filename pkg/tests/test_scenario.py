import json

import pytest

from slidesim.harness import ScenarioConfig, generate_scenario, generate_small_scenario
from slidesim.profiles import ProfileError
from slidesim.scenario import Scenario, load_scenario, save_scenario, scenario_from_dict

from conftest import hand_scenario


class TestScenario:
    def test_round_trip(self, tmp_path):
        scn = generate_small_scenario(2, 4, 3)
        save_scenario(scn, tmp_path / "s.json")
        back = load_scenario(tmp_path / "s.json")
        assert back.users == scn.users
        assert back.channels == scn.channels
        assert back.catalog == scn.catalog
        assert back.to_json() == scn.to_json()
        assert back.digest() == scn.digest()

    def test_generated_round_trip(self, defaults, tmp_path):
        scn = generate_scenario(ScenarioConfig(num_users=10, seed=3), *defaults)
        save_scenario(scn, tmp_path / "s.json")
        assert load_scenario(tmp_path / "s.json").to_json() == scn.to_json()

    def test_channel_lookup(self):
        scn = hand_scenario()
        assert scn.channel_of(2) == scn.channels[2]
        with pytest.raises(KeyError):
            scn.channel_of(99)

    def test_length_mismatch(self):
        scn = hand_scenario()
        with pytest.raises(ProfileError):
            Scenario(scn.bs, scn.users, scn.channels[:1], scn.catalog)

    def test_duplicate_users(self):
        scn = hand_scenario()
        with pytest.raises(ProfileError, match="duplicate"):
            Scenario(scn.bs, scn.users[:1] * 2, scn.channels[:2], scn.catalog)

    def test_missing_field(self):
        raw = json.loads(hand_scenario().to_json())
        del raw["users"][0]["deadline_s"]
        with pytest.raises(ProfileError, match="deadline_s"):
            scenario_from_dict(raw)

    def test_unknown_model(self):
        raw = json.loads(hand_scenario().to_json())
        raw["users"][0]["compatible_models"] = ["nope"]
        with pytest.raises(ProfileError, match="unknown model"):
            scenario_from_dict(raw)

    def test_parse_error(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("[")
        with pytest.raises(ProfileError):
            load_scenario(p)
