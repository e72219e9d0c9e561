import time
from dataclasses import replace

import numpy as np
import pytest

from slidesim.harness import generate_small_scenario, random_p2_instance
from slidesim.layer_solver import solve_p2
from slidesim.oracle import (
    BRANCH_AND_BOUND,
    ENUMERATE,
    OracleConfig,
    OracleError,
    OracleInfeasible,
    exhaustive_p1,
    grid_p2,
)
from slidesim.scheduler import solve_slide

from conftest import hand_scenario, make_device, make_model, make_user, unit_link


class TestConfig:
    @pytest.mark.parametrize("kw", [{"z_grid_points": 1}, {"y_grid_points": 1}, {"max_users": 0}])
    def test_invalid(self, kw):
        with pytest.raises(OracleError):
            OracleConfig(**kw)


class TestGridP2:
    def test_single_layer_generous(self):
        bs, ch = unit_link()
        user = make_user(models=("m",), budget=100.0)
        alloc, _ = grid_p2(user, make_model("m", [1e7], [1e8]), 0.5, bs, ch)
        assert alloc.gpu_scale == (1.0,)

    def test_three_layers_within_budget(self):
        user, model, y, bs, ch = random_p2_instance(1)
        model = make_model("m", [1e7] * 3, [1e9] * 3)
        user = replace(user, compatible_models=("m",))
        cfg = OracleConfig()
        t = time.perf_counter()
        grid_p2(user, model, y, bs, ch, cfg)
        assert time.perf_counter() - t < cfg.time_budget_s

    def test_refinement_never_hurts(self):
        for seed in range(10):
            user, model, y, bs, ch = random_p2_instance(seed)
            prev = np.inf
            for n in (9, 17, 33, 65):
                try:
                    _, lat = grid_p2(user, model, y, bs, ch, OracleConfig(z_grid_points=n))
                except OracleInfeasible:
                    continue
                assert lat <= prev
                prev = lat

    def test_upper_bounds_solver(self):
        for seed in range(20):
            user, model, y, bs, ch = random_p2_instance(seed)
            try:
                _, lat = grid_p2(user, model, y, bs, ch)
            except OracleInfeasible:
                continue
            assert solve_p2(user, model, y, bs, ch).e2e_latency_s <= lat * (1 + 1e-3)

    def test_guards(self):
        bs, ch = unit_link()
        user = make_user(models=("m",))
        with pytest.raises(OracleError):
            grid_p2(user, make_model("m", [1] * 4, [1] * 4), 0.5, bs, ch)
        with pytest.raises(OracleError):
            grid_p2(user, make_model("m", [1], [1]), 0.0, bs, ch)

    def test_no_feasible_point(self):
        bs, ch = unit_link()
        user = make_user(device=make_device(e1=1.0), models=("m",), budget=1.0 + 1e-12)
        with pytest.raises(OracleInfeasible):
            grid_p2(user, make_model("m", [1e6], [1e9]), 0.5, bs, ch, OracleConfig(z_floor=0.1))


class TestExhaustiveP1:
    def test_hand_fixture(self):
        scn = hand_scenario()
        for mode in (ENUMERATE, BRANCH_AND_BOUND):
            res = exhaustive_p1(scn, mode=mode)
            assert res.served_users == (0, 1)

    def test_single_user(self):
        scn = generate_small_scenario(4, 1, 3)
        assert exhaustive_p1(scn).throughput == solve_slide(scn).throughput

    @pytest.mark.parametrize("seed", range(8))
    def test_modes_agree_and_match_greedy(self, seed):
        scn = generate_small_scenario(seed, 5, 4)
        a = exhaustive_p1(scn, mode=ENUMERATE)
        b = exhaustive_p1(scn, mode=BRANCH_AND_BOUND)
        c = exhaustive_p1(scn, mode=BRANCH_AND_BOUND, cache=False)
        assert a.served_users == b.served_users == c.served_users
        assert a.throughput == solve_slide(scn).throughput

    def test_order_invariant(self):
        scn = generate_small_scenario(11, 5, 3)
        flipped = replace(scn, users=scn.users[::-1], channels=scn.channels[::-1])
        assert exhaustive_p1(scn).served_users == exhaustive_p1(flipped).served_users

    def test_caps(self):
        scn = generate_small_scenario(0, 4, 2)
        with pytest.raises(OracleError, match="users"):
            exhaustive_p1(scn, OracleConfig(max_users=3))
        scn = generate_small_scenario(0, 2, 5, full_compat=True)
        with pytest.raises(OracleError, match="models"):
            exhaustive_p1(scn, OracleConfig(max_models=4))

    def test_unknown_mode(self):
        with pytest.raises(OracleError):
            exhaustive_p1(hand_scenario(), mode="random")

    def test_served_allocations_are_valid(self):
        scn = generate_small_scenario(21, 4, 3)
        res = exhaustive_p1(scn)
        assert res.total_bandwidth_used <= 1.0
        for k in res.served_users:
            u = next(u for u in scn.users if u.user_id == k)
            assert res.per_user[k].e2e_latency_s <= u.deadline_s
