import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpail.envs import (
    CartpoleEnv,
    DemoSet,
    EpisodeSpec,
    NavEnv,
    NavParams,
    bicycle_step,
    cartpole_energy,
    cartpole_expert_action,
    cartpole_step,
    generate_demos,
    nav_expert_action,
    nav_reward,
    read_demos,
    wrap_angle,
    write_demos,
)

GOAL = np.array([10.0, 10.0])


def rng_of(seed):
    return np.random.Generator(np.random.SFC64(seed))


class TestBicycle:
    def test_straight_line(self):
        out = bicycle_step([0.0, 0.0, 0.0, 1.0], [1.0, 0.0], dt=0.1)
        assert np.allclose(out, [0.1, 0.0, 0.0, 1.0], rtol=0, atol=1e-15)

    def test_yaw_rate_hand_value(self):
        out = bicycle_step([0.0, 0.0, 0.0, 1.0], [1.0, 0.2], dt=0.1, wheelbase=0.3)
        expected_yaw = 0.1 * np.tan(0.2) / 0.3
        assert abs(out[2] - expected_yaw) < 1e-15
        assert abs(expected_yaw - 0.0676) < 1e-3

    def test_slip_off_matches_plain_bicycle(self):
        env = NavEnv(params=NavParams(slip=False))
        s = np.array([1.0, 2.0, 0.3, 1.5])
        a = np.array([1.0, 0.1])
        expected = bicycle_step(s, a, env.spec.dt, env.params.wheelbase, env.params.speed_gain)
        expected[2] = wrap_angle(expected[2])
        assert np.array_equal(env.step(s, a), expected)

    def test_slip_with_zero_steering_matches_slip_off(self):
        s = np.array([0.0, 0.0, 0.7, 1.4])
        a = np.array([1.0, 0.0])
        on = NavEnv(params=NavParams(slip=True)).step(s, a, rng_of(3))
        off = NavEnv(params=NavParams(slip=False)).step(s, a)
        assert np.array_equal(on, off)

    def test_slip_with_steering_differs(self):
        s = np.array([0.0, 0.0, 0.0, 1.5])
        a = np.array([1.5, 0.3])
        on = NavEnv(params=NavParams(slip=True)).step(s, a, rng_of(3))
        off = NavEnv(params=NavParams(slip=False)).step(s, a)
        assert not np.array_equal(on, off)

    def test_action_clamped_to_bounds(self):
        env = NavEnv()
        out = env.step([0.0, 0.0, 0.0, 0.0], [5.0, 9.0])
        inb = env.step([0.0, 0.0, 0.0, 0.0], [2.0, 0.4])
        assert np.array_equal(out, inb)

    def test_yaw_stays_wrapped(self):
        env = NavEnv()
        s = np.array([0.0, 0.0, 3.1, 2.0])
        for _ in range(50):
            s = env.step(s, [2.0, 0.4])
            assert -np.pi < s[2] <= np.pi


class TestNavReward:
    def test_goal_value(self):
        assert abs(nav_reward([10.0, 10.0, 0.0, 0.0]) - 14.1421) < 1e-4

    def test_origin_is_zero(self):
        assert abs(nav_reward([0.0, 0.0, 0.0, 0.0])) < 1e-12

    def test_plug_in(self):
        assert abs(nav_reward([10.0, 0.0, 0.0, 0.0]) - (np.sqrt(200.0) - 10.0)) < 1e-12


class TestCartpole:
    def test_upright_rest_is_fixed_point(self):
        out = cartpole_step([0.0, 0.0, 0.0, 0.0], [0.0], dt=0.02)
        assert np.array_equal(out, [0.0, 0.0, 0.0, 0.0])

    def test_unstable_equilibrium_diverges(self):
        s = np.array([0.0, 0.0, 0.01, 0.0])
        for _ in range(50):
            s = cartpole_step(s, [0.0], dt=0.02)
        assert abs(s[2]) > 0.01 * 5

    def test_force_sign_moves_cart(self):
        out = cartpole_step([0.0, 0.0, 0.0, 0.0], [10.0], dt=0.02)
        assert out[1] > 0.0

    def test_energy_drift_under_one_percent(self):
        # free swing for one episode; relative to the pole's energy scale
        params = CartpoleEnv().params
        s = np.array([0.0, 0.0, 2.8, 0.0])
        e0 = cartpole_energy(s, params)
        scale = params.m_pole * params.gravity * params.half_length
        worst = 0.0
        for _ in range(100):
            s = cartpole_step(s, [0.0], dt=0.02, params=params)
            worst = max(worst, abs(cartpole_energy(s, params) - e0))
        assert worst / scale < 0.01

    def test_pd_expert_balances(self):
        env = CartpoleEnv()
        rng = rng_of(5)
        for _ in range(5):
            s = env.reset(rng)
            for _ in range(env.spec.horizon_steps):
                s = env.step(s, cartpole_expert_action(s))
            assert abs(s[2]) < 0.1

    def test_task_reward_is_upright_indicator(self):
        env = CartpoleEnv()
        assert env.task_reward([0.0, 0.0, 0.1, 0.0]) == 1.0
        assert env.task_reward([0.0, 0.0, 0.3, 0.0]) == 0.0


class TestExpert:
    def test_aligned_heading_drives_straight(self):
        a = nav_expert_action([0.0, 0.0, np.pi / 4, 0.0])
        assert abs(a[1]) < 1e-12
        assert a[0] > 0

    def test_facing_away_saturates_steering(self):
        a = nav_expert_action([0.0, 0.0, np.pi / 4 - np.pi, 0.0])
        assert abs(a[1]) == 0.4

    def test_circling_mode_inside_radius(self):
        a = nav_expert_action([9.5, 10.0, 0.0, 1.0], mode="circling")
        assert a[0] == 1.0
        assert abs(a[1] - np.arctan(0.3)) < 1e-12

    def test_direct_mode_parks_on_goal(self):
        env = NavEnv(params=NavParams(slip=True))
        rng = rng_of(11)
        s = env.reset(rng)
        for _ in range(100):
            s = env.step(s, nav_expert_action(s), rng)
        assert np.hypot(s[0] - 10.0, s[1] - 10.0) < 0.5

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            nav_expert_action([0.0, 0.0, 0.0, 0.0], mode="wander")


class TestGenerateDemos:
    def test_episode_counts(self):
        env = NavEnv()
        demos = generate_demos(env, nav_expert_action, 4, seed=1)
        assert len(demos.episodes) == 4
        for ep in demos.episodes:
            assert ep.shape == (101, 4)
        assert demos.n_transitions == 400

    def test_deterministic(self):
        env = NavEnv(params=NavParams(slip=True))
        a = generate_demos(env, nav_expert_action, 3, seed=9)
        b = generate_demos(env, nav_expert_action, 3, seed=9)
        for ea, eb in zip(a.episodes, b.episodes):
            assert np.array_equal(ea, eb)

    def test_distinct_seeds_distinct_episodes(self):
        env = NavEnv()
        demos = generate_demos(env, nav_expert_action, 3, seed=2)
        assert not np.array_equal(demos.episodes[0], demos.episodes[1])

    def test_rejects_zero_episodes(self):
        with pytest.raises(ValueError):
            generate_demos(NavEnv(), nav_expert_action, 0, seed=1)

    def test_transition_pairs_shape(self):
        env = NavEnv()
        demos = generate_demos(env, nav_expert_action, 2, seed=3)
        pairs = demos.transition_pairs()
        assert pairs.shape == (200, 8)
        assert np.array_equal(pairs[0, :4], demos.episodes[0][0])
        assert np.array_equal(pairs[0, 4:], demos.episodes[0][1])


class TestDemoCsv:
    def test_round_trip_lossless(self, tmp_path):
        env = NavEnv(params=NavParams(slip=True))
        demos = generate_demos(env, nav_expert_action, 3, seed=4)
        path = tmp_path / "demos.csv"
        write_demos(demos, path)
        loaded = read_demos(path)
        assert loaded.state_dim == 4
        for a, b in zip(demos.episodes, loaded.episodes):
            assert np.array_equal(a, b)

    def test_rejects_nan(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("episode,t,s0,s1\n0,0,1.0,nan\n")
        with pytest.raises(ValueError, match="line 2"):
            read_demos(path)

    def test_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("episode,t,a,b\n0,0,1.0,2.0\n")
        with pytest.raises(ValueError, match="line 1"):
            read_demos(path)

    def test_rejects_time_gap(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("episode,t,s0\n0,0,1.0\n0,2,2.0\n")
        with pytest.raises(ValueError, match="line 3"):
            read_demos(path)

    def test_240_rows_give_239_transitions(self, tmp_path):
        rows = ["episode,t,s0,s1"]
        rng = np.random.default_rng(0)
        for t in range(240):
            rows.append(f"0,{t},{rng.uniform():.6f},{rng.uniform():.6f}")
        path = tmp_path / "one.csv"
        path.write_text("\n".join(rows) + "\n")
        demos = read_demos(path)
        assert demos.n_transitions == 239

    def test_byte_identical_rewrites(self, tmp_path):
        env = NavEnv()
        demos = generate_demos(env, nav_expert_action, 2, seed=5)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_demos(demos, p1)
        write_demos(demos, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestWrapAngle:
    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_range_and_equivalence(self, a):
        w = float(wrap_angle(a))
        assert -np.pi < w <= np.pi
        assert abs(np.sin(w) - np.sin(a)) < 1e-9
        assert abs(np.cos(w) - np.cos(a)) < 1e-9

    def test_pi_maps_to_pi(self):
        assert wrap_angle(np.pi) == np.pi
        assert wrap_angle(-np.pi) == np.pi


class TestEpisodeSpec:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            EpisodeSpec(horizon_steps=0)
        with pytest.raises(ValueError):
            EpisodeSpec(dt=0.0)

    def test_env_randomness_flows_from_seed(self):
        env = NavEnv(params=NavParams(slip=True))
        s = np.array([0.0, 0.0, 0.2, 1.0])
        a = np.array([1.0, 0.2])
        out1 = env.step(s, a, rng_of(7))
        out2 = env.step(s, a, rng_of(7))
        assert np.array_equal(out1, out2)


class TestDemoSetValidation:
    def test_rejects_nonfinite_episode(self):
        with pytest.raises(ValueError):
            DemoSet(episodes=[np.array([[0.0, np.inf]])], state_dim=2)

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            DemoSet(episodes=[np.zeros((5, 3))], state_dim=2)
