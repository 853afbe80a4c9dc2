import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audionav.audio import DEFAULT_PROFILES, AudioClip, UtterancePool, synth_utterance
from audionav.errors import ConfigError, UsageError
from audionav.room import (
    COLLISION,
    OUT_OF_BOUNDS,
    RUNNING,
    SUCCESS,
    TIMEOUT,
    EnvState,
    RoomConfig,
    Speaker,
    attenuation,
    make_observation,
    mix_block,
    pan_gains,
    render_stereo,
    reset,
    step,
)

coords = st.floats(-20, 20, allow_nan=False)


@pytest.fixture(scope="module")
def pools():
    return [UtterancePool(p.speaker_id, [synth_utterance(p, 1.0, i) for i in range(2)]) for p in DEFAULT_PROFILES]


def constant_pool(value=1.0, n=4096):
    return UtterancePool("const", [AudioClip(np.full(n, value, dtype=np.float32))])


def placed(config, pools, agent, speakers, seed=0):
    state, _ = reset(config, pools, np.random.default_rng(seed))
    state.agent_pos = np.array(agent, dtype=float)
    for s, pos in zip(state.speakers, speakers):
        s.position = np.array(pos, dtype=float)
    return state


class TestAttenuation:
    def test_endpoints(self):
        assert attenuation(0.0, 15.0) == 1.0
        assert attenuation(15.0, 15.0) == 0.0
        assert attenuation(20.0, 15.0) == 0.0

    def test_midpoint(self):
        assert attenuation(7.5, 15.0) == 0.5

    @settings(max_examples=100)
    @given(a=st.floats(0, 30), b=st.floats(0, 30))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert attenuation(lo, 15.0) >= attenuation(hi, 15.0)


class TestPanGains:
    def test_ahead(self):
        gl, gr = pan_gains((0, 0), (0, 5))
        assert gl == pytest.approx(0.70711, abs=1e-5) and gr == pytest.approx(0.70711, abs=1e-5)

    def test_hard_right(self):
        assert pan_gains((0, 0), (5, 0)) == pytest.approx((0.0, 1.0), abs=1e-12)

    def test_front_left_diagonal(self):
        gl, gr = pan_gains((0, 0), (-3, 3))
        assert gl == pytest.approx(0.92388, abs=1e-5) and gr == pytest.approx(0.38268, abs=1e-5)

    def test_coincident(self):
        assert pan_gains((1, 2), (1, 2)) == pytest.approx((math.sqrt(0.5), math.sqrt(0.5)))

    @settings(max_examples=200)
    @given(ax=coords, ay=coords, sx=coords, sy=coords)
    def test_constant_power(self, ax, ay, sx, sy):
        gl, gr = pan_gains((ax, ay), (sx, sy))
        assert abs(gl * gl + gr * gr - 1.0) <= 1e-9

    @settings(max_examples=200)
    @given(dx=coords, dy=coords)
    def test_mirror_swaps(self, dx, dy):
        assert pan_gains((0, 0), (dx, dy)) == pan_gains((0, 0), (-dx, dy))[::-1]


class TestRender:
    def test_single_source_closed_form(self):
        cfg = RoomConfig(n_speakers=1)
        state = placed(cfg, [constant_pool()], (5.0, 0.0), [(5.0, 7.5)])
        left, right = render_stereo(state, 256)
        expected = math.tanh(0.5 * math.sqrt(0.5))
        assert np.allclose(left, expected, atol=1e-12) and np.allclose(right, expected, atol=1e-12)
        assert expected == pytest.approx(math.tanh(0.5 * 0.70711), abs=1e-5)

    def test_no_speakers_is_silent(self):
        cfg = RoomConfig(n_speakers=1)
        state = EnvState(cfg, np.array([1.0, 1.0]), [], np.random.default_rng(0), np.zeros(1024), np.zeros(1024))
        left, right = render_stereo(state, 1024)
        assert not left.any() and not right.any()
        assert not make_observation(state).any()

    def test_colocated_sources_double(self):
        single = placed(RoomConfig(n_speakers=1), [constant_pool(0.3)], (2.0, 1.0), [(4.0, 6.0)])
        double = placed(RoomConfig(n_speakers=2, target_index=0), [constant_pool(0.3)] * 2, (2.0, 1.0),
                        [(4.0, 6.0), (4.0, 6.0)])
        l1, r1 = mix_block(single, 128)
        l2, r2 = mix_block(double, 128)
        assert np.array_equal(l2, 2 * l1) and np.array_equal(r2, 2 * r1)

    def test_playhead_loops_into_new_utterance(self):
        cfg = RoomConfig(n_speakers=1)
        pool = UtterancePool("ramp", [AudioClip(np.linspace(0, 0.5, 100, dtype=np.float32))])
        state = placed(cfg, [pool], (5.0, 0.0), [(5.0, 5.0)])
        state.speakers[0].playhead = 90
        mix_block(state, 25)
        assert state.speakers[0].playhead == 15 and 0 <= state.speakers[0].playhead < 100

    def test_hop_equal_window_observation_is_last_block(self, pools):
        state, _ = reset(RoomConfig(), pools, np.random.default_rng(1))
        state.agent_pos = np.array([5.0, 0.5])
        for s, pos in zip(state.speakers, [(2, 9), (5, 9), (8, 9)]):
            s.position = np.array(pos, dtype=float)
        snapshot = [(s.clip, s.playhead) for s in state.speakers]
        result = step(state, [0.0, 1.0])
        assert result.outcome == RUNNING
        # Replay the same block from the recorded playheads at the post-move position.
        probe = placed(RoomConfig(), pools, state.agent_pos, [s.position for s in state.speakers])
        for s, (clip, head) in zip(probe.speakers, snapshot):
            s.clip, s.playhead = clip, head
        probe.rng = np.random.default_rng(12345)
        left, right = render_stereo(probe, 1024)
        assert np.array_equal(result.observation, np.concatenate([left, right]).astype(np.float32))


class TestReset:
    def test_agent_on_lower_edge(self, pools):
        for seed in range(20):
            state, obs = reset(RoomConfig(), pools, np.random.default_rng(seed))
            assert state.agent_pos[1] == 0.0 and 0 <= state.agent_pos[0] <= 10
            assert obs.shape == (2048,)

    def test_separation(self, pools):
        cfg = RoomConfig()
        for seed in range(50):
            state, _ = reset(cfg, pools, np.random.default_rng(seed))
            pos = [s.position for s in state.speakers]
            for i in range(3):
                assert np.linalg.norm(pos[i] - state.agent_pos) >= 2 * cfg.contact_radius
                for j in range(i):
                    assert np.linalg.norm(pos[i] - pos[j]) >= 2 * cfg.contact_radius

    def test_deterministic(self, pools):
        a, oa = reset(RoomConfig(), pools, np.random.default_rng(7))
        b, ob = reset(RoomConfig(), pools, np.random.default_rng(7))
        assert np.array_equal(oa, ob) and np.array_equal(a.agent_pos, b.agent_pos)
        assert all(np.array_equal(x.position, y.position) and x.clip_index == y.clip_index
                   and x.playhead == y.playhead for x, y in zip(a.speakers, b.speakers))

    def test_room_too_small(self, pools):
        cfg = RoomConfig(width=1.0, height=1.0, d_max=2.0)
        with pytest.raises(ConfigError):
            reset(cfg, pools, np.random.default_rng(0))

    @pytest.mark.parametrize("bad", [dict(d_max=10.0), dict(hop=2048), dict(target_index=3), dict(width=0.0)])
    def test_invalid_config(self, pools, bad):
        with pytest.raises(ConfigError):
            reset(RoomConfig(**bad), pools, np.random.default_rng(0))


class TestStep:
    def test_reach_target(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 5.0), [(5.0, 5.52), (1, 1), (9, 1)])
        result = step(state, [0.0, 1.0])
        assert (result.reward, result.outcome, result.done) == (1.0, SUCCESS, True)

    def test_collide_with_other(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 5.0), [(1, 1), (5.0, 5.52), (9, 1)])
        result = step(state, [0.0, 1.0])
        assert (result.reward, result.outcome) == (-1.0, COLLISION)

    def test_ordinary_move(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 2.0), [(1, 9), (5, 9), (9, 9)])
        result = step(state, [0.2, 0.4])
        assert (result.reward, result.outcome, result.done) == (-0.001, RUNNING, False)
        assert np.allclose(state.agent_pos, [5.0 + 0.2 * 2.5 * 1024 / 48000, 2.0 + 0.4 * 2.5 * 1024 / 48000])

    def test_out_of_bounds(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 0.0), [(1, 9), (5, 9), (9, 9)])
        result = step(state, [0.0, -1.0])
        assert (result.reward, result.outcome) == (-1.0, OUT_OF_BOUNDS)

    def test_out_of_bounds_checked_before_contact(self, pools):
        state = placed(RoomConfig(), pools, (0.01, 5.0), [(0.0, 5.0), (5, 9), (9, 9)])
        assert step(state, [-1.0, 0.0]).outcome == OUT_OF_BOUNDS

    def test_collision_checked_before_success(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 5.0), [(5.0, 5.3), (5.0, 4.7), (9, 9)])
        assert step(state, [0.0, 0.0]).outcome == COLLISION

    def test_action_clamped(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 2.0), [(1, 9), (5, 9), (9, 9)])
        step(state, [10.0, -7.0])
        d = 2.5 * 1024 / 48000
        assert np.allclose(state.agent_pos, [5.0 + d, 2.0 - d])

    def test_timeout(self, pools):
        state = placed(RoomConfig(max_steps=3), pools, (5.0, 2.0), [(1, 9), (5, 9), (9, 9)])
        outcomes = [step(state, [0.0, 0.0]) for _ in range(3)]
        assert [r.outcome for r in outcomes] == [RUNNING, RUNNING, TIMEOUT]
        assert outcomes[-1].reward == -0.001 and outcomes[-1].done

    def test_step_after_done(self, pools):
        state = placed(RoomConfig(), pools, (5.0, 0.0), [(1, 9), (5, 9), (9, 9)])
        step(state, [0.0, -1.0])
        with pytest.raises(UsageError):
            step(state, [0.0, 1.0])

    def test_deterministic_trajectories(self, pools):
        actions = np.random.default_rng(0).uniform(-1, 1, (300, 2))

        def run():
            state, obs = reset(RoomConfig(), pools, np.random.default_rng(11))
            out = [obs]
            for a in actions:
                r = step(state, a)
                out.append(r.observation)
                out.append(np.array([r.reward]))
                if r.done:
                    state, obs = reset(state.config, state.pools, state.rng)
                    out.append(obs)
            return out

        assert all(np.array_equal(a, b) for a, b in zip(run(), run()))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6), bias=st.floats(-0.5, 1.0))
    def test_episode_invariants(self, pools, seed, bias):
        cfg = RoomConfig(max_steps=200)
        rng = np.random.default_rng(seed)
        state, obs = reset(cfg, pools, np.random.default_rng(seed))
        total, n_terminal = 0.0, 0
        while True:
            r = step(state, rng.uniform(-1, 1, 2) + np.array([0.0, bias]))
            assert obs.shape == (2048,) and np.max(np.abs(r.observation)) <= 1.0
            assert r.done == (r.outcome != RUNNING)
            total += r.reward
            if r.done:
                n_terminal += 1
                break
        assert n_terminal == 1 and r.outcome in (SUCCESS, COLLISION, OUT_OF_BOUNDS, TIMEOUT)
        assert -1.0 - 0.001 * cfg.max_steps - 1e-12 <= total <= 1.0
        assert total == pytest.approx(state.episode_reward)
