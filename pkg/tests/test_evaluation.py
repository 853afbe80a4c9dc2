import numpy as np
import pytest

from audionav import net, ppo
from audionav.audio import DEFAULT_PROFILES, UtterancePool, synth_utterance
from audionav.errors import ConfigError, FormatError
from audionav.evaluation import (
    RANDOM,
    EvalConfig,
    EvalReport,
    EpisodeRecord,
    read_report,
    run_eval,
    run_few_shot_experiment,
    run_pitch_shift_eval,
    summarize,
    write_report,
    write_summary,
)
from audionav.pipeline import Dataset, EnvFactory
from audionav.room import COLLISION, SUCCESS, RoomConfig

ROOM = RoomConfig(hop=64, obs_len_per_channel=64, max_steps=80)


@pytest.fixture(scope="module")
def pools():
    return [UtterancePool(p.speaker_id, [synth_utterance(p, 1.0, i) for i in range(3)], "test")
            for p in DEFAULT_PROFILES]


@pytest.fixture(scope="module")
def factory(pools):
    return EnvFactory(ROOM, pools)


@pytest.fixture(scope="module")
def params():
    return net.init(0, obs_dim=ROOM.obs_dim, hidden=32)


def snapshot(p):
    return [a.copy() for _, a in p.items()]


class TestRunEval:
    def test_success_rate_is_count(self, factory, params):
        report = run_eval(factory, params, EvalConfig(n_episodes=12), seed=3)
        assert len(report.episodes) == 12
        assert report.success_rate == sum(e.outcome == SUCCESS for e in report.episodes) / 12

    def test_reproducible(self, factory, params):
        a = run_eval(factory, params, EvalConfig(n_episodes=8), seed=3)
        b = run_eval(factory, params, EvalConfig(n_episodes=8), seed=3)
        assert a.to_dict() == b.to_dict()

    def test_stochastic_reproducible(self, factory, params):
        cfg = EvalConfig(n_episodes=6, deterministic_policy=False)
        assert run_eval(factory, params, cfg, 1).to_dict() == run_eval(factory, params, cfg, 1).to_dict()

    def test_params_untouched(self, factory, params):
        before = snapshot(params)
        run_eval(factory, params, EvalConfig(n_episodes=4), seed=0)
        assert all(np.array_equal(a, b) for a, (_, b) in zip(before, params.items()))

    def test_random_policy(self, factory):
        report = run_eval(factory, None, EvalConfig(n_episodes=10, policy_mode=RANDOM), seed=0)
        assert report.config["policy_mode"] == RANDOM and len(report.episodes) == 10

    def test_same_geometry_across_policies(self, factory, params):
        a = run_eval(factory, params, EvalConfig(n_episodes=5), seed=9)
        b = run_eval(factory, None, EvalConfig(n_episodes=5, policy_mode=RANDOM), seed=9)
        assert [e.env_seed for e in a.episodes] == [e.env_seed for e in b.episodes]

    def test_forced_collision(self, pools):
        # A narrow room wedges the agent between speakers; pushing into one ends the episode at once.
        class Wedged(EnvFactory):
            def reset(self, seed, target_index=None, clip_transform=None):
                state, obs = super().reset(seed, target_index, clip_transform)
                state.agent_pos = np.array([5.0, 5.0])
                state.speakers[1].position = np.array([5.0, 5.0 + 0.5 * ROOM.contact_radius])
                return state, obs

        report = run_eval(Wedged(ROOM, pools), None, EvalConfig(n_episodes=1, policy_mode=RANDOM), seed=0)
        assert report.episodes[0].outcome == COLLISION and report.success_rate == 0.0

    def test_target_rotation(self, factory, params):
        report = run_eval(factory, {0: params, 1: params, 2: params}, EvalConfig(n_episodes=4, target_rotation=True), 2)
        assert report.targets() == [0, 1, 2] and len(report.episodes) == 12
        assert report.average_success_rate == pytest.approx(np.mean(list(report.per_target.values())))

    def test_missing_target_params(self, factory, params):
        with pytest.raises(ConfigError):
            run_eval(factory, {0: params}, EvalConfig(n_episodes=1, target_rotation=True), 0)

    def test_shape_mismatch(self, factory):
        with pytest.raises(FormatError):
            run_eval(factory, net.init(0, obs_dim=64, hidden=8), EvalConfig(n_episodes=1), 0)

    @pytest.mark.parametrize("bad", [dict(n_episodes=0), dict(pitch_shift_range=(8, 4)),
                                     dict(pitch_shift_range=(0, 50)), dict(policy_mode="greedy")])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            EvalConfig(**bad).validate()


class TestPitchShift:
    def test_null_shift_is_identity(self, factory, params):
        plain = run_eval(factory, params, EvalConfig(n_episodes=6), seed=4)
        null = run_pitch_shift_eval(factory, params, EvalConfig(n_episodes=6, pitch_shift_range=(0, 0)), seed=4)
        assert [(e.outcome, e.steps, e.reward) for e in plain.episodes] == \
               [(e.outcome, e.steps, e.reward) for e in null.episodes]

    def test_factor_ranges(self, factory, params):
        report = run_pitch_shift_eval(factory, params, EvalConfig(n_episodes=10, pitch_shift_range=(4, 8)), 5)
        factors = np.array([f for e in report.episodes for f in e.pitch_factors])
        assert factors.size >= 30
        low = (factors >= 0.92) & (factors <= 0.96)
        high = (factors >= 1.04) & (factors <= 1.08)
        assert np.all(low | high) and low.any() and high.any()

    def test_requires_range(self, factory, params):
        with pytest.raises(ConfigError):
            run_pitch_shift_eval(factory, params, EvalConfig(n_episodes=1), 0)


class TestFewShot:
    def test_paired_reports(self, pools):
        train = [UtterancePool(p.speaker_id, p.clips, "train") for p in pools]
        data = Dataset(train, pools)
        cfg = ppo.PpoConfig(horizon_T=32, n_envs=2, minibatch_size=32, epochs_per_update=1, total_steps=64)
        result = run_few_shot_experiment(DEFAULT_PROFILES, ROOM, cfg, seed=1, dataset=data,
                                         eval_config=EvalConfig(n_episodes=5))
        assert result.full.config["train_pool_size"] == 3 and result.few.config["train_pool_size"] == 1
        assert [e.env_seed for e in result.full.episodes] == [e.env_seed for e in result.few.episodes]
        assert result.full.label == "full" and result.few.label == "few-shot"


class TestReports:
    def test_round_trip(self, factory, params, tmp_path):
        report = run_pitch_shift_eval(factory, params, EvalConfig(n_episodes=3, pitch_shift_range=(4, 8)), 0)
        write_report(report, tmp_path / "r" / "report.json")
        back = read_report(tmp_path / "r" / "report.json")
        assert back.to_dict() == report.to_dict()

    def test_corrupt(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(FormatError):
            read_report(tmp_path / "bad.json")

    def test_summary_rows(self, tmp_path):
        episodes = [EpisodeRecord(i, t, SUCCESS if (i + t) % 2 else COLLISION, 5, 0.0, i)
                    for t in range(3) for i in range(4)]
        report = EvalReport({"policy_mode": "trained"}, {"eval": 0}, episodes, "trained")
        rows = summarize([report])
        assert [r["target"] for r in rows] == ["0", "1", "2", "average"]
        assert all(0.0 <= r["success_rate"] <= 1.0 for r in rows)
        assert rows[-1]["success_rate"] == pytest.approx(0.5)
        write_summary(rows, tmp_path / "summary.csv")
        lines = (tmp_path / "summary.csv").read_text().splitlines()
        assert lines[0] == "condition,target,n_episodes,successes,success_rate" and len(lines) == 5
