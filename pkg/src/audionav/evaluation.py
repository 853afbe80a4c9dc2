"""Success-rate evaluation: trained or random policies, pitch-shifted test audio, few-shot comparison."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import net, ppo
from .audio import AudioClip, SpeakerProfile, pitch_shift
from .errors import ConfigError, FormatError
from .pipeline import EnvFactory, build_dataset, train_agent
from .room import SUCCESS, RoomConfig, step
from .seeding import derive_seed

log = logging.getLogger(__name__)

TRAINED = "trained"
RANDOM = "random"


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 100
    # Repeat the whole block once per target speaker and average.
    target_rotation: bool = False
    pitch_shift_range: tuple[float, float] | None = None
    policy_mode: str = TRAINED
    deterministic_policy: bool = True

    def validate(self) -> None:
        if self.n_episodes < 1:
            raise ConfigError("n_episodes", f"must be >= 1, got {self.n_episodes}")
        if self.policy_mode not in (TRAINED, RANDOM):
            raise ConfigError("policy_mode", f"must be '{TRAINED}' or '{RANDOM}', got {self.policy_mode!r}")
        if self.pitch_shift_range is not None:
            lo, hi = self.pitch_shift_range
            if not 0 <= lo <= hi < 50:
                raise ConfigError("pitch_shift_range", f"need 0 <= min <= max < 50, got {lo}:{hi}")


@dataclass
class EpisodeRecord:
    index: int
    target: int
    outcome: str
    steps: int
    reward: float
    env_seed: int
    pitch_factors: list[float] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome == SUCCESS


@dataclass
class EvalReport:
    config: dict
    seeds: dict
    episodes: list[EpisodeRecord]
    label: str = ""

    @property
    def success_rate(self) -> float:
        return sum(e.success for e in self.episodes) / len(self.episodes)

    def targets(self) -> list[int]:
        return sorted({e.target for e in self.episodes})

    def target_rate(self, target: int) -> float:
        block = [e for e in self.episodes if e.target == target]
        return sum(e.success for e in block) / len(block)

    @property
    def per_target(self) -> dict[int, float]:
        return {t: self.target_rate(t) for t in self.targets()}

    @property
    def average_success_rate(self) -> float:
        """Mean of the per-target rates (equal to success_rate when blocks are equal in size)."""
        rates = list(self.per_target.values())
        return sum(rates) / len(rates)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "seeds": self.seeds,
            "episodes": [dataclasses.asdict(e) for e in self.episodes],
            "success_rate": self.success_rate,
            "per_target_success": {str(k): v for k, v in self.per_target.items()},
            "average_success_rate": self.average_success_rate,
        }


def _policy_for(params, target: int):
    if isinstance(params, Mapping):
        if target not in params:
            raise ConfigError("params", f"no parameters for target speaker {target}")
        return params[target]
    return params


def _check_shapes(params: net.MlpParams, obs_dim: int) -> None:
    h = params.b1.size
    expected = {"W1": (obs_dim, h), "b1": (h,), "W2": (h, h), "b2": (h,), "W_pi": (h, 2), "b_pi": (2,),
                "W_v": (h, 1), "b_v": (1,), "log_std": (2,)}
    if params.shapes() != expected:
        raise FormatError("shapes", f"parameter shapes {params.shapes()} do not fit observation length {obs_dim}")


def _pitch_transform(rng: np.random.Generator, lo: float, hi: float, factors: list[float]):
    def transform(clip: AudioClip) -> AudioClip:
        u = rng.uniform(lo, hi)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        factor = 1.0 + sign * u / 100.0
        factors.append(factor)
        return pitch_shift(clip, factor)
    return transform


def run_eval(env_factory: EnvFactory, params, eval_config: EvalConfig, seed: int, label: str = "") -> EvalReport:
    """Play n_episodes (per target, with rotation) and record each outcome.

    Episode i of every block uses the same environment seed, so blocks and
    policies evaluated with the same `seed` see identical geometries.
    `params` is one parameter set or a mapping target -> parameters; it is
    ignored for the random policy. Parameters are never modified.
    """
    eval_config.validate()
    room = env_factory.room
    if eval_config.policy_mode == TRAINED:
        if params is None:
            raise ConfigError("params", "a trained policy needs parameters")
        for p in (params.values() if isinstance(params, Mapping) else [params]):
            _check_shapes(p, room.obs_dim)
    targets = list(range(room.n_speakers)) if eval_config.target_rotation else [room.target_index]
    episodes = []
    for target in targets:
        policy = _policy_for(params, target) if eval_config.policy_mode == TRAINED else None
        for i in range(eval_config.n_episodes):
            env_seed = derive_seed(seed, f"episode/{i}")
            action_rng = np.random.default_rng(derive_seed(seed, f"action/{target}/{i}"))
            factors: list[float] = []
            transform = None
            if eval_config.pitch_shift_range is not None:
                pitch_rng = np.random.default_rng(derive_seed(seed, f"pitch/{target}/{i}"))
                transform = _pitch_transform(pitch_rng, *eval_config.pitch_shift_range, factors)
            state, obs = env_factory.reset(env_seed, target, transform)
            while True:
                if policy is None:
                    action = action_rng.uniform(-1.0, 1.0, 2)
                else:
                    action = ppo.policy_action(policy, obs, eval_config.deterministic_policy, action_rng)
                result = step(state, action)
                obs = result.observation
                if result.done:
                    break
            episodes.append(EpisodeRecord(i, target, result.outcome, state.step_count, state.episode_reward,
                                          env_seed, factors))
    # JSON-normalized so a written report reads back equal.
    echo = json.loads(json.dumps({**dataclasses.asdict(eval_config), "room": dataclasses.asdict(room)}))
    report = EvalReport(config=echo,
                        seeds={"eval": seed}, episodes=episodes, label=label)
    log.info("eval %s: success %.3f over %d episodes", label or eval_config.policy_mode,
             report.success_rate, len(episodes))
    return report


def run_pitch_shift_eval(env_factory: EnvFactory, params, eval_config: EvalConfig, seed: int,
                         label: str = "pitch-shift") -> EvalReport:
    """run_eval with every drawn test utterance pitch-shifted by 1 +/- u/100."""
    if eval_config.pitch_shift_range is None:
        raise ConfigError("pitch_shift_range", "pitch-shift evaluation needs a range such as (4, 8)")
    return run_eval(env_factory, params, eval_config, seed, label)


@dataclass
class FewShotResult:
    full: EvalReport
    few: EvalReport
    full_params: net.MlpParams
    few_params: net.MlpParams


def run_few_shot_experiment(profiles: Sequence[SpeakerProfile], room_config: RoomConfig,
                            ppo_config: ppo.PpoConfig, seed: int, *, n_train: int = 500, n_test: int = 100,
                            few_shot_size: int = 1, eval_config: EvalConfig | None = None,
                            full_params: net.MlpParams | None = None, dataset=None) -> FewShotResult:
    """Train on full pools and on `few_shot_size` utterances per speaker; test both on the same test pools.

    Both agents share the master seed, so they start from the same weights
    and are evaluated on identical episode geometries. A pre-trained
    full-pool agent can be supplied to skip its training.
    """
    eval_config = eval_config or EvalConfig()
    data = dataset or build_dataset(profiles, n_train, n_test, derive_seed(seed, "data"), room_config.sample_rate)
    few_data = data.truncated(few_shot_size)
    if full_params is None:
        full_params, _ = train_agent(room_config, data.train, ppo_config, seed)
    few_params, _ = train_agent(room_config, few_data.train, ppo_config, seed)
    factory = EnvFactory(room_config, data.test)
    eval_seed = derive_seed(seed, "eval")
    reports = []
    for label, params, pools in (("full", full_params, data.train), ("few-shot", few_params, few_data.train)):
        report = run_eval(factory, params, eval_config, eval_seed, label)
        report.config["train_pool_size"] = len(pools[0])
        reports.append(report)
    return FewShotResult(reports[0], reports[1], full_params, few_params)


def write_report(report: EvalReport, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True))


def read_report(path) -> EvalReport:
    try:
        data = json.loads(Path(path).read_text())
        episodes = [EpisodeRecord(**e) for e in data["episodes"]]
        report = EvalReport(data["config"], data["seeds"], episodes, data.get("label", ""))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError("report", f"{path}: {exc}") from exc
    if not episodes or abs(report.success_rate - data["success_rate"]) > 0:
        raise FormatError("success_rate", f"{path}: stored rate does not match its episodes")
    return report


SUMMARY_COLUMNS = ("condition", "target", "n_episodes", "successes", "success_rate")


def summarize(reports: Sequence[EvalReport]) -> list[dict]:
    """One row per (condition, target) block, plus an average row per condition with several targets."""
    rows = []
    for report in reports:
        condition = report.label or report.config.get("policy_mode", "")
        targets = report.targets()
        for t in targets:
            block = [e for e in report.episodes if e.target == t]
            rows.append({"condition": condition, "target": str(t), "n_episodes": len(block),
                         "successes": sum(e.success for e in block), "success_rate": report.target_rate(t)})
        if len(targets) > 1:
            rows.append({"condition": condition, "target": "average", "n_episodes": len(report.episodes),
                         "successes": sum(e.success for e in report.episodes),
                         "success_rate": report.average_success_rate})
    return rows


def write_summary(rows: Sequence[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
