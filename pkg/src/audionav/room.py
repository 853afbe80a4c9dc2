"""Two-dimensional room with stationary talking speakers and a moving listener.

The listener always faces +y. Each speaker contributes its current utterance
to both ears, scaled by a linear distance roll-off and a constant-power pan
law. Gains are held constant over each rendered block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .audio import AudioClip, UtterancePool, next_utterance
from .errors import ConfigError, InvalidInputError, UsageError

RUNNING = "running"
SUCCESS = "success"
COLLISION = "collision"
OUT_OF_BOUNDS = "out_of_bounds"
TIMEOUT = "timeout"
OUTCOMES = (RUNNING, SUCCESS, COLLISION, OUT_OF_BOUNDS, TIMEOUT)

STEP_PENALTY = -0.001
MAX_PLACEMENT_ATTEMPTS = 10000

# Called on every freshly drawn utterance, e.g. to pitch-shift test audio.
ClipTransform = Callable[[AudioClip], AudioClip]


@dataclass(frozen=True)
class RoomConfig:
    width: float = 10.0
    height: float = 10.0
    d_max: float = 15.0
    contact_radius: float = 0.5
    agent_speed: float = 2.5
    sample_rate: int = 48000
    hop: int = 1024
    obs_len_per_channel: int = 1024
    max_steps: int = 1000
    n_speakers: int = 3
    target_index: int = 0

    def validate(self) -> None:
        for name in ("width", "height", "d_max", "contact_radius", "agent_speed",
                     "sample_rate", "hop", "obs_len_per_channel", "max_steps"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)}")
        if self.n_speakers < 1:
            raise ConfigError("n_speakers", f"must be >= 1, got {self.n_speakers}")
        if self.d_max < math.hypot(self.width, self.height):
            raise ConfigError("d_max", "must be at least the room diagonal so every source is audible")
        if self.hop > self.obs_len_per_channel:
            raise ConfigError("hop", "must not exceed obs_len_per_channel")
        if not 0 <= self.target_index < self.n_speakers:
            raise ConfigError("target_index", f"must lie in [0, {self.n_speakers}), got {self.target_index}")

    @property
    def obs_dim(self) -> int:
        return 2 * self.obs_len_per_channel

    @property
    def step_length(self) -> float:
        """Metres travelled per step at full speed along one axis."""
        return self.agent_speed * self.hop / self.sample_rate


@dataclass
class Speaker:
    position: np.ndarray
    pool: UtterancePool
    clip_index: int
    clip: AudioClip
    playhead: int


@dataclass
class EnvState:
    config: RoomConfig
    agent_pos: np.ndarray
    speakers: list[Speaker]
    rng: np.random.Generator
    history_left: np.ndarray
    history_right: np.ndarray
    step_count: int = 0
    outcome: str = RUNNING
    episode_reward: float = 0.0
    clip_transform: ClipTransform | None = field(default=None, repr=False)

    @property
    def pools(self) -> list[UtterancePool]:
        return [s.pool for s in self.speakers]

    @property
    def done(self) -> bool:
        return self.outcome != RUNNING


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    outcome: str


def attenuation(d: float, d_max: float) -> float:
    """Linear roll-off: 1 at the source, 0 at and beyond d_max."""
    return max(0.0, 1.0 - d / d_max)


def pan_gains(agent_pos, source_pos) -> tuple[float, float]:
    """Constant-power (left, right) gains for a listener facing +y."""
    dx = float(source_pos[0]) - float(agent_pos[0])
    dy = float(source_pos[1]) - float(agent_pos[1])
    p = 0.0 if dx == 0.0 and dy == 0.0 else math.sin(math.atan2(dx, dy))
    return math.sqrt((1.0 - p) / 2.0), math.sqrt((1.0 + p) / 2.0)


def _draw_clip(state: EnvState, speaker: Speaker) -> None:
    speaker.clip_index = next_utterance(speaker.pool, state.rng)
    clip = speaker.pool.clips[speaker.clip_index]
    speaker.clip = state.clip_transform(clip) if state.clip_transform else clip
    speaker.playhead = 0


def _read_speaker(state: EnvState, speaker: Speaker, n: int) -> np.ndarray:
    """Next n samples of a speaker's stream, drawing new utterances at clip ends."""
    out = np.empty(n, dtype=np.float64)
    filled = 0
    while filled < n:
        samples = speaker.clip.samples
        take = min(n - filled, samples.size - speaker.playhead)
        out[filled:filled + take] = samples[speaker.playhead:speaker.playhead + take]
        filled += take
        speaker.playhead += take
        if speaker.playhead == samples.size:
            _draw_clip(state, speaker)
    return out


def mix_block(state: EnvState, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Sum of all speakers into (left, right) before soft clipping; advances playheads."""
    if n < 1:
        raise InvalidInputError(f"block length must be >= 1, got {n}")
    left = np.zeros(n)
    right = np.zeros(n)
    d_max = state.config.d_max
    for speaker in state.speakers:
        d = math.hypot(speaker.position[0] - state.agent_pos[0], speaker.position[1] - state.agent_pos[1])
        g = attenuation(d, d_max)
        g_left, g_right = pan_gains(state.agent_pos, speaker.position)
        block = _read_speaker(state, speaker, n)
        left += (g * g_left) * block
        right += (g * g_right) * block
    return left, right


def render_stereo(state: EnvState, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Render n soft-clipped stereo samples and append them to the audio history."""
    left, right = mix_block(state, n)
    left = np.tanh(left)
    right = np.tanh(right)
    keep = state.config.obs_len_per_channel
    if n >= keep:
        state.history_left = left[-keep:].copy()
        state.history_right = right[-keep:].copy()
    else:
        state.history_left = np.concatenate([state.history_left[n:], left])
        state.history_right = np.concatenate([state.history_right[n:], right])
    return left, right


def make_observation(state: EnvState) -> np.ndarray:
    """[left | right] most recent samples, float32."""
    k = state.config.obs_len_per_channel
    if state.history_left.size < k or state.history_right.size < k:
        raise UsageError("audio history is shorter than the observation window")
    return np.concatenate([state.history_left[-k:], state.history_right[-k:]]).astype(np.float32)


def _place_speakers(config: RoomConfig, agent_pos: np.ndarray, rng: np.random.Generator) -> list[np.ndarray]:
    min_sep = 2 * config.contact_radius
    placed: list[np.ndarray] = []
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if len(placed) == config.n_speakers:
            break
        p = rng.uniform((0.0, 0.0), (config.width, config.height))
        if math.hypot(*(p - agent_pos)) < min_sep:
            continue
        if any(math.hypot(*(p - q)) < min_sep for q in placed):
            continue
        placed.append(p)
    if len(placed) < config.n_speakers:
        raise ConfigError("n_speakers", f"could not place {config.n_speakers} speakers after "
                          f"{MAX_PLACEMENT_ATTEMPTS} attempts; room too small")
    return placed


def reset(config: RoomConfig, pools: Sequence[UtterancePool], rng: np.random.Generator,
          clip_transform: ClipTransform | None = None) -> tuple[EnvState, np.ndarray]:
    """Start an episode: agent on the lower edge, speakers scattered inside the room.

    `rng` is owned by the returned state and drives all further randomness
    of the episode (utterance draws, playhead offsets).
    """
    config.validate()
    if len(pools) != config.n_speakers:
        raise InvalidInputError(f"expected {config.n_speakers} pools, got {len(pools)}")
    agent_pos = np.array([rng.uniform(0.0, config.width), 0.0])
    positions = _place_speakers(config, agent_pos, rng)
    k = config.obs_len_per_channel
    state = EnvState(config=config, agent_pos=agent_pos, speakers=[], rng=rng,
                     history_left=np.zeros(k), history_right=np.zeros(k),
                     clip_transform=clip_transform)
    for pos, pool in zip(positions, pools):
        if pool.sample_rate != config.sample_rate:
            raise InvalidInputError(f"pool {pool.speaker_id!r} is at {pool.sample_rate} Hz, "
                                    f"room expects {config.sample_rate} Hz")
        speaker = Speaker(position=pos, pool=pool, clip_index=0, clip=pool.clips[0], playhead=0)
        _draw_clip(state, speaker)
        # Start mid-clip so speakers are not phase-locked to episode start.
        speaker.playhead = int(rng.integers(len(speaker.clip)))
        state.speakers.append(speaker)
    render_stereo(state, k)
    return state, make_observation(state)


def step(state: EnvState, action) -> StepResult:
    """Advance one control step. Mutates `state` in place."""
    if state.done:
        raise UsageError(f"episode already finished with outcome {state.outcome!r}; call reset()")
    cfg = state.config
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
    state.agent_pos = state.agent_pos + a * cfg.step_length
    state.step_count += 1
    x, y = state.agent_pos

    reward = STEP_PENALTY
    if not (0.0 <= x <= cfg.width and 0.0 <= y <= cfg.height):
        state.outcome, reward = OUT_OF_BOUNDS, -1.0
    else:
        dists = [math.hypot(s.position[0] - x, s.position[1] - y) for s in state.speakers]
        if any(d <= cfg.contact_radius for i, d in enumerate(dists) if i != cfg.target_index):
            state.outcome, reward = COLLISION, -1.0
        elif dists[cfg.target_index] <= cfg.contact_radius:
            state.outcome, reward = SUCCESS, 1.0
        elif state.step_count >= cfg.max_steps:
            state.outcome = TIMEOUT
        else:
            render_stereo(state, cfg.hop)
    state.episode_reward += reward
    return StepResult(make_observation(state), reward, state.done, state.outcome)


def trajectory_record(state: EnvState, action, result: StepResult) -> dict:
    """One JSON-serializable line of a per-episode trajectory log."""
    return {
        "step": state.step_count,
        "agent_pos": [float(state.agent_pos[0]), float(state.agent_pos[1])],
        "action": [float(v) for v in np.asarray(action).reshape(2)],
        "reward": result.reward,
        "outcome": result.outcome,
    }
