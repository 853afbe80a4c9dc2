"""Flat key=value run configuration.

File format: one `key = value` per line, `#` starts a comment, blank lines
are ignored. Keys are dotted (`ppo.lr`, `room.width`, `speaker.0.f0`).
Values are layered, later wins: built-in defaults, preset, config file,
command-line overrides. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .audio import DEFAULT_PROFILES, SpeakerProfile
from .errors import ConfigError, InvalidInputError
from .evaluation import RANDOM, TRAINED, EvalConfig
from .ppo import PpoConfig
from .room import RoomConfig

SEED_ENV = "AUDIONAV_SEED"
DEFAULT_SEED = 0


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int(text: str) -> int:
    # Accept 3e5-style counts, but only when they are whole numbers.
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _pitch_range(text: str):
    if text.strip().lower() in ("", "none", "off"):
        return None
    lo, sep, hi = text.partition(":")
    if not sep:
        raise ValueError(f"expected MIN:MAX, got {text!r}")
    return float(lo), float(hi)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


# key -> (parser, description). Defaults live in DEFAULTS below.
KEYS: dict[str, tuple[Callable[[str], object], str]] = {
    "seed": (_int, "master seed; every random stream is derived from it"),
    "preset": (str, "desk or paper"),
    "paths.out": (str, "output root"),
    "paths.data": (str, "pool manifest and WAV directory (default <out>/data)"),
    "paths.checkpoints": (str, "checkpoint directory (default <out>/checkpoints)"),
    "paths.reports": (str, "report directory (default <out>/reports)"),
    "data.n_train": (_int, "training utterances per speaker"),
    "data.n_test": (_int, "test utterances per speaker"),
    "data.export_wav": (_bool, "also write every utterance as a WAV file"),
    "net.hidden": (_int, "width of both hidden layers"),
    "train.checkpoint_every": (_int, "updates between periodic checkpoints"),
    "train.all_targets": (_bool, "train one agent per target speaker"),
    "eval.n_episodes": (_int, "episodes per evaluation block"),
    "eval.baseline_episodes": (_int, "episodes for the random-policy baseline"),
    "eval.policy": (str, "trained or random"),
    "eval.deterministic": (_bool, "act with the policy mean instead of sampling"),
    "eval.target_rotation": (_bool, "evaluate once per target speaker and average"),
    "eval.pitch_shift": (_pitch_range, "MIN:MAX percent pitch shift of test utterances, or none"),
    "eval.few_shot_size": (_int, "utterances per speaker for the few-shot agent"),
    "eval.few_shot": (_bool, "train a few-shot agent and compare it with the full-pool agent"),
    "eval.checkpoint": (str, "parameter file to evaluate (default <checkpoints>/final.bin)"),
    "train.resume": (_bool, "continue from the last training state in the checkpoint directory"),
}
for _f in dataclasses.fields(RoomConfig):
    KEYS[f"room.{_f.name}"] = (_int if _f.type in ("int", int) else float, f"room {_f.name}")
for _f in dataclasses.fields(PpoConfig):
    KEYS[f"ppo.{_f.name}"] = (_int if _f.type in ("int", int) else float, f"PPO {_f.name}")
_PROFILE_FIELDS = {"id": str, "f0": float, "harmonics": _floats, "am_rate": float, "jitter_pct": float}

DEFAULTS: dict[str, object] = {
    "seed": DEFAULT_SEED,
    "preset": "desk",
    "paths.out": "runs/default",
    "paths.data": "",
    "paths.checkpoints": "",
    "paths.reports": "",
    "data.n_train": 500,
    "data.n_test": 100,
    "data.export_wav": False,
    "net.hidden": 256,
    "train.checkpoint_every": 50,
    "train.all_targets": False,
    "eval.n_episodes": 100,
    "eval.baseline_episodes": 500,
    "eval.policy": TRAINED,
    "eval.deterministic": True,
    "eval.target_rotation": False,
    "eval.pitch_shift": None,
    "eval.few_shot_size": 1,
    "eval.few_shot": False,
    "eval.checkpoint": "",
    "train.resume": False,
}

# Presets only touch PPO settings. "paper" is the published schedule; "desk"
# is sized for a single CPU core in well under an hour.
PRESETS: dict[str, dict[str, object]] = {
    "paper": {"ppo.total_steps": 6_000_000, "ppo.gamma": 0.99, "ppo.c1": 0.95, "ppo.c2": 0.001,
              "ppo.epsilon": 0.2},
    # One CPU core: ~14 min of training. Success plateaus near 1e6 steps; lr 3e-4 collapsed more often.
    "desk": {"ppo.total_steps": 1_250_000, "ppo.horizon_T": 256, "ppo.n_envs": 8, "ppo.epochs_per_update": 4,
             "ppo.minibatch_size": 256, "ppo.lr": 1e-4},
}


def is_known_key(key: str) -> bool:
    if key in KEYS:
        return True
    parts = key.split(".")
    return len(parts) == 3 and parts[0] == "speaker" and parts[1].isdigit() and parts[2] in _PROFILE_FIELDS


def parse_value(key: str, text: str):
    if not is_known_key(key):
        raise ConfigError(key, "unknown configuration key")
    parser = KEYS[key][0] if key in KEYS else _PROFILE_FIELDS[key.split(".")[2]]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def read_config_file(path) -> dict[str, object]:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {raw!r}")
        key = key.strip()
        values[key] = parse_value(key, value.strip())
    return values


@dataclass
class RunConfig:
    room: RoomConfig
    ppo: PpoConfig
    eval: EvalConfig
    profiles: tuple[SpeakerProfile, ...]
    seed: int
    preset: str
    out_dir: Path
    data_dir: Path
    checkpoint_dir: Path
    report_dir: Path
    n_train: int = 500
    n_test: int = 100
    export_wav: bool = False
    hidden: int = 256
    checkpoint_every: int = 50
    all_targets: bool = False
    baseline_episodes: int = 500
    few_shot_size: int = 1
    values: dict = field(default_factory=dict, repr=False)

    def validate(self) -> None:
        for prefix, sub in (("room", self.room), ("ppo", self.ppo), ("eval", self.eval)):
            try:
                sub.validate()
            except ConfigError as exc:
                key = _EVAL_KEYS.get(exc.key, exc.key) if prefix == "eval" else f"{prefix}.{exc.key}"
                raise ConfigError(key, str(exc).split(": ", 1)[-1]) from None
        if self.n_train < 1:
            raise ConfigError("data.n_train", f"must be >= 1, got {self.n_train}")
        if self.n_test < 1:
            raise ConfigError("data.n_test", f"must be >= 1, got {self.n_test}")
        if self.hidden < 1:
            raise ConfigError("net.hidden", f"must be >= 1, got {self.hidden}")
        if not 1 <= self.few_shot_size <= self.n_train:
            raise ConfigError("eval.few_shot_size", f"must lie in [1, data.n_train], got {self.few_shot_size}")
        if self.baseline_episodes < 1:
            raise ConfigError("eval.baseline_episodes", f"must be >= 1, got {self.baseline_episodes}")
        if len(self.profiles) != self.room.n_speakers:
            raise ConfigError("room.n_speakers", f"{self.room.n_speakers} speakers but {len(self.profiles)} profiles")
        for i, profile in enumerate(self.profiles):
            try:
                profile.validate()
            except InvalidInputError as exc:
                name = "harmonics" if exc.field == "harmonic_gains" else exc.field
                raise ConfigError(f"speaker.{i}.{name}", str(exc)) from None

    def dump(self) -> str:
        """The fully merged configuration in file format."""
        return "".join(f"{k} = {_format(k, v)}\n" for k, v in sorted(self.values.items()))


# EvalConfig field -> config key.
_EVAL_KEYS = {"n_episodes": "eval.n_episodes", "pitch_shift_range": "eval.pitch_shift",
              "policy_mode": "eval.policy"}


def _format(key: str, value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if key == "eval.pitch_shift":
        return f"{value[0]:g}:{value[1]:g}"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _profile_values(profiles) -> dict[str, object]:
    out = {}
    for i, p in enumerate(profiles):
        out.update({f"speaker.{i}.id": p.speaker_id, f"speaker.{i}.f0": p.f0,
                    f"speaker.{i}.harmonics": tuple(p.harmonic_gains), f"speaker.{i}.am_rate": p.am_rate,
                    f"speaker.{i}.jitter_pct": p.jitter_pct})
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, preset, file values and overrides into a validated RunConfig."""
    file_values = file_values or {}
    overrides = overrides or {}
    for key in list(file_values) + list(overrides):
        if not is_known_key(key):
            raise ConfigError(key, "unknown configuration key")
    preset = overrides.get("preset", file_values.get("preset", DEFAULTS["preset"]))
    if preset not in PRESETS:
        raise ConfigError("preset", f"must be one of {sorted(PRESETS)}, got {preset!r}")
    values: dict[str, object] = dict(DEFAULTS)
    values.update({f"room.{f.name}": getattr(RoomConfig(), f.name) for f in dataclasses.fields(RoomConfig)})
    values.update({f"ppo.{f.name}": getattr(PpoConfig(), f.name) for f in dataclasses.fields(PpoConfig)})
    values.update(_profile_values(DEFAULT_PROFILES))
    values.update(PRESETS[preset])
    values.update(file_values)
    values.update(overrides)
    values["preset"] = preset

    room = RoomConfig(**{f.name: values[f"room.{f.name}"] for f in dataclasses.fields(RoomConfig)})
    ppo = PpoConfig(**{f.name: values[f"ppo.{f.name}"] for f in dataclasses.fields(PpoConfig)})
    policy = values["eval.policy"]
    if policy not in (TRAINED, RANDOM):
        raise ConfigError("eval.policy", f"must be '{TRAINED}' or '{RANDOM}', got {policy!r}")
    eval_cfg = EvalConfig(n_episodes=values["eval.n_episodes"], target_rotation=values["eval.target_rotation"],
                          pitch_shift_range=values["eval.pitch_shift"], policy_mode=policy,
                          deterministic_policy=values["eval.deterministic"])
    indices = sorted({int(k.split(".")[1]) for k in values if k.startswith("speaker.")})
    if indices != list(range(len(indices))):
        raise ConfigError("speaker", f"speaker indices must be contiguous from 0, got {indices}")
    profiles = []
    for i in indices:
        missing = [f for f in _PROFILE_FIELDS if f"speaker.{i}.{f}" not in values]
        if missing:
            raise ConfigError(f"speaker.{i}.{missing[0]}", "missing for a new speaker")
        profiles.append(SpeakerProfile(values[f"speaker.{i}.id"], values[f"speaker.{i}.f0"],
                                       values[f"speaker.{i}.harmonics"], values[f"speaker.{i}.am_rate"],
                                       values[f"speaker.{i}.jitter_pct"]))
    out = Path(values["paths.out"])
    cfg = RunConfig(
        room=room, ppo=ppo, eval=eval_cfg, profiles=tuple(profiles), seed=values["seed"], preset=preset,
        out_dir=out,
        data_dir=Path(values["paths.data"] or out / "data"),
        checkpoint_dir=Path(values["paths.checkpoints"] or out / "checkpoints"),
        report_dir=Path(values["paths.reports"] or out / "reports"),
        n_train=values["data.n_train"], n_test=values["data.n_test"], export_wav=values["data.export_wav"],
        hidden=values["net.hidden"], checkpoint_every=values["train.checkpoint_every"],
        all_targets=values["train.all_targets"], baseline_episodes=values["eval.baseline_episodes"],
        few_shot_size=values["eval.few_shot_size"], values=values,
    )
    cfg.validate()
    return cfg
