"""Glue between the data, room and training modules.

Every random stream of a run is derived from one master seed:

    data         utterance synthesis (per speaker: data/<speaker_id>)
    init         network initialization
    train        PPO run seed (policy sampling, shuffling, env streams)
    eval         evaluation episodes
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import net, ppo
from .audio import SpeakerProfile, UtterancePool, build_pools
from .room import ClipTransform, EnvState, RoomConfig, reset
from .seeding import derive_seed

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    train: list[UtterancePool]
    test: list[UtterancePool]

    def truncated(self, n_train: int) -> "Dataset":
        """Same test pools, train pools cut to their first n_train utterances."""
        train = [UtterancePool(p.speaker_id, p.clips[:n_train], "train", p.sources[:n_train]) for p in self.train]
        return Dataset(train, self.test)


def build_dataset(profiles: Sequence[SpeakerProfile], n_train: int, n_test: int, master_seed: int,
                  sample_rate: int) -> Dataset:
    train, test = [], []
    for profile in profiles:
        profile.validate()
        tr, te = build_pools(profile, n_train, n_test, derive_seed(master_seed, f"data/{profile.speaker_id}"),
                             sample_rate)
        train.append(tr)
        test.append(te)
    return Dataset(train, test)


class EnvFactory:
    """Builds freshly reset environments over a fixed set of pools.

    Called as factory(seed) for training, or with a target index and clip
    transform for evaluation.
    """

    def __init__(self, room: RoomConfig, pools: Sequence[UtterancePool]):
        self.room = room
        self.pools = list(pools)

    def __call__(self, seed: int, target_index: int | None = None,
                 clip_transform: ClipTransform | None = None) -> EnvState:
        return self.reset(seed, target_index, clip_transform)[0]

    def reset(self, seed: int, target_index: int | None = None,
              clip_transform: ClipTransform | None = None) -> tuple[EnvState, np.ndarray]:
        room = self.room if target_index is None else dataclasses.replace(self.room, target_index=target_index)
        return reset(room, self.pools, np.random.default_rng(seed), clip_transform)


def train_agent(room: RoomConfig, pools: Sequence[UtterancePool], config: ppo.PpoConfig, master_seed: int,
                hidden: int = 256, **train_kwargs) -> tuple[net.MlpParams, list[dict]]:
    room.validate()
    params = net.init(derive_seed(master_seed, "init"), obs_dim=room.obs_dim, hidden=hidden)
    return ppo.train(EnvFactory(room, pools), params, config, derive_seed(master_seed, "train"), **train_kwargs)
