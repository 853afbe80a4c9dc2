"""Audio-only navigation: a stereo room simulator and a PPO agent trained on raw audio."""

__version__ = "0.1.0"
