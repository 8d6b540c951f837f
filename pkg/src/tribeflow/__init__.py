"""Latent-environment semi-Markov random walks over user trajectories."""
from .corpus import EventLog, dedup_revisits, parse_events, read_events, temporal_split
from .windows import WindowSet, build_windows
from .state import Hyperparams, Model, ModelState
from .sampler import TrainConfig, fit, train

__version__ = "0.1.0"
