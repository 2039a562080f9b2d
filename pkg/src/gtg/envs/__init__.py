"""Procedurally generated grid environments with a shared episodic interface."""

from .base import (
    ACTION_NAMES,
    ACTIONS,
    FAMILIES,
    NUM_ACTIONS,
    EnvConfig,
    EpisodeLog,
    GridEnv,
    Observation,
    flood_fill,
    replay,
    shortest_path,
)
from .boxworld import BoxState, BoxWorld, decode_box_state, encode_box_state, solve
from .lava import LavaCrossing, PortalLavaCrossing, decode_lava, lava_reward
from .rtfm import BlindPolicy, Rtfm, decode_rtfm, kb_signature, oracle_action

_REGISTRY = {
    "lava": LavaCrossing,
    "portal": PortalLavaCrossing,
    "boxworld": BoxWorld,
    "rtfm": Rtfm,
}


def make_env(config: EnvConfig) -> GridEnv:
    return _REGISTRY[config.family](config)


__all__ = [
    "ACTIONS",
    "ACTION_NAMES",
    "FAMILIES",
    "NUM_ACTIONS",
    "BlindPolicy",
    "BoxState",
    "BoxWorld",
    "EnvConfig",
    "EpisodeLog",
    "GridEnv",
    "LavaCrossing",
    "Observation",
    "PortalLavaCrossing",
    "Rtfm",
    "decode_box_state",
    "decode_lava",
    "decode_rtfm",
    "encode_box_state",
    "flood_fill",
    "kb_signature",
    "lava_reward",
    "make_env",
    "oracle_action",
    "replay",
    "shortest_path",
    "solve",
]
