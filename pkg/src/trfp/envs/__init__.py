"""Built-in continuous-control environments behind one contract."""

from trfp.envs.base import Env, EnvError, write_trajectory_csv
from trfp.envs.multigoal import MultigoalEnv, MultigoalSpec
from trfp.envs.pendulum import PendulumEnv
from trfp.envs.reacher import ReacherEnv

ENV_NAMES = ("multigoal", "pendulum", "reacher")

_REGISTRY = {
    "multigoal": MultigoalEnv,
    "pendulum": PendulumEnv,
    "reacher": ReacherEnv,
}


def make_env(name: str) -> Env:
    """Construct a fresh environment instance by registry name."""
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}") from None


__all__ = [
    "ENV_NAMES",
    "Env",
    "EnvError",
    "MultigoalEnv",
    "MultigoalSpec",
    "PendulumEnv",
    "ReacherEnv",
    "make_env",
    "write_trajectory_csv",
]
