"""Flat key=value training configuration.

Every field maps to exactly one line in the config file. Unknown keys are a
hard error so a typo can never silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from trfp.envs import ENV_NAMES

ABLATION_FLAGS = ("no_fm", "no_qguide", "no_tail")


@dataclass
class TrainConfig:
    env: str
    total_steps: int
    K: int = 4
    L: int = 1
    gamma: float = 0.99
    batch: int = 256
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    lr_alpha: float = 3e-4
    lambda_fm: float = 0.1
    hidden: tuple = (256, 256, 256)
    buffer: int = 1_000_000
    eval_steps: int = 4
    candidates: int = 4
    seed: int = 0
    warmup_random_steps: int = 5000
    alpha_init: float = 0.1
    checkpoint_every: int = 10_000
    no_fm: bool = False
    no_qguide: bool = False
    no_tail: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.env not in ENV_NAMES:
            raise ValueError(
                f"unknown environment {self.env!r}; choose from {ENV_NAMES}")
        if not 1 <= self.L <= self.K:
            raise ValueError(f"need 1 <= L <= K, got L={self.L}, K={self.K}")
        if self.lambda_fm < 0:
            raise ValueError("lambda_fm must be >= 0")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch < 1 or self.buffer < self.batch:
            raise ValueError("need buffer >= batch >= 1")
        if self.eval_steps < 1:
            raise ValueError("eval_steps must be >= 1")
        if self.total_steps < 0 or self.warmup_random_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if not self.hidden or any(int(h) < 1 for h in self.hidden):
            raise ValueError("hidden must be a non-empty list of widths >= 1")
        if self.alpha_init <= 0:
            raise ValueError("alpha_init must be > 0")

    # -------------------------------------------------------------- ablations

    def with_ablation(self, flag: str) -> "TrainConfig":
        if flag not in ABLATION_FLAGS:
            raise ValueError(
                f"unknown ablation {flag!r}; choose from {ABLATION_FLAGS}")
        out = dataclasses.replace(self, **{flag: True})
        if flag == "no_fm":
            out = dataclasses.replace(out, lambda_fm=0.0)
        elif flag == "no_qguide":
            out = dataclasses.replace(out, candidates=1)
        return out

    # ------------------------------------------------------------------- text

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "hidden":
                text = ",".join(str(int(h)) for h in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{f.name}={text}")
        return "\n".join(lines) + "\n"

    def to_file(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        seen = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, "
                                 f"got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in fields:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            if key in seen:
                raise ValueError(f"line {lineno}: duplicate config key "
                                 f"{key!r}")
            seen[key] = _convert(key, value)
        for name, f in fields.items():
            if name not in seen and f.default is dataclasses.MISSING:
                raise ValueError(f"missing required config key {name!r}")
        return cls(**seen)

    @classmethod
    def from_file(cls, path: str) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


_FIELD_KINDS = {
    "env": str, "total_steps": int, "K": int, "L": int, "gamma": float,
    "batch": int, "lr_actor": float, "lr_critic": float, "lr_alpha": float,
    "lambda_fm": float, "hidden": "int_list", "buffer": int,
    "eval_steps": int, "candidates": int, "seed": int,
    "warmup_random_steps": int, "alpha_init": float, "checkpoint_every": int,
    "no_fm": bool, "no_qguide": bool, "no_tail": bool,
}


def _convert(key: str, value: str):
    kind = _FIELD_KINDS[key]
    try:
        if kind == "int_list":
            return tuple(int(part) for part in value.split(",") if part)
        if kind is bool:
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: {exc}") from None
