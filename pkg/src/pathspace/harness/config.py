"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

LIST_FLOAT_KEYS = ("epsilon", "times", "r_grid", "dt_ladder", "x")


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit code 2."""


def _floats(text: str) -> list:
    out = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if part:
            try:
                out.append(float(part))
            except ValueError:
                raise ConfigError(f"not a number: {part!r}") from None
    return out


@dataclass
class ExperimentConfig:
    check: str = ""
    model: str = "heisenberg-1"
    epsilon: list = field(default_factory=lambda: [1.0])
    T: float = 1.0
    dt: float = 1e-3
    n_paths: int = 10_000
    seed: Optional[int] = None
    function: str = ""
    times: list = field(default_factory=list)
    gamma: str = "linear:0"
    output: str = ""
    workers: int = 1
    block: int = 2000
    n_inner: int = 64
    r_grid: list = field(default_factory=list)
    dt_ladder: list = field(default_factory=list)
    x: list = field(default_factory=list)

    # -- parsing -------------------------------------------------------------

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in fields(cls)]

    def update(self, values: dict) -> "ExperimentConfig":
        """Set fields from strings or already typed values."""
        names = set(self.field_names())
        for key, raw in values.items():
            if raw is None:
                continue
            key = key.replace("-", "_")
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, self._coerce(key, raw))
        return self

    def _coerce(self, key, raw):
        if key in LIST_FLOAT_KEYS:
            if isinstance(raw, str):
                return _floats(raw)
            return [float(v) for v in (raw if isinstance(raw, (list, tuple)) else [raw])]
        if key in ("T", "dt"):
            try:
                return float(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be a number, got {raw!r}") from None
        if key in ("n_paths", "seed", "workers", "block", "n_inner"):
            try:
                if isinstance(raw, str):
                    try:
                        return int(raw.strip())
                    except ValueError:
                        raw = float(raw)  # allow 1e5
                if isinstance(raw, float) and (not math.isfinite(raw) or raw != int(raw)):
                    raise ValueError
                return int(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
        return str(raw).strip()

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected key = value")
            values[key.strip()] = val.strip()
        return cls().update(values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def dumps(self) -> str:
        lines = []
        for name in self.field_names():
            v = getattr(self, name)
            if v is None:
                continue
            if isinstance(v, list):
                v = ", ".join(repr(float(x)) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{name} = {v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in self.field_names()}

    # -- validation ----------------------------------------------------------

    def validate(self, require_seed: bool = True) -> "ExperimentConfig":
        """Check ranges and grid divisibility before any sampling."""
        if require_seed and self.seed is None:
            raise ConfigError("--seed is required")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be positive, got {self.T}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        self.check_divides(self.T, self.dt)
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if not self.epsilon:
            raise ConfigError("epsilon list is empty")
        if any(not (e > 0 and math.isfinite(e)) for e in self.epsilon):
            raise ConfigError("epsilon values must be positive")
        if self.workers == 0 or self.block < 1 or self.n_inner < 1:
            raise ConfigError("workers must be nonzero, block and n_inner positive")
        for t in self.times:
            if not 0 < t <= self.T:
                raise ConfigError(f"cylinder time {t} outside (0, T]")
            self.check_divides(t, self.dt)
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("times must be strictly increasing")
        if any(d <= 0 for d in self.dt_ladder):
            raise ConfigError("dt_ladder values must be positive")
        return self

    @staticmethod
    def check_divides(t: float, dt: float) -> None:
        k = t / dt
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigError(f"{t:g} is not a multiple of dt={dt:g}")
