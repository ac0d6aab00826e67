"""
RunConfig: one flat key=value file (toml syntax, no tables) overridden by CLI flags.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields

import toml

from rcm import RcmError, kappa_of_q, q_of_kappa

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("estimate", "exact", "enumerate", "verify")
EXACT_ACTIONS = ("ratio", "predict", "verify-channels", "verify-laplace", "density")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str = "estimate"
    action: str | None = None
    q: float | None = None
    kappa: float | None = None
    sizes: list[int] = field(default_factory=list)
    r: int | None = None
    delta: float = 0.5
    r_values: list[float] = field(default_factory=lambda: [0.1])
    x_values: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0])
    tau_values: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.5, 1.0, 2.0, 5.0])
    observable: str = "delta-R"
    n_samples: int = 1000
    seed: int | None = None
    workers: int = 1
    chains: int = 16
    burn_in: int | None = None
    subsample: int | None = None
    output_dir: str | None = None
    checkpoint_every: int = 0
    tol: float | None = None
    quad_tol: float = 1e-10
    fit: bool = False
    a: float = -1.0
    bc: str = "wired"

    @classmethod
    def load(cls, path: str) -> RunConfig:
        try:
            data = toml.load(path)
        except (OSError, toml.TomlDecodeError) as e:
            raise ConfigError(f"Cannot read config file {path}: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                raise ConfigError(f"Unknown config field '{key}'")
            if isinstance(value, dict):
                raise ConfigError(f"Config field '{key}' is a table; only flat key=value pairs are allowed")
        return cls(**data)

    def merged(self, overrides: dict) -> RunConfig:
        """Copy with every non-None override applied."""
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    def resolve(self) -> RunConfig:
        """Validate and derive q from κ or κ from q."""
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"subcommand must be one of {SUBCOMMANDS}, got {self.subcommand!r}")
        if self.q is not None and self.kappa is not None:
            raise ConfigError("Give exactly one of 'q' and 'kappa'")
        try:
            if self.q is not None and 0 < self.q <= 4:
                self.kappa = kappa_of_q(self.q)
            elif self.kappa is not None and 4 <= self.kappa < 8:
                self.q = q_of_kappa(self.kappa)
        except RcmError as e:
            raise ConfigError(str(e)) from e
        if self.subcommand in ("estimate", "enumerate") and self.q is None:
            raise ConfigError(f"'q' (or 'kappa' in [4, 8)) is required for {self.subcommand}")
        if self.subcommand == "exact":
            if self.action not in EXACT_ACTIONS:
                raise ConfigError(f"'action' must be one of {EXACT_ACTIONS}, got {self.action!r}")
            if self.kappa is None:
                raise ConfigError("'kappa' (or 'q' in (0, 4]) is required for exact")
        if self.subcommand == "estimate":
            if self.seed is None:
                raise ConfigError("'seed' is required for estimate")
            if not self.sizes:
                raise ConfigError("'sizes' must list at least one box half-side")
            if self.n_samples <= 0:
                raise ConfigError(f"'n_samples' must be positive, got {self.n_samples}")
            if self.observable in ("delta-rR", "ratio-A") and self.r is None:
                raise ConfigError(f"'r' is required for observable {self.observable}")
            if self.r is not None and self.r != int(self.r):
                raise ConfigError(f"'r' must be an integer radius, got {self.r}")
        if self.workers < 1:
            raise ConfigError(f"'workers' must be >= 1, got {self.workers}")
        if self.chains < 1:
            raise ConfigError(f"'chains' must be >= 1, got {self.chains}")
        if self.bc not in ("free", "wired"):
            raise ConfigError(f"'bc' must be free or wired, got {self.bc!r}")
        return self

    def canonical(self) -> str:
        """Sorted key=value rendering; output location and worker count excluded."""
        data = asdict(self)
        for key in ("output_dir", "workers", "checkpoint_every"):
            data.pop(key)
        return "\n".join(f"{k}={data[k]!r}" for k in sorted(data))

    def content_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()
