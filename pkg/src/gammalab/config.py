"""Run configuration and manifest."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .errors import ValidationError

COMMANDS = ("profile", "flow", "check", "deficit", "kernel", "battery")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on; serialises to canonical JSON."""

    command: str
    engine: str = "gauss"            # gauss | sphere:<n> | line:<name> | line:<csv path>
    operation: str = ""
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    out: str = "gammalab-out"
    seed: int = 0

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if not isinstance(self.params, dict) or not isinstance(self.tolerances, dict):
            raise ValidationError("params and tolerances must be objects")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")
        kind = self.engine.partition(":")[0]
        if kind not in ("gauss", "sphere", "line"):
            raise ValidationError(f"unknown engine {self.engine!r}")
        try:
            json.dumps(self.params, allow_nan=False)
            json.dumps(self.tolerances, allow_nan=False)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"config is not serialisable: {exc}") from exc

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - {"command", "engine", "operation", "params", "tolerances", "out", "seed"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "command" not in d:
            raise ValidationError("config needs a command")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed config: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str
    started: str
    finished: str = ""
    artifacts: list = field(default_factory=list)   # {"path", "sha256", "bytes"}
    exit_code: int = 0

    def to_dict(self) -> dict:
        return asdict(self)
