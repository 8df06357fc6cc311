"""Run configuration: JSON with strict unknown-key rejection.

Every field has a documented default (the ``DEFAULTS`` table below); an
empty or absent config file means "all defaults". Unknown keys are
errors, not warnings: silent drift in a reproducibility-focused tool is
worse than a loud failure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

from .errors import ConfigError

# One entry per configurable knob: name -> (default, validator description).
DEFAULTS = {
    "schedule_kind": "cosine-vp",
    "steps": 50,
    "alpha_3d": 1.0,
    "alpha_2d": 1.0,
    "lambda_3d": 1.0,
    "lambda_2d": 1.0,
    "beta_3d": 1.0,
    "beta_2d": 1.0,
    "eta": 1.0,
    "sync_init": "identity",  # identity | disabled | seeded
    "sync_seed": 0,
    "k_m": 16,
    "d": 32,
    "t3d": 64,
    "t2d": 256,
    "d_text": 32,
    "seed": 0,
    "embedder": "hash",  # "hash" or "file:<path>"
    "eps_rel": 0.05,
    "tau_gap": 0.02,
    "theta_in": 0.9,
    "theta_sym": 0.5,
    "voxel_resolution": 64,
    "fscore_tau": 0.005,
    "chamfer_squared": True,
    "ood_min_count": 2,
    "k_sync": 2,
    "k_refine": 2,
    "identity_seed": 0,
    "planner_reset": False,
}

_POSITIVE_INT = {"steps", "k_m", "d", "t3d", "t2d", "d_text", "voxel_resolution", "ood_min_count"}
_NONNEG_INT = {"seed", "sync_seed", "identity_seed", "k_sync", "k_refine"}
_UNIT_INTERVAL = {"eps_rel", "tau_gap", "theta_in", "theta_sym"}
_FLOATS = {"alpha_3d", "alpha_2d", "lambda_3d", "lambda_2d", "beta_3d", "beta_2d", "eta", "fscore_tau"}
_BOOLS = {"chamfer_squared", "planner_reset"}


@dataclass
class RunConfig:
    schedule_kind: str = DEFAULTS["schedule_kind"]
    steps: int = DEFAULTS["steps"]
    alpha_3d: float = DEFAULTS["alpha_3d"]
    alpha_2d: float = DEFAULTS["alpha_2d"]
    lambda_3d: float = DEFAULTS["lambda_3d"]
    lambda_2d: float = DEFAULTS["lambda_2d"]
    beta_3d: float = DEFAULTS["beta_3d"]
    beta_2d: float = DEFAULTS["beta_2d"]
    eta: float = DEFAULTS["eta"]
    sync_init: str = DEFAULTS["sync_init"]
    sync_seed: int = DEFAULTS["sync_seed"]
    k_m: int = DEFAULTS["k_m"]
    d: int = DEFAULTS["d"]
    t3d: int = DEFAULTS["t3d"]
    t2d: int = DEFAULTS["t2d"]
    d_text: int = DEFAULTS["d_text"]
    seed: int = DEFAULTS["seed"]
    embedder: str = DEFAULTS["embedder"]
    eps_rel: float = DEFAULTS["eps_rel"]
    tau_gap: float = DEFAULTS["tau_gap"]
    theta_in: float = DEFAULTS["theta_in"]
    theta_sym: float = DEFAULTS["theta_sym"]
    voxel_resolution: int = DEFAULTS["voxel_resolution"]
    fscore_tau: float = DEFAULTS["fscore_tau"]
    chamfer_squared: bool = DEFAULTS["chamfer_squared"]
    ood_min_count: int = DEFAULTS["ood_min_count"]
    k_sync: int = DEFAULTS["k_sync"]
    k_refine: int = DEFAULTS["k_refine"]
    identity_seed: int = DEFAULTS["identity_seed"]
    planner_reset: bool = DEFAULTS["planner_reset"]

    def validate(self) -> "RunConfig":
        for name in _POSITIVE_INT:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"field {name!r}: expected integer >= 1, got {v!r}")
        if self.steps < 2:
            raise ConfigError(f"field 'steps': schedule needs at least 2 steps, got {self.steps}")
        for name in _NONNEG_INT:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"field {name!r}: expected integer >= 0, got {v!r}")
        for name in _UNIT_INTERVAL:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not (0.0 < float(v) <= 1.0):
                raise ConfigError(f"field {name!r}: expected a value in (0, 1], got {v!r}")
        for name in _FLOATS:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"field {name!r}: expected a number, got {v!r}")
        for name in _BOOLS:
            v = getattr(self, name)
            if not isinstance(v, bool):
                raise ConfigError(f"field {name!r}: expected true/false, got {v!r}")
        if self.fscore_tau <= 0:
            raise ConfigError(f"field 'fscore_tau': must be positive, got {self.fscore_tau}")
        if self.schedule_kind not in ("cosine-vp", "linear-vp"):
            raise ConfigError(f"field 'schedule_kind': unknown kind {self.schedule_kind!r}")
        if self.sync_init not in ("identity", "disabled", "seeded"):
            raise ConfigError(f"field 'sync_init': must be identity|disabled|seeded, got {self.sync_init!r}")
        if self.embedder != "hash" and not self.embedder.startswith("file:"):
            raise ConfigError(f"field 'embedder': expected 'hash' or 'file:<path>', got {self.embedder!r}")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def config_from_dict(raw: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object, got {type(raw).__name__}")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {unknown}; known keys are {sorted(known)}")
    cfg = RunConfig(**raw)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    """Load and validate a config file; empty/whitespace files mean all defaults."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        return RunConfig().validate()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from exc
    return config_from_dict(raw, source=str(path))


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
