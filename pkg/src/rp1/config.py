"""Run configuration: nested dataclasses serialized as flat dotted-key JSON."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from rp1.collector import CollectorConfig
from rp1.ensemble import EnsembleConfig
from rp1.envs import ENV_NAMES
from rp1.policy import PolicyConfig
from rp1.selector import SelectorConfig

MODES = ("rp1", "greedy", "vr_fixed", "rp1_lambda0", "rp1_no_earlystop", "rp1_statevar", "model_free")
SCALES = ("desk", "paper")
SECTIONS = ("ensemble", "policy", "selector", "collector")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    env: str = "point_mass"
    mode: str = "rp1"
    seed: int = 0
    scale: str = "desk"
    n_initial: int = 2000
    iterations: int = 30
    max_timesteps: int | None = None
    horizon: int | None = None
    env_init_noise: float | None = None
    episode_termination: str = "off"
    eval_episodes: int = 5
    model_free_budget: int = 100_000
    save_checkpoints: bool = False
    log_model_rollouts: bool = False
    log_wall_clock: bool = False
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    selector: SelectorConfig = field(default_factory=SelectorConfig)
    collector: CollectorConfig = field(default_factory=CollectorConfig)

    # -- mode semantics -----------------------------------------------------

    @property
    def uses_selector(self) -> bool:
        return self.mode in ("rp1", "rp1_no_earlystop", "rp1_statevar")

    @property
    def uses_early_stop(self) -> bool:
        return self.mode in ("rp1", "rp1_lambda0", "rp1_statevar")

    @property
    def fixed_lambda(self) -> float | None:
        return {"greedy": 0.0, "rp1_lambda0": 0.0, "vr_fixed": 0.5, "model_free": 0.0}.get(self.mode)

    @property
    def variance_source(self) -> str:
        return "state" if self.mode == "rp1_statevar" else "reward"

    def validate(self) -> "RunConfig":
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}; choose from {ENV_NAMES}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}; choose from {SCALES}")
        if self.episode_termination != "off":
            raise ConfigError("episode_termination must be 'off' for the bundled environments")
        if self.n_initial < 3:
            raise ConfigError("n_initial must be >= 3 so the model split is nonempty")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.ensemble.n_models < 2:
            raise ConfigError("ensemble.n_models must be >= 2 for the disagreement bonus")
        if any(not 0.0 <= g <= 0.5 for g in self.selector.grid):
            raise ConfigError("selector.grid values must lie in [0, 0.5]")
        if self.collector.alpha <= 0 or not 0 < self.collector.delta < 1:
            raise ConfigError("collector.alpha must be > 0 and collector.delta in (0, 1)")
        return self

    # -- flat serialization -------------------------------------------------

    def to_flat(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in SECTIONS:
                for sub in dataclasses.fields(value):
                    v = getattr(value, sub.name)
                    out[f"{f.name}.{sub.name}"] = list(v) if isinstance(v, tuple) else v
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        flat = dict(flat)
        scale = flat.get("scale", "desk")
        cfg = profile(scale)
        sections = {name: dataclasses.asdict(getattr(cfg, name)) for name in SECTIONS}
        top = {f.name for f in dataclasses.fields(cls)} - set(SECTIONS)
        for key, value in flat.items():
            if "." in key:
                section, name = key.split(".", 1)
                if section not in sections or name not in sections[section]:
                    raise ConfigError(f"unknown config key {key!r}")
                sections[section][name] = tuple(value) if name == "grid" else value
            elif key in top:
                setattr(cfg, key, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg.ensemble = EnsembleConfig(**sections["ensemble"])
            cfg.policy = PolicyConfig(**sections["policy"])
            cfg.selector = SelectorConfig(**sections["selector"])
            cfg.collector = CollectorConfig(**sections["collector"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def replace(self, **kwargs) -> "RunConfig":
        flat = self.to_flat()
        flat.update(kwargs)
        return RunConfig.from_flat(flat)

    def dumps(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"


def profile(scale: str = "desk") -> RunConfig:
    """Defaults for a scale profile: ``desk`` is sized for one CPU, ``paper`` uses the full-size hyperparameters."""
    if scale == "desk":
        return RunConfig()
    if scale == "paper":
        return RunConfig(
            scale="paper",
            ensemble=EnsembleConfig(n_models=5, hidden=1024, lr=1e-3, batch_size=1024),
            policy=PolicyConfig(hidden=32, action_std=0.5, lr=3e-4, gamma=0.99, clip=0.2, epochs=10,
                                batch_size=50_000),
            collector=CollectorConfig(alpha=0.0005, max_samples=3000),
        )
    raise ConfigError(f"unknown scale {scale!r}")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            flat = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(flat, dict):
        raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_flat(flat)
