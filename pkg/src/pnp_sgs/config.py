"""Strict JSON run configuration."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


TASK_DEFAULTS = {
    "deblur": {"kernel_size": 61, "kernel_std": 3.0},
    "inpaint": {"fraction": 0.8},
    "superres": {"factor": 4, "kernel_size": 9, "kernel_std": 1.5},
}

PRESETS = {
    # linear schedule with rho = 0.7; cosine schedule with rho = 1.625
    "ffhq": {"schedule": {"kind": "linear"}, "sampler": {"rho": 0.7}},
    "imagenet": {"schedule": {"kind": "cosine"}, "sampler": {"rho": 1.625}},
}


@dataclass
class TaskBlock:
    kind: str = "inpaint"
    sigma: float = 0.05
    fraction: float | None = None
    kernel_size: int | None = None
    kernel_std: float | None = None
    factor: int | None = None
    noise_map: str | None = None
    rho1: float = 1.0
    rho2: float = 1.0
    ridge: float | None = None

    def check(self):
        if self.kind not in TASK_DEFAULTS:
            raise ConfigError(f"task.kind must be one of {sorted(TASK_DEFAULTS)}, got {self.kind!r}")
        for k, v in TASK_DEFAULTS[self.kind].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        if self.sigma < 0:
            raise ConfigError("task.sigma must be non-negative")
        if self.kind == "inpaint" and not 0 <= self.fraction < 1:
            raise ConfigError("task.fraction must lie in [0, 1)")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise ConfigError("task.kernel_size must be a positive odd integer")


@dataclass
class ScheduleBlock:
    kind: str = "linear"
    T: int = 1000
    b0: float = 1e-4
    bT: float = 2e-2
    s: float = 0.008

    def check(self):
        if self.kind not in ("linear", "cosine"):
            raise ConfigError(f"schedule.kind must be 'linear' or 'cosine', got {self.kind!r}")


@dataclass
class SamplerBlock:
    rho: float = 0.7
    n_mc: int = 100
    n_bi: int = 20
    early_stop: bool = True
    rescale_input: bool = False
    t_star_cap: int | None = None
    seed: int = 0
    ci_level: float = 0.9
    max_chain_bytes: int | None = None

    def check(self):
        if not 0 < self.n_bi < self.n_mc:
            raise ConfigError("sampler needs 0 < n_bi < n_mc")
        if self.rho <= 0:
            raise ConfigError("sampler.rho must be positive")


@dataclass
class DenoiserBlock:
    kind: str = "analytic"
    m0: object = "observation"
    tau2: float = 0.01
    command: list = field(default_factory=list)
    timeout: float = 60.0

    def check(self):
        if self.kind not in ("analytic", "external"):
            raise ConfigError(f"denoiser.kind must be 'analytic' or 'external', got {self.kind!r}")
        if self.kind == "analytic" and self.tau2 <= 0:
            raise ConfigError("denoiser.tau2 must be positive")
        if self.kind == "external" and not self.command:
            raise ConfigError("denoiser.command is required for external denoisers")


@dataclass
class IOBlock:
    input: str = "input.png"
    workdir: str = "degraded"
    output: str = "run"
    reference: str | None = None

    def check(self):
        paths = [p for p in (self.input, self.workdir, self.output) if p is not None]
        if len(set(paths)) != len(paths):
            raise ConfigError("io paths must be distinct")


@dataclass
class RunConfig:
    task: TaskBlock = field(default_factory=TaskBlock)
    schedule: ScheduleBlock = field(default_factory=ScheduleBlock)
    sampler: SamplerBlock = field(default_factory=SamplerBlock)
    denoiser: DenoiserBlock = field(default_factory=DenoiserBlock)
    io: IOBlock = field(default_factory=IOBlock)
    preset: str | None = None
    base_dir: Path = field(default=Path("."), repr=False, compare=False)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        return config_digest(self.to_dict())


_BLOCKS = {"task": TaskBlock, "schedule": ScheduleBlock, "sampler": SamplerBlock,
           "denoiser": DenoiserBlock, "io": IOBlock}


def config_digest(d: dict) -> str:
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _build(cls, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown key {where}.{key}")
    return cls(**raw)


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in _BLOCKS and key != "preset":
            raise ConfigError(f"unknown key {key}")
    preset = raw.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    blocks = {}
    for name, cls in _BLOCKS.items():
        merged = dict(PRESETS[preset].get(name, {})) if preset else {}
        merged.update(raw.get(name, {}) if isinstance(raw.get(name, {}), dict) else {})
        if name in raw and not isinstance(raw[name], dict):
            raise ConfigError(f"{name} must be a JSON object")
        try:
            blocks[name] = _build(cls, merged, name)
            blocks[name].check()
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return RunConfig(**blocks, preset=preset, base_dir=Path(base_dir))


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    cfg = parse_config(raw, path.parent)
    if seed is not None:
        cfg.sampler.seed = seed
    return cfg
