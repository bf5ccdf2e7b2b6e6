"""Experiment configuration (TOML, schema version 1).

Unknown keys are rejected so that a config file fully determines a run.
Optional values are expressed by omitting the key.
"""

import sys
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, MissingFileError

SCHEMA_VERSION = 1
TASKS = ("deblur-gaussian", "deblur-motion", "inpaint", "superresolve", "denoise-only", "calibrate-only")


@dataclass(frozen=True)
class InputSpec:
    image: str | None = None
    measurement: str | None = None
    synthetic: str = "piecewise-constant"
    size: int = 64
    channels: int = 1


@dataclass(frozen=True)
class OperatorSpec:
    kernel_size: int = 7
    bandwidth: float = 3.0
    kernel_path: str | None = None
    motion_size: int = 25
    motion_seed: int = 0
    mask_rate: float = 0.5
    mask_seed: int = 0
    mask_path: str | None = None
    sr_factor: int = 4


@dataclass(frozen=True)
class DenoiserSpec:
    backend: str = "analytic-gaussian"
    lam: float = 1.5 / 255
    eta: float = 2.0
    rule: str = "explicit"
    t_star: int = 3
    equivariant: bool = True
    group: list = field(default_factory=lambda: ["d4"])
    prior_mean: float | None = None
    prior_var: float | None = None
    T: int = 1000
    beta_min: float = 1e-4
    beta_max: float = 0.02
    command: str | None = None


@dataclass(frozen=True)
class SamplerSpec:
    n_iter: int = 100
    burn_in: float = 0.3
    gamma: float | None = None
    mode: str = "latent"
    rho: float = 0.01
    init: str = "measurement"


@dataclass(frozen=True)
class CalibratorSpec:
    enabled: bool = True
    rho0: float = 0.01
    c0: float | None = None
    p: float = 0.85
    rho_min: float = 1e-6
    rho_max: float = 10.0
    tol_rho: float = 1e-3
    tol_x: float = 1e-4
    averaging: str = "tail-average"
    gradient: str = "fisher"
    stop_on_convergence: bool = False


@dataclass(frozen=True)
class SolverSpec:
    method: str | None = None
    cg_tol: float = 1e-8
    cg_max_iter: int = 500


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "deblur-gaussian"
    seed: int | None = None
    sigma: float = 1.0 / 255
    out_dir: str = "out"
    run_id: str | None = None
    input: InputSpec = field(default_factory=InputSpec)
    operator: OperatorSpec = field(default_factory=OperatorSpec)
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    calibrator: CalibratorSpec = field(default_factory=CalibratorSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        sub = f.default_factory() if f.default_factory is not field().default_factory else None
        if is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, name)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(data):
    data = dict(data)
    version = data.pop("schema", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {version!r}")
    return _build(ExperimentConfig, data, "root")


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise MissingFileError(path, "config file")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    return obj


def config_to_dict(cfg):
    out = {"schema": SCHEMA_VERSION}
    out.update(_strip_none(asdict(cfg)))
    return out


def dump_config(cfg):
    """TOML text that loads back to an equal config."""
    return tomli_w.dumps(config_to_dict(cfg))
