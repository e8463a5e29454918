"""Run configuration: TOML blocks ``[params] [grid] [initial] [coupling] [contact]``."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    rho_f: float = 1.0
    rho_s: float = 1.0
    mu: float = 0.05
    alpha: float = 0.02
    beta: float = 0.1
    gamma: float = 0.05
    L: float = 2.0

    def __post_init__(self):
        for name in ("rho_f", "rho_s", "mu", "alpha", "L"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"params.{name} must be positive")
        for name in ("beta", "gamma"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"params.{name} must be nonnegative")


@dataclass(frozen=True)
class GridConfig:
    nx: int = 32
    nz: int = 16
    dt: float = 1e-3
    T: float = 0.5
    M: float = 2.0
    ny: int = 0  # container rows for extended fields; 0 picks a default
    save_every: int = 10

    def __post_init__(self):
        if self.nx < 4 or self.nx % 2:
            raise ConfigError("grid.nx must be an even integer >= 4")
        if self.nz < 2:
            raise ConfigError("grid.nz must be >= 2")
        if not self.dt > 0 or not self.T >= 0:
            raise ConfigError("grid.dt must be positive and grid.T nonnegative")
        if self.save_every < 1:
            raise ConfigError("grid.save_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def container_rows(self) -> int:
        if self.ny:
            return self.ny
        return int(math.ceil((2 * self.M + 1) * self.nz)) + 1


PROFILES = ("rest", "bump", "cosine", "file")


@dataclass(frozen=True)
class InitialConfig:
    profile: str = "rest"
    amplitude: float = 0.0
    center: float = 0.5  # fraction of the period
    sharpness: int = 2
    mode: int = 1
    velocity: float = 0.0
    velocity_profile: str = ""  # defaults to the displacement shape
    lift_height: float = 0.0  # lambda of the velocity lift; 0 picks half the minimum height
    regularize: bool = False
    eta0_file: str = ""
    eta1_file: str = ""

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"initial.profile must be one of {PROFILES}")
        if self.velocity_profile and self.velocity_profile not in PROFILES:
            raise ConfigError(f"initial.velocity_profile must be one of {PROFILES}")
        if self.sharpness < 1 or self.mode < 1:
            raise ConfigError("initial.sharpness and initial.mode must be >= 1")
        if self.profile == "file" and not self.eta0_file:
            raise ConfigError("initial.profile = 'file' needs initial.eta0_file")


@dataclass(frozen=True)
class CouplingConfig:
    tol: float = 1e-8
    max_iter: int = 200
    omega0: float = 0.5
    convection: bool = True
    cfl_safety: float = 0.5

    def __post_init__(self):
        if not self.tol > 0 or self.max_iter < 1:
            raise ConfigError("coupling.tol must be positive and coupling.max_iter >= 1")
        if not 0 < self.omega0 <= 1 or not 0 < self.cfl_safety <= 1:
            raise ConfigError("coupling.omega0 and coupling.cfl_safety must lie in (0, 1]")


@dataclass(frozen=True)
class ContactConfig:
    eps_c: float = 0.0  # absolute threshold; 0 means relative * initial min height
    relative: float = 1e-6
    policy: str = "halt"

    def __post_init__(self):
        if self.policy not in ("halt", "flag"):
            raise ConfigError("contact.policy must be 'halt' or 'flag'")
        if self.eps_c < 0 or self.relative < 0:
            raise ConfigError("contact thresholds must be nonnegative")

    def threshold(self, initial_min_height: float) -> float:
        return self.eps_c if self.eps_c > 0 else self.relative * initial_min_height


@dataclass(frozen=True)
class SweepConfig:
    gammas: tuple = (0.1, 0.05, 0.025, 0.0125)
    deltas: tuple = (0.2, 0.1, 0.05)

    def __post_init__(self):
        g = tuple(float(v) for v in self.gammas)
        if any(b >= a for a, b in zip(g, g[1:])) or any(v < 0 for v in g):
            raise ConfigError("sweep.gammas must be strictly decreasing and nonnegative")
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "deltas", tuple(float(v) for v in self.deltas))


_BLOCKS = {
    "params": Params,
    "grid": GridConfig,
    "initial": InitialConfig,
    "coupling": CouplingConfig,
    "contact": ContactConfig,
    "sweep": SweepConfig,
}


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    params: Params = field(default_factory=Params)
    grid: GridConfig = field(default_factory=GridConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    base_dir: str = ""  # directory for relative file references; not hashed

    def to_dict(self) -> dict:
        out = {"name": self.name}
        for key in _BLOCKS:
            block = asdict(getattr(self, key))
            out[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in block.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = "") -> "RunConfig":
        data = copy.deepcopy(data)
        unknown = set(data) - set(_BLOCKS) - {"name"}
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        kwargs = {"name": str(data.get("name", "run")), "base_dir": base_dir}
        for key, kind in _BLOCKS.items():
            block = data.get(key, {})
            if not isinstance(block, dict):
                raise ConfigError(f"[{key}] must be a table")
            allowed = {f.name for f in fields(kind)}
            bad = set(block) - allowed
            if bad:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
            try:
                kwargs[key] = kind(**block)
            except TypeError as exc:
                raise ConfigError(f"[{key}]: {exc}") from exc
        return cls(**kwargs)

    def with_overrides(self, **blocks) -> "RunConfig":
        """``cfg.with_overrides(params={"gamma": 0.1}, grid={"dt": 1e-3})``."""
        data = self.to_dict()
        for key, updates in blocks.items():
            if key == "name":
                data["name"] = updates
                continue
            data[key].update(updates)
        return RunConfig.from_dict(data, self.base_dir)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or not self.base_dir else Path(self.base_dir) / p

    def config_hash(self) -> str:
        return _digest(self.to_dict())

    def param_hash(self) -> str:
        """Everything that changes the trajectory (T and output cadence excluded)."""
        d = self.to_dict()
        grid = {k: d["grid"][k] for k in ("nx", "nz", "dt")}
        return _digest({"params": d["params"], "grid": grid, "initial": d["initial"],
                        "coupling": d["coupling"], "contact": d["contact"]})

    def grid_hash(self) -> str:
        d = self.to_dict()["grid"]
        return _digest({k: d[k] for k in ("nx", "nz", "M", "ny")} | {"L": self.params.L})


def _digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(data, base_dir=str(path.parent))


def dumps_toml(cfg: RunConfig) -> str:
    """Minimal TOML writer for the flat blocks used here."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return repr(v)

    d = cfg.to_dict()
    lines = [f"name = {fmt(d.pop('name'))}"]
    for key, block in d.items():
        lines.append(f"\n[{key}]")
        lines.extend(f"{k} = {fmt(v)}" for k, v in block.items())
    return "\n".join(lines) + "\n"


def replace_params(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, params=replace(cfg.params, **changes))
