"""Run configuration: nested sections, presets, dotted overrides, validation.

A configuration is a YAML/JSON mapping whose sections map onto frozen
dataclasses.  Unknown keys are rejected with their full dotted path, and every
constrained value is checked at load time, so a run never starts with a
setting it would trip over later.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError, ContractError
from .greedy import GreedySettings
from .kernels import Domain
from .optimizer import DescentSettings
from .targets import MalaSettings
from .tempering import TemperSchedule

OUTPUT_ENV = "KLBIAS_OUTPUT_DIR"
R_MIN = 2.0 ** (1.0 / 6.0)


@dataclass(frozen=True)
class ToyParams:
    d1: float = 2.0
    d2: float = 30.0

    def __post_init__(self):
        if not self.d2 > 0:
            raise ContractError("d2 must be positive", "d2")


@dataclass(frozen=True)
class WCAParams:
    n_atoms: int = 16
    box: float = 12.0
    epsilon: float = 1.0
    sigma: float = 1.0
    h: float = 1.0
    w: float = 0.5
    r0: float = R_MIN

    def __post_init__(self):
        if self.n_atoms < 2:
            raise ContractError("need at least the two dimer atoms", "n_atoms")
        for name in ("box", "epsilon", "sigma", "h", "w", "r0"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive", name)


@dataclass(frozen=True)
class LJParams:
    n_atoms: int = 38
    dim: int = 3
    cv: str = "q4"
    epsilon: float = 1.0
    sigma: float = 1.0
    q4_cutoff: float | None = None
    wall_k: float | None = None
    wall_radius: float | None = None
    q4_gradient: str = "analytic"

    def __post_init__(self):
        if self.q4_gradient not in ("analytic", "fd"):
            raise ContractError("q4_gradient must be 'analytic' or 'fd'", "q4_gradient")
        if self.cv not in ("q4", "m2"):
            raise ContractError("cv must be 'q4' or 'm2'", "cv")
        if self.dim not in (2, 3):
            raise ContractError("dim must be 2 or 3", "dim")
        if self.cv == "q4" and self.dim != 3:
            raise ContractError("the q4 coordinate needs dim = 3", "dim")


SYSTEM_KINDS = ("toy", "wca", "lj")


@dataclass(frozen=True)
class SystemConfig:
    """``kind`` selects which parameter block is used; ``spring_mu`` wraps a
    reaction-coordinate system in the spring-extended ensemble."""

    kind: str = "toy"
    toy: ToyParams = field(default_factory=ToyParams)
    wca: WCAParams = field(default_factory=WCAParams)
    lj: LJParams = field(default_factory=LJParams)
    snapshot: str | None = None
    spring_mu: float | None = None

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise ContractError(f"kind must be one of {SYSTEM_KINDS}", "kind")
        if self.spring_mu is not None and self.kind == "toy":
            raise ContractError("spring_mu applies to reaction-coordinate systems only", "spring_mu")
        if self.spring_mu is not None and self.spring_mu < 0:
            raise ContractError("spring_mu must be non-negative", "spring_mu")


@dataclass(frozen=True)
class DomainConfig:
    lower: tuple[float, ...] = (-0.5,)
    upper: tuple[float, ...] = (0.5,)
    anchor: tuple[float, ...] | None = None

    def __post_init__(self):
        Domain(self.lower, self.upper)
        if self.anchor is not None and len(self.anchor) != len(self.lower):
            raise ContractError("anchor dimension differs from the domain's", "anchor")

    def build(self):
        return Domain(self.lower, self.upper)

    def anchor_point(self):
        return np.array(self.lower if self.anchor is None else self.anchor, dtype=float)


@dataclass(frozen=True)
class SMCConfig:
    n: int = 100
    n_equil: int = 200

    def __post_init__(self):
        if self.n < 2:
            raise ContractError("need at least two particles", "n")
        if self.n_equil < 0:
            raise ContractError("n_equil must be non-negative", "n_equil")


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "klbias-out"
    grid_points: int | None = None
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.grid_points is not None and self.grid_points < 2:
            raise ContractError("grid_points must be at least 2", "grid_points")
        if self.checkpoint_every < 1:
            raise ContractError("checkpoint_every must be at least 1", "checkpoint_every")

    def points_for(self, dim):
        if self.grid_points is not None:
            return self.grid_points
        return 201 if dim <= 2 else 41


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs.  ``temper`` set means a continuation sweep."""

    system: SystemConfig = field(default_factory=SystemConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    beta: float = 10.0
    temper: TemperSchedule | None = None
    smc: SMCConfig = field(default_factory=SMCConfig)
    mala: MalaSettings = field(default_factory=MalaSettings)
    descent: DescentSettings = field(default_factory=DescentSettings)
    greedy: GreedySettings = field(default_factory=GreedySettings)
    seed: int = 0
    output: OutputConfig = field(default_factory=OutputConfig)
    workers: int | None = None
    reproducible: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("beta", "must be positive")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        if self.temper is not None and self.temper.kind == "beta" and self.temper.start != self.beta:
            raise ConfigError("temper.start", "must equal beta for a temperature sweep")
        if self.temper is not None and self.temper.kind == "mu" and self.system.spring_mu is None:
            raise ConfigError("system.spring_mu", "a spring-stiffness sweep needs spring_mu")
        if self.temper is not None and self.temper.kind == "mu" and self.temper.start != self.system.spring_mu:
            raise ConfigError("temper.start", "must equal system.spring_mu for a stiffness sweep")

    @property
    def n_workers(self):
        return self.workers if self.workers is not None else (os.cpu_count() or 1)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def scientific_hash(self):
        """Hash of everything that can change the numbers (not output or worker settings)."""
        d = self.to_dict()
        for key in ("output", "workers", "reproducible", "seed"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- building from mappings ----------------------------------------------------


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, "expected a mapping")
        return _build(tp, value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, "expected a list")
        args = typing.get_args(tp)
        elem = args[0]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(elem, v, f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(path, f"expected {len(args)} entries")
        return tuple(_coerce(a, v, f"{path}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, "expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(path, "expected an integer")
        return int(value)
    if tp is float:
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(path, "expected a number") from None
        if isinstance(value, bool) or not isinstance(value, (int, float, np.number)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    raise ConfigError(path, f"unsupported field type {tp!r}")


def _build(cls, data, path=""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown key")
    kwargs = {}
    for k, v in data.items():
        sub = f"{path}.{k}" if path else k
        kwargs[k] = _coerce(hints[k], v, sub)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if path and exc.path and not exc.path.startswith(path):
            raise ConfigError(f"{path}.{exc.path}", str(exc).split(": ", 1)[-1]) from None
        raise
    except (ValueError, TypeError) as exc:
        name = getattr(exc, "field", None)
        where = ".".join(p for p in (path, name) if p) or "<root>"
        raise ConfigError(where, str(exc)) from None


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_dotted(d, dotted, value):
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError(dotted, f"{k} is not a section")
        cur = nxt
    cur[keys[-1]] = value


def parse_override(text):
    """``"a.b=value"`` with ``value`` parsed as YAML (so ``1e-3``, ``[1, 2]``, ``null`` work)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key.path=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(text, "empty key")
    if not raw.strip():
        return key, None
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
        try:
            value = float(value)
        except ValueError:
            pass
    return key, value


def from_dict(data, overrides=(), env=None) -> RunConfig:
    """Validated config from a mapping, dotted ``overrides`` and the environment."""
    data = copy.deepcopy(dict(data or {}))
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_dotted(data, key, value)
    env = os.environ if env is None else env
    if env.get(OUTPUT_ENV):
        _set_dotted(data, "output.dir", env[OUTPUT_ENV])
    return _build(RunConfig, data)


def load_config(path=None, preset=None, overrides=(), env=None) -> RunConfig:
    """Preset (if any), then the file (if any), then overrides, then the environment."""
    data = {}
    if preset is not None:
        data = preset_dict(preset)
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("<root>", f"{path} does not hold a mapping")
        base_preset = loaded.pop("preset", None)
        if base_preset is not None:
            data = _merge(preset_dict(base_preset), data)
        data = _merge(data, loaded)
    return from_dict(data, overrides, env)


# -- presets ---------------------------------------------------------------------

_LJ38_BETA = (1 / 0.21, 1 / 0.091)

PRESETS = {
    # single temperature toy run at the reference settings
    "toy": {
        "system": {"kind": "toy"},
        "domain": {"lower": [-0.5], "upper": [0.5]},
        "beta": 10.0,
        "smc": {"n": 100},
        "descent": {"lam0": 0.1, "scale_by_beta": False, "p": 0.6, "max_iter": 5000},
        "greedy": {"tol_delta": 0.01, "k_max": 15, "vocab": {"polish": True}},
    },
    "toy-sweep": {
        "system": {"kind": "toy"},
        "domain": {"lower": [-0.5], "upper": [0.5]},
        "beta": 5.0,
        "temper": {"start": 5.0, "end": 10.0, "budget": 1000},
        "smc": {"n": 100},
        "descent": {"lam0": 1.0, "scale_by_beta": True, "p": 0.6, "max_iter": 5000},
        "greedy": {"tol_delta": 0.01, "k_max": 15, "vocab": {"polish": True}},
    },
    # dimer bond length; use system.wca.box=5 for the dense case
    "wca": {
        "system": {"kind": "wca", "wca": {"box": 12.0}},
        "domain": {"lower": [R_MIN - 0.25], "upper": [R_MIN + 1.25]},
        "beta": 1.0,
        "smc": {"n": 500},
        "descent": {"lam0": 0.1, "scale_by_beta": True, "p": 0.501, "max_iter": 3000},
        "greedy": {"tol_delta": 0.01, "k_max": 10, "vocab": {"polish": True}},
    },
    # reduced 2D seven-atom cluster, second moment and energy
    "lj7": {
        "system": {"kind": "lj", "lj": {"n_atoms": 7, "dim": 2, "cv": "m2"}},
        "domain": {"lower": [1.06, -11.4], "upper": [1.26, -9.4]},
        "beta": 5.0,
        "temper": {"start": 5.0, "end": 8.0, "budget": 1000},
        "smc": {"n": 100},
        "mala": {"n_steps": 10},
        "descent": {"lam0": 0.1, "scale_by_beta": True, "p": 0.6, "max_iter": 5000},
        "greedy": {"tol_delta": 0.01, "k_max": 20, "vocab": {"polish": True}},
    },
    "lj38": {
        "system": {"kind": "lj", "lj": {"n_atoms": 38, "dim": 3, "cv": "q4"}},
        "domain": {"lower": [0.0, -175.0], "upper": [0.2, -145.0]},
        "beta": _LJ38_BETA[0],
        "temper": {"start": _LJ38_BETA[0], "end": _LJ38_BETA[1], "budget": 1000},
        "smc": {"n": 100},
        "mala": {"n_steps": 10},
        "descent": {"lam0": 0.1, "scale_by_beta": True, "p": 0.501, "max_iter": 20000},
        "greedy": {"tol_delta": 0.01, "k_max": 30},
    },
}


def preset_dict(name):
    try:
        return copy.deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def preset(name, overrides=(), env=None) -> RunConfig:
    return from_dict(preset_dict(name), overrides, env)
