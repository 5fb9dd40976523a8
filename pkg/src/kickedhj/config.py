"""Flat ``key = value`` experiment configuration."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .potential import Potential
from .torus import GridSpec

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_overrides"]


class ConfigError(ValueError):
    pass


def _floats(text) -> tuple:
    if isinstance(text, (int, float)):
        return (float(text),)
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)


def _ints(text) -> tuple:
    return tuple(int(round(v)) for v in _floats(text))


@dataclass(frozen=True)
class ExperimentConfig:
    potential: str = "cosine"
    amplitude: tuple = (1.0,)
    cross: float = 0.0
    d: int = 1
    n_per_axis: int = 1024
    nu_list: tuple = (0.1, 0.05, 0.02, 0.01, 0.005, 0.002)
    n_max: int = 20
    lyapunov_steps: int = 60
    weak_kam_tol: float = 1e-10
    weak_kam_max_iter: int = 5000
    stationary_tol: float = 1e-11
    fit_floor: float = 1e-13
    min_window: int = 8
    r_U: float = 0.1
    c_budget: float = 100.0
    hm_trials: int = 100
    telescope_n: int = 5
    hessian_x: tuple = (0.3,)
    n_list: tuple = (1, 2, 5, 10, 20, 40)
    field_scale: float = 0.5
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        for f in dataclasses.fields(self):
            parse = _PARSERS.get(f.name)
            if parse is not None:
                try:
                    object.__setattr__(self, f.name, parse(getattr(self, f.name)))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {f.name}: {getattr(self, f.name)!r}") from exc
        self.validate()

    def validate(self):
        if self.potential != "cosine":
            raise ConfigError(f"unknown potential family {self.potential!r}")
        if self.d not in (1, 2):
            raise ConfigError("d must be 1 or 2")
        if self.n_per_axis < 8:
            raise ConfigError("n_per_axis must be >= 8")
        if len(self.amplitude) not in (1, self.d) or min(self.amplitude) <= 0:
            raise ConfigError("amplitude must be positive, one value or one per axis")
        if self.cross < 0:
            raise ConfigError("cross must be >= 0")
        if not self.nu_list or min(self.nu_list) <= 0:
            raise ConfigError("nu_list must contain positive values")
        h = 1.0 / self.n_per_axis
        low = [nu for nu in self.nu_list if math.sqrt(2 * nu) < 3 * h]
        if low:
            raise ConfigError(
                f"nu {low} below the grid floor: need sqrt(2 nu) >= 3 * spacing = {3 * h:.4g}"
            )
        object.__setattr__(self, "nu_list", tuple(sorted(self.nu_list, reverse=True)))
        if self.n_max < 1 or self.lyapunov_steps < 3:
            raise ConfigError("n_max must be >= 1 and lyapunov_steps >= 3")
        if self.r_U <= 0 or self.weak_kam_tol <= 0 or self.threads < 1:
            raise ConfigError("r_U, weak_kam_tol and threads must be positive")
        if min(self.n_list) < 1:
            raise ConfigError("hessian n_list entries must be >= 1")
        if len(self.hessian_x) == 1 and self.d == 2:
            object.__setattr__(self, "hessian_x", self.hessian_x * 2)
        if len(self.hessian_x) != self.d:
            raise ConfigError("hessian_x needs one coordinate per axis")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.d, self.n_per_axis)

    def make_potential(self) -> Potential:
        amp = self.amplitude if len(self.amplitude) == self.d else self.amplitude * self.d
        return Potential.cosine(amp, d=self.d, cross=self.cross)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def as_lines(self) -> list:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            out.append(f"{f.name} = {v}")
        return out


_PARSERS = {
    "amplitude": _floats,
    "cross": float,
    "d": int,
    "n_per_axis": int,
    "nu_list": _floats,
    "n_max": int,
    "lyapunov_steps": int,
    "weak_kam_tol": float,
    "weak_kam_max_iter": int,
    "stationary_tol": float,
    "fit_floor": float,
    "min_window": int,
    "r_U": float,
    "c_budget": float,
    "hm_trials": int,
    "telescope_n": int,
    "hessian_x": _floats,
    "n_list": _ints,
    "field_scale": float,
    "seed": int,
    "threads": int,
    "potential": str,
    "out_dir": str,
}

KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _normalize_key(key: str) -> str:
    k = key.strip().lstrip("-").replace("-", "_")
    if k == "out":
        k = "out_dir"
    if k not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    return k


def parse_lines(lines) -> dict:
    values = {}
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected 'key = value'")
        key, val = line.split("=", 1)
        values[_normalize_key(key)] = val.strip()
    return values


def parse_overrides(tokens) -> dict:
    """``['--key', 'value', ...]`` into a dict of raw strings."""
    values = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, val = tok.split("=", 1)
        else:
            key = tok
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"missing value for {tok}") from None
        values[_normalize_key(key)] = val
    return values


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values.update(parse_lines(p.read_text().splitlines()))
    if overrides:
        values.update({_normalize_key(k): v for k, v in overrides.items()})
    return ExperimentConfig(**values)
