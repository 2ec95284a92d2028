"""Run configuration: flat ``key = value`` files with [frame], [ciuupi] and
[sim] sections.

Any key can be overridden from the environment as
``PRIORCI_<SECTION>_<KEY>`` (upper case), e.g. ``PRIORCI_SIM_M=2000``.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .ciuupi import CiuupiConfig

__all__ = ["FrameSettings", "CiuupiSettings", "SimSettings", "Settings", "load_settings", "ENV_PREFIX"]

ENV_PREFIX = "PRIORCI"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


@dataclass(frozen=True)
class FrameSettings:
    z: float = 60.0
    t: float = 0.0
    u: float = 2.5
    gamma_step: float = 0.5


@dataclass(frozen=True)
class CiuupiSettings:
    alpha: float = 0.05
    sel_max: float = 1.15
    gamma_step: float = 0.05
    gamma_max: float = 10.0
    rho_step: float = 0.02

    def config(self) -> CiuupiConfig:
        return CiuupiConfig(alpha=self.alpha, sel_max=self.sel_max, gamma_step=self.gamma_step,
                            gamma_max=self.gamma_max)


@dataclass(frozen=True)
class SimSettings:
    M: int = 40000
    M_prime: int = 10000
    delta_c: float = 0.01
    base_seed: int = 20240601
    workers: int = 1
    block: int = 2000
    census_M: int = 5000
    census_gammas: tuple[float, ...] = tuple(x / 2 for x in range(-10, 11))
    stages: tuple[str, ...] = ("coverage", "ctilde", "sel", "census")


@dataclass(frozen=True)
class Settings:
    frame: FrameSettings = field(default_factory=FrameSettings)
    ciuupi: CiuupiSettings = field(default_factory=CiuupiSettings)
    sim: SimSettings = field(default_factory=SimSettings)

    def to_text(self, include_workers: bool = True) -> str:
        lines = []
        for section in ("frame", "ciuupi", "sim"):
            lines.append(f"[{section}]")
            for k, v in asdict(getattr(self, section)).items():
                if k == "workers" and not include_workers:
                    continue
                if isinstance(v, tuple):
                    v = ", ".join(str(x) for x in v)
                lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        # worker count does not change results, so it is left out
        return hashlib.sha256(self.to_text(include_workers=False).encode()).hexdigest()[:16]


def _convert(cls, key: str, raw: str):
    f = {x.name: x for x in fields(cls)}.get(key)
    if f is None:
        raise KeyError(f"unknown key {key!r} for {cls.__name__}")
    default = getattr(cls(), key)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if key == "stages":
        return tuple(s for s in raw.replace(",", " ").split())
    if isinstance(default, tuple):
        return _floats(raw)
    return raw


_SECTIONS = {"frame": FrameSettings, "ciuupi": CiuupiSettings, "sim": SimSettings}


def load_settings(path: str | Path | None = None, env: dict | None = None, **overrides) -> Settings:
    """Defaults, then the file, then environment variables, then ``overrides``
    given as ``section_key=value``."""
    env = os.environ if env is None else env
    values = {name: {} for name in _SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            if section not in _SECTIONS:
                raise KeyError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                values[section][key] = _convert(_SECTIONS[section], key, raw)
    for name, cls in _SECTIONS.items():
        for f in fields(cls):
            var = f"{ENV_PREFIX}_{name.upper()}_{f.name.upper()}"
            if var in env:
                values[name][f.name] = _convert(cls, f.name, env[var])
    for k, v in overrides.items():
        if v is None:
            continue
        section, key = k.split("_", 1)
        values[section][key] = v
    return Settings(**{name: replace(cls(), **values[name]) for name, cls in _SECTIONS.items()})
