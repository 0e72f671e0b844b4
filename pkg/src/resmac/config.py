"""Experiment configuration: sectioned key-value files plus CLI overrides.

Defaults reproduce the standard desk-scale setup (5 terminals, q=10, d=10,
cluster cap 15, rho=3, 20000-slot runs, the 0.025..0.325 arrival-rate grid),
so a sweep with an empty config covers the full comparison grid out of the
box.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


DEFAULT_LAMBDA_GRID = tuple(round(0.025 * k, 3) for k in range(1, 14))
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
ALL_PROTOCOLS = ("proposed", "aloha", "stack", "csma_ca")


def _render_floats(values) -> str:
    return ",".join(format(v, "g") for v in values)


def _render_ints(values) -> str:
    return ",".join(str(v) for v in values)


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


@dataclass
class ExperimentConfig:
    # model
    n_max: int = 5
    m_cap: int = 15
    support_limit: int = 2
    # solver
    d: int = 10
    q: int = 10
    epsilon: float = 1e-6
    trials: int = 2000
    init: str = "genie"
    b0: tuple[float, ...] = (0.1, 0.1, 0.3, 0.3, 0.2)
    # traffic
    lam: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    n_terminals: int = 5
    frame_mode: str = "dynamic"
    frame_T: int = 100
    # accounting
    rho: int = 3
    finish_mode: str = "piggyback"
    # run
    slots: int = 20000
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    protocols: tuple[str, ...] = ALL_PROTOCOLS
    workers: int = 1
    force: bool = False

    def validate(self) -> None:
        if self.n_max < 1:
            raise ConfigError("n_max must be at least 1")
        if self.m_cap <= self.n_max:
            raise ConfigError("m_cap must exceed n_max")
        if self.init not in ("zero", "genie"):
            raise ConfigError(f"unknown init {self.init!r}")
        if self.frame_mode not in ("dynamic", "fixed"):
            raise ConfigError(f"unknown frame mode {self.frame_mode!r}")
        if self.finish_mode not in ("piggyback", "dedicated"):
            raise ConfigError(f"unknown finish mode {self.finish_mode!r}")
        for p in self.protocols:
            if p not in ALL_PROTOCOLS:
                raise ConfigError(f"unknown protocol {p!r}")
        if not self.force:
            for lam in self.lam:
                if lam * self.rho > 1.0 + 1e-9:
                    raise ConfigError(
                        f"lambda*rho = {lam * self.rho:.3f} > 1 is unstable; "
                        "pass --force to run anyway")

    _SECTIONS = {
        "model": ("n_max", "m_cap", "support_limit"),
        "solver": ("d", "q", "epsilon", "trials", "init", "b0"),
        "traffic": ("lam", "n_terminals", "frame_mode", "frame_T"),
        "accounting": ("rho", "finish_mode"),
        "run": ("slots", "seeds", "protocols", "workers", "force"),
    }

    def render(self) -> str:
        parser = configparser.ConfigParser()
        for section, names in self._SECTIONS.items():
            parser[section] = {}
            for name in names:
                value = getattr(self, name)
                if name in ("lam", "b0"):
                    text = _render_floats(value)
                elif name == "seeds":
                    text = _render_ints(value)
                elif name == "protocols":
                    text = ",".join(value)
                elif name == "epsilon":
                    text = format(value, "g")
                else:
                    text = str(value)
                parser[section][name] = text
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read_string(text)
        kwargs = {}
        type_of = {f.name: f.type for f in fields(cls)}
        for section, names in cls._SECTIONS.items():
            if section not in parser:
                continue
            for name in names:
                if name not in parser[section]:
                    continue
                raw = parser[section][name]
                if name in ("lam", "b0"):
                    kwargs[name] = _parse_floats(raw)
                elif name == "seeds":
                    kwargs[name] = _parse_ints(raw)
                elif name == "protocols":
                    kwargs[name] = tuple(x.strip() for x in raw.split(",") if x.strip())
                elif name == "epsilon":
                    kwargs[name] = float(raw)
                elif name == "force":
                    kwargs[name] = raw.strip().lower() in ("1", "true", "yes")
                elif name in ("init", "frame_mode", "finish_mode"):
                    kwargs[name] = raw.strip()
                else:
                    kwargs[name] = int(raw)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.parse(fh.read())

    def config_hash(self) -> str:
        """Hash of the result-determining configuration; execution-only knobs
        (worker count, the stability override) are normalized out so reruns
        of the same experiment hash identically."""
        plain = replace(self, workers=1, force=False)
        return hashlib.sha256(plain.render().encode()).hexdigest()[:12]
