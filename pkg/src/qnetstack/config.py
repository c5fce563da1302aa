"""Run configuration: a YAML file plus command-line overrides.

Schema (all keys optional except where noted)::

    schema: 1
    seed: 42
    experiment: tomography        # tomography | fidelity_sweep | rsp | latency | custom
    program: path/to/prog.txt     # custom only
    shots_per_setting: 125
    min_fidelity: 0.8             # tomography, rsp, latency
    fidelities: [0.5, ..., 0.8]   # fidelity_sweep
    n_requests: 1000              # latency
    output_dir: runs/tomo-42
    trace: true
    noise:    {...}               # NoiseParams fields
    phys:     {...}               # PhysConfig fields
    link:     {interface_latency: 20000, physical_sign: true}
    schedule: {bin_duration: 20000000, assignment: [null]}
    channel:  {latency: 100000, loss: 0.0}
    flags:    {mismatch_check: true, hardware_z: true, protected_decay_rate: 0.0}

Durations are integer nanoseconds.
"""

from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .apps import SWEEP_FIDELITIES, AppProgram, parse_program
from . import apps
from .link import LinkConfig, TdmaSchedule
from .noise import NoiseParams, fidelity_to_phys_target
from .phys import PhysConfig
from .stack import Network
from .units import MS

SCHEMA = 1
EXPERIMENTS = ("tomography", "fidelity_sweep", "rsp", "latency", "custom")
OUTPUT_ROOT_ENV = "QNETSTACK_OUTPUT_ROOT"

_TOP_KEYS = {"schema", "seed", "experiment", "program", "shots_per_setting", "min_fidelity",
             "fidelities", "n_requests", "output_dir", "trace", "noise", "phys", "link",
             "schedule", "channel", "flags"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    experiment: str = "tomography"
    program: Optional[str] = None
    shots_per_setting: int = 125
    min_fidelity: float = 0.8
    fidelities: tuple = SWEEP_FIDELITIES
    n_requests: int = 1000
    output_dir: Optional[str] = None
    trace: bool = True
    noise: dict = field(default_factory=dict)
    phys: dict = field(default_factory=dict)
    link: dict = field(default_factory=dict)
    schedule: dict = field(default_factory=dict)
    channel: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fidelities"] = list(self.fidelities)
        return {"schema": SCHEMA, **d}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        schema = d.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported config schema {schema!r}")
        if "fidelities" in d:
            d["fidelities"] = tuple(float(x) for x in d["fidelities"])
        for k in ("noise", "phys", "link", "schedule", "channel", "flags"):
            if d.get(k) is None:
                d.pop(k, None)
            elif not isinstance(d[k], dict):
                raise ConfigError(f"'{k}' must be a mapping")
        return cls(**d)

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        return root / f"{self.experiment}-seed{self.seed}"

    # -- building blocks ---------------------------------------------------

    def noise_params(self) -> NoiseParams:
        d = copy.deepcopy(self.noise)
        flags = self.flags or {}
        if "protected_decay_rate" in flags:
            d["protected_decay_rate"] = flags["protected_decay_rate"]
        return NoiseParams.from_dict(d)

    def phys_config(self) -> PhysConfig:
        d = dict(self.phys)
        for k in ("mismatch_check", "hardware_z"):
            if k in (self.flags or {}):
                d[k] = bool(self.flags[k])
        return PhysConfig(**d)

    def build_network(self) -> Network:
        ch = dict(self.channel)
        return Network(noise=self.noise_params(), phys=self.phys_config(),
                       link=LinkConfig(**self.link), schedule=TdmaSchedule.from_dict(self.schedule),
                       channel_latency=int(ch.get("latency", MS // 10)),
                       channel_loss=float(ch.get("loss", 0.0)), seed=self.seed, trace=self.trace)

    def program_obj(self) -> AppProgram:
        e = self.experiment
        if e == "tomography":
            return apps.tomography_program(self.shots_per_setting, self.min_fidelity)
        if e == "fidelity_sweep":
            return apps.fidelity_sweep_program(self.shots_per_setting, self.fidelities)
        if e == "rsp":
            return apps.rsp_program(self.shots_per_setting, self.min_fidelity)
        if e == "latency":
            bin_ms = TdmaSchedule.from_dict(self.schedule).bin_duration / MS
            return apps.latency_program(self.n_requests, self.min_fidelity, bin_ms)
        return parse_program(Path(self.program).read_text())

    def validate(self) -> None:
        """Raise ConfigError describing the first problem found."""
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.experiment == "custom" and not self.program:
            raise ConfigError("custom experiments need 'program'")
        if self.shots_per_setting < 1 or self.n_requests < 1:
            raise ConfigError("shots_per_setting and n_requests must be positive")
        fids = self.fidelities if self.experiment == "fidelity_sweep" else (self.min_fidelity,)
        try:
            for f in fids:
                fidelity_to_phys_target(f)
            noise = self.noise_params()
            for f in fids:
                noise.fid_table.lookup(fidelity_to_phys_target(f))
            self.phys_config()
            LinkConfig(**self.link)
            TdmaSchedule.from_dict(self.schedule)
            self.program_obj()
        except ConfigError:
            raise
        except (ValueError, TypeError, OSError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return RunConfig.from_dict(data or {})
