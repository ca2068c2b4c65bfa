"""Experiment configuration (YAML) and run manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .channel import FIBER_PRESETS, LinkConfig, make_link
from .constellation import get_format
from .txrx import ChannelPlan

CSV_SCHEMA = "qcmqam-metrics/1"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One sweep campaign: every (format, distance, power, seed) tuple is a run.

    ``distances_by_format`` and ``seeds_by_format`` override the shared grids
    for individual formats. ``refine_step`` > 0 adds runs at the GMI peak
    +/- that many dB after the coarse grid has finished.
    """

    name: str
    formats: list
    fiber: str = "SSMF"
    fiber_overrides: dict = field(default_factory=dict)
    distances: list = field(default_factory=lambda: [199.0])
    distances_by_format: dict = field(default_factory=dict)
    powers: list = field(default_factory=lambda: [float(p) for p in range(-2, 15, 2)])
    refine_step: float = 0.5
    n_symbols: int = 2**14
    sps: int = 8
    n_channels: int = 5
    spacing: float = 75e9
    symbol_rate: float = 70e9
    rolloff: float = 0.05
    noise_figure: float = 4.5
    n_spans: int = 1
    max_nl_phase: float = 1e-3
    max_step: float = 0.5
    seeds: list = field(default_factory=lambda: [1])
    seeds_by_format: dict = field(default_factory=dict)
    code_rate: float = 0.8
    psd_symbols: int = 2**16
    psd_nperseg: int = 4096
    filter_span: float = 80.0
    output_dir: str = ""
    desk_scale: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.formats:
            raise ConfigError("no formats")
        for f in self.formats:
            try:
                get_format(f)
            except KeyError as e:
                raise ConfigError(str(e)) from None
        if self.fiber.upper() not in FIBER_PRESETS:
            raise ConfigError(f"unknown fiber preset {self.fiber!r}")
        for key, grid in [("distances", self.distances), ("powers", self.powers),
                          ("seeds", self.seeds)]:
            if not grid:
                raise ConfigError(f"{key} grid is empty")
        for fmt, d in self.distances_by_format.items():
            if fmt not in self.formats or not d:
                raise ConfigError(f"bad distances_by_format entry {fmt!r}")
        for fmt, s in self.seeds_by_format.items():
            if fmt not in self.formats or not s:
                raise ConfigError(f"bad seeds_by_format entry {fmt!r}")
        for s in [self.seeds, *self.seeds_by_format.values()]:
            if len(set(s)) != len(s):
                raise ConfigError("seeds must be distinct")
        if any(d <= 0 for d in self.all_distances()):
            raise ConfigError("distances must be positive")
        if self.n_symbols < 2 or self.n_symbols & (self.n_symbols - 1):
            raise ConfigError("n_symbols must be a power of two")
        if self.refine_step < 0:
            raise ConfigError("refine_step must be >= 0")
        if not 0 < self.code_rate <= 1:
            raise ConfigError("code_rate must lie in (0, 1]")
        try:
            plan = self.plan
            self.link(1.0)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if plan.occupied_band >= self.sps * self.symbol_rate:
            raise ConfigError("WDM band does not fit in the simulation bandwidth; raise sps")

    # -- derived ---------------------------------------------------------
    @property
    def plan(self) -> ChannelPlan:
        return ChannelPlan(self.n_channels, self.spacing, self.symbol_rate, self.rolloff)

    def link(self, distance: float) -> LinkConfig:
        return make_link(self.fiber, distance, noise_figure=self.noise_figure,
                         n_spans=self.n_spans, max_nl_phase=self.max_nl_phase,
                         max_step=self.max_step, **self.fiber_overrides)

    def distances_for(self, fmt: str) -> list:
        return [float(d) for d in self.distances_by_format.get(fmt, self.distances)]

    def seeds_for(self, fmt: str) -> list:
        return [int(s) for s in self.seeds_by_format.get(fmt, self.seeds)]

    def all_distances(self) -> list:
        return sorted({d for f in self.formats for d in self.distances_for(f)})

    def out_path(self, override=None) -> Path:
        if override:
            return Path(override)
        return Path(self.output_dir or f"results/{self.name}")

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "name" not in d or "formats" not in d:
            raise ConfigError("config needs 'name' and 'formats'")
        d = dict(d)
        for k in ("distances", "powers"):
            if k in d:
                d[k] = [float(v) for v in d[k]]
        if "distances_by_format" in d:
            d["distances_by_format"] = {k: [float(v) for v in vs]
                                        for k, vs in d["distances_by_format"].items()}
        for k in ("n_symbols", "psd_symbols"):
            if k in d:
                d[k] = int(d[k])
        return cls(**d)

    def dump(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: expected a mapping")
        return cls.from_dict(d)


@dataclass
class RunRecord:
    key: list
    seed: int
    status: str
    wall_time: float
    error: str = ""


@dataclass
class RunManifest:
    config_hash: str
    version: str
    runs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    computed: int = 0

    def write(self, path) -> None:
        d = asdict(self)
        Path(path).write_text(json.dumps(d, indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        runs = [RunRecord(**r) for r in d.pop("runs")]
        return cls(runs=runs, **d)

    @property
    def failed(self) -> list:
        return [r for r in self.runs if r.status != "ok"]
