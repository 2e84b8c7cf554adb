"""Scenario configuration: YAML schema, validation and shipped presets.

Keys carry their unit as a suffix (``_s``, ``_m``, ``_hz``, ``_dbm``, ``_db``,
``_w``, ``_j``).  Unknown keys are rejected with their dotted location.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import geo
from .channel import LinkBudget
from .errors import ConfigurationError, TleParseError
from .metrics import EnergyModel, TrafficConfig
from .phy import CaptureModel, LoRaParams, freechirp_schedule

PROTOCOLS = ("fsma", "aloha", "csma", "bsma")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RegionConfig(_Section):
    lat_min_deg: float
    lat_max_deg: float
    lon_min_deg: float
    lon_max_deg: float

    def build(self) -> geo.Region:
        return geo.Region(self.lat_min_deg, self.lat_max_deg, self.lon_min_deg, self.lon_max_deg)


class PositionConfig(_Section):
    lat_deg: float
    lon_deg: float
    alt_m: float = 0.0

    def build(self) -> geo.GeoPos:
        return geo.GeoPos(self.lat_deg, self.lon_deg, self.alt_m)


class NodesConfig(_Section):
    count: int = Field(0, ge=0)
    region: Optional[RegionConfig] = None
    positions: Optional[list[PositionConfig]] = None
    # FSMA nodes treat an audible neighbour transmission as a busy channel.
    hearing_range_m: float = Field(10_000.0, ge=0)

    @model_validator(mode="after")
    def _placement(self):
        if self.positions is not None and len(self.positions) != self.count:
            raise ValueError("positions must list exactly `count` entries")
        if self.count > 0 and self.positions is None and self.region is None:
            raise ValueError("either region or positions is required")
        return self


class StaticMobility(_Section):
    kind: Literal["static"]
    lat_deg: float
    lon_deg: float
    alt_m: float = 0.0

    def build(self, base_dir: Path | None = None) -> geo.MobilityModel:
        return geo.Static(geo.GeoPos(self.lat_deg, self.lon_deg, self.alt_m))


class DroneMobility(_Section):
    kind: Literal["drone_loop"]
    speed_mps: float = 10.0
    altitude_m: float = 100.0
    # Either a square loop around a centre or an explicit waypoint list.
    center: Optional[PositionConfig] = None
    side_m: Optional[float] = None
    waypoints: Optional[list[PositionConfig]] = None

    @model_validator(mode="after")
    def _shape(self):
        if (self.waypoints is None) == (self.center is None or self.side_m is None):
            raise ValueError("give either waypoints or center with side_m")
        return self

    def build(self, base_dir: Path | None = None) -> geo.MobilityModel:
        if self.waypoints is not None:
            return geo.DroneLoop(tuple(w.build() for w in self.waypoints), self.speed_mps)
        return geo.square_loop(self.center.build(), self.side_m, self.speed_mps, self.altitude_m)


class TleMobility(_Section):
    kind: Literal["tle"]
    line1: Optional[str] = None
    line2: Optional[str] = None
    tle_file: Optional[str] = None
    start_offset_s: float = 0.0

    @model_validator(mode="after")
    def _source(self):
        if (self.tle_file is None) == (self.line1 is None or self.line2 is None):
            raise ValueError("give either tle_file or both line1 and line2")
        return self

    def elements(self, base_dir: Path | None = None) -> geo.OrbitalElements:
        if self.tle_file is not None:
            path = Path(self.tle_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return geo.read_tle(path)
        return geo.parse_tle(self.line1, self.line2)

    def build(self, base_dir: Path | None = None) -> geo.MobilityModel:
        return geo.TleOrbit(self.elements(base_dir), self.start_offset_s)


class EphemerisMobility(_Section):
    kind: Literal["ephemeris"]
    path: str

    def build(self, base_dir: Path | None = None) -> geo.MobilityModel:
        path = Path(self.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return geo.read_ephemeris_csv(path)


Mobility = Annotated[
    Union[StaticMobility, DroneMobility, TleMobility, EphemerisMobility],
    Field(discriminator="kind"),
]


class GatewayConfig(_Section):
    mobility: Mobility


class PhyConfig(_Section):
    sf: int = 10
    bw_hz: int = 125_000
    cr: int = 4
    preamble_symbols: int = 8
    payload_bytes: int = 20
    explicit_header: bool = True
    crc_in_airtime: bool = False
    ldro: bool = True
    chirp_sf: int = 9

    def build(self) -> LoRaParams:
        return LoRaParams(
            sf=self.sf, bw=self.bw_hz, cr=self.cr, preamble_symbols=self.preamble_symbols,
            payload_bytes=self.payload_bytes, explicit_header=self.explicit_header,
            crc_in_airtime=self.crc_in_airtime, ldro=self.ldro,
        )


class TrafficSection(_Section):
    duty_cycle: float = 0.001


class LinkConfig(_Section):
    node_tx_power_dbm: float = 22.0
    gateway_tx_power_dbm: float = 22.0
    node_antenna_gain_dbi: float = 2.15
    gateway_antenna_gain_dbi: float = 2.15
    carrier_hz: float = 430e6
    noise_figure_db: float = 6.0
    shadowing_sigma_db: float = 0.0
    shadowing_epoch_s: float = 10.0
    min_elevation_deg: float = 10.0
    link_attenuation_db: float = 0.0
    cad_margin_db: float = 1.5

    def build(self) -> LinkBudget:
        return LinkBudget(**self.model_dump())


class EnergyConfig(_Section):
    node_tx_w: float = 0.4
    node_rx_cad_w: float = 0.05
    node_sleep_w: float = 1e-6
    gateway_chirp_w: float = 0.4
    gateway_tone_w: float = 0.4
    gateway_probe_j: float = 0.0

    def build(self) -> EnergyModel:
        return EnergyModel(**self.model_dump())


class CaptureConfig(_Section):
    capture_threshold_db: float = 1.0
    lock_window_symbols: int = 4
    preamble_detect_symbols_min: int = 3
    preamble_detect_symbols_max: int = 5

    def build(self) -> CaptureModel:
        return CaptureModel(**self.model_dump())


class BackoffConfig(_Section):
    # The initial window is always one packet airtime.
    reset_factor: float = Field(100.0, gt=0)


class FsmaConfig(_Section):
    wait_symbols: int = Field(6, ge=1)
    busy_backoff_factor: int = Field(4, ge=1)
    cad_overhead_symbols: float = Field(0.0, ge=0)
    turnaround_s: float = Field(0.0, ge=0)


class CsmaConfig(_Section):
    hearing_range_m: float = Field(10_000.0, gt=0)


class BsmaConfig(_Section):
    tone_sf: int = 10


class Scenario(_Section):
    name: str = "scenario"
    protocol: Literal["fsma", "aloha", "csma", "bsma"] = "fsma"
    seed: int = Field(0, ge=0, lt=2**64)
    total_time_s: float = Field(600.0, gt=0)
    nodes: NodesConfig = NodesConfig()
    gateway: GatewayConfig
    phy: PhyConfig = PhyConfig()
    traffic: TrafficSection = TrafficSection()
    link: LinkConfig = LinkConfig()
    energy: EnergyConfig = EnergyConfig()
    capture: CaptureConfig = CaptureConfig()
    backoff: BackoffConfig = BackoffConfig()
    fsma: FsmaConfig = FsmaConfig()
    csma: CsmaConfig = CsmaConfig()
    bsma: BsmaConfig = BsmaConfig()

    @property
    def label(self) -> str:
        """Protocol label used in tables (``csma-2000km`` style for CSMA)."""
        if self.protocol == "csma":
            return f"csma-{self.csma.hearing_range_m / 1000:g}km"
        return self.protocol

    def with_updates(self, **changes) -> "Scenario":
        """Copy with dotted-key overrides, re-validated."""
        data = self.model_dump()
        for key, value in changes.items():
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                target = target[part]
            target[parts[-1]] = value
        return parse_scenario(data)


# --- loading ------------------------------------------------------------------------


def _domain_check(s: Scenario, base_dir: Path | None) -> None:
    """Build every domain object once so invariant violations surface with a key."""
    checks = [
        ("phy", lambda: s.phy.build()),
        ("phy", lambda: freechirp_schedule(s.phy.build(), s.phy.chirp_sf, s.fsma.wait_symbols, s.fsma.busy_backoff_factor)),
        ("traffic", lambda: TrafficConfig(s.traffic.duty_cycle, s.phy.payload_bytes, s.total_time_s)),
        ("link", lambda: s.link.build()),
        ("energy", lambda: s.energy.build()),
        ("capture", lambda: s.capture.build()),
        ("nodes.region", lambda: s.nodes.region.build() if s.nodes.region else None),
        ("nodes.positions", lambda: [p.build() for p in s.nodes.positions or []]),
        ("gateway.mobility", lambda: s.gateway.mobility.build(base_dir)),
    ]
    if s.protocol == "bsma":
        checks.append(("bsma", lambda: LoRaParams(sf=s.bsma.tone_sf, bw=s.phy.bw_hz)))
    for section, check in checks:
        try:
            check()
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc).split(": ", 1)[-1], f"{section}.{exc.key}" if exc.key else section) from None
        except TleParseError as exc:
            raise ConfigurationError(str(exc), section) from None
        except OSError as exc:
            raise ConfigurationError(f"cannot read file: {exc}", section) from None


def parse_scenario(data: dict, base_dir: Path | None = None) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigurationError("scenario must be a mapping", "<root>")
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = ".".join(str(p) for p in err["loc"] if not str(p).startswith("function-")) or "<root>"
        # drop discriminator tags pydantic inserts into the location
        key = re.sub(r"\.(static|drone_loop|tle|ephemeris)(?=\.|$)", "", key)
        raise ConfigurationError(err["msg"], key) from None
    _domain_check(scenario, base_dir)
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Load a YAML scenario file, or a preset when ``path`` names one."""
    if str(path) in list_presets():
        return load_preset(str(path))
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"no such file or preset {str(path)!r} (presets: {', '.join(list_presets())})", "scenario")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML: {exc}", "<root>") from None
    return parse_scenario(data, base_dir=path.parent)


def list_presets() -> list[str]:
    root = resources.files("fsmasim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str) -> Scenario:
    root = resources.files("fsmasim") / "presets"
    resource = root / f"{name}.yaml"
    if not resource.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(list_presets())}", "preset")
    return parse_scenario(yaml.safe_load(resource.read_text()))


def parse_protocol_label(label: str) -> dict:
    """``fsma`` / ``aloha`` / ``bsma`` / ``csma`` / ``csma-2000km`` to scenario overrides."""
    m = re.fullmatch(r"csma-(\d+(?:\.\d+)?)km", label)
    if m:
        return {"protocol": "csma", "csma.hearing_range_m": float(m.group(1)) * 1000.0}
    if label in PROTOCOLS:
        return {"protocol": label}
    raise ConfigurationError(f"unknown protocol label {label!r}", "protocol")
