"""Node deployment and gateway mobility on a spherical Earth.

Positions are geodetic-on-a-sphere (:class:`GeoPos`) at the API surface and
Earth-centred Earth-fixed (ECEF) metres internally.  Satellites follow a
two-body Keplerian propagation of TLE mean elements.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import ConfigurationError, PropagationError, TleParseError

EARTH_RADIUS_M = 6_371_000.0
EARTH_MU = 3.986004418e14  # m^3/s^2
EARTH_ROTATION_RAD_S = math.radians(360.9856) / 86_400.0
SECONDS_PER_DAY = 86_400.0
PROPAGATION_WINDOW_S = 7 * SECONDS_PER_DAY
KEPLER_TOL = 1e-10


@dataclass(frozen=True)
class GeoPos:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ConfigurationError(f"latitude {self.lat} outside [-90, 90]", "lat")
        if not -180.0 <= self.lon <= 180.0:
            raise ConfigurationError(f"longitude {self.lon} outside [-180, 180]", "lon")

    def ecef(self) -> np.ndarray:
        return geo_to_ecef(self.lat, self.lon, self.alt)


def geo_to_ecef(lat, lon, alt):
    lat_r = np.radians(lat)
    lon_r = np.radians(lon)
    r = EARTH_RADIUS_M + np.asarray(alt, dtype=float)
    return np.stack(
        [r * np.cos(lat_r) * np.cos(lon_r), r * np.cos(lat_r) * np.sin(lon_r), r * np.sin(lat_r)],
        axis=-1,
    )


def ecef_to_geo(xyz) -> GeoPos:
    x, y, z = (float(v) for v in xyz)
    r = math.sqrt(x * x + y * y + z * z)
    lat = math.degrees(math.asin(max(-1.0, min(1.0, z / r)))) if r > 0 else 0.0
    lon = math.degrees(math.atan2(y, x))
    return GeoPos(lat, lon, r - EARTH_RADIUS_M)


class SlantRange(NamedTuple):
    distance: float
    elevation: float


def slant_range(a: GeoPos, b: GeoPos) -> SlantRange:
    """Straight-line distance and elevation of ``b`` above ``a``'s horizon."""
    pa, pb = a.ecef(), b.ecef()
    return slant_range_ecef(pa, pb)


def slant_range_ecef(pa: np.ndarray, pb: np.ndarray) -> SlantRange:
    delta = pb - pa
    distance = float(math.sqrt(float(delta @ delta)))
    if distance == 0.0:
        return SlantRange(0.0, 90.0)
    up = pa / math.sqrt(float(pa @ pa))
    sin_el = float(up @ delta) / distance
    return SlantRange(distance, math.degrees(math.asin(max(-1.0, min(1.0, sin_el)))))


def offset_position(center: GeoPos, east_m: float, north_m: float, up_m: float = 0.0) -> GeoPos:
    """Point displaced from ``center`` along its local tangent plane."""
    lat, lon = math.radians(center.lat), math.radians(center.lon)
    east = np.array([-math.sin(lon), math.cos(lon), 0.0])
    north = np.array([-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)])
    up = np.array([math.cos(lat) * math.cos(lon), math.cos(lat) * math.sin(lon), math.sin(lat)])
    return ecef_to_geo(center.ecef() + east * east_m + north * north_m + up * up_m)


# --- deployment -------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise ConfigurationError("lat_min must be below lat_max", "region")
        if not self.lon_min < self.lon_max:
            raise ConfigurationError("lon_min must be below lon_max", "region")
        if self.lat_min < -90 or self.lat_max > 90 or self.lon_min < -180 or self.lon_max > 180:
            raise ConfigurationError("bounds outside the globe", "region")

    @property
    def center(self) -> GeoPos:
        return GeoPos((self.lat_min + self.lat_max) / 2, (self.lon_min + self.lon_max) / 2)

    def contains(self, pos: GeoPos) -> bool:
        return self.lat_min <= pos.lat <= self.lat_max and self.lon_min <= pos.lon <= self.lon_max


def deploy_nodes(region: Region, n: int, rng: np.random.Generator) -> list[GeoPos]:
    """``n`` ground positions uniform in latitude/longitude over ``region``."""
    if n < 1:
        raise ConfigurationError("node count must be at least 1", "count")
    # Row-wise pairs: the first k nodes do not depend on the total count.
    u = rng.random(size=(n, 2))
    lats = region.lat_min + u[:, 0] * (region.lat_max - region.lat_min)
    lons = region.lon_min + u[:, 1] * (region.lon_max - region.lon_min)
    return [GeoPos(float(a), float(o), 0.0) for a, o in zip(lats, lons)]


# --- TLE --------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitalElements:
    inclination: float  # deg
    raan: float  # deg
    eccentricity: float
    arg_perigee: float  # deg
    mean_anomaly: float  # deg
    mean_motion: float  # rev/day
    epoch: datetime
    satnum: int = 0
    name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise ConfigurationError("eccentricity must be in [0, 1)", "eccentricity")
        if not self.mean_motion > 0:
            raise ConfigurationError("mean motion must be positive", "mean_motion")

    @property
    def period_s(self) -> float:
        return SECONDS_PER_DAY / self.mean_motion

    @property
    def mean_motion_rad_s(self) -> float:
        return 2.0 * math.pi * self.mean_motion / SECONDS_PER_DAY

    @property
    def semi_major_axis_m(self) -> float:
        return (EARTH_MU / self.mean_motion_rad_s**2) ** (1.0 / 3.0)


def tle_checksum(line: str) -> int:
    total = 0
    for ch in line[:68]:
        if ch.isdigit():
            total += int(ch)
        elif ch == "-":
            total += 1
    return total % 10


def _field(line: str, lineno: int, start: int, end: int, conv, what: str):
    """Columns are 1-based inclusive, as in the TLE format definition."""
    text = line[start - 1 : end]
    try:
        return conv(text)
    except ValueError:
        raise TleParseError(f"cannot parse {what} from {text!r}", lineno, start) from None


def _check_line(line: str, lineno: int) -> str:
    line = line.rstrip("\r\n")
    if len(line) != 69:
        raise TleParseError(f"expected 69 characters, got {len(line)}", lineno)
    if line[0] != str(lineno):
        raise TleParseError(f"line must start with {lineno!r}", lineno, 1)
    if not line[68].isdigit() or int(line[68]) != tle_checksum(line):
        raise TleParseError(
            f"checksum mismatch (computed {tle_checksum(line)}, found {line[68]!r})", lineno, 69
        )
    return line


def _epoch(yy: int, day: float) -> datetime:
    year = 2000 + yy if yy < 57 else 1900 + yy
    return datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=day - 1.0)


def parse_tle(line1: str, line2: str, name: str = "") -> OrbitalElements:
    line1 = _check_line(line1, 1)
    line2 = _check_line(line2, 2)
    sat1 = _field(line1, 1, 3, 7, int, "satellite number")
    sat2 = _field(line2, 2, 3, 7, int, "satellite number")
    if sat1 != sat2:
        raise TleParseError(f"satellite number {sat2} differs from line 1 ({sat1})", 2, 3)
    yy = _field(line1, 1, 19, 20, int, "epoch year")
    day = _field(line1, 1, 21, 32, float, "epoch day")
    try:
        return OrbitalElements(
            inclination=_field(line2, 2, 9, 16, float, "inclination"),
            raan=_field(line2, 2, 18, 25, float, "RAAN"),
            eccentricity=_field(line2, 2, 27, 33, lambda s: float("0." + s.strip()), "eccentricity"),
            arg_perigee=_field(line2, 2, 35, 42, float, "argument of perigee"),
            mean_anomaly=_field(line2, 2, 44, 51, float, "mean anomaly"),
            mean_motion=_field(line2, 2, 53, 63, float, "mean motion"),
            epoch=_epoch(yy, day),
            satnum=sat1,
            name=name.strip(),
        )
    except ConfigurationError as exc:
        raise TleParseError(str(exc), 2) from None


def read_tle(source: str | Path) -> OrbitalElements:
    """Parse the first element set from a file path or raw text (name line optional)."""
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    lines = [ln.rstrip() for ln in str(text).splitlines() if ln.strip()]
    for i in range(len(lines) - 1):
        if lines[i].startswith("1 ") and lines[i + 1].startswith("2 "):
            name = lines[i - 1] if i > 0 and not lines[i - 1].startswith(("1 ", "2 ")) else ""
            return parse_tle(lines[i], lines[i + 1], name=name.removeprefix("0 "))
    raise TleParseError("no line-1/line-2 pair found", 1)


def format_tle(el: OrbitalElements) -> tuple[str, str]:
    """Render elements as a checksummed two-line set (drag terms zeroed)."""
    start = datetime(el.epoch.year, 1, 1, tzinfo=timezone.utc)
    day = 1.0 + (el.epoch - start).total_seconds() / SECONDS_PER_DAY
    body1 = (
        f"1 {el.satnum:05d}U 24001A   {el.epoch.year % 100:02d}{day:012.8f} "
        f" .00000000  00000-0  00000-0 0  999"
    )
    ecc = f"{el.eccentricity:.7f}"[2:]
    body2 = (
        f"2 {el.satnum:05d} {el.inclination:8.4f} {el.raan:8.4f} {ecc} "
        f"{el.arg_perigee:8.4f} {el.mean_anomaly:8.4f} {el.mean_motion:11.8f}    1"
    )
    return body1 + str(tle_checksum(body1)), body2 + str(tle_checksum(body2))


# --- propagation ------------------------------------------------------------


def _solve_kepler(mean_anomaly, e):
    m = np.asarray(mean_anomaly, dtype=float)
    ecc_anom = m.copy() if e < 0.8 else np.full_like(m, math.pi)
    for _ in range(50):
        delta = (ecc_anom - e * np.sin(ecc_anom) - m) / (1.0 - e * np.cos(ecc_anom))
        ecc_anom = ecc_anom - delta
        if np.max(np.abs(delta)) < KEPLER_TOL:
            break
    return ecc_anom


def gmst_rad(when: datetime) -> float:
    jd = when.timestamp() / SECONDS_PER_DAY + 2440587.5
    return math.radians((280.46061837 + 360.98564736629 * (jd - 2451545.0)) % 360.0)


def eci_positions(el: OrbitalElements, t) -> np.ndarray:
    """Inertial positions (m) at ``t`` seconds after the element epoch."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a = el.semi_major_axis_m
    e = el.eccentricity
    m = np.radians(el.mean_anomaly) + el.mean_motion_rad_s * t
    m = np.mod(m, 2.0 * math.pi)
    ecc_anom = _solve_kepler(m, e)
    x_p = a * (np.cos(ecc_anom) - e)
    y_p = a * math.sqrt(1.0 - e * e) * np.sin(ecc_anom)
    i, raan, argp = (math.radians(v) for v in (el.inclination, el.raan, el.arg_perigee))
    co, so, cw, sw, ci, si = math.cos(raan), math.sin(raan), math.cos(argp), math.sin(argp), math.cos(i), math.sin(i)
    rot = np.array(
        [
            [co * cw - so * sw * ci, -co * sw - so * cw * ci],
            [so * cw + co * sw * ci, -so * sw + co * cw * ci],
            [sw * si, cw * si],
        ]
    )
    return (rot @ np.vstack([x_p, y_p])).T


def ecef_positions(el: OrbitalElements, t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.abs(t) > PROPAGATION_WINDOW_S):
        raise PropagationError("time outside +/- 7 days of the element epoch")
    eci = eci_positions(el, t)
    theta = gmst_rad(el.epoch) + EARTH_ROTATION_RAD_S * t
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([c * eci[:, 0] + s * eci[:, 1], -s * eci[:, 0] + c * eci[:, 1], eci[:, 2]], axis=-1)


def propagate(el: OrbitalElements, t: float) -> GeoPos:
    return ecef_to_geo(ecef_positions(el, t)[0])


# --- mobility ---------------------------------------------------------------


@dataclass(frozen=True)
class Static:
    pos: GeoPos

    def position(self, t: float) -> GeoPos:
        return self.pos

    def ecef_track(self, ts) -> np.ndarray:
        return np.tile(self.pos.ecef(), (len(np.atleast_1d(ts)), 1))


@dataclass(frozen=True)
class DroneLoop:
    waypoints: tuple[GeoPos, ...]
    speed: float
    _corners: np.ndarray = field(init=False, repr=False, compare=False)
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ConfigurationError("a drone loop needs at least two waypoints", "waypoints")
        if not self.speed > 0:
            raise ConfigurationError("drone speed must be positive", "speed_mps")
        corners = np.array([w.ecef() for w in self.waypoints])
        closed = np.vstack([corners, corners[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        if seg.sum() <= 0:
            raise ConfigurationError("drone loop has zero length", "waypoints")
        object.__setattr__(self, "_corners", closed)
        object.__setattr__(self, "_cumulative", np.concatenate([[0.0], np.cumsum(seg)]))

    @property
    def length_m(self) -> float:
        return float(self._cumulative[-1])

    @property
    def loop_time_s(self) -> float:
        return self.length_m / self.speed

    def ecef_track(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        s = np.mod(ts * self.speed, self.length_m)
        idx = np.clip(np.searchsorted(self._cumulative, s, side="right") - 1, 0, len(self.waypoints) - 1)
        seg_len = self._cumulative[idx + 1] - self._cumulative[idx]
        frac = np.where(seg_len > 0, (s - self._cumulative[idx]) / np.where(seg_len > 0, seg_len, 1.0), 0.0)
        start = self._corners[idx]
        return start + (self._corners[idx + 1] - start) * frac[:, None]

    def position(self, t: float) -> GeoPos:
        return drone_position(self, t)


def drone_position(loop: DroneLoop, t: float) -> GeoPos:
    if t < 0:
        raise ConfigurationError("time must be non-negative", "t")
    return ecef_to_geo(loop.ecef_track(t)[0])


def square_loop(center: GeoPos, side_m: float, speed: float, altitude_m: float = 100.0) -> DroneLoop:
    """Square flight path centred on ``center``; corners listed anticlockwise from south-west."""
    half = side_m / 2.0
    base = GeoPos(center.lat, center.lon, altitude_m)
    corners = [(-half, -half), (half, -half), (half, half), (-half, half)]
    return DroneLoop(tuple(offset_position(base, e, n) for e, n in corners), speed)


@dataclass(frozen=True)
class TleOrbit:
    elements: OrbitalElements
    start_offset_s: float = 0.0

    def position(self, t: float) -> GeoPos:
        return propagate(self.elements, self.start_offset_s + t)

    def ecef_track(self, ts) -> np.ndarray:
        return ecef_positions(self.elements, self.start_offset_s + np.atleast_1d(np.asarray(ts, dtype=float)))


@dataclass(frozen=True)
class EphemerisTrace:
    times: tuple[float, ...]
    samples: tuple[GeoPos, ...]

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.samples):
            raise ConfigurationError("need at least two timestamped samples", "ephemeris")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigurationError("timestamps must be strictly increasing", "ephemeris")

    def _interp(self, ts: np.ndarray):
        t = np.asarray(self.times)
        if np.any(ts < t[0]) or np.any(ts > t[-1]):
            raise PropagationError("time outside the ephemeris trace")
        lat = np.interp(ts, t, [p.lat for p in self.samples])
        lon = np.interp(ts, t, np.degrees(np.unwrap(np.radians([p.lon for p in self.samples]))))
        alt = np.interp(ts, t, [p.alt for p in self.samples])
        lon = (lon + 180.0) % 360.0 - 180.0
        return lat, lon, alt

    def position(self, t: float) -> GeoPos:
        lat, lon, alt = self._interp(np.atleast_1d(float(t)))
        return GeoPos(float(lat[0]), float(lon[0]), float(alt[0]))

    def ecef_track(self, ts) -> np.ndarray:
        lat, lon, alt = self._interp(np.atleast_1d(np.asarray(ts, dtype=float)))
        return geo_to_ecef(lat, lon, alt)


MobilityModel = Union[Static, DroneLoop, TleOrbit, EphemerisTrace]

EPHEMERIS_HEADER = ["t_s", "lat_deg", "lon_deg", "alt_m"]


def read_ephemeris_csv(path: str | Path) -> EphemerisTrace:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != EPHEMERIS_HEADER:
            raise ConfigurationError(f"ephemeris header must be {','.join(EPHEMERIS_HEADER)}", "ephemeris")
        times, samples = [], []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, lat, lon, alt = (float(v) for v in row)
            except ValueError:
                raise ConfigurationError(f"row {row_no}: expected four numbers", "ephemeris") from None
            times.append(t)
            samples.append(GeoPos(lat, lon, alt))
    return EphemerisTrace(tuple(times), tuple(samples))


def write_ephemeris_csv(path: str | Path, model: MobilityModel, times: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPHEMERIS_HEADER)
        for t in times:
            p = model.position(t)
            writer.writerow([repr(float(t)), repr(p.lat), repr(p.lon), repr(p.alt)])


def culmination_time(model: MobilityModel, site: GeoPos, t_min: float, t_max: float, step_s: float = 10.0) -> float:
    """Time of maximum elevation of ``model`` seen from ``site`` within a window."""
    ts = np.arange(t_min, t_max, step_s)
    track = model.ecef_track(ts)
    pa = site.ecef()
    up = pa / np.linalg.norm(pa)
    delta = track - pa
    sin_el = (delta @ up) / np.linalg.norm(delta, axis=1)
    return float(ts[int(np.argmax(sin_el))])
