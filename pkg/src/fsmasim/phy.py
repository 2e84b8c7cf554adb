"""LoRa physical-layer arithmetic.

Symbol and airtime quantities are exact :class:`fractions.Fraction` values
(seconds or symbols); callers convert to the integer microsecond clock with
:func:`to_us`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from .errors import ConfigurationError

VALID_BANDWIDTHS = (125_000, 250_000, 500_000)

# SX127x datasheet demodulator SNR floors (dB), 125 kHz.
DEMOD_SNR_THRESHOLD_DB = {
    7: -7.5,
    8: -10.0,
    9: -12.5,
    10: -15.0,
    11: -17.5,
    12: -20.0,
}

# Rounding slack for dB comparisons so that exact-boundary cases (e.g. a
# 1 dB margin computed through log10) resolve the same way everywhere.
DB_EPS = 1e-9


def _check_sf(sf: int, key: str = "sf") -> None:
    if not isinstance(sf, int) or isinstance(sf, bool) or not 7 <= sf <= 12:
        raise ConfigurationError(f"spreading factor must be an integer in [7, 12], got {sf!r}", key)


@dataclass(frozen=True)
class LoRaParams:
    sf: int = 10
    bw: int = 125_000
    cr: int = 4
    preamble_symbols: int = 8
    payload_bytes: int = 20
    explicit_header: bool = True
    crc_in_airtime: bool = False
    ldro: bool = True

    def __post_init__(self):
        _check_sf(self.sf)
        if self.bw not in VALID_BANDWIDTHS:
            raise ConfigurationError(f"bandwidth must be one of {VALID_BANDWIDTHS}, got {self.bw!r}", "bw")
        if not 1 <= self.cr <= 4:
            raise ConfigurationError(f"coding rate must be in [1, 4] (4/5..4/8), got {self.cr!r}", "cr")
        if self.preamble_symbols < 6:
            raise ConfigurationError("preamble must be at least 6 symbols", "preamble_symbols")
        if not 0 <= self.payload_bytes <= 255:
            raise ConfigurationError(f"payload must be in [0, 255] bytes, got {self.payload_bytes!r}", "payload_bytes")

    @property
    def symbol_s(self) -> Fraction:
        return symbol_duration(self.sf, self.bw)


class Airtime(NamedTuple):
    symbols: Fraction
    seconds: Fraction


@dataclass(frozen=True)
class FreeChirpSchedule:
    """Gateway FreeChirp timing; every field is an exact duration in seconds."""

    t_chirp: Fraction
    t_wait: Fraction
    t_interval: Fraction
    t_nsense: Fraction
    t_busy_backoff: Fraction
    node_symbol: Fraction

    @property
    def nsense_symbols(self) -> Fraction:
        return self.t_nsense / self.node_symbol

    def as_us(self) -> dict[str, int]:
        return {
            "t_chirp": to_us(self.t_chirp),
            "t_wait": to_us(self.t_wait),
            "t_interval": to_us(self.t_interval),
            "t_nsense": to_us(self.t_nsense),
            "t_busy_backoff": to_us(self.t_busy_backoff),
            "node_symbol": to_us(self.node_symbol),
        }


@dataclass(frozen=True)
class CaptureModel:
    capture_threshold_db: float = 1.0
    lock_window_symbols: int = 4
    preamble_detect_symbols_min: int = 3
    preamble_detect_symbols_max: int = 5

    def __post_init__(self):
        if not self.capture_threshold_db > 0:
            raise ConfigurationError("must be > 0", "capture_threshold_db")
        if self.lock_window_symbols < 1:
            raise ConfigurationError("must be >= 1", "lock_window_symbols")
        if not 1 <= self.preamble_detect_symbols_min <= self.preamble_detect_symbols_max:
            raise ConfigurationError("need 1 <= min <= max", "preamble_detect_symbols")


def to_us(seconds: Fraction | float) -> int:
    """Convert a duration to the engine's integer microsecond clock."""
    return int(round(Fraction(seconds) * 1_000_000))


def symbol_duration(sf: int, bw: int) -> Fraction:
    _check_sf(sf)
    if not bw > 0:
        raise ConfigurationError(f"bandwidth must be positive, got {bw!r}", "bw")
    return Fraction(2**sf, bw)


def packet_airtime(params: LoRaParams) -> Airtime:
    """Semtech time-on-air formula, in symbols and seconds."""
    sf = params.sf
    de = 1 if params.ldro else 0
    ih = 0 if params.explicit_header else 1
    crc = 1 if params.crc_in_airtime else 0
    numerator = 8 * params.payload_bytes - 4 * sf + 28 + 16 * crc - 20 * ih
    blocks = math.ceil(Fraction(numerator, 4 * (sf - 2 * de)))
    payload_symbols = 8 + max(blocks * (params.cr + 4), 0)
    symbols = params.preamble_symbols + Fraction(17, 4) + payload_symbols
    return Airtime(symbols, symbols * params.symbol_s)


def freechirp_schedule(
    node_params: LoRaParams,
    chirp_sf: int,
    wait_symbols: int = 6,
    busy_backoff_factor: int = 4,
) -> FreeChirpSchedule:
    _check_sf(chirp_sf, "chirp_sf")
    if chirp_sf >= node_params.sf:
        raise ConfigurationError(
            f"FreeChirp SF ({chirp_sf}) must be lower than the node SF ({node_params.sf})", "chirp_sf"
        )
    node_symbol = node_params.symbol_s
    t_chirp = symbol_duration(chirp_sf, node_params.bw)
    t_wait = wait_symbols * node_symbol
    t_interval = t_chirp + t_wait
    return FreeChirpSchedule(
        t_chirp=t_chirp,
        t_wait=t_wait,
        t_interval=t_interval,
        t_nsense=t_interval,
        t_busy_backoff=busy_backoff_factor * t_wait,
        node_symbol=node_symbol,
    )


def demod_snr_threshold(sf: int, table: dict[int, float] | None = None) -> float:
    _check_sf(sf)
    return (table or DEMOD_SNR_THRESHOLD_DB)[sf]


# --- capture effect -------------------------------------------------------


class Fate(str, enum.Enum):
    DECODED = "decoded"
    LOST_COLLISION = "lost_collision"
    LOST_DETECT = "lost_detect"
    LOST_LINK = "lost_link"

    @property
    def lost(self) -> bool:
        return self is not Fate.DECODED


class GatewayOutcome(str, enum.Enum):
    SUCCESS = "success"
    DETECT_FAILURE = "detect_failure"
    IDLE = "idle"


@dataclass(frozen=True)
class Reception:
    """A packet as seen at the gateway antenna.

    ``arrival`` and ``airtime`` share whatever time unit the caller uses
    (seconds, symbols or microseconds) as long as ``symbol`` in
    :func:`capture_resolve` is expressed in the same unit.
    """

    arrival: float
    power_dbm: float
    airtime: float
    snr_db: float = math.inf

    @property
    def end(self) -> float:
        return self.arrival + self.airtime


class CaptureResult(NamedTuple):
    fates: tuple[Fate, ...]
    outcome: GatewayOutcome
    episodes: tuple[GatewayOutcome, ...]

    @property
    def decoded(self) -> tuple[bool, ...]:
        return tuple(f is Fate.DECODED for f in self.fates)


def _aggregate_dbm(powers_dbm: Sequence[float]) -> float:
    if not powers_dbm:
        return -math.inf
    if len(powers_dbm) == 1:
        return powers_dbm[0]
    return 10.0 * math.log10(math.fsum(10.0 ** (p / 10.0) for p in powers_dbm))


def capture_resolve(
    receptions: Sequence[Reception],
    symbol: float,
    model: CaptureModel = CaptureModel(),
    min_snr_db: float = -math.inf,
) -> CaptureResult:
    """Resolve which packets a single-demodulator receiver decodes.

    The receiver idles until a detectable packet arrives, then opens a lock
    window of ``model.lock_window_symbols`` symbols and locks to the
    strongest detectable packet that arrived inside it.  The locked packet is
    decoded when it beats the summed power of every packet overlapping it by
    the capture threshold, unless a packet at least that much stronger shows
    up after the window closed, which corrupts the lock (detect failure, both
    lost).  Packets that arrive while the receiver is busy are lost.  The
    receiver frees up when the locked packet ends, so a chain of
    overlapping packets can contain several lock episodes.
    """
    n = len(receptions)
    if n == 0:
        return CaptureResult((), GatewayOutcome.IDLE, ())
    thr = model.capture_threshold_db - DB_EPS
    window = model.lock_window_symbols * symbol
    order = sorted(range(n), key=lambda i: (receptions[i].arrival, i))
    detectable = [r.snr_db >= min_snr_db for r in receptions]
    fates: list[Fate | None] = [None] * n
    episodes: list[GatewayOutcome] = []
    busy_until = -math.inf

    for opener in order:
        r0 = receptions[opener]
        if fates[opener] is not None or not detectable[opener] or r0.arrival < busy_until:
            continue
        window_end = r0.arrival + window
        candidates = [
            j for j in order
            if fates[j] is None and detectable[j] and r0.arrival <= receptions[j].arrival <= window_end
        ]
        lock = max(candidates, key=lambda j: (receptions[j].power_dbm, -receptions[j].arrival, -j))
        locked = receptions[lock]
        late_stronger = [
            j for j in range(n)
            if j != lock
            and window_end < receptions[j].arrival < locked.end
            and receptions[j].power_dbm - locked.power_dbm >= thr
        ]
        if late_stronger:
            fates[lock] = Fate.LOST_DETECT
            for j in late_stronger:
                fates[j] = Fate.LOST_DETECT
            episodes.append(GatewayOutcome.DETECT_FAILURE)
        else:
            interferers = [
                receptions[j].power_dbm for j in range(n)
                if j != lock and receptions[j].arrival < locked.end and locked.arrival < receptions[j].end
            ]
            if locked.power_dbm - _aggregate_dbm(interferers) >= thr:
                fates[lock] = Fate.DECODED
                episodes.append(GatewayOutcome.SUCCESS)
            else:
                fates[lock] = Fate.LOST_COLLISION
                episodes.append(GatewayOutcome.DETECT_FAILURE)
        for j in candidates:
            if fates[j] is None:
                fates[j] = Fate.LOST_COLLISION
        busy_until = max(busy_until, locked.end)

    final = tuple(
        f if f is not None else (Fate.LOST_COLLISION if detectable[i] else Fate.LOST_LINK)
        for i, f in enumerate(fates)
    )
    if GatewayOutcome.SUCCESS in episodes:
        outcome = GatewayOutcome.SUCCESS
    elif any(detectable):
        outcome = GatewayOutcome.DETECT_FAILURE
    else:
        outcome = GatewayOutcome.IDLE
    return CaptureResult(final, outcome, tuple(episodes))
