"""Link model: free-space loss, SNR, propagation delay and detection draws."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError
from .phy import CaptureModel, demod_snr_threshold

SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0


@dataclass(frozen=True)
class LinkBudget:
    node_tx_power_dbm: float = 22.0
    gateway_tx_power_dbm: float = 22.0
    node_antenna_gain_dbi: float = 2.15
    gateway_antenna_gain_dbi: float = 2.15
    carrier_hz: float = 430e6
    noise_figure_db: float = 6.0
    shadowing_sigma_db: float = 0.0
    shadowing_epoch_s: float = 10.0
    # Links below this elevation are in outage; -90 disables the cutoff.
    min_elevation_deg: float = 10.0
    # Extra fixed loss (foliage, buildings, body) on every link.
    link_attenuation_db: float = 0.0
    cad_margin_db: float = 1.5

    def __post_init__(self):
        if not self.carrier_hz > 0:
            raise ConfigurationError("must be positive", "carrier_hz")
        if self.shadowing_sigma_db < 0:
            raise ConfigurationError("must be non-negative", "shadowing_sigma_db")
        if not self.shadowing_epoch_s > 0:
            raise ConfigurationError("must be positive", "shadowing_epoch_s")
        if not -90.0 <= self.min_elevation_deg <= 90.0:
            raise ConfigurationError("must be within [-90, 90]", "min_elevation_deg")
        if self.cad_margin_db < 0:
            raise ConfigurationError("must be non-negative", "cad_margin_db")

    def eirp_and_gain(self, downlink: bool) -> float:
        """Transmit power plus both antenna gains for the given direction."""
        tx = self.gateway_tx_power_dbm if downlink else self.node_tx_power_dbm
        return tx + self.node_antenna_gain_dbi + self.gateway_antenna_gain_dbi


class LinkSample(NamedTuple):
    distance_m: float
    rx_power_dbm: float
    snr_db: float
    prop_delay_s: float


def path_loss_db(distance_m: float, carrier_hz: float) -> float:
    if not distance_m >= 1.0:
        raise ConfigurationError(f"free-space loss needs distance >= 1 m, got {distance_m!r}", "distance_m")
    if not carrier_hz > 0:
        raise ConfigurationError("must be positive", "carrier_hz")
    return 20.0 * math.log10(distance_m / 1000.0) + 20.0 * math.log10(carrier_hz / 1e6) + 32.45


def noise_floor_dbm(bw_hz: float, noise_figure_db: float) -> float:
    return THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(bw_hz) + noise_figure_db


def propagation_delay(distance_m: float) -> float:
    if distance_m < 0:
        raise ConfigurationError("distance must be non-negative", "distance_m")
    return distance_m / SPEED_OF_LIGHT


def rx_snr(
    budget: LinkBudget,
    distance_m: float,
    bw_hz: float,
    rng: np.random.Generator | None = None,
    *,
    downlink: bool = False,
    shadow_db: float | None = None,
) -> LinkSample:
    """Sample one link.

    ``shadow_db`` injects a pre-drawn shadowing value (the engine shares one
    draw between uplink and downlink); otherwise a value is drawn from ``rng``
    when the budget has non-zero sigma.
    """
    if shadow_db is None:
        shadow_db = 0.0
        if budget.shadowing_sigma_db > 0:
            if rng is None:
                raise ConfigurationError("shadowing needs an rng", "shadowing_sigma_db")
            shadow_db = float(rng.normal(0.0, budget.shadowing_sigma_db))
    loss = path_loss_db(max(distance_m, 1.0), budget.carrier_hz) + budget.link_attenuation_db
    rx = budget.eirp_and_gain(downlink) - loss - shadow_db
    snr = rx - noise_floor_dbm(bw_hz, budget.noise_figure_db)
    return LinkSample(distance_m, rx, snr, propagation_delay(distance_m))


def arrival_delay_spread(distances_m: Sequence[float]) -> float:
    """Worst-case spread of arrival times for a broadcast-triggered group.

    The trigger travels down and the reply travels back, hence the factor two.
    """
    if len(distances_m) < 2:
        raise ConfigurationError("need at least two distances", "distances")
    delays = [propagation_delay(d) for d in distances_m]
    return 2.0 * (max(delays) - min(delays))


def cad_detection_probability(snr_db: float, sf: int, margin_db: float = 1.5) -> float:
    threshold = demod_snr_threshold(sf)
    if margin_db == 0:
        return 1.0 if snr_db >= threshold else 0.0
    p = (snr_db - (threshold - margin_db)) / (2.0 * margin_db)
    return min(1.0, max(0.0, p))


def cad_detect(
    snr_db: float | None,
    chirp_sf: int,
    rng: np.random.Generator,
    margin_db: float = 1.5,
) -> bool:
    """One channel-activity-detection attempt; ``snr_db=None`` means no signal on air.

    Saturated probabilities (0 or 1) consume no random draw.
    """
    if snr_db is None:
        return False
    p = cad_detection_probability(snr_db, chirp_sf, margin_db)
    if p >= 1.0:
        return True
    if p <= 0.0:
        return False
    return bool(rng.random() < p)


def preamble_detect_delay(capture: CaptureModel, rng: np.random.Generator) -> int:
    lo, hi = capture.preamble_detect_symbols_min, capture.preamble_detect_symbols_max
    if lo == hi:
        return lo
    return int(rng.integers(lo, hi + 1))
