"""Traffic generation, energy bookkeeping and run-level metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError
from .phy import Fate

US = 1_000_000


@dataclass(frozen=True)
class TrafficConfig:
    duty_cycle: float = 0.001
    payload_bytes: int = 20
    total_time_s: float = 600.0

    def __post_init__(self):
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ConfigurationError("must be within [0, 1]", "duty_cycle")
        if not self.total_time_s > 0:
            raise ConfigurationError("must be positive", "total_time_s")

    def rate_per_s(self, airtime_s: float) -> float:
        return self.duty_cycle / airtime_s


def poisson_arrivals(cfg: TrafficConfig, airtime_s: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times (s) of one node's Poisson process over ``[0, total_time_s)``."""
    rate = cfg.rate_per_s(float(airtime_s))
    if rate <= 0:
        return np.empty(0)
    # Draw gaps in blocks so the sequence only depends on the stream, not on a guessed size.
    expected = rate * cfg.total_time_s
    block = max(16, int(expected + 6 * math.sqrt(expected) + 1))
    times: list[np.ndarray] = []
    t = 0.0
    while True:
        gaps = rng.exponential(1.0 / rate, size=block)
        arr = t + np.cumsum(gaps)
        inside = arr[arr < cfg.total_time_s]
        times.append(inside)
        if len(inside) < block:
            break
        t = float(arr[-1])
    return np.concatenate(times)


def offered_load(buffered_packets: int, airtime_s: float, total_time_s: float) -> float:
    if buffered_packets < 0 or total_time_s <= 0:
        raise ConfigurationError("need non-negative packets and positive duration", "offered_load")
    return buffered_packets * float(airtime_s) / total_time_s


# --- energy ---------------------------------------------------------------

NODE_ACTIVITIES = ("tx", "cad", "listen", "sleep")
GATEWAY_ACTIVITIES = ("chirp", "tone", "probe")


@dataclass(frozen=True)
class EnergyModel:
    node_tx_w: float = 0.4
    node_rx_cad_w: float = 0.05
    node_sleep_w: float = 1e-6
    gateway_chirp_w: float = 0.4
    gateway_tone_w: float = 0.4
    gateway_probe_j: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError("must be non-negative", f.name)

    def power(self, activity: str) -> float:
        return {
            "tx": self.node_tx_w,
            "cad": self.node_rx_cad_w,
            "listen": self.node_rx_cad_w,
            "sleep": self.node_sleep_w,
            "chirp": self.gateway_chirp_w,
            "tone": self.gateway_tone_w,
        }[activity]


@dataclass
class EnergyLedger:
    """Itemized energy (J) and time (s) per activity class."""

    joules: dict[str, float] = field(default_factory=dict)
    seconds: dict[str, float] = field(default_factory=dict)

    @property
    def total_j(self) -> float:
        return math.fsum(self.joules.values())

    def get(self, activity: str) -> float:
        return self.joules.get(activity, 0.0)


def energy_accrue(ledger: EnergyLedger, model: EnergyModel, activity: str, duration_s: float, count: int = 1) -> EnergyLedger:
    """Charge ``duration_s`` of ``activity``; probes are charged per event via ``count``."""
    if duration_s < 0:
        raise ConfigurationError("duration must be non-negative", "duration_s")
    if activity == "probe":
        joules = model.gateway_probe_j * count
    else:
        joules = model.power(activity) * duration_s
    ledger.joules[activity] = ledger.joules.get(activity, 0.0) + joules
    ledger.seconds[activity] = ledger.seconds.get(activity, 0.0) + duration_s
    return ledger


# --- per-packet records and the report -------------------------------------


@dataclass
class PacketRecord:
    node: int
    created_us: int
    tx_start_us: int | None = None
    airtime_us: int = 0
    gw_arrival_us: int | None = None
    fate: Fate | None = None
    detected: bool = False
    distance_m: float = math.nan
    snr_db: float = math.nan

    @property
    def transmitted(self) -> bool:
        return self.tx_start_us is not None


@dataclass
class NodeMetrics:
    node: int
    generated: int
    transmitted: int
    decoded: int
    energy_j: float
    mean_wait_s: float


@dataclass
class MetricsReport:
    scenario_id: str
    protocol: str
    seed: int
    node_count: int
    total_time_s: float
    offered_load: float
    generated: int
    transmitted: int
    decoded: int
    lost_collision: int
    lost_link: int
    lost_detect: int
    detected: int
    throughput_bps: float
    normalized_throughput: float
    prr: float
    channel_usage: float
    energy_per_success_j: float
    energy_ratio_node: float
    node_energy_j: dict[str, float]
    gateway_energy_j: float
    gateway_energy_items_j: dict[str, float]
    gateway_failure_ratio: float
    mean_wait_s: float
    p50_wait_s: float
    p95_wait_s: float
    chirp_count: int
    tone_airtime_s: float
    max_collision_tx_spread_s: float
    t_nsense_symbols: float
    t_nsense_symbols_rounded: int
    per_node: list[NodeMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        data = dict(data)
        data["per_node"] = [NodeMetrics(**n) for n in data.get("per_node", [])]
        return cls(**data)


CSV_COLUMNS = (
    "scenario_id",
    "protocol",
    "seed",
    "node_count",
    "offered_load",
    "throughput_bps",
    "normalized_throughput",
    "prr",
    "channel_usage",
    "energy_ratio_node",
    "gateway_energy_j",
    "gateway_failure_ratio",
    "mean_wait_s",
)


def interval_union_length(intervals: Iterable[tuple[float, float]]) -> float:
    total = 0.0
    cur_start = cur_end = None
    for start, end in sorted(intervals):
        if cur_end is None or start > cur_end:
            if cur_end is not None:
                total += cur_end - cur_start
            cur_start, cur_end = start, end
        elif end > cur_end:
            cur_end = end
    if cur_end is not None:
        total += cur_end - cur_start
    return total


def max_overlap_tx_spread(records: Sequence[PacketRecord]) -> int:
    """Largest TxStart difference (µs) between two packets that overlap at the gateway."""
    rx = sorted(
        (r.gw_arrival_us, r.gw_arrival_us + r.airtime_us, r.tx_start_us)
        for r in records
        if r.gw_arrival_us is not None
    )
    worst = 0
    active: list[tuple[int, int]] = []  # (end, tx_start)
    for start, end, tx in rx:
        active = [a for a in active if a[0] > start]
        for _, other_tx in active:
            worst = max(worst, abs(tx - other_tx))
        active.append((end, tx))
    return worst


def _percentile(values: np.ndarray, q: float) -> float:
    return float(np.percentile(values, q)) if len(values) else 0.0


def compute_metrics(
    *,
    scenario_id: str,
    protocol: str,
    seed: int,
    node_count: int,
    records: Sequence[PacketRecord],
    node_ledgers: Sequence[EnergyLedger],
    gateway_ledger: EnergyLedger,
    airtime_s: float,
    payload_bytes: int,
    total_time_s: float,
    tx_power_w: float,
    chirp_count: int = 0,
    t_nsense_symbols: float = 0.0,
) -> MetricsReport:
    """Fold raw packet records and energy ledgers into a :class:`MetricsReport`."""
    transmitted = [r for r in records if r.transmitted]
    counts = {f: 0 for f in Fate}
    for r in transmitted:
        counts[r.fate] += 1
    decoded = counts[Fate.DECODED]
    detected = sum(1 for r in transmitted if r.detected)
    detected_decoded = sum(1 for r in transmitted if r.detected and r.fate is Fate.DECODED)

    payload_bits = 8 * payload_bytes
    throughput = decoded * payload_bits / total_time_s
    normalized = throughput / (payload_bits / airtime_s) if payload_bits else decoded * airtime_s / total_time_s
    usage = interval_union_length(
        (r.gw_arrival_us / US, (r.gw_arrival_us + r.airtime_us) / US)
        for r in transmitted
        if r.gw_arrival_us is not None
    )

    active_items = ("tx", "cad", "listen")
    node_energy = {a: math.fsum(l.get(a) for l in node_ledgers) for a in NODE_ACTIVITIES}
    spent = math.fsum(node_energy[a] for a in active_items)
    per_success = spent / decoded if decoded else math.inf
    single_tx = airtime_s * tx_power_w
    ratio = per_success / single_tx if single_tx > 0 else math.inf

    waits = np.array([(r.tx_start_us - r.created_us) / US for r in transmitted])
    per_node_records: dict[int, list[PacketRecord]] = {i: [] for i in range(node_count)}
    for r in records:
        per_node_records[r.node].append(r)
    per_node = []
    for i in range(node_count):
        recs = per_node_records[i]
        sent = [r for r in recs if r.transmitted]
        node_waits = [(r.tx_start_us - r.created_us) / US for r in sent]
        per_node.append(
            NodeMetrics(
                node=i,
                generated=len(recs),
                transmitted=len(sent),
                decoded=sum(1 for r in sent if r.fate is Fate.DECODED),
                energy_j=math.fsum(node_ledgers[i].get(a) for a in active_items) if i < len(node_ledgers) else 0.0,
                mean_wait_s=float(np.mean(node_waits)) if node_waits else 0.0,
            )
        )

    return MetricsReport(
        scenario_id=scenario_id,
        protocol=protocol,
        seed=seed,
        node_count=node_count,
        total_time_s=total_time_s,
        offered_load=offered_load(len(records), airtime_s, total_time_s),
        generated=len(records),
        transmitted=len(transmitted),
        decoded=decoded,
        lost_collision=counts[Fate.LOST_COLLISION],
        lost_link=counts[Fate.LOST_LINK],
        lost_detect=counts[Fate.LOST_DETECT],
        detected=detected,
        throughput_bps=throughput,
        normalized_throughput=normalized,
        prr=decoded / len(transmitted) if transmitted else 0.0,
        channel_usage=min(1.0, usage / total_time_s),
        energy_per_success_j=per_success,
        energy_ratio_node=ratio,
        node_energy_j=node_energy,
        gateway_energy_j=gateway_ledger.total_j,
        gateway_energy_items_j={a: gateway_ledger.get(a) for a in GATEWAY_ACTIVITIES},
        gateway_failure_ratio=(detected - detected_decoded) / detected if detected else 0.0,
        mean_wait_s=float(waits.mean()) if len(waits) else 0.0,
        p50_wait_s=_percentile(waits, 50),
        p95_wait_s=_percentile(waits, 95),
        chirp_count=chirp_count,
        tone_airtime_s=gateway_ledger.seconds.get("tone", 0.0),
        max_collision_tx_spread_s=max_overlap_tx_spread(transmitted) / US,
        t_nsense_symbols=float(t_nsense_symbols),
        t_nsense_symbols_rounded=int(t_nsense_symbols),
        per_node=per_node,
    )
