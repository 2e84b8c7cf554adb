"""Deterministic discrete-event core.

Time is an integer count of microseconds.  Events are ordered by
``(time, sequence)`` so equal-time events run in the order they were
scheduled.  Every random draw comes from a per-entity stream derived from
the scenario seed, so adding nodes or switching protocol leaves the other
entities' draws untouched.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Any, Iterator, NamedTuple

import numpy as np

from . import geo
from .channel import SPEED_OF_LIGHT, noise_floor_dbm, preamble_detect_delay
from .errors import SchedulingError
from .mac import BackoffState, MacAgent, make_mac
from .metrics import (
    EnergyLedger,
    MetricsReport,
    PacketRecord,
    TrafficConfig,
    compute_metrics,
    energy_accrue,
    poisson_arrivals,
)
from .phy import CaptureModel, Fate, Reception, capture_resolve, demod_snr_threshold, freechirp_schedule, packet_airtime, to_us
from .scenario import Scenario

TRACK_STEP_US = 100_000


class Kind(enum.Enum):
    PACKET_ARRIVAL = "PACKET_ARRIVAL"
    BACKOFF_EXPIRY = "BACKOFF_EXPIRY"
    SENSE_DECISION = "SENSE_DECISION"
    TX_START = "TX_START"
    TX_END = "TX_END"
    RX_START = "RX_START"
    RX_DETECT = "RX_DETECT"
    RX_COMPLETE = "RX_COMPLETE"
    GATEWAY_PROBE = "GATEWAY_PROBE"


class Event(NamedTuple):
    t_us: int
    seq: int
    kind: Kind
    entity: int
    payload: Any


class StreamKind(enum.IntEnum):
    TRAFFIC = 0
    MAC = 1
    SHADOW = 2
    GATEWAY = 3
    DEPLOY = 4


def rng_stream(seed: int, kind: StreamKind, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(int(kind), index))))


class EventQueue:
    """Min-heap of events with FIFO tie-breaking and an optional trace sink."""

    def __init__(self):
        self._heap: list[tuple[int, int, Kind, int, Any]] = []
        self._seq = 0
        self.now = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, t_us: int, kind: Kind, entity: int = -1, payload: Any = None) -> None:
        if t_us < self.now:
            raise SchedulingError(f"{kind.value} scheduled at {t_us} us, clock is at {self.now} us")
        heapq.heappush(self._heap, (t_us, self._seq, kind, entity, payload))
        self._seq += 1

    def pop(self) -> Event | None:
        if not self._heap:
            return None
        item = heapq.heappop(self._heap)
        self.now = item[0]
        return Event(*item)


class Trace:
    """Collects ``t_us,kind,entity,detail`` lines into a running hash and optional file."""

    def __init__(self, sink: IO[str] | None = None):
        self._hash = hashlib.sha256()
        self._sink = sink
        self.lines = 0

    def write(self, t_us: int, kind: str, entity: int, detail: Any) -> None:
        line = f"{t_us},{kind},{entity},{'' if detail is None else detail}\n"
        self._hash.update(line.encode())
        self.lines += 1
        if self._sink is not None:
            self._sink.write(line)

    @property
    def digest(self) -> str:
        return self._hash.hexdigest()


class LinkState(NamedTuple):
    distance_m: float
    rx_power_dbm: float
    snr_db: float
    prop_delay_us: int
    outage: bool


@dataclass
class NodeState:
    id: int
    ecef: tuple[float, float, float]
    up: tuple[float, float, float]
    rng: np.random.Generator
    backoff: BackoffState
    queue: deque = field(default_factory=deque)
    transmitting: bool = False
    waiting: bool = False
    sense_start: int = 0
    verify_pending: bool = False
    decision: tuple | None = None
    token: int = 0
    ledger: EnergyLedger = field(default_factory=EnergyLedger)


@dataclass
class Counters:
    transmitted: int = 0
    decoded: int = 0
    lost_collision: int = 0
    lost_link: int = 0
    lost_detect: int = 0

    def add(self, fate: Fate) -> None:
        name = {Fate.DECODED: "decoded"}.get(fate, fate.value)
        setattr(self, name, getattr(self, name) + 1)


@dataclass
class RunResult:
    report: MetricsReport
    records: list[PacketRecord]
    counters: Counters
    node_counters: list[Counters]
    trace_hash: str | None
    events: int


class Simulation:
    Kind = Kind

    def __init__(self, scenario: Scenario, trace: Trace | None = None):
        self.scenario = scenario
        self.seed = scenario.seed
        self.params = scenario.phy.build()
        self.chirp_sf = scenario.phy.chirp_sf
        self.budget = scenario.link.build()
        self.energy = scenario.energy.build()
        self.capture = scenario.capture.build()
        airtime = packet_airtime(self.params)
        self.airtime_s = float(airtime.seconds)
        self.airtime_us = to_us(airtime.seconds)
        self.node_symbol_s = float(self.params.symbol_s)
        self.symbol_us = to_us(self.params.symbol_s)
        self.schedule_obj = freechirp_schedule(
            self.params, self.chirp_sf, scenario.fsma.wait_symbols, scenario.fsma.busy_backoff_factor
        )
        self.schedule_us = self.schedule_obj.as_us()
        self.total_us = to_us(scenario.total_time_s)
        self.demod_threshold = demod_snr_threshold(self.params.sf)
        self.noise_dbm = noise_floor_dbm(self.params.bw, self.budget.noise_figure_db)
        self._fspl_const = 20.0 * math.log10(self.budget.carrier_hz / 1e6) + 32.45 - 60.0
        self._sin_min_el = math.sin(math.radians(self.budget.min_elevation_deg))
        self._elev_check = self.budget.min_elevation_deg > -90.0

        self.queue = EventQueue()
        self.trace = trace
        self.flag_count = 0
        self.records: list[PacketRecord] = []
        self.counters = Counters()
        self.gateway_ledger = EnergyLedger()
        self.gw_rng = rng_stream(self.seed, StreamKind.GATEWAY)
        self._cluster: list[PacketRecord] = []
        self._cluster_power: dict[int, float] = {}
        self._in_air = 0
        self._detecting: set[int] = set()
        self._active_tx: list[tuple[int, int, int]] = []  # (node, start, end)

        self._build_nodes()
        self._build_gateway_track()
        self.traffic = TrafficConfig(scenario.traffic.duty_cycle, self.params.payload_bytes, scenario.total_time_s)
        self.mac: MacAgent = make_mac(self, scenario.protocol, scenario)

    # --- setup ---------------------------------------------------------------

    def _build_nodes(self) -> None:
        s = self.scenario
        n = s.nodes.count
        if s.nodes.positions is not None:
            positions = [p.build() for p in s.nodes.positions]
        elif n > 0:
            positions = geo.deploy_nodes(s.nodes.region.build(), n, rng_stream(self.seed, StreamKind.DEPLOY))
        else:
            positions = []
        self.positions = positions
        self.nodes: list[NodeState] = []
        for i, pos in enumerate(positions):
            xyz = pos.ecef()
            r = float(np.linalg.norm(xyz))
            self.nodes.append(
                NodeState(
                    id=i,
                    ecef=(float(xyz[0]), float(xyz[1]), float(xyz[2])),
                    up=(float(xyz[0]) / r, float(xyz[1]) / r, float(xyz[2]) / r),
                    rng=rng_stream(self.seed, StreamKind.MAC, i),
                    backoff=BackoffState.fresh(self.airtime_us, s.backoff.reset_factor),
                )
            )
        self.node_counters = [Counters() for _ in self.nodes]
        self._shadow: dict[int, np.ndarray] = {}
        self._shadow_epoch_us = to_us(self.budget.shadowing_epoch_s)

    def _build_gateway_track(self) -> None:
        self.mobility = self.scenario.gateway.mobility.build()
        if isinstance(self.mobility, geo.Static):
            p = self.mobility.pos.ecef()
            self._static_gw = (float(p[0]), float(p[1]), float(p[2]))
            return
        self._static_gw = None
        # covers the run plus in-flight packets and late sensing
        horizon_us = self.total_us + 2 * self.airtime_us + 2_000_000
        ts = np.arange(0, horizon_us + TRACK_STEP_US, TRACK_STEP_US) / 1e6
        track = self.mobility.ecef_track(ts)
        self._track = [tuple(map(float, row)) for row in track]

    # --- services used by MAC agents -------------------------------------------

    @property
    def now(self) -> int:
        return self.queue.now

    @property
    def flag_on(self) -> bool:
        return self.flag_count > 0

    def schedule(self, t_us: int, kind: Kind, entity: int = -1, payload: Any = None) -> None:
        self.queue.schedule(t_us, kind, entity, payload)

    def trace_event(self, t_us: int, kind: str, entity: int, detail: Any = None) -> None:
        if self.trace is not None:
            self.trace.write(t_us, kind, entity, detail)

    def gateway_position(self, t_us: int) -> tuple[float, float, float]:
        if self._static_gw is not None:
            return self._static_gw
        i, rem = divmod(t_us, TRACK_STEP_US)
        a = self._track[i]
        if rem == 0:
            return a
        b = self._track[i + 1]
        f = rem / TRACK_STEP_US
        return (a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f, a[2] + (b[2] - a[2]) * f)

    def _shadow_db(self, node: int, t_us: int) -> float:
        sigma = self.budget.shadowing_sigma_db
        if sigma == 0:
            return 0.0
        draws = self._shadow.get(node)
        if draws is None:
            epochs = (self.total_us + 2 * self.airtime_us + 2_000_000) // self._shadow_epoch_us + 2
            draws = rng_stream(self.seed, StreamKind.SHADOW, node).normal(0.0, sigma, size=epochs)
            self._shadow[node] = draws
        return float(draws[t_us // self._shadow_epoch_us])

    def link(self, node: int, t_us: int, downlink: bool = False) -> LinkState:
        """Link between ``node`` and the gateway at ``t_us`` (shadowing is reciprocal)."""
        n = self.nodes[node]
        g = self.gateway_position(t_us)
        dx, dy, dz = g[0] - n.ecef[0], g[1] - n.ecef[1], g[2] - n.ecef[2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        outage = False
        if self._elev_check and d > 0:
            sin_el = (n.up[0] * dx + n.up[1] * dy + n.up[2] * dz) / d
            outage = sin_el < self._sin_min_el
        loss = 20.0 * math.log10(max(d, 1.0)) + self._fspl_const + self.budget.link_attenuation_db
        rx = self.budget.eirp_and_gain(downlink) - loss - self._shadow_db(node, t_us)
        return LinkState(d, rx, rx - self.noise_dbm, self.delay_us(d), outage)

    @staticmethod
    def delay_us(distance_m: float) -> int:
        return int(round(distance_m / SPEED_OF_LIGHT * 1e6))

    def node_distance(self, a: int, b: int) -> float:
        pa, pb = self.nodes[a].ecef, self.nodes[b].ecef
        return math.dist(pa, pb)

    def audible_neighbors(self, node: NodeState, t0: int, t1: int, hearing_range_m: float) -> Iterator[float]:
        """Distances of other nodes' transmissions audible at ``node`` during ``[t0, t1)``."""
        horizon = t0 - self.delay_us(hearing_range_m)
        if self._active_tx and self._active_tx[0][2] < horizon:
            self._active_tx = [a for a in self._active_tx if a[2] >= horizon]
        for other, start, end in self._active_tx:
            if other == node.id:
                continue
            d = self.node_distance(node.id, other)
            if d > hearing_range_m:
                continue
            pd = self.delay_us(d)
            if start + pd < t1 and t0 < end + pd:
                yield d

    def node_accrue(self, node: NodeState, activity: str, seconds: float) -> None:
        energy_accrue(node.ledger, self.energy, activity, seconds)

    def gateway_accrue(self, activity: str, seconds: float, count: int = 1) -> None:
        energy_accrue(self.gateway_ledger, self.energy, activity, seconds, count)

    def transmit(self, node: NodeState) -> None:
        now = self.now
        rec: PacketRecord = node.queue.popleft()
        rec.tx_start_us = now
        rec.airtime_us = self.airtime_us
        node.transmitting = True
        node.waiting = False
        node.backoff = node.backoff.reset()
        self.counters.transmitted += 1
        self.node_counters[node.id].transmitted += 1
        self.node_accrue(node, "tx", self.airtime_s)
        self.trace_event(now, "TX_START", node.id, rec.created_us)
        end = now + self.airtime_us
        self._active_tx.append((node.id, now, end))
        self.schedule(end, Kind.TX_END, node.id)
        link = self.link(node.id, now)
        rec.distance_m = link.distance_m
        rec.snr_db = link.snr_db
        if link.outage:
            self._finalize(rec, Fate.LOST_LINK)
        else:
            rec.gw_arrival_us = now + link.prop_delay_us
            self._cluster_power[id(rec)] = link.rx_power_dbm
            self.schedule(rec.gw_arrival_us, Kind.RX_START, node.id, rec)
        self.mac.on_transmit(node)

    # --- gateway receiver --------------------------------------------------------

    def _finalize(self, rec: PacketRecord, fate: Fate) -> None:
        rec.fate = fate
        self.counters.add(fate)
        self.node_counters[rec.node].add(fate)

    def _rx_start(self, rec: PacketRecord) -> None:
        self._cluster.append(rec)
        self._in_air += 1
        self.schedule(rec.gw_arrival_us + rec.airtime_us, Kind.RX_COMPLETE, rec.node, rec)
        if rec.snr_db >= self.demod_threshold:
            rec.detected = True
            delay = preamble_detect_delay(self.capture, self.gw_rng)
            self.schedule(rec.gw_arrival_us + delay * self.symbol_us, Kind.RX_DETECT, rec.node, rec)

    def _rx_detect(self, rec: PacketRecord) -> None:
        busy_until = self.mac.transmitting_until(self.now)
        if busy_until is not None:
            # half-duplex: the trigger cannot rise while the gateway transmits
            self.schedule(busy_until, Kind.RX_DETECT, rec.node, rec)
            return
        rec_end = rec.gw_arrival_us + rec.airtime_us
        if self.now >= rec_end:
            return
        rec_id = id(rec)
        self._detecting.add(rec_id)
        self.flag_count += 1
        if self.flag_count == 1:
            self.trace_event(self.now, "FLAG", -1, 1)
            self.mac.flag_changed(True)

    def _rx_complete(self, rec: PacketRecord) -> None:
        if id(rec) in self._detecting:
            self._detecting.discard(id(rec))
            self.flag_count -= 1
            if self.flag_count == 0:
                self.trace_event(self.now, "FLAG", -1, 0)
                self.mac.flag_changed(False)
        self._in_air -= 1
        if self._in_air == 0:
            self._resolve_cluster()

    def _resolve_cluster(self) -> None:
        cluster, self._cluster = self._cluster, []
        receptions = [
            Reception(r.gw_arrival_us, self._cluster_power.pop(id(r)), r.airtime_us, r.snr_db) for r in cluster
        ]
        result = capture_resolve(receptions, self.symbol_us, self.capture, self.demod_threshold)
        for rec, fate in zip(cluster, result.fates):
            self._finalize(rec, fate)
            self.trace_event(self.now, "RX_OUTCOME", rec.node, fate.value)

    # --- main loop -----------------------------------------------------------------

    def _seed_traffic(self) -> None:
        self._arrivals: list[list[int]] = []
        self._next_arrival = [0] * len(self.nodes)
        for node in self.nodes:
            times = poisson_arrivals(self.traffic, self.airtime_s, rng_stream(self.seed, StreamKind.TRAFFIC, node.id))
            us = [int(round(t * 1e6)) for t in times]
            self._arrivals.append(us)
            if us:
                self.schedule(us[0], Kind.PACKET_ARRIVAL, node.id)

    def _packet_arrival(self, node: NodeState) -> None:
        idx = self._next_arrival[node.id]
        self._next_arrival[node.id] = idx + 1
        rec = PacketRecord(node=node.id, created_us=self.now)
        self.records.append(rec)
        node.queue.append(rec)
        nxt = self._arrivals[node.id]
        if idx + 1 < len(nxt):
            self.schedule(nxt[idx + 1], Kind.PACKET_ARRIVAL, node.id)
        if len(node.queue) == 1 and not node.transmitting and not node.waiting and node.decision is None:
            self.mac.packet_ready(node)

    def run(self) -> RunResult:
        self._seed_traffic()
        self.mac.start()
        events = 0
        trace = self.trace
        q = self.queue
        while True:
            ev = q.pop()
            if ev is None:
                break
            events += 1
            kind = ev.kind
            if trace is not None:
                trace.write(ev.t_us, kind.value, ev.entity, _detail(ev.payload))
            if kind is Kind.PACKET_ARRIVAL:
                self._packet_arrival(self.nodes[ev.entity])
            elif kind is Kind.RX_START:
                self._rx_start(ev.payload)
            elif kind is Kind.RX_DETECT:
                self._rx_detect(ev.payload)
            elif kind is Kind.RX_COMPLETE:
                self._rx_complete(ev.payload)
            elif kind is Kind.TX_END:
                node = self.nodes[ev.entity]
                node.transmitting = False
                self.mac.tx_done(node)
            elif kind is Kind.TX_START:
                self.transmit(self.nodes[ev.entity])
            else:
                self.mac.handle(kind, ev.entity, ev.payload)
        self.mac.finish()
        return self._result(events)

    def _result(self, events: int) -> RunResult:
        total_s = self.scenario.total_time_s
        for node in self.nodes:
            busy = sum(node.ledger.seconds.get(a, 0.0) for a in ("tx", "cad", "listen"))
            self.node_accrue(node, "sleep", max(0.0, total_s - busy))
        probes = getattr(self.mac, "probe_count", 0)
        if probes:
            self.gateway_accrue("probe", 0.0, probes)
        report = compute_metrics(
            scenario_id=self.scenario.name,
            protocol=self.scenario.label,
            seed=self.seed,
            node_count=len(self.nodes),
            records=self.records,
            node_ledgers=[n.ledger for n in self.nodes],
            gateway_ledger=self.gateway_ledger,
            airtime_s=self.airtime_s,
            payload_bytes=self.params.payload_bytes,
            total_time_s=total_s,
            tx_power_w=self.energy.node_tx_w,
            chirp_count=getattr(self.mac, "chirp_count", 0),
            t_nsense_symbols=float(self.schedule_obj.nsense_symbols),
        )
        return RunResult(
            report=report,
            records=self.records,
            counters=self.counters,
            node_counters=self.node_counters,
            trace_hash=self.trace.digest if self.trace is not None else None,
            events=events,
        )


def _detail(payload: Any) -> Any:
    if isinstance(payload, PacketRecord):
        return payload.created_us
    return payload


def run(scenario: Scenario, trace: bool | IO[str] = False) -> RunResult:
    """Run one scenario; ``trace`` enables the event-trace hash (and writes lines to a file object)."""
    sink = None if isinstance(trace, bool) else trace
    tracer = Trace(sink) if trace is not False else None
    return Simulation(scenario, tracer).run()


def gateway_rx_resolve(receptions: list[Reception], symbol_us: int, capture=None, min_snr_db: float = -math.inf):
    """Resolve transmissions overlapping at the gateway antenna (arrival already includes delay).

    Fates come back in input order.
    """
    return capture_resolve(receptions, symbol_us, capture or CaptureModel(), min_snr_db)
