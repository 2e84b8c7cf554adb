"""Medium access control: FSMA (FreeChirp), ALOHA, CSMA and BSMA.

The pure helpers (:func:`backoff_next`, :func:`fsma_gateway_step`,
:func:`fsma_node_sense`, :func:`aloha_node_step`, :func:`csma_node_step`,
:func:`bsma_step`) hold the protocol rules.  The ``*Mac`` classes bind them to
a running :class:`~fsmasim.engine.Simulation`, which owns the clock, the
nodes and the gateway receiver.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, NamedTuple

import numpy as np

from .channel import cad_detect
from .errors import ConfigurationError

if TYPE_CHECKING:
    from .engine import NodeState, Simulation


# --- backoff ---------------------------------------------------------------


@dataclass(frozen=True)
class BackoffState:
    """Exponential backoff; windows are integer microseconds.

    ``current_window`` is the window the *next* miss draws from, so after
    ``k`` misses it equals ``initial_window * 2**k`` (until a reset).
    """

    initial_window: int
    current_window: int
    miss_count: int = 0
    cumulative_window: int = 0
    reset_factor: float = 100.0

    @classmethod
    def fresh(cls, initial_window: int, reset_factor: float = 100.0) -> "BackoffState":
        if initial_window <= 0:
            raise ConfigurationError("initial window must be positive", "initial_window")
        return cls(initial_window, initial_window, 0, 0, reset_factor)

    def reset(self) -> "BackoffState":
        return replace(self, current_window=self.initial_window, miss_count=0, cumulative_window=0)


def backoff_next(state: BackoffState, rng: np.random.Generator) -> tuple[int, BackoffState]:
    delay = int(rng.integers(0, state.current_window + 1))
    cumulative = state.cumulative_window + state.current_window
    updated = replace(
        state,
        current_window=state.current_window * 2,
        miss_count=state.miss_count + 1,
        cumulative_window=cumulative,
    )
    if cumulative > state.reset_factor * state.initial_window:
        updated = updated.reset()
    return delay, updated


# --- FSMA gateway ------------------------------------------------------------


class GatewayPhase(str, enum.Enum):
    CHIRP_TX = "chirp_tx"
    WAITING = "waiting"
    BUSY_BACKOFF = "busy_backoff"
    STOPPED = "stopped"


class GatewayState(NamedTuple):
    phase: GatewayPhase
    until: int  # µs when the current phase expires


class FsmaTiming(NamedTuple):
    t_chirp: int
    t_wait: int
    t_busy_backoff: int
    stop_at: int  # no chirp starts at or after this time


def fsma_gateway_step(
    state: GatewayState, now: int, detected: bool, timing: FsmaTiming
) -> tuple[GatewayState, bool]:
    """Advance the gateway loop; returns the new state and whether a chirp starts now.

    Called when the current phase expires, or with ``detected=True`` when the
    trigger pin rises mid-wait.
    """
    if state.phase is GatewayPhase.STOPPED:
        return state, False
    if now < state.until:
        # an interrupt before expiry; only a detection during the wait matters
        if detected and state.phase is GatewayPhase.WAITING:
            return GatewayState(GatewayPhase.BUSY_BACKOFF, now + timing.t_busy_backoff), False
        return state, False
    if detected:
        return GatewayState(GatewayPhase.BUSY_BACKOFF, now + timing.t_busy_backoff), False
    if state.phase is GatewayPhase.CHIRP_TX:
        return GatewayState(GatewayPhase.WAITING, now + timing.t_wait), False
    if now >= timing.stop_at:
        return GatewayState(GatewayPhase.STOPPED, now), False
    return GatewayState(GatewayPhase.CHIRP_TX, now + timing.t_chirp), True


# --- FSMA node ----------------------------------------------------------------


class SenseDecision(str, enum.Enum):
    TRANSMIT = "transmit"
    NEIGHBOR = "neighbor"
    TIMEOUT = "timeout"


def fsma_node_sense(cad_results: Iterable[bool], max_slots: int) -> tuple[SenseDecision, int]:
    """Apply the positive-then-negative rule to back-to-back CAD results.

    Returns the decision and the number of slots consumed.  A positive slot
    is always followed by its verification slot, even when it was the last
    slot before the deadline.
    """
    it = iter(cad_results)
    used = 0
    for result in it:
        used += 1
        if result:
            verify = next(it, False)
            return (SenseDecision.NEIGHBOR if verify else SenseDecision.TRANSMIT), used + 1
        if used >= max_slots:
            break
    return SenseDecision.TIMEOUT, used


# --- baselines -----------------------------------------------------------------


class Action(str, enum.Enum):
    TRANSMIT = "transmit"
    BACKOFF = "backoff"
    NONE = "none"


def aloha_node_step(queue_length: int) -> Action:
    return Action.TRANSMIT if queue_length > 0 else Action.NONE


def csma_node_step(queue_length: int, audible_distances_m: Iterable[float], hearing_range_m: float) -> Action:
    """Busy when any transmission already audible at the node lies within hearing range."""
    if queue_length == 0:
        return Action.NONE
    if any(d <= hearing_range_m for d in audible_distances_m):
        return Action.BACKOFF
    return Action.TRANSMIT


def bsma_step(queue_length: int, tone_heard: bool) -> Action:
    if queue_length == 0:
        return Action.NONE
    return Action.BACKOFF if tone_heard else Action.TRANSMIT


# --- protocol agents -------------------------------------------------------------


class MacAgent:
    name = "mac"

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    def start(self) -> None:
        pass

    def packet_ready(self, node: "NodeState") -> None:
        raise NotImplementedError

    def on_transmit(self, node: "NodeState") -> None:
        pass

    def tx_done(self, node: "NodeState") -> None:
        if node.queue:
            self.packet_ready(node)

    def flag_changed(self, on: bool) -> None:
        pass

    def transmitting_until(self, now: int) -> int | None:
        """End of the gateway's own transmission covering ``now``, if any."""
        return None

    def handle(self, kind, entity: int, payload) -> None:
        raise ValueError(f"unexpected event {kind!r} for {self.name}")

    def finish(self) -> None:
        pass

    def _backoff(self, node: "NodeState") -> None:
        sim = self.sim
        delay, node.backoff = backoff_next(node.backoff, node.rng)
        node.waiting = True
        sim.schedule(sim.now + delay, sim.Kind.BACKOFF_EXPIRY, node.id)


class AlohaMac(MacAgent):
    name = "aloha"

    def packet_ready(self, node):
        if self.sim.now < self.sim.total_us and aloha_node_step(len(node.queue)) is Action.TRANSMIT:
            self.sim.transmit(node)

    def handle(self, kind, entity, payload):
        node = self.sim.nodes[entity]
        node.waiting = False
        self.packet_ready(node)


class CsmaMac(AlohaMac):
    name = "csma"

    def __init__(self, sim, hearing_range_m: float):
        super().__init__(sim)
        if not hearing_range_m > 0:
            raise ConfigurationError("must be positive", "csma.hearing_range_m")
        self.hearing_range_m = hearing_range_m

    def packet_ready(self, node):
        sim = self.sim
        if sim.now >= sim.total_us or not node.queue:
            return
        sim.node_accrue(node, "cad", sim.node_symbol_s)
        audible = [d for d in sim.audible_neighbors(node, sim.now, sim.now + 1, self.hearing_range_m)]
        if csma_node_step(len(node.queue), audible, self.hearing_range_m) is Action.BACKOFF:
            self._backoff(node)
        else:
            sim.transmit(node)


class BsmaMac(AlohaMac):
    name = "bsma"

    def __init__(self, sim, tone_sf: int):
        super().__init__(sim)
        self.tone_sf = tone_sf
        self.tone_symbol_s = 2**tone_sf / sim.params.bw
        self.tone_starts: list[int] = []
        self.tone_ends: list[int] = []

    def tone_on_at(self, t: int) -> bool:
        i = bisect.bisect_right(self.tone_starts, t) - 1
        if i < 0:
            return False
        return i >= len(self.tone_ends) or t < self.tone_ends[i]

    def flag_changed(self, on):
        now = self.sim.now
        if on:
            self.tone_starts.append(now)
        else:
            self.tone_ends.append(now)
            self.sim.gateway_accrue("tone", (now - self.tone_starts[-1]) / 1e6)

    def packet_ready(self, node):
        sim = self.sim
        if sim.now >= sim.total_us or not node.queue:
            return
        sim.node_accrue(node, "cad", self.tone_symbol_s)
        link = sim.link(node.id, sim.now, downlink=True)
        heard = False
        if not link.outage and self.tone_on_at(sim.now - link.prop_delay_us):
            heard = cad_detect(link.snr_db, self.tone_sf, node.rng, sim.budget.cad_margin_db)
        if bsma_step(len(node.queue), heard) is Action.BACKOFF:
            self._backoff(node)
        else:
            sim.transmit(node)

    def finish(self):
        if len(self.tone_ends) < len(self.tone_starts):
            self.flag_changed(False)


class FsmaMac(MacAgent):
    """FreeChirp gateway loop plus node-side chirp sensing."""

    name = "fsma"

    def __init__(self, sim, cad_overhead_symbols: float = 0.0, turnaround_s: float = 0.0,
                 hearing_range_m: float = 10_000.0):
        super().__init__(sim)
        sched = sim.schedule_us
        self.timing = FsmaTiming(sched["t_chirp"], sched["t_wait"], sched["t_busy_backoff"], sim.total_us)
        self.t_chirp = sched["t_chirp"]
        self.slot = int(round(self.t_chirp * (1.0 + cad_overhead_symbols)))
        self.n_slots = -(-sched["t_nsense"] // self.slot)
        self.cad_fraction = self.t_chirp / self.slot
        self.turnaround = int(round(turnaround_s * 1e6))
        self.hearing_range_m = hearing_range_m
        self.state = GatewayState(GatewayPhase.WAITING, 0)
        self.gw_token = 0
        self.sensing: dict[int, "NodeState"] = {}
        self.recent_chirps: list[int] = []
        self.chirp_count = 0
        self.probe_count = 0

    # gateway side

    def start(self):
        self._gateway_step(False)

    def _gateway_step(self, detected: bool):
        sim = self.sim
        self.probe_count += 1
        new, chirp = fsma_gateway_step(self.state, sim.now, detected, self.timing)
        if new == self.state:
            return
        self.state = new
        if new.phase is not GatewayPhase.STOPPED:
            self.gw_token += 1
            sim.schedule(new.until, sim.Kind.GATEWAY_PROBE, -1, self.gw_token)
        if chirp:
            self._emit_chirp()

    def _emit_chirp(self):
        sim = self.sim
        now = sim.now
        self.chirp_count += 1
        sim.gateway_accrue("chirp", self.t_chirp / 1e6)
        sim.trace_event(now, "FREE_CHIRP_TX", -1, self.chirp_count)
        self.recent_chirps = self.recent_chirps[-1:] + [now]
        for node in list(self.sensing.values()):
            self._offer_chirp(node, now)

    def transmitting_until(self, now):
        if self.state.phase is GatewayPhase.CHIRP_TX and now < self.state.until:
            return self.state.until
        return None

    def flag_changed(self, on):
        if on and self.state.phase is GatewayPhase.WAITING:
            self._gateway_step(True)

    # node side

    def packet_ready(self, node):
        sim = self.sim
        if sim.now >= sim.total_us or not node.queue:
            return
        node.waiting = False
        node.sense_start = sim.now
        node.verify_pending = False
        node.decision = None
        self.sensing[node.id] = node
        self._decide(node, sim.now + self.n_slots * self.slot, SenseDecision.TIMEOUT)
        if any(True for _ in sim.audible_neighbors(node, sim.now, sim.now + 1, self.hearing_range_m)):
            self._decide(node, sim.now + 2 * self.slot, SenseDecision.NEIGHBOR)
        for e in self.recent_chirps:
            self._offer_chirp(node, e)

    def _decide(self, node, at: int, decision: SenseDecision):
        sim = self.sim
        node.token += 1
        node.decision = (at, decision)
        sim.schedule(at, sim.Kind.SENSE_DECISION, node.id, node.token)

    def _offer_chirp(self, node, emitted: int):
        if node.verify_pending or node.decision is None:
            return
        sim = self.sim
        link = sim.link(node.id, emitted, downlink=True)
        if link.outage:
            return
        w = node.sense_start
        centre = emitted + link.prop_delay_us + self.t_chirp // 2
        if not w <= centre < w + self.n_slots * self.slot:
            return
        if not cad_detect(link.snr_db, sim.chirp_sf, node.rng, sim.budget.cad_margin_db):
            return
        k = (centre - w) // self.slot
        verify_end = w + (k + 2) * self.slot
        at, current = node.decision
        if current is SenseDecision.TIMEOUT or verify_end < at:
            node.verify_pending = True
            self.sensing.pop(node.id, None)
            self._decide(node, verify_end, SenseDecision.TRANSMIT)

    def on_transmit(self, node):
        # sensing nodes within hearing range see a continuous positive
        sim = self.sim
        for other in list(self.sensing.values()):
            if other.id == node.id:
                continue
            d = sim.node_distance(node.id, other.id)
            if d > self.hearing_range_m:
                continue
            heard = sim.now + sim.delay_us(d)
            w = other.sense_start
            if heard >= w + self.n_slots * self.slot:
                continue
            m = max(0, (heard - w) // self.slot)
            at = w + (m + 2) * self.slot
            if at < other.decision[0]:
                self._decide(other, at, SenseDecision.NEIGHBOR)

    def handle(self, kind, entity, payload):
        sim = self.sim
        if kind is sim.Kind.GATEWAY_PROBE:
            if payload == self.gw_token:
                self._gateway_step(sim.flag_on)
            return
        node = sim.nodes[entity]
        if kind is sim.Kind.BACKOFF_EXPIRY:
            node.waiting = False
            self.packet_ready(node)
            return
        if payload != node.token or node.decision is None:
            return
        at, decision = node.decision
        node.decision = None
        self.sensing.pop(node.id, None)
        sensed_s = (sim.now - node.sense_start) / 1e6
        sim.node_accrue(node, "cad", sensed_s * self.cad_fraction)
        if self.cad_fraction < 1.0:
            sim.node_accrue(node, "listen", sensed_s * (1.0 - self.cad_fraction))
        if decision is SenseDecision.TRANSMIT:
            verify_start = sim.now - self.slot
            if any(True for _ in sim.audible_neighbors(node, verify_start, sim.now, self.hearing_range_m)):
                decision = SenseDecision.NEIGHBOR
        sim.trace_event(sim.now, "SENSE_DONE", node.id, decision.value)
        if decision is SenseDecision.TRANSMIT:
            if self.turnaround:
                node.waiting = True
                sim.schedule(sim.now + self.turnaround, sim.Kind.TX_START, node.id)
            else:
                sim.transmit(node)
        else:
            self._backoff(node)


def make_mac(sim: "Simulation", protocol: str, scenario) -> MacAgent:
    if protocol == "aloha":
        return AlohaMac(sim)
    if protocol == "csma":
        return CsmaMac(sim, scenario.csma.hearing_range_m)
    if protocol == "bsma":
        return BsmaMac(sim, scenario.bsma.tone_sf)
    if protocol == "fsma":
        return FsmaMac(
            sim,
            cad_overhead_symbols=scenario.fsma.cad_overhead_symbols,
            turnaround_s=scenario.fsma.turnaround_s,
            hearing_range_m=scenario.nodes.hearing_range_m,
        )
    raise ConfigurationError(f"unknown protocol {protocol!r}", "protocol")
