import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsmasim.engine import Simulation
from fsmasim.errors import ConfigurationError
from fsmasim.mac import (
    Action,
    BackoffState,
    FsmaTiming,
    GatewayPhase,
    GatewayState,
    SenseDecision,
    aloha_node_step,
    backoff_next,
    bsma_step,
    csma_node_step,
    fsma_gateway_step,
    fsma_node_sense,
)
from fsmasim.metrics import PacketRecord

from conftest import build_scenario

AIRTIME_US = 493_568
TIMING = FsmaTiming(t_chirp=4_096, t_wait=49_152, t_busy_backoff=196_608, stop_at=600_000_000)


# --- backoff ---------------------------------------------------------------------


def test_first_miss_draws_within_airtime():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        delay, state = backoff_next(BackoffState.fresh(AIRTIME_US), rng)
        assert 0 <= delay <= AIRTIME_US
        assert state.current_window == 2 * AIRTIME_US


def test_third_miss_uses_four_times_initial():
    state = BackoffState.fresh(AIRTIME_US)
    rng = np.random.default_rng(1)
    for _ in range(2):
        _, state = backoff_next(state, rng)
    assert state.current_window == 4 * AIRTIME_US
    delays = [backoff_next(state, np.random.default_rng(i))[0] for i in range(3000)]
    assert max(delays) <= 4 * AIRTIME_US
    assert max(delays) > 3 * AIRTIME_US


def test_reset_after_hundred_windows():
    state = BackoffState.fresh(1000)
    rng = np.random.default_rng(2)
    windows = []
    for _ in range(8):
        windows.append(state.current_window)
        _, state = backoff_next(state, rng)
    # 1+2+...+64 = 127 initial windows > 100, so the seventh miss resets
    assert windows == [1000, 2000, 4000, 8000, 16000, 32000, 64000, 1000]


@given(st.integers(1, 10**6), st.integers(0, 6), st.integers(0, 2**32))
def test_backoff_window_law(initial, k, seed):
    state = BackoffState.fresh(initial)
    rng = np.random.default_rng(seed)
    for _ in range(k):
        delay, nxt = backoff_next(state, rng)
        assert 0 <= delay <= state.current_window
        state = nxt
    assert state.current_window == initial * 2**k
    assert state.miss_count == k


def test_backoff_rejects_empty_window():
    with pytest.raises(ConfigurationError):
        BackoffState.fresh(0)


# --- FSMA gateway -----------------------------------------------------------------


def test_idle_gateway_chirps_every_interval():
    state = GatewayState(GatewayPhase.WAITING, 0)
    chirps = []
    now = 0
    for _ in range(12):
        state, chirp = fsma_gateway_step(state, now, False, TIMING)
        if chirp:
            chirps.append(now)
        now = state.until
    assert np.all(np.diff(chirps) == 53_248)


def test_detection_mid_wait_enters_busy_backoff():
    state = GatewayState(GatewayPhase.WAITING, 53_248)
    state, chirp = fsma_gateway_step(state, 20_000, True, TIMING)
    assert not chirp
    assert state == GatewayState(GatewayPhase.BUSY_BACKOFF, 20_000 + 196_608)
    # still busy at re-probe: another busy backoff
    again, chirp = fsma_gateway_step(state, state.until, True, TIMING)
    assert not chirp and again.phase is GatewayPhase.BUSY_BACKOFF and again.until == state.until + 196_608
    # clear at re-probe: chirp right away
    free, chirp = fsma_gateway_step(state, state.until, False, TIMING)
    assert chirp and free.phase is GatewayPhase.CHIRP_TX


def test_interrupt_during_chirp_is_ignored():
    state = GatewayState(GatewayPhase.CHIRP_TX, 4_096)
    assert fsma_gateway_step(state, 1_000, True, TIMING) == (state, False)


def test_gateway_stops_at_end_time():
    timing = TIMING._replace(stop_at=100_000)
    state, chirp = fsma_gateway_step(GatewayState(GatewayPhase.WAITING, 106_496), 106_496, False, timing)
    assert state.phase is GatewayPhase.STOPPED and not chirp
    assert fsma_gateway_step(state, 200_000, False, timing) == (state, False)


# --- FSMA node ----------------------------------------------------------------------


def test_sense_positive_then_negative_transmits():
    assert fsma_node_sense([False, False, True, False], 13) == (SenseDecision.TRANSMIT, 4)


def test_sense_positive_positive_is_neighbour():
    assert fsma_node_sense([True, True], 13) == (SenseDecision.NEIGHBOR, 2)


def test_sense_timeout_after_thirteen_negatives():
    assert fsma_node_sense([False] * 13 + [True, False], 13) == (SenseDecision.TIMEOUT, 13)


def test_fsma_window_has_thirteen_slots(scenario_factory):
    sim = Simulation(scenario_factory([(0.0, 0.001)]))
    assert sim.mac.n_slots == 13
    assert sim.mac.n_slots == -(-53_248 // 4_096)


# --- baselines --------------------------------------------------------------------


def test_aloha_step():
    assert aloha_node_step(1) is Action.TRANSMIT
    assert aloha_node_step(0) is Action.NONE


def test_csma_step():
    assert csma_node_step(1, [5_000.0], 10_000.0) is Action.BACKOFF
    assert csma_node_step(1, [50_000.0], 10_000.0) is Action.TRANSMIT
    assert csma_node_step(0, [5_000.0], 10_000.0) is Action.NONE


def test_bsma_step():
    assert bsma_step(1, True) is Action.BACKOFF
    assert bsma_step(1, False) is Action.TRANSMIT
    assert bsma_step(0, False) is Action.NONE


def _queue_packet(sim, node_id):
    rec = PacketRecord(node=node_id, created_us=sim.now)
    sim.records.append(rec)
    sim.nodes[node_id].queue.append(rec)
    return rec


def test_csma_far_transmitter_heard_only_after_delay():
    # nodes ~1500 km apart on the equator, hearing range 2000 km
    scn = build_scenario([(0.0, 0.0), (0.0, 13.5)], protocol="csma", **{"csma.hearing_range_m": 2_000_000.0})
    sim = Simulation(scn)
    d = sim.node_distance(0, 1)
    assert 1_490_000 < d < 1_510_000
    _queue_packet(sim, 0)
    sim.transmit(sim.nodes[0])
    b = sim.nodes[1]
    assert list(sim.audible_neighbors(b, 3_000, 3_001, 2_000_000.0)) == []
    assert list(sim.audible_neighbors(b, 6_000, 6_001, 2_000_000.0)) == [pytest.approx(d)]
    assert list(sim.audible_neighbors(b, 6_000, 6_001, 10_000.0)) == []


def test_csma_neighbour_in_range_causes_backoff():
    scn = build_scenario([(0.0, 0.0), (0.0, 0.045)], protocol="csma")  # ~5 km apart
    sim = Simulation(scn)
    _queue_packet(sim, 0)
    sim.transmit(sim.nodes[0])
    sim.queue.now = 1_000
    rec = _queue_packet(sim, 1)
    sim.mac.packet_ready(sim.nodes[1])
    assert rec.tx_start_us is None and sim.nodes[1].waiting


def test_csma_requires_positive_range():
    with pytest.raises(ConfigurationError):
        build_scenario([(0.0, 0.0)], protocol="csma", **{"csma.hearing_range_m": 0.0})


def test_bsma_tone_subject_to_propagation():
    # gateway on the equator, node ~1500 km away: one-way delay ~5 ms
    scn = build_scenario([(0.0, 13.5)], protocol="bsma")
    sim = Simulation(scn)
    mac = sim.mac
    pd = sim.link(0, 0, downlink=True).prop_delay_us
    assert 4_900 < pd < 5_100
    mac.tone_starts.append(10_000)
    sim.queue.now = 11_000  # 1 ms after tone start at the gateway
    early = _queue_packet(sim, 0)
    mac.packet_ready(sim.nodes[0])
    assert early.tx_start_us == 11_000

    sim2 = Simulation(scn)
    sim2.mac.tone_starts.append(10_000)
    sim2.queue.now = 10_000 + pd + 1_000
    late = _queue_packet(sim2, 0)
    sim2.mac.packet_ready(sim2.nodes[0])
    assert late.tx_start_us is None and sim2.nodes[0].waiting


def test_bsma_idle_gateway_leaves_nodes_free():
    sim = Simulation(build_scenario([(0.0, 1.0)], protocol="bsma"))
    rec = _queue_packet(sim, 0)
    sim.mac.packet_ready(sim.nodes[0])
    assert rec.tx_start_us == 0
