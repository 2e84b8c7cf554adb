import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsmasim.errors import ConfigurationError, PropagationError, TleParseError
from fsmasim.geo import (
    EARTH_RADIUS_M,
    EARTH_ROTATION_RAD_S,
    DroneLoop,
    EphemerisTrace,
    GeoPos,
    OrbitalElements,
    Region,
    Static,
    TleOrbit,
    deploy_nodes,
    drone_position,
    eci_positions,
    format_tle,
    parse_tle,
    propagate,
    read_ephemeris_csv,
    read_tle,
    slant_range,
    square_loop,
    tle_checksum,
    write_ephemeris_csv,
)

ISS_L1 = "1 25544U 98067A   08264.51782528 -.00002182  00000-0 -11606-4 0  2927"
ISS_L2 = "2 25544  51.6416 247.4627 0006703 130.5360 325.0288 15.72125391563537"

EPOCH = datetime(2024, 3, 1, tzinfo=timezone.utc)


def leo(**overrides):
    base = dict(
        inclination=53.0, raan=40.0, eccentricity=0.0, arg_perigee=0.0,
        mean_anomaly=10.0, mean_motion=15.05, epoch=EPOCH, satnum=90001,
    )
    base.update(overrides)
    return OrbitalElements(**base)


def test_parse_known_tle():
    el = parse_tle(ISS_L1, ISS_L2)
    assert el.satnum == 25544
    assert el.inclination == pytest.approx(51.6416)
    assert el.raan == pytest.approx(247.4627)
    assert el.eccentricity == pytest.approx(0.0006703)
    assert el.mean_motion == pytest.approx(15.72125391)
    assert el.epoch.year == 2008
    assert el.epoch.timetuple().tm_yday == 264


def test_parse_leo_mean_motion_and_implied_decimal():
    l1, l2 = format_tle(leo(eccentricity=0.0001234))
    assert l2[26:33] == "0001234"
    el = parse_tle(l1, l2)
    assert el.mean_motion == pytest.approx(15.05)
    assert el.eccentricity == pytest.approx(0.0001234, abs=1e-12)


def test_format_round_trip():
    original = leo(raan=123.4567, mean_anomaly=321.0001)
    again = parse_tle(*format_tle(original))
    for name in ("inclination", "raan", "arg_perigee", "mean_anomaly", "mean_motion"):
        assert getattr(again, name) == pytest.approx(getattr(original, name), abs=1e-4)
    assert abs((again.epoch - original.epoch).total_seconds()) < 1e-3


def test_checksum_corruption_reports_column():
    bad = ISS_L1[:68] + str((int(ISS_L1[68]) + 1) % 10)
    with pytest.raises(TleParseError) as info:
        parse_tle(bad, ISS_L2)
    assert (info.value.line, info.value.column) == (1, 69)


def test_bad_length_reports_line():
    with pytest.raises(TleParseError) as info:
        parse_tle(ISS_L1, ISS_L2[:-1])
    assert info.value.line == 2


def test_unparseable_field_reports_column():
    body = ISS_L2[:8] + "  5x.641" + ISS_L2[16:68]
    line = body + str(tle_checksum(body))
    with pytest.raises(TleParseError) as info:
        parse_tle(ISS_L1, line)
    assert (info.value.line, info.value.column) == (2, 9)


def test_read_tle_with_name_line(tmp_path):
    path = tmp_path / "sat.tle"
    path.write_text(f"ISS (ZARYA)\n{ISS_L1}\n{ISS_L2}\n")
    el = read_tle(path)
    assert el.name == "ISS (ZARYA)"
    assert read_tle(f"{ISS_L1}\n{ISS_L2}\n").name == ""


def test_orbital_elements_validation():
    with pytest.raises(ConfigurationError):
        leo(eccentricity=1.0)
    with pytest.raises(ConfigurationError):
        leo(mean_motion=0.0)


def test_leo_period_and_altitude():
    # 86400 / 15.05 and (mu / n^2)^(1/3) - R, evaluated independently
    el = leo()
    assert el.period_s == pytest.approx(5740.863787, abs=1e-5)
    n = 2 * math.pi / (86400 / 15.05)
    a = (3.986004418e14 / n**2) ** (1 / 3)
    assert el.semi_major_axis_m == pytest.approx(a)
    altitude = propagate(el, 0.0).alt
    assert altitude == pytest.approx(558_607, abs=50)


def test_propagate_identity_at_epoch():
    el = leo(inclination=0.0, raan=0.0, mean_anomaly=75.0)
    pos = eci_positions(el, 0.0)[0]
    assert math.degrees(math.atan2(pos[1], pos[0])) == pytest.approx(75.0)


def test_equatorial_half_period_longitude():
    el = leo(inclination=0.0, raan=0.0, mean_anomaly=0.0)
    half = el.period_s / 2
    start = propagate(el, 0.0)
    later = propagate(el, half)
    expected = 180.0 - math.degrees(EARTH_ROTATION_RAD_S * half)
    assert (later.lon - start.lon) % 360.0 == pytest.approx(expected, abs=1e-6)
    assert later.lat == pytest.approx(0.0, abs=1e-9)


def test_propagate_window():
    el = leo()
    propagate(el, 7 * 86400.0)
    with pytest.raises(PropagationError):
        propagate(el, 7 * 86400.0 + 1)
    with pytest.raises(PropagationError):
        propagate(el, -7 * 86400.0 - 1)


@given(
    inc=st.floats(0, 180),
    raan=st.floats(0, 360),
    m0=st.floats(0, 360),
    mm=st.floats(11.0, 16.0),
    t=st.floats(0, 86400 * 3),
)
@settings(max_examples=100)
def test_circular_orbit_periodicity_and_altitude(inc, raan, m0, mm, t):
    el = leo(inclination=inc, raan=raan, mean_anomaly=m0, mean_motion=mm)
    a, b = eci_positions(el, [t, t + el.period_s])
    assert np.linalg.norm(a - b) < 1.0
    radii = np.linalg.norm(eci_positions(el, np.linspace(t, t + el.period_s, 50)), axis=1)
    alt = radii - EARTH_RADIUS_M
    assert (alt.max() - alt.min()) / alt.mean() < 1e-3


def test_slant_range_cases():
    ground = GeoPos(10.0, 20.0, 0.0)
    assert slant_range(ground, ground).distance == 0.0
    overhead = slant_range(ground, GeoPos(10.0, 20.0, 500_000.0))
    assert overhead.distance == pytest.approx(500_000.0, abs=1e-6)
    assert overhead.elevation == pytest.approx(90.0)


def test_slant_range_15_degree_arc():
    # law of cosines: sqrt(R^2 + (R+h)^2 - 2 R (R+h) cos 15deg)
    r, rs = 6371.0, 6871.0
    oracle = math.sqrt(r * r + rs * rs - 2 * r * rs * math.cos(math.radians(15))) * 1000
    sat = GeoPos(0.0, 15.0, 500_000.0)
    result = slant_range(GeoPos(0.0, 0.0, 0.0), sat)
    assert result.distance == pytest.approx(oracle, rel=1e-9)
    assert result.distance / 1000 == pytest.approx(1798.1, abs=0.1)


@given(
    st.floats(-90, 90), st.floats(-180, 180), st.floats(0, 1e6),
    st.floats(-90, 90), st.floats(-180, 180), st.floats(0, 1e6),
)
def test_slant_range_symmetry(la, oa, ha, lb, ob, hb):
    a, b = GeoPos(la, oa, ha), GeoPos(lb, ob, hb)
    assert slant_range(a, b).distance == slant_range(b, a).distance


def test_geopos_validation():
    with pytest.raises(ConfigurationError):
        GeoPos(91.0, 0.0)
    with pytest.raises(ConfigurationError):
        GeoPos(0.0, 181.0)


WEST_NA = Region(31.0, 49.0, -124.0, -104.0)


def test_deploy_single_inside_region():
    pos = deploy_nodes(WEST_NA, 1, np.random.default_rng(3))
    assert len(pos) == 1 and WEST_NA.contains(pos[0]) and pos[0].alt == 0.0


def test_deploy_deterministic():
    a = deploy_nodes(WEST_NA, 5000, np.random.default_rng(11))
    b = deploy_nodes(WEST_NA, 5000, np.random.default_rng(11))
    assert a == b
    assert all(WEST_NA.contains(p) for p in a)


def test_deploy_slant_ranges_to_zenith_satellite():
    nodes = deploy_nodes(WEST_NA, 2000, np.random.default_rng(5))
    c = WEST_NA.center
    sat = GeoPos(c.lat, c.lon, 567_000.0)
    distances = [slant_range(n, sat).distance for n in nodes]
    assert 500e3 <= min(distances) and max(distances) <= 3500e3


@pytest.mark.parametrize("bounds", [(10, 10, 0, 5), (10, 5, 0, 5), (0, 5, 3, 3)])
def test_degenerate_region(bounds):
    with pytest.raises(ConfigurationError):
        Region(*bounds)


def test_deploy_rejects_zero():
    with pytest.raises(ConfigurationError):
        deploy_nodes(WEST_NA, 0, np.random.default_rng(0))


LOOP = square_loop(GeoPos(40.0, -105.0, 0.0), 600.0, 10.0)


def test_drone_loop_geometry():
    assert LOOP.length_m == pytest.approx(2400.0, abs=1e-6)
    assert LOOP.loop_time_s == pytest.approx(240.0, abs=1e-6)
    first = LOOP.waypoints[0]
    assert slant_range(drone_position(LOOP, 0.0), first).distance < 1e-6
    assert slant_range(drone_position(LOOP, 240.0), first).distance < 1e-6
    opposite = drone_position(LOOP, 120.0)
    assert slant_range(opposite, LOOP.waypoints[2]).distance < 1e-6
    assert slant_range(opposite, first).distance == pytest.approx(600 * math.sqrt(2), abs=1e-3)
    assert drone_position(LOOP, 60.0).alt == pytest.approx(100.0, abs=0.05)


@given(st.floats(0, 1e5))
def test_drone_loop_closure(t):
    a = LOOP.ecef_track(t)[0]
    b = LOOP.ecef_track(math.fmod(t, LOOP.loop_time_s))[0]
    assert np.linalg.norm(a - b) < 1e-6


def test_drone_loop_validation():
    with pytest.raises(ConfigurationError):
        DroneLoop((GeoPos(0, 0, 100),), 10.0)
    with pytest.raises(ConfigurationError):
        DroneLoop((GeoPos(0, 0, 100), GeoPos(0, 0, 100)), 10.0)
    with pytest.raises(ConfigurationError):
        DroneLoop((GeoPos(0, 0, 100), GeoPos(0, 1, 100)), 0.0)


def test_mobility_tracks_match_positions():
    models = [Static(GeoPos(1.0, 2.0, 3.0)), LOOP, TleOrbit(leo(), start_offset_s=100.0)]
    ts = np.array([0.0, 17.5, 200.0])
    for model in models:
        track = model.ecef_track(ts)
        for t, xyz in zip(ts, track):
            assert np.linalg.norm(model.position(float(t)).ecef() - xyz) < 1e-3


def test_ephemeris_trace_round_trip(tmp_path):
    orbit = TleOrbit(leo())
    path = tmp_path / "trace.csv"
    write_ephemeris_csv(path, orbit, np.arange(0.0, 601.0, 1.0))
    trace = read_ephemeris_csv(path)
    # one-second sampling keeps linear-interpolation error on a LEO arc small
    for t in (0.0, 123.4, 600.0):
        assert slant_range(trace.position(t), orbit.position(t)).distance < 50.0
    with pytest.raises(PropagationError):
        trace.position(601.0)


def test_ephemeris_rejects_non_monotone():
    with pytest.raises(ConfigurationError):
        EphemerisTrace((0.0, 0.0), (GeoPos(0, 0), GeoPos(0, 1)))


def test_ephemeris_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,lat,lon,alt\n0,0,0,0\n1,0,1,0\n")
    with pytest.raises(ConfigurationError):
        read_ephemeris_csv(path)


def test_deploy_prefix_stable():
    small = deploy_nodes(WEST_NA, 10, np.random.default_rng(21))
    large = deploy_nodes(WEST_NA, 50, np.random.default_rng(21))
    assert large[:10] == small
