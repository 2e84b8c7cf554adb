import pytest

from fsmasim.scenario import parse_scenario


def build_scenario(positions, gateway=(0.0, 0.0, 10.0), protocol="fsma", duty=0.0, total=60.0, **over):
    """Explicit-position scenario with a static gateway; ``over`` holds dotted overrides."""
    data = {
        "name": "unit",
        "protocol": protocol,
        "seed": 11,
        "total_time_s": total,
        "nodes": {
            "count": len(positions),
            "positions": [{"lat_deg": a, "lon_deg": b, "alt_m": 0.0} for a, b in positions],
        },
        "gateway": {"mobility": {"kind": "static", "lat_deg": gateway[0], "lon_deg": gateway[1], "alt_m": gateway[2]}},
        "traffic": {"duty_cycle": duty},
        "link": {"min_elevation_deg": -90},
    }
    scenario = parse_scenario(data)
    return scenario.with_updates(**over) if over else scenario


@pytest.fixture
def scenario_factory():
    return build_scenario
