from fractions import Fraction

import pytest

from evpay.errors import DanglingReference, InvalidValue, ParseError
from evpay.scenario import load_scenario, session_id_for

from corpus import CANONICAL


def test_minimal_scenario():
    s = load_scenario(CANONICAL)
    assert s.seed == 42 and s.ticks == 200 and s.tick_duration_h == Fraction(1, 10)
    assert [st.station_id for st in s.stations] == ["cs1"]
    assert s.vehicles[0].battery.capacity_wh == 100000
    assert s.stations[0].tariff.steps == ((0, 5),)
    assert session_id_for("ev1") == "ev1-1"


def test_seed_override_and_with_seed():
    assert load_scenario(CANONICAL, seed=7).seed == 7
    assert load_scenario(CANONICAL).with_seed(9).seed == 9


def test_allocations_list_vehicles_then_stations():
    s = load_scenario(CANONICAL)
    assert s.allocations() == [(s.wallet("ev1").address, 1000000), (s.wallet("cs1").address, 1000000)]


def test_stepped_tariff_and_decimal_tick():
    text = CANONICAL.replace('"1/10"', "0.25").replace("tariff = 5", "tariff = [[0, 5], [10, 7]]")
    s = load_scenario(text)
    assert s.tick_duration_h == Fraction(1, 4)
    assert s.stations[0].tariff.steps == ((0, 5), (10, 7))


def test_unknown_supply_group():
    text = CANONICAL.replace("tariff = 5", 'tariff = 5\nsupply_group = "nope"')
    with pytest.raises(DanglingReference):
        load_scenario(text)


def test_unknown_fault_session():
    text = CANONICAL + '[[faults]]\ntick = 3\nkind = "EvStopsPaying"\nsession = "ev9-1"\n'
    with pytest.raises(DanglingReference):
        load_scenario(text)


@pytest.mark.parametrize("old, new", [
    ('tick_duration_h = "1/10"', "tick_duration_h = 0"),
    ("ticks = 200", "ticks = 0"),
    ("difficulty = 8", "difficulty = 40"),
    ("connector_limit_w = 10000", "connector_limit_w = -1"),
    ("level_wh = 10000", "level_wh = 200000"),
    ("tariff = 5", "tariff = [[3, 5]]"),
    ('id = "cs1"', 'id = "ev1"'),
])
def test_invalid_values(old, new):
    with pytest.raises(InvalidValue):
        load_scenario(CANONICAL.replace(old, new))


def test_bad_fault_kind():
    text = CANONICAL + '[[faults]]\ntick = 3\nkind = "Meteor"\nsession = "ev1-1"\n'
    with pytest.raises(InvalidValue):
        load_scenario(text)


@pytest.mark.parametrize("text, needle", [
    ("seed = [", "TOML"),
    (CANONICAL.replace("seed = 42\n", ""), "seed"),
    (CANONICAL.replace("ticks = 200", 'ticks = "many"'), "ticks"),
    (CANONICAL.replace("position = [0, 0]", "position = [0]"), "position"),
])
def test_parse_errors_name_the_problem(text, needle):
    with pytest.raises(ParseError, match=needle):
        load_scenario(text)
