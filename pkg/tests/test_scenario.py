import copy
import json

import numpy as np
import pytest

from gridcharge.errors import (
    DisconnectedNetwork,
    ParseError,
    UnknownTemplate,
    ValidationError,
)
from gridcharge.scenario_io import (
    FREE_TRADE_GAMMA,
    MARKET_NAMES,
    MarketConfig,
    apply_market_config,
    apply_profiles,
    data_file,
    dumps_scenario,
    evaluate_market,
    generate_scenario,
    load_scenario,
    loads_scenario,
    read_profile_csv,
    scenario_document,
    without_storage,
)


def small_doc():
    """Minimal valid two-prosumer scenario document."""
    return {
        "schema": 1,
        "units": {"power": "kW"},
        "network": {
            "buses": 2,
            "reference": 0,
            "lines": [{"from": 0, "to": 1, "x": 0.5}],
        },
        "prosumers": [
            {
                "id": "a", "bus": 0,
                "demand_min": [0.0, 0.0],
                "demand_max": [4.0, 4.0],
                "renewable": [6.0, 0.0],
                "utility": [{"alpha": 0.0, "breakpoints": [0.0, 4.0],
                             "slopes": [0.2]}] * 2,
                "battery": {"e_min": 0.0, "e_max": 0.0, "p_charge_max": 0.0,
                            "p_discharge_max": 0.0, "efficiency": 0.9,
                            "initial_energy": 0.0},
            },
            {
                "id": "b", "bus": 1,
                "demand_min": [0.0, 0.0],
                "demand_max": [5.0, 5.0],
                "renewable": [0.0, 0.0],
                "utility": [{"alpha": 0.0, "breakpoints": [0.0, 2.5, 5.0],
                             "slopes": [0.9, 0.5]}] * 2,
                "battery": {"e_min": 0.0, "e_max": 3.0, "p_charge_max": 2.0,
                            "p_discharge_max": 2.0, "efficiency": 0.9,
                            "initial_energy": 1.0},
            },
        ],
        "trade_graph": {"mode": "all", "cap": 10.0},
        "market": {"gamma_min": 0.0, "gamma_max": 1.0, "levels": 3,
                   "rho": 0.01, "horizon": 2, "period_hours": 1.0},
    }


def parse(doc):
    return loads_scenario(json.dumps(doc))


def failing_pointer(doc):
    with pytest.raises(ValidationError) as err:
        parse(doc)
    return err.value.pointer


# ---------------------------------------------------------------------------
# bundled files


def test_bundled_nine_bus_pair_loads():
    es = load_scenario(data_file("scenarios/ieee9_seed42.json"))
    no = load_scenario(data_file("scenarios/ieee9_seed42_noes.json"))
    for scen in (es, no):
        assert len(scen.fleet.prosumers) == 9
        assert scen.horizon == 24
        assert scen.grid.n_levels == 51
        assert scen.rho == 0.01
    assert all(p.battery.e_max == 60.0 for p in es.fleet.prosumers)
    assert all(p.battery.e_max == 0.0 for p in no.fleet.prosumers)


def test_bundled_pair_differs_only_in_batteries():
    es = load_scenario(data_file("scenarios/ieee9_seed42.json"))
    no = load_scenario(data_file("scenarios/ieee9_seed42_noes.json"))
    for p_es, p_no in zip(es.fleet.prosumers, no.fleet.prosumers):
        assert p_es.prosumer_id == p_no.prosumer_id
        assert p_es.bus == p_no.bus
        assert p_es.p_max == p_no.p_max
        assert p_es.renewable == p_no.renewable
        assert p_es.utilities == p_no.utilities


def test_bundled_triangle_distances():
    scen = load_scenario(data_file("scenarios/triangle.json"))
    assert scen.network.n_buses == 3
    assert len(scen.network.lines) == 3
    d = scen.network.distances
    for i in range(3):
        for j in range(3):
            expect = 0.0 if i == j else 4.0 / 3.0
            assert abs(d[i, j] - expect) < 1e-12


def test_bundled_files_round_trip_bytes():
    for name in ("scenarios/ieee9_seed42.json",
                 "scenarios/ieee9_seed42_noes.json",
                 "scenarios/triangle.json"):
        path = data_file(name)
        text = path.read_text(encoding="utf-8")
        assert dumps_scenario(loads_scenario(text)) == text


# ---------------------------------------------------------------------------
# round trips and canonical bytes


def test_round_trip_is_identity_on_canonical_bytes():
    scen = parse(small_doc())
    text = dumps_scenario(scen)
    again = loads_scenario(text)
    assert dumps_scenario(again) == text


def test_serializer_omits_infinite_line_limits():
    doc = small_doc()
    doc["network"]["lines"][0]["limit"] = 12.5
    out = scenario_document(parse(doc))
    assert out["network"]["lines"][0]["limit"] == 12.5
    del doc["network"]["lines"][0]["limit"]
    out = scenario_document(parse(doc))
    assert "limit" not in out["network"]["lines"][0]


def test_pairs_trade_spec_round_trips_canonically():
    doc = small_doc()
    doc["trade_graph"] = {"mode": "pairs",
                          "pairs": [{"a": "b", "b": "a", "cap": 7.0}]}
    scen = parse(doc)
    assert scen.trade_spec == ("pairs", (("a", "b", 7.0),))
    pairs = {(buyer, seller) for buyer, seller, _cap in scen.graph.pairs}
    assert pairs == {("a", "b"), ("b", "a")}
    assert dumps_scenario(loads_scenario(dumps_scenario(scen))) \
        == dumps_scenario(scen)


def test_all_mode_expands_to_ordered_pairs():
    scen = parse(small_doc())
    assert len(scen.graph.pairs) == 2
    assert all(cap == 10.0 for _a, _b, cap in scen.graph.pairs)


# ---------------------------------------------------------------------------
# validation errors carry JSON-pointer paths


def test_rejects_unknown_top_level_key():
    doc = small_doc()
    doc["extra"] = 1
    assert failing_pointer(doc) == "/extra"


def test_rejects_unknown_nested_key():
    doc = small_doc()
    doc["prosumers"][1]["battery"]["capacity"] = 5
    assert failing_pointer(doc) == "/prosumers/1/battery/capacity"


def test_rejects_wrong_schema_version():
    doc = small_doc()
    doc["schema"] = 2
    assert failing_pointer(doc) == "/schema"


def test_rejects_bad_unit():
    doc = small_doc()
    doc["units"]["power"] = "GW"
    assert failing_pointer(doc) == "/units/power"


def test_rejects_missing_market_field():
    doc = small_doc()
    del doc["market"]["rho"]
    assert failing_pointer(doc) == "/market/rho"


def test_rejects_levels_and_dgamma_together():
    doc = small_doc()
    doc["market"]["dgamma"] = 0.5
    assert failing_pointer(doc) == "/market/dgamma"


def test_rejects_untiled_dgamma():
    doc = small_doc()
    del doc["market"]["levels"]
    doc["market"]["dgamma"] = 0.3
    assert failing_pointer(doc) == "/market/dgamma"


def test_rejects_inverted_price_range():
    doc = small_doc()
    doc["market"]["gamma_max"] = -0.5
    assert failing_pointer(doc) in ("/market/gamma_max",)


def test_rejects_wrong_profile_length():
    doc = small_doc()
    doc["prosumers"][0]["renewable"] = [1.0]
    assert failing_pointer(doc) == "/prosumers/0/renewable"


def test_rejects_negative_demand():
    doc = small_doc()
    doc["prosumers"][0]["demand_max"][1] = -1.0
    assert failing_pointer(doc) == "/prosumers/0/demand_max/1"


def test_rejects_demand_max_below_min():
    doc = small_doc()
    doc["prosumers"][0]["demand_min"] = [3.0, 3.0]
    doc["prosumers"][0]["demand_max"] = [2.0, 5.0]
    assert failing_pointer(doc) == "/prosumers/0/demand_max/0"


def test_rejects_decreasing_breakpoints():
    doc = small_doc()
    doc["prosumers"][1]["utility"][0] = {
        "alpha": 0.0, "breakpoints": [0.0, 5.0, 5.0], "slopes": [0.9, 0.5]}
    assert failing_pointer(doc) == "/prosumers/1/utility/0/breakpoints/2"


def test_rejects_increasing_slopes():
    doc = small_doc()
    doc["prosumers"][1]["utility"][1] = {
        "alpha": 0.0, "breakpoints": [0.0, 2.5, 5.0], "slopes": [0.5, 0.9]}
    assert failing_pointer(doc) == "/prosumers/1/utility/1/slopes/1"


def test_rejects_breakpoints_not_covering_bounds():
    doc = small_doc()
    doc["prosumers"][1]["utility"][0] = {
        "alpha": 0.0, "breakpoints": [0.0, 4.0], "slopes": [0.9]}
    assert failing_pointer(doc) == "/prosumers/1/utility/0/breakpoints"


def test_rejects_bad_efficiency():
    doc = small_doc()
    doc["prosumers"][1]["battery"]["efficiency"] = 1.0
    assert failing_pointer(doc) == "/prosumers/1/battery/efficiency"


def test_rejects_initial_energy_outside_window():
    doc = small_doc()
    doc["prosumers"][1]["battery"]["initial_energy"] = 9.0
    assert failing_pointer(doc) == "/prosumers/1/battery/initial_energy"


def test_rejects_duplicate_prosumer_id():
    doc = small_doc()
    doc["prosumers"][1]["id"] = "a"
    assert failing_pointer(doc) == "/prosumers/1/id"


def test_rejects_unknown_bus():
    doc = small_doc()
    doc["prosumers"][1]["bus"] = 7
    assert failing_pointer(doc) == "/prosumers/1/bus"


def test_rejects_unknown_trade_partner():
    doc = small_doc()
    doc["trade_graph"] = {"mode": "pairs",
                          "pairs": [{"a": "a", "b": "zz", "cap": 1.0}]}
    assert failing_pointer(doc) == "/trade_graph/pairs/0/b"


def test_rejects_duplicate_pair():
    doc = small_doc()
    doc["trade_graph"] = {"mode": "pairs",
                          "pairs": [{"a": "a", "b": "b", "cap": 1.0},
                                    {"a": "b", "b": "a", "cap": 2.0}]}
    assert failing_pointer(doc) == "/trade_graph/pairs/1/b"


def test_rejects_nonpositive_reactance():
    doc = small_doc()
    doc["network"]["lines"][0]["x"] = 0.0
    assert failing_pointer(doc) == "/network/lines/0/x"


def test_rejects_line_to_missing_bus():
    doc = small_doc()
    doc["network"]["lines"][0]["to"] = 5
    assert failing_pointer(doc) == "/network/lines/0/to"


def test_rejects_disconnected_network():
    doc = small_doc()
    doc["network"]["buses"] = 3
    with pytest.raises(DisconnectedNetwork):
        parse(doc)


def test_rejects_non_json_text():
    with pytest.raises(ParseError):
        loads_scenario("{not json")


def test_load_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "absent.json")


# ---------------------------------------------------------------------------
# units


def test_megawatt_unit_scales_to_kilowatts():
    doc = small_doc()
    doc["units"]["power"] = "MW"
    doc["network"]["lines"][0]["limit"] = 0.02
    scen = parse(doc)
    kw = parse(small_doc())
    p_mw, p_kw = scen.fleet.prosumers[1], kw.fleet.prosumers[1]
    assert p_mw.p_max[0] == 1000.0 * p_kw.p_max[0]
    assert p_mw.battery.e_max == 1000.0 * p_kw.battery.e_max
    assert scen.network.lines[0].limit == 20.0
    u_mw, u_kw = p_mw.utilities[0], p_kw.utilities[0]
    assert u_mw.breakpoints[-1] == 1000.0 * u_kw.breakpoints[-1]
    assert abs(u_mw.slopes[0] - u_kw.slopes[0] / 1000.0) < 1e-15
    # the same total utility value at the same physical consumption
    assert abs(u_mw.slopes[0] * u_mw.breakpoints[1]
               - u_kw.slopes[0] * u_kw.breakpoints[1]) < 1e-9


def test_serialization_always_writes_kilowatts():
    doc = small_doc()
    doc["units"]["power"] = "MW"
    out = scenario_document(parse(doc))
    assert out["units"] == {"power": "kW"}
    assert out["prosumers"][0]["demand_max"][0] == 4000.0


# ---------------------------------------------------------------------------
# deterministic generation


def test_generate_is_deterministic():
    a = generate_scenario("ieee9", seed=7)
    b = generate_scenario("ieee9", seed=7)
    assert dumps_scenario(a) == dumps_scenario(b)


def test_generate_seed_changes_output():
    a = generate_scenario("ieee9", seed=7)
    b = generate_scenario("ieee9", seed=8)
    assert dumps_scenario(a) != dumps_scenario(b)


def test_generate_storage_flag_only_touches_batteries():
    es = generate_scenario("ieee9", seed=3, es_enabled=True)
    no = generate_scenario("ieee9", seed=3, es_enabled=False)
    for p_es, p_no in zip(es.fleet.prosumers, no.fleet.prosumers):
        assert p_es.p_max == p_no.p_max
        assert p_es.renewable == p_no.renewable
        assert p_es.utilities == p_no.utilities
        assert p_es.battery.e_max == 60.0
        assert p_no.battery.e_max == 0.0


def test_generate_matches_bundled_seed42():
    scen = generate_scenario("ieee9", seed=42, es_enabled=True)
    bundled = data_file("scenarios/ieee9_seed42.json")
    assert dumps_scenario(scen) == bundled.read_text(encoding="utf-8")


def test_generate_slopes_sorted_and_in_unit_interval():
    scen = generate_scenario("ieee9", seed=11)
    for p in scen.fleet.prosumers:
        for u in p.utilities:
            slopes = list(u.slopes)
            assert slopes == sorted(slopes, reverse=True)
            assert all(0.0 <= s < 1.0 for s in slopes)
            assert len(slopes) in (2, 3)


def test_generate_unknown_template():
    with pytest.raises(UnknownTemplate):
        generate_scenario("ieee999", seed=0)


def test_generate_larger_template_uses_knn_graph():
    scen = generate_scenario("ieee39", seed=1)
    assert len(scen.fleet.prosumers) == 39
    # k-nearest-neighbour graph: far fewer channels than all-to-all
    assert 0 < len(scen.graph.pairs) < 39 * 38


# ---------------------------------------------------------------------------
# profile CSV import


def write_csv(tmp_path, text):
    path = tmp_path / "profiles.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_profile_round_trip(tmp_path):
    path = write_csv(tmp_path, "\n".join([
        "period,prosumer_id,kind,value",
        "0,b,demand_max,8.0",
        "1,b,demand_max,6.0",
        "0,b,renewable,1.5",
        "1,b,renewable,0.0",
    ]) + "\n")
    profiles = read_profile_csv(path)
    assert profiles == {"b": {"demand_max": {0: 8.0, 1: 6.0},
                              "renewable": {0: 1.5, 1: 0.0}}}
    scen = apply_profiles(parse(small_doc()), profiles)
    p = scen.fleet.prosumers[1]
    assert p.p_max == (8.0, 6.0)
    assert p.renewable == (1.5, 0.0)
    # breakpoints re-spaced over the new range, slopes kept
    assert p.utilities[0].breakpoints == (0.0, 4.0, 8.0)
    assert p.utilities[0].slopes == (0.9, 0.5)


def test_profile_rejects_wrong_header(tmp_path):
    path = write_csv(tmp_path, "time,prosumer,kind,value\n")
    with pytest.raises(ParseError):
        read_profile_csv(path)


def test_profile_rejects_bad_kind(tmp_path):
    path = write_csv(tmp_path,
                     "period,prosumer_id,kind,value\n0,b,load,1.0\n")
    with pytest.raises(ParseError):
        read_profile_csv(path)


def test_profile_rejects_duplicate_entry(tmp_path):
    path = write_csv(tmp_path, "period,prosumer_id,kind,value\n"
                     "0,b,renewable,1.0\n0,b,renewable,2.0\n")
    with pytest.raises(ParseError):
        read_profile_csv(path)


def test_profile_rejects_incomplete_coverage(tmp_path):
    path = write_csv(tmp_path,
                     "period,prosumer_id,kind,value\n0,b,renewable,1.0\n")
    with pytest.raises(ParseError):
        apply_profiles(parse(small_doc()), read_profile_csv(path))


def test_profile_rejects_unknown_prosumer(tmp_path):
    path = write_csv(tmp_path, "period,prosumer_id,kind,value\n"
                     "0,zz,renewable,1.0\n1,zz,renewable,1.0\n")
    with pytest.raises(ParseError):
        apply_profiles(parse(small_doc()), read_profile_csv(path))


# ---------------------------------------------------------------------------
# market presets


def test_without_storage_zeroes_every_battery():
    scen = without_storage(parse(small_doc()))
    for p in scen.fleet.prosumers:
        b = p.battery
        assert (b.e_max, b.p_charge_max, b.p_discharge_max,
                b.initial_energy) == (0.0, 0.0, 0.0, 0.0)


def test_no_p2p_config_empties_the_graph():
    scen = apply_market_config(parse(small_doc()), MarketConfig("NoP2P"))
    assert scen.graph.pairs == ()
    assert scen.trade_spec == ("pairs", ())


def test_market_config_rejects_unknown_name():
    with pytest.raises(ValueError):
        MarketConfig("BestP2P")


def test_preset_labels():
    assert MarketConfig("NoP2P").label == "No P2P (ES)"
    assert MarketConfig("SocialP2P", es_enabled=False).label \
        == "Social P2P (no ES)"


def test_presets_on_triangle_scenario():
    scen = load_scenario(data_file("scenarios/triangle.json"))
    outcomes = {name: evaluate_market(scen, MarketConfig(name))
                for name in MARKET_NAMES}
    no_trade = outcomes["NoP2P"].metrics
    free = outcomes["FreeP2P"].metrics
    social = outcomes["SocialP2P"].metrics
    optimal = outcomes["OptimalP2P"].metrics
    assert no_trade.z_volume == 0.0
    assert free.z_volume > 1.0
    assert free.gamma == FREE_TRADE_GAMMA
    tol = 1e-6 * (1.0 + abs(social.social_profit))
    assert social.social_profit >= optimal.social_profit - tol
    assert optimal.social_profit >= no_trade.social_profit - tol
    assert outcomes["OptimalP2P"].equilibrium is not None
    assert outcomes["OptimalP2P"].equilibrium.gamma_star \
        == pytest.approx(0.6, abs=1e-12)


def test_evaluate_market_without_storage_variant():
    scen = load_scenario(data_file("scenarios/triangle.json"))
    out = evaluate_market(scen, MarketConfig("NoP2P", es_enabled=False))
    assert all(p.battery.e_max == 0.0
               for p in out.scenario.fleet.prosumers)
