import json
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridgame.netmodel import (
    Attack, CaseError, ScenarioError, apply_scenario, downstream_buses, energized_buses, load_case,
)

from casebuilder import build, case_dict


def reachable(net, start):
    """Plain BFS over closed branches and ties (independent of the library's csgraph route)."""
    adj = {b: set() for b in net.bus_ids}
    for br in net.branches:
        if br.closed:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    for t in net.tie_switches:
        if t.closed:
            adj[t.from_bus].add(t.to_bus)
            adj[t.to_bus].add(t.from_bus)
    seen, queue = {start}, deque([start])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return seen


def test_bundled_case_shape(net69):
    assert len(net69.buses) == 69
    assert sum(br.closed for br in net69.branches) == 68
    assert len(net69.tie_switches) == 5
    assert all(t.normally_open and not t.closed for t in net69.tie_switches)
    assert {g.bus for g in net69.ders} == {5, 9, 12, 17, 20, 24, 28, 35, 40, 50, 60, 65}
    assert net69.critical_buses == {11, 12, 21, 49, 50, 59, 61, 63}
    assert net69.slack_bus == 1


def test_bundled_der_capacities_in_kw_range(net69):
    caps = [g.p_max for g in net69.ders]
    assert min(caps) >= 90 and max(caps) <= 220


def test_feeder_two_holds_corridor(net69):
    assert {net69.feeder_of[b] for b in (60, 61, 62, 63)} == {2}


def test_empty_case_rejected():
    with pytest.raises(CaseError):
        build(0, [])


def test_dangling_der_names_id():
    data = case_dict(2, [(1, 2, 0.01, 0.01)])
    data["ders"] = [{"id": 7, "bus": 999, "p_min": 0, "p_max": 10}]
    from gridgame.netmodel import network_from_dict

    with pytest.raises(CaseError, match="DER 7"):
        network_from_dict(data)


def test_meshed_case_rejected():
    with pytest.raises(CaseError, match="radial"):
        build(3, [(1, 2, 0.01, 0.01), (2, 3, 0.01, 0.01), (3, 1, 0.01, 0.01)])


def test_load_case_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CaseError):
        load_case(bad)
    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"buses": []}))
    with pytest.raises(CaseError, match="missing"):
        load_case(partial)


def test_identity_scenario(net69):
    scen = apply_scenario(net69, None, [0] * 5)
    assert scen.branches == net69.branches
    assert scen.tie_switches == net69.tie_switches


def test_attack_61_62_opens_only_that_branch(net69):
    a = net69.attack_on(61, 62)
    scen = apply_scenario(net69, a, [0] * 5)
    changed = [(b0, b1) for b0, b1 in zip(net69.branches, scen.branches) if b0 != b1]
    assert len(changed) == 1
    assert changed[0][1].status == "open" and {changed[0][1].from_bus, changed[0][1].to_bus} == {61, 62}
    assert net69.branch(a.branch_id).closed  # input untouched


def test_scenario_errors(net69):
    with pytest.raises(ScenarioError):
        apply_scenario(net69, None, [0] * 4)
    with pytest.raises(ScenarioError):
        apply_scenario(net69, None, [0, 0, 2, 0, 0])
    a = net69.attack_on(3, 4)
    scen = apply_scenario(net69, a, [0] * 5)
    with pytest.raises(ScenarioError, match="already open"):
        apply_scenario(scen, a, [0] * 5)
    with pytest.raises(ScenarioError):
        apply_scenario(net69, Attack(999, (1, 2)), [0] * 5)


def test_energized_base_and_open_tie(net69):
    assert energized_buses(net69) == set(range(1, 70))
    assert energized_buses(apply_scenario(net69, None, [0] * 5)) == set(range(1, 70))


def test_three_bus_lateral_excluded(net69):
    # every branch whose outage drops exactly three buses, found by brute force
    base = reachable(net69, 1)
    found = False
    for br in net69.branches:
        a = Attack(br.id, (br.from_bus, br.to_bus))
        lost = base - reachable(apply_scenario(net69, a, [0] * 5), 1)
        if len(lost) == 3:
            assert energized_buses(apply_scenario(net69, a, [0] * 5)) == base - lost
            found = True
    assert found


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=5, max_size=5), st.integers(0, 66))
def test_energized_matches_bfs_oracle(net69, sigma, k):
    a = net69.attackable_assets()[k]
    scen = apply_scenario(net69, a, sigma)
    assert energized_buses(scen) == reachable(scen, 1)
    # closing ties never de-energizes
    assert energized_buses(scen) >= energized_buses(apply_scenario(net69, a, [0] * 5))


def test_opening_branch_splits_one_component(net69):
    for a in net69.attackable_assets():
        scen = apply_scenario(net69, a, [0] * 5)
        up = reachable(scen, a.end_buses[0])
        down = reachable(scen, a.end_buses[1])
        assert not up & down
        assert len(up) + len(down) == 69


def test_apply_scenario_idempotent(net69):
    a = net69.attack_on(9, 53)
    s1 = apply_scenario(net69, a, [1, 0, 1, 0, 0])
    s2 = apply_scenario(net69, a, [1, 0, 1, 0, 0])
    assert s1.branches == s2.branches and s1.tie_switches == s2.tie_switches


def test_attackable_set_excludes_slack_link(net69):
    ids = [a.branch_id for a in net69.attackable_assets()]
    assert len(ids) == 67
    assert net69.branch(1).from_bus == 1 and 1 not in ids


def test_downstream_buses(net69):
    assert downstream_buses(net69, net69.attack_on(68, 69).branch_id) == {69}


def test_roundtrip_dict(net69):
    from gridgame.netmodel import network_from_dict

    again = network_from_dict(json.loads(json.dumps(net69.to_dict())))
    assert again.buses == net69.buses and again.branches == net69.branches
    assert np.array_equal(again.base_dispatch, net69.base_dispatch)
