import copy
import itertools

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from nfdtoll.scenario import (
    ScenarioError,
    build_path_set,
    desk_scenario,
    dumps,
    generate_grid,
    load_scenario,
    loads,
    path_free_flow_time,
    save_scenario,
    scenario_from_dict,
)

from conftest import link, minimal_doc, tiny_scenario


def test_minimal_document(minimal):
    assert len(minimal.network.links) == 1
    assert minimal.demand.od_pairs == ((1, 2),)


def test_negative_length_names_link():
    doc = minimal_doc()
    doc["network"]["links"][0]["length_km"] = -1
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    assert "network.links[0]" in str(err.value)
    assert "10" in str(err.value)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d["network"]["links"][0].update(target=99), "target"),
        (lambda d: d["demand"]["volumes"][0].__setitem__(0, -3.0), "demand.volumes"),
        (lambda d: d["cordon"].update(links=[]), "cordon"),
        (lambda d: d.update(schema="other/9"), "schema"),
        (lambda d: d["simulation"].update(bogus=1), "simulation.bogus"),
    ],
)
def test_validation_errors_carry_paths(mutate, where):
    doc = minimal_doc()
    mutate(doc)
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(doc)
    assert where in err.value.path


def test_bad_json_is_scenario_error():
    with pytest.raises(ScenarioError):
        loads("{not json")


def test_grid_round_trip_is_bit_identical(tmp_path):
    sc = desk_scenario()
    p = tmp_path / "g.json"
    save_scenario(sc, p)
    again = load_scenario(p)
    assert dumps(again) == p.read_text()
    assert again.network == sc.network
    assert again.demand == sc.demand
    assert again.control == sc.control


def test_grid_without_periphery_rejected():
    with pytest.raises(ScenarioError):
        generate_grid(2, 2, (0, 0, 1, 1))


def test_desk_grid_partition_and_reachability():
    sc = desk_scenario()
    net = sc.network
    assert sc.cordon.cordon_links and sc.cordon.periphery_links
    g = net.digraph()
    inside = {n for lk in net.links if lk.id in sc.cordon.cordon_links for n in (lk.source, lk.target)}
    for c in net.centroids:
        assert inside <= nx.descendants(g, c) | {c}


def test_grid_deterministic():
    assert dumps(generate_grid(6, 6, (2, 2, 3, 3), seed=4)) == dumps(generate_grid(6, 6, (2, 2, 3, 3), seed=4))
    assert dumps(generate_grid(6, 6, (2, 2, 3, 3), seed=4)) != dumps(generate_grid(6, 6, (2, 2, 3, 3), seed=5))


def test_demand_multiplier_scales_matrix():
    sc = desk_scenario()
    assert (sc.with_demand_multiplier(1.5).demand.matrix() == 1.5 * sc.demand.matrix()).all()


# -- path sets ------------------------------------------------------------------


def test_single_link_single_path():
    sc = tiny_scenario([link(1, 1, 2)], [1], [(1, 2)], [[1]])
    assert build_path_set(sc.network, [(1, 2)], 3).paths == (((1,),),)


def test_parallel_links_ordered_by_id():
    sc = tiny_scenario([link(7, 1, 2), link(3, 1, 2)], [3], [(1, 2)], [[1]])
    assert build_path_set(sc.network, [(1, 2)], 3).paths == (((3,), (7,)),)


def _brute_force_paths(net, o, d):
    g = nx.MultiDiGraph()
    for lk in net.links:
        g.add_edge(lk.source, lk.target, key=lk.id)
    out = []
    for edges in nx.all_simple_edge_paths(g, o, d):
        out.append(tuple(k for _, _, k in edges))
    return out


def test_k_shortest_matches_exhaustive_enumeration():
    sc = generate_grid(4, 4, (1, 1, 2, 2), seed=2)
    net = sc.network
    o, d = 0, 15
    got = build_path_set(net, [(o, d)], 8).paths[0]
    assert len(got) == 8
    every = _brute_force_paths(net, o, d)
    omitted = [p for p in every if p not in got]
    worst_kept = max(path_free_flow_time(net, p) for p in got)
    best_omitted = min(path_free_flow_time(net, p) for p in omitted)
    assert worst_kept <= best_omitted + 1e-9
    for p in got:
        assert len(set(p)) == len(p)


def test_bypass_paths_avoid_cordon():
    sc = desk_scenario()
    cordon = sc.cordon.cordon_links
    inside = {n for lk in sc.network.links if lk.id in cordon for n in (lk.source, lk.target)}
    for (o, d), group in zip(sc.paths.od_pairs, sc.paths.paths):
        plain = build_path_set(sc.network, [(o, d)], sc.k_paths).paths[0]
        assert group[: len(plain)] == plain
        if o not in inside and d not in inside:
            assert any(not (set(p) & cordon) for p in group)
        assert len(set(group)) == len(group)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 5), st.integers(3, 5), st.integers(0, 50))
def test_grid_generator_properties(rows, cols, seed):
    r1, c1 = rows - 1, cols - 1
    sc = generate_grid(rows + 1, cols + 1, (1, 1, r1, c1), seed=seed)
    net = sc.network
    ids = [lk.id for lk in net.links]
    assert len(ids) == len(set(ids))
    assert sc.cordon.cordon_links | sc.cordon.periphery_links == set(ids)
    assert all(lk.length_km > 0 for lk in net.links)
    assert (sc.demand.matrix() >= 0).all()
    assert sc.cordon.cordon_links and sc.cordon.periphery_links


def test_path_set_paths_connect_od():
    sc = desk_scenario()
    net = sc.network
    for (o, d), group in zip(sc.paths.od_pairs, sc.paths.paths):
        for p in group:
            assert net.link(p[0]).source == o and net.link(p[-1]).target == d
            for a, b in itertools.pairwise(p):
                assert net.link(a).target == net.link(b).source


def test_copy_of_doc_not_mutated():
    doc = minimal_doc()
    snap = copy.deepcopy(doc)
    scenario_from_dict(doc)
    assert doc == snap
