"""
Property-based tests on random markets, structures and small trees
"""

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import *
from market_model import Allocation, Market, PreferenceDomain, PreferenceProfile, PriorityStructure
from market_io import load_mechanism
from apda_engine import blocking_pairs, run_apda
from mechanism_search import SearchRequirement, search_mechanism
from mechanism_tree import check_osp, check_osp_naive, check_simple, check_sosp, check_sosp_naive, validate
from priority_analyzer import find_priority_cycle, find_priority_cycle_bruteforce
from ttc_engine import run_fpttc

PROPERTY_SETTINGS = settings(max_examples=60, deadline=None)
MARKET_SETTINGS = settings(max_examples=1000, deadline=None)
FILL_SETTINGS = settings(max_examples=100, deadline=None)


@st.composite
def markets(draw, max_agents=4, max_objects=4):
    n = draw(st.integers(1, max_agents))
    m = draw(st.integers(1, max_objects))
    return Market(tuple(str(k + 1) for k in range(n)), tuple(f"a{k + 1}" for k in range(m)))


@st.composite
def structures(draw, max_agents=4, max_objects=4):
    market = draw(markets(max_agents, max_objects))
    return PriorityStructure.from_mapping(
        market, {obj: draw(st.permutations(market.agents)) for obj in market.objects})


def profiles(draw, market):
    return PreferenceProfile.from_mapping(
        market, {agent: draw(st.permutations(market.items)) for agent in market.agents})


@pytest.mark.slow
@MARKET_SETTINGS
@given(structures(), st.data())
def test_fpttc_is_individually_rational_and_terminates(structure, data):
    profile = profiles(data.draw, structure.market)
    trace = run_fpttc(structure, profile)
    allocation = trace.allocation
    for agent, pref in profile.items():
        assert pref.weakly_prefers(allocation[agent], OUTSIDE_OPTION)

    assert len(trace.steps) <= structure.market.n
    for before, after in zip(trace.steps, trace.steps[1:]):
        assert len(after.remaining_agents) < len(before.remaining_agents)
        assert set(after.remaining_objects) <= set(before.remaining_objects)
    for step in trace.steps:
        # Owned sets partition the remaining objects
        owned = [obj for objs in step.ownership.values() for obj in objs]
        assert sorted(owned) == sorted(step.remaining_objects)


@pytest.mark.slow
@MARKET_SETTINGS
@given(structures(), st.data())
def test_apda_is_stable_and_bounded(structure, data):
    profile = profiles(data.draw, structure.market)
    allocation, rounds = run_apda(structure, profile)
    market = structure.market
    assert len(rounds) <= market.n * (market.m + 1)
    assert blocking_pairs(structure, profile, allocation) == []
    for agent, pref in profile.items():
        assert pref.weakly_prefers(allocation[agent], OUTSIDE_OPTION)


@PROPERTY_SETTINGS
@given(structures(max_agents=5, max_objects=4))
def test_support_search_matches_exhaustive_oracle(structure):
    found = find_priority_cycle(structure)
    assert (found is None) == (find_priority_cycle_bruteforce(structure) is None)
    if found is not None:
        assert found.holds_in(structure)


@st.composite
def supported_cycle_structures(draw):
    """Five agents where the first three form a cycle supported by the last two"""
    agents = ('i1', 'i2', 'i3', 'i4', 'i5')
    market = Market(agents, ('a1', 'a2', 'a3', 'a4', 'a5'))
    heads = {'a1': ('i4', 'i1'), 'a2': ('i4', 'i2'), 'a3': ('i4', 'i3'), 'a4': ('i5', 'i4'), 'a5': ('i5',)}
    priorities = {}
    for obj, head in heads.items():
        tail = draw(st.permutations([a for a in agents if a not in head]))
        priorities[obj] = list(head) + list(tail)
    return PriorityStructure.from_mapping(market, priorities)


@FILL_SETTINGS
@given(supported_cycle_structures())
def test_supported_cycle_is_always_found(structure):
    witness = find_priority_cycle(structure)
    assert witness is not None
    assert witness.holds_in(structure)
    assert find_priority_cycle_bruteforce(structure) is not None


FEASIBLE_PAIRS = [('a1', 'a2'), ('a2', 'a1'), ('a1', '@0'), ('@0', 'a1'), ('a2', '@0'), ('@0', 'a2'), ('@0', '@0')]


@st.composite
def two_agent_trees(draw):
    """Depth-two trees over both agents' two preferences, random leaves"""
    first = draw(st.sampled_from(['1', '2']))
    second = '2' if first == '1' else '1'
    nodes = [{'id': 'v1', 'agent': first}]
    edges = []
    leaves = 0

    def leaf(parent, label):
        nonlocal leaves
        leaves += 1
        pair = draw(st.sampled_from(FEASIBLE_PAIRS))
        nodes.append({'id': f"l{leaves}", 'alloc': {'1': pair[0], '2': pair[1]}})
        edges.append({'from': parent, 'to': f"l{leaves}", 'label': {'pattern': label}})

    for k, top in enumerate(('a1', 'a2')):
        if draw(st.booleans()):
            child = f"v{k + 2}"
            nodes.append({'id': child, 'agent': second})
            edges.append({'from': 'v1', 'to': child, 'label': {'pattern': f"top={top}"}})
            if draw(st.booleans()):
                leaf(child, 'top=a1')
                leaf(child, 'top=a2')
            else:
                leaf(child, 'top=a1|a2')
        else:
            leaf('v1', f"top={top}")

    return load_mechanism({
        'market': {'agents': ['1', '2'], 'objects': ['a1', 'a2']},
        'domain': {'kind': 'no-outside'},
        'root': 'v1',
        'nodes': nodes,
        'edges': edges,
    })


@PROPERTY_SETTINGS
@given(two_agent_trees())
def test_grouped_checks_match_pairwise_definitions(mechanism):
    assert validate(mechanism).holds
    assert check_osp(mechanism).holds == check_osp_naive(mechanism).holds
    assert check_sosp(mechanism).holds == check_sosp_naive(mechanism).holds


@st.composite
def one_agent_trees(draw):
    """One agent with the outside option; the root splits on its favorite item"""
    groups = draw(st.sampled_from([
        ['top=a1', 'top=a2', 'top=@0'],
        ['top=a1|a2', 'top=@0'],
        ['top=a1', 'top=a2|@0'],
        ['top=a1|@0', 'top=a2'],
    ]))
    nodes = [{'id': 'v1', 'agent': '1'}]
    edges = []
    for k, label in enumerate(groups):
        nodes.append({'id': f"l{k + 1}", 'alloc': {'1': draw(st.sampled_from(['a1', 'a2', '@0']))}})
        edges.append({'from': 'v1', 'to': f"l{k + 1}", 'label': {'pattern': label}})
    return load_mechanism({
        'market': {'agents': ['1'], 'objects': ['a1', 'a2']},
        'domain': {'kind': 'with-outside'},
        'root': 'v1',
        'nodes': nodes,
        'edges': edges,
    })


@PROPERTY_SETTINGS
@given(one_agent_trees())
def test_grouped_checks_match_pairwise_definitions_with_outside_option(mechanism):
    assert check_osp(mechanism).holds == check_osp_naive(mechanism).holds
    assert check_sosp(mechanism).holds == check_sosp_naive(mechanism).holds


@st.composite
def random_trees(draw, simple=False, max_depth=3):
    """
    Valid trees over two agents with outside options

    Each internal node splits its mover's remaining preferences into up to
    three explicit blocks; with simple=True nobody moves twice on a path.
    """
    market = Market(('1', '2'), ('a1', 'a2'))
    domain = PreferenceDomain.with_outside(market)
    nodes, edges = [], []
    counter = itertools.count(1)

    def grow(sets, moved, depth):
        node_id = f"n{next(counter)}"
        movers = [k for k, s in enumerate(sets) if len(s) >= 2 and not (simple and k in moved)]
        if depth == max_depth or not movers or (depth > 0 and draw(st.booleans())):
            pair = draw(st.sampled_from(FEASIBLE_PAIRS))
            nodes.append({'id': node_id, 'alloc': {'1': pair[0], '2': pair[1]}})
            return node_id
        k = draw(st.sampled_from(movers))
        nodes.append({'id': node_id, 'agent': market.agents[k]})
        options = sorted(sets[k], key=lambda p: p.ranking)
        width = draw(st.integers(2, min(3, len(options))))
        tags = [draw(st.integers(0, width - 1)) for _ in options]
        for tag in sorted(set(tags)):
            block = [p for p, t in zip(options, tags) if t == tag]
            child = grow(sets[:k] + (frozenset(block),) + sets[k + 1:], moved | {k}, depth + 1)
            edges.append({'from': node_id, 'to': child,
                          'label': {'explicit': [list(p.ranking) for p in block]}})
        return node_id

    root = grow(tuple(frozenset(options) for options in domain.preferences), frozenset(), 0)
    return load_mechanism({
        'market': market.to_json(),
        'domain': {'kind': 'with-outside'},
        'root': root,
        'nodes': nodes,
        'edges': edges,
    })


@PROPERTY_SETTINGS
@given(random_trees())
def test_strong_obviousness_implies_obviousness(mechanism):
    assert validate(mechanism).holds
    if check_sosp(mechanism).holds:
        assert check_osp(mechanism).holds


@PROPERTY_SETTINGS
@given(st.one_of(two_agent_trees(), one_agent_trees()))
def test_strong_obviousness_implies_obviousness_on_pattern_trees(mechanism):
    if check_sosp(mechanism).holds:
        assert check_osp(mechanism).holds


@PROPERTY_SETTINGS
@given(random_trees(simple=True))
def test_simple_obvious_trees_are_strongly_obvious(mechanism):
    assert check_simple(mechanism).holds
    assert check_osp(mechanism).holds == check_sosp(mechanism).holds


@st.composite
def small_domain_tables(draw):
    """Explicit domains with one to three rankings per agent and an arbitrary rule on them"""
    market = Market(('1', '2'), ('a1', 'a2'))
    options = PreferenceDomain.with_outside(market).options('1')
    domain = PreferenceDomain.explicit(market, {
        agent: draw(st.lists(st.sampled_from(options), min_size=1, max_size=3, unique=True))
        for agent in market.agents})
    table = {profile: Allocation(market, draw(st.sampled_from(FEASIBLE_PAIRS))) for profile in domain.profiles()}
    return domain, table


@settings(max_examples=300, deadline=None)
@given(small_domain_tables())
def test_single_edge_nodes_add_no_simple_mechanisms(case):
    domain, table = case
    for require in ({SearchRequirement.SIMPLE, SearchRequirement.OSP},
                    {SearchRequirement.SIMPLE, SearchRequirement.SOSP}):
        plain = search_mechanism(table, domain, require)
        relaxed = search_mechanism(table, domain, require, allow_single_edge=True)
        assert plain.found == relaxed.found
    if search_mechanism(table, domain, {SearchRequirement.SIMPLE, SearchRequirement.OSP}).found:
        assert search_mechanism(table, domain, {SearchRequirement.SOSP}).found
