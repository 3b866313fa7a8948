"""
Tests for the FPTTC step procedure and rule tabulation
"""

import pytest

from config import *
from market_model import (InvariantError, Market, Preference, PreferenceDomain, PreferenceProfile,
                          PriorityStructure)
from ttc_engine import effective_jobs, fpttc_allocation, fpttc_rule, run_fpttc, run_rule, ttc_round


@pytest.fixture
def four_agent_trace(structure_from, profile_from):
    structure = structure_from('four_agent_priorities.json')
    profile = profile_from(structure.market, 'four_agent_profile.json')
    return run_fpttc(structure, profile)


def test_four_agent_allocation(four_agent_trace):
    assert four_agent_trace.allocation.as_dict() == {'1': OUTSIDE_OPTION, '2': OUTSIDE_OPTION, '3': 'a1', '4': 'a3'}
    assert len(four_agent_trace.steps) == 3


def test_four_agent_first_step_self_loop(four_agent_trace):
    first = four_agent_trace.steps[0]
    assert first.pointers == {'1': '1', '2': '1', '3': '1', '4': '3'}
    assert first.cycles == (('1',),)
    assert first.assignments == {'1': OUTSIDE_OPTION}
    assert first.assigned_objects == frozenset()


def test_four_agent_second_step_ownership(four_agent_trace):
    second = four_agent_trace.steps[1]
    assert second.remaining_agents == ('2', '3', '4')
    assert second.ownership == {'2': frozenset({'a2'}), '3': frozenset({'a3'}), '4': frozenset({'a1', 'a4'})}
    assert second.top_owners == frozenset({'2', '3', '4'})
    assert second.pointers == {'2': '4', '3': '4', '4': '3'}
    assert second.cycles == (('3', '4'),)
    assert second.assignments == {'3': 'a1', '4': 'a3'}

    as_json = second.to_json()
    assert as_json['ownership'] == {'2': ['a2'], '3': ['a3'], '4': ['a1', 'a4']}
    assert as_json['assigned_objects'] == ['a1', 'a3']


def test_four_agent_last_step_takes_outside_option(four_agent_trace):
    last = four_agent_trace.steps[2]
    assert last.remaining_agents == ('2',)
    assert last.remaining_objects == ('a2', 'a4')
    assert last.assignments == {'2': OUTSIDE_OPTION}
    assert four_agent_trace.cumulative_assigned_agents(2) == frozenset({'1', '3', '4'})
    assert four_agent_trace.cumulative_assigned_objects(3) == frozenset({'a1', 'a3'})


def test_ttc_round_executes_every_cycle():
    owners = {'x': frozenset({'a'}), 'y': frozenset({'b'}), 'z': frozenset({'c'})}
    prefs = {
        'x': Preference(('b', 'a', 'c', OUTSIDE_OPTION)),
        'y': Preference(('a', 'b', 'c', OUTSIDE_OPTION)),
        'z': Preference(('c', 'a', 'b', OUTSIDE_OPTION)),
    }
    cycles, assignments = ttc_round(owners, prefs)
    assert cycles == [('x', 'y'), ('z',)]
    assert assignments == {'x': 'b', 'y': 'a', 'z': 'c'}


def test_ttc_round_rejects_shared_ownership():
    owners = {'x': frozenset({'a'}), 'y': frozenset({'a'})}
    prefs = {'x': Preference(('a', OUTSIDE_OPTION)), 'y': Preference(('a', OUTSIDE_OPTION))}
    with pytest.raises(InvariantError):
        ttc_round(owners, prefs)


def test_unassigned_agents_get_outside_option_when_objects_run_out():
    market = Market(('1', '2', '3'), ('a',))
    structure = PriorityStructure.from_mapping(market, {'a': ['1', '2', '3']})
    profile = PreferenceProfile.from_mapping(market, {agent: ['a', OUTSIDE_OPTION] for agent in market.agents})
    trace = run_fpttc(structure, profile)
    assert len(trace.steps) == 1
    assert trace.allocation.as_dict() == {'1': 'a', '2': OUTSIDE_OPTION, '3': OUTSIDE_OPTION}


def test_serial_dictatorship_structure_picks_in_order(structure_from):
    structure = structure_from('serial_dictatorship_three.json')
    rule = fpttc_rule(structure)
    for profile in PreferenceDomain.no_outside(structure.market).profiles():
        allocation = rule(profile)
        left = set(structure.market.objects)
        for agent in structure.market.agents:
            expected = profile[agent].top(left)
            assert allocation[agent] == expected
            left.discard(expected)


def test_run_rule_follows_enumeration_order(structure_from):
    structure = structure_from('two_agent_four_objects.json')
    domain = PreferenceDomain.no_outside(structure.market)
    table = run_rule(structure, domain)
    assert len(table) == domain.size
    assert list(table) == list(domain.profiles())
    for profile, allocation in table.items():
        assert allocation == fpttc_allocation(structure, profile)


@pytest.mark.slow
def test_parallel_tabulation_matches_serial(structure_from):
    structure = structure_from('serial_dictatorship_three.json')
    domain = PreferenceDomain.with_outside(structure.market)
    assert run_rule(structure, domain, jobs=2) == run_rule(structure, domain, jobs=1)


def test_effective_jobs_is_clamped():
    assert effective_jobs(0) == 1
    assert effective_jobs(10 ** 6) == MAX_JOBS
    assert effective_jobs(None) == DEFAULT_JOBS
