"""
Command-line tests: JSON on stdout and exit codes
"""

import json

import pytest

from config import *
from main import EXIT_FAILS, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def cli(capsys):
    def run(*argv):
        code = main([str(arg) for arg in argv])
        return code, json.loads(capsys.readouterr().out)
    return run


def test_run_fpttc(cli, fixture_file):
    code, out = cli('run', 'fpttc', '--market', fixture_file('four_agent_priorities.json'),
                    '--profile', fixture_file('four_agent_profile.json'))
    assert code == EXIT_OK
    assert out == {'1': OUTSIDE_OPTION, '2': OUTSIDE_OPTION, '3': 'a1', '4': 'a3'}


def test_run_fpttc_with_trace(cli, fixture_file):
    code, out = cli('run', 'fpttc', '--market', fixture_file('four_agent_priorities.json'),
                    '--profile', fixture_file('four_agent_profile.json'), '--trace')
    assert code == EXIT_OK
    assert out['allocation']['3'] == 'a1'
    assert [step['step'] for step in out['trace']] == [1, 2, 3]
    assert out['trace'][1]['cycles'] == [['3', '4']]


def test_run_apda(cli, fixture_file):
    code, out = cli('run', 'apda', '--market', fixture_file('apda_two_agents.json'),
                    '--profile', fixture_file('apda_two_agents_profile.json'))
    assert code == EXIT_OK
    assert out == {'1': 'a', '2': 'b'}


def test_malformed_input_is_a_usage_error(cli, fixture_file, tmp_path):
    broken = tmp_path / 'profile.json'
    broken.write_text('{"1": ["a1", ')
    code, out = cli('run', 'fpttc', '--market', fixture_file('four_agent_priorities.json'), '--profile', broken)
    assert code == EXIT_USAGE
    assert 'error' in out


def test_profile_for_wrong_market_is_a_usage_error(cli, fixture_file):
    code, out = cli('run', 'fpttc', '--market', fixture_file('four_agent_priorities.json'),
                    '--profile', fixture_file('apda_two_agents_profile.json'))
    assert code == EXIT_USAGE
    assert 'mismatch' in out['error']


def test_analyze_weak_cycle_structure(cli, fixture_file):
    code, out = cli('analyze', 'structure', '--market', fixture_file('weak_cycle_acyclic.json'))
    assert code == EXIT_OK
    assert out['acyclic'] is True
    assert out['strongly_acyclic'] is False


def test_analyze_ergin_cycle_structure(cli, fixture_file):
    code, out = cli('analyze', 'structure', '--market', fixture_file('ergin_cycle_strongly_acyclic.json'))
    assert code == EXIT_OK
    assert out['strongly_acyclic'] is True
    assert out['ergin_acyclic'] is False


def test_audit_dual_ownership_with_outside_option(cli, fixture_file):
    code, out = cli('audit', 'rule', '--market', fixture_file('dual_ownership_restricted_only.json'),
                    '--check', 'dual-ownership', '--domain', 'with-outside')
    assert code == EXIT_FAILS
    assert out['holds'] is False
    assert out['witness']['step'] is not None


def test_audit_dual_ownership_without_outside_option(cli, fixture_file):
    code, out = cli('audit', 'rule', '--market', fixture_file('dual_ownership_restricted_only.json'),
                    '--check', 'dual-ownership', '--method', 'reachable')
    assert code == EXIT_OK
    assert out['holds'] is True


def test_wsd_audit_rejects_outside_option_domain(cli, fixture_file):
    code, out = cli('audit', 'rule', '--market', fixture_file('serial_dictatorship_three.json'),
                    '--check', 'wsd', '--domain', 'with-outside')
    assert code == EXIT_USAGE
    assert 'error' in out


def test_audit_theorems(cli):
    code, out = cli('audit', 'theorems', '--n', 2, '--m', 2)
    assert code == EXIT_OK
    assert out['passed'] is True
    assert out['structures_checked'] == 4


def test_audit_theorems_too_large(cli):
    code, out = cli('audit', 'theorems', '--n', 4, '--m', 3)
    assert code == EXIT_USAGE
    assert 'estimated size' in out['error']


def test_mech_verify_reports_witness(cli, fixture_file):
    code, out = cli('mech', 'verify', '--mechanism', fixture_file('osp_not_sosp_tree.json'), '--props', 'osp,sosp')
    assert code == EXIT_FAILS
    assert out['osp'] is True
    assert out['sosp'] is False
    assert out['witnesses']['sosp']['node'] == 'v1'
    assert 'osp' not in out['witnesses']


def test_mech_verify_against_rule(cli, fixture_file):
    code, out = cli('mech', 'verify', '--mechanism', fixture_file('serial_dictatorship_tree.json'),
                    '--market', fixture_file('serial_dictatorship_three.json'))
    assert code == EXIT_OK
    assert out == {'valid': True, 'osp': True, 'sosp': True, 'simple': True, 'implements': True, 'witnesses': {}}


def test_mech_run(cli, fixture_file, tmp_path):
    profile = tmp_path / 'profile.json'
    profile.write_text(json.dumps({'1': ['a2', 'a3', 'a1', '@0'], '2': ['a2', 'a1', 'a3', '@0'],
                                   '3': ['a1', 'a2', 'a3', '@0']}))
    code, out = cli('mech', 'run', '--mechanism', fixture_file('serial_dictatorship_tree.json'), '--profile', profile)
    assert code == EXIT_OK
    assert out == {'1': 'a2', '2': 'a1', '3': 'a3'}


def test_mech_search_none(cli, fixture_file):
    code, out = cli('mech', 'search', '--market', fixture_file('two_agent_four_objects.json'),
                    '--domain', fixture_file('two_agent_four_objects_domain.json'), '--require', 'simple,osp')
    assert code == EXIT_FAILS
    assert out['result'] == 'none'


def test_mech_search_found(cli, fixture_file):
    code, out = cli('mech', 'search', '--market', fixture_file('two_agent_four_objects.json'),
                    '--domain', fixture_file('two_agent_four_objects_domain.json'), '--require', 'sosp')
    assert code == EXIT_OK
    assert out['result'] == 'found'
    assert out['mechanism']['root'] == 'v1'


def test_mech_search_apda_rule(cli, fixture_file):
    code, out = cli('mech', 'search', '--market', fixture_file('apda_weak_cycle_rotating.json'),
                    '--domain', fixture_file('apda_weak_cycle_rotating_domain.json'), '--rule', 'apda')
    assert code == EXIT_FAILS
    assert out['result'] == 'none'


def test_mech_sweep(cli):
    code, out = cli('mech', 'sweep', '--n', 2, '--m', 2)
    assert code == EXIT_OK
    assert out['passed'] is True


def test_version_exits(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(['--version'])
    assert excinfo.value.code == 0
    assert VERSION in capsys.readouterr().out


def test_missing_command_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == EXIT_USAGE


@pytest.mark.parametrize('market', [
    {'agents': 3, 'objects': ['a1'], 'priorities': {'a1': ['1']}},
    {'agents': ['1'], 'objects': ['a1'], 'priorities': {'a1': 1}},
    ['1', 'a1'],
])
def test_malformed_market_shape_is_a_usage_error(cli, tmp_path, market):
    path = tmp_path / 'market.json'
    path.write_text(json.dumps(market))
    code, out = cli('analyze', 'structure', '--market', path)
    assert code == EXIT_USAGE
    assert 'error' in out


@pytest.mark.parametrize('profile', [{'1': 5}, {'1': ['a1', 7]}, ['a1']])
def test_malformed_profile_shape_is_a_usage_error(cli, fixture_file, tmp_path, profile):
    path = tmp_path / 'profile.json'
    path.write_text(json.dumps(profile))
    code, out = cli('run', 'fpttc', '--market', fixture_file('apda_two_agents.json'), '--profile', path)
    assert code == EXIT_USAGE
    assert 'error' in out


def test_malformed_domain_shape_is_a_usage_error(cli, fixture_file, tmp_path):
    path = tmp_path / 'domain.json'
    path.write_text(json.dumps({'kind': 'explicit', 'prefs': {'1': 'a b @0', '2': [['a', 'b', '@0']]}}))
    code, out = cli('mech', 'search', '--market', fixture_file('apda_two_agents.json'), '--domain', path,
                    '--require', 'osp')
    assert code == EXIT_USAGE
    assert 'error' in out


def test_malformed_mechanism_is_a_usage_error(cli, tmp_path):
    path = tmp_path / 'tree.json'
    path.write_text(json.dumps({'domain': {'kind': 'no-outside'}, 'root': 'v1', 'nodes': 'v1', 'edges': []}))
    code, out = cli('mech', 'verify', '--mechanism', path)
    assert code == EXIT_USAGE
    assert 'error' in out


def test_mech_verify_rejects_mismatched_market(cli, fixture_file):
    code, out = cli('mech', 'verify', '--mechanism', fixture_file('osp_not_sosp_tree.json'),
                    '--market', fixture_file('apda_two_agents.json'))
    assert code == EXIT_USAGE
    assert 'mismatch' in out['error']


def test_mech_verify_tree_without_market_entry(cli, fixture_file, raw_fixture, tmp_path):
    data = raw_fixture('serial_dictatorship_tree.json')
    del data['market']
    path = tmp_path / 'tree.json'
    path.write_text(json.dumps(data))
    code, out = cli('mech', 'verify', '--mechanism', path, '--market', fixture_file('serial_dictatorship_three.json'))
    assert code == EXIT_OK
    assert out['implements'] is True
