"""
Command-line front end for the priority-rules toolkit
Runs rules, analyzes priority structures, audits rules and verifies or
searches mechanisms; every command prints JSON
"""

import argparse
import json
import logging
import sys

from config import *
from market_model import DomainError, LimitExceededError, MarketError
from market_io import domain_from_argument, load_mechanism, load_profile, load_structure, read_json
from apda_engine import apda_rule, run_apda
from mechanism_search import SearchRequirement, search_mechanism, verify_search_theorems
from mechanism_tree import MechanismProperty, implements, run_mechanism, verify
from priority_analyzer import analyze_structure
from rule_auditor import (AuditCheck, AuditMethod, check_apda_equivalence, check_dual_ownership,
                          check_weak_serial_dictatorship, pick_method, verify_structure_theorems)
from ttc_engine import effective_jobs, fpttc_rule, run_fpttc, run_rule

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILS = 1
EXIT_USAGE = 2

INPUT_ERRORS = (OSError, json.JSONDecodeError, MarketError, DomainError, LimitExceededError, ValueError,
                TypeError, KeyError)


def _split_list(value):
    return [part.strip() for part in value.split(',') if part.strip()]


class CommandRunner:
    """Executes one parsed command and returns (payload, exit code)"""

    def __init__(self, args):
        self.args = args
        self.jobs = effective_jobs(args.jobs)

    def dispatch(self):
        handler = getattr(self, 'cmd_' + self.args.handler)
        return handler()

    def _rule(self, structure, kind):
        return apda_rule(structure) if kind == 'apda' else fpttc_rule(structure)

    def cmd_run(self):
        structure = load_structure(read_json(self.args.market))
        profile = load_profile(structure.market, read_json(self.args.profile))
        if self.args.kind == 'fpttc':
            trace = run_fpttc(structure, profile)
            allocation, steps = trace.allocation, trace.to_json()
        else:
            allocation, rounds = run_apda(structure, profile)
            steps = [record.to_json() for record in rounds]
        if self.args.trace:
            return {'allocation': allocation.to_json(), 'trace': steps}, EXIT_OK
        return allocation.to_json(), EXIT_OK

    def cmd_analyze(self):
        structure = load_structure(read_json(self.args.market))
        return analyze_structure(structure), EXIT_OK

    def cmd_audit_rule(self):
        structure = load_structure(read_json(self.args.market))
        domain = domain_from_argument(structure.market, self.args.domain)
        check = self.args.check
        if check == AuditCheck.APDA_EQUIVALENCE:
            report = check_apda_equivalence(structure, domain, self.jobs)
        else:
            method = pick_method(self.args.method, domain)
            audit = check_dual_ownership if check == AuditCheck.DUAL_OWNERSHIP else check_weak_serial_dictatorship
            report = audit(structure, domain, self.jobs, method=method)
        return report.to_json(), EXIT_OK if report.holds else EXIT_FAILS

    def cmd_audit_theorems(self):
        report = verify_structure_theorems(self.args.n, self.args.m, include_apda=not self.args.no_apda, jobs=self.jobs)
        return report.to_json(), EXIT_OK if report.passed else EXIT_FAILS

    def cmd_mech_verify(self):
        structure = load_structure(read_json(self.args.market)) if self.args.market else None
        mechanism = load_mechanism(read_json(self.args.mechanism), structure.market if structure else None)
        props = _split_list(self.args.props)
        verdicts = {name: verdict.to_json() for name, verdict in verify(mechanism, props).items()}
        if structure is not None:
            verdicts[MechanismProperty.IMPLEMENTS] = implements(
                mechanism, self._rule(structure, self.args.rule)).to_json()
        payload = {name: verdict['holds'] for name, verdict in verdicts.items()}
        payload['witnesses'] = {name: v['witness'] for name, v in verdicts.items() if v['witness']}
        ok = all(v['holds'] for v in verdicts.values())
        return payload, EXIT_OK if ok else EXIT_FAILS

    def cmd_mech_run(self):
        mechanism = load_mechanism(read_json(self.args.mechanism))
        profile = load_profile(mechanism.market, read_json(self.args.profile))
        return run_mechanism(mechanism, profile).to_json(), EXIT_OK

    def cmd_mech_search(self):
        structure = load_structure(read_json(self.args.market))
        domain = domain_from_argument(structure.market, self.args.domain)
        require = _split_list(self.args.require)
        if self.args.rule == 'apda':
            rule = self._rule(structure, 'apda')
        else:
            rule = run_rule(structure, domain, self.jobs)
        outcome = search_mechanism(rule, domain, require, allow_single_edge=self.args.allow_single_edge)
        return outcome.to_json(), EXIT_OK if outcome.found else EXIT_FAILS

    def cmd_mech_sweep(self):
        report = verify_search_theorems(self.args.n, self.args.m, sample=self.args.sample, seed=self.args.seed)
        return report.to_json(), EXIT_OK if report.passed else EXIT_FAILS


def build_parser():
    parser = argparse.ArgumentParser(
        prog='priority-rules',
        description='Priority-based assignment rules, priority structure analysis and mechanism verification')
    parser.add_argument('--version', action='version', version=f'%(prog)s {VERSION}')
    parser.add_argument('--jobs', type=int, default=DEFAULT_JOBS,
                        help=f'worker processes for profile enumeration (default from {JOBS_ENV_VAR})')
    parser.add_argument('--verbose', action='store_true', help='debug logging on stderr')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='run a rule at one profile')
    run.add_argument('kind', choices=['fpttc', 'apda'])
    run.add_argument('--market', required=True)
    run.add_argument('--profile', required=True)
    run.add_argument('--trace', action='store_true')
    run.set_defaults(handler='run')

    analyze = commands.add_parser('analyze', help='structural analysis')
    analyze.add_argument('target', choices=['structure'])
    analyze.add_argument('--market', required=True)
    analyze.set_defaults(handler='analyze')

    audit = commands.add_parser('audit', help='behavioral audits')
    audit_commands = audit.add_subparsers(dest='audit_command', required=True)
    audit_rule = audit_commands.add_parser('rule')
    audit_rule.add_argument('--market', required=True)
    audit_rule.add_argument('--check', required=True,
                            choices=[AuditCheck.DUAL_OWNERSHIP, AuditCheck.WSD, AuditCheck.APDA_EQUIVALENCE])
    audit_rule.add_argument('--domain', default=DEFAULT_DOMAIN_KIND,
                            help="'no-outside', 'with-outside' or a domain file")
    audit_rule.add_argument('--method', default=AuditMethod.AUTO,
                            choices=[AuditMethod.AUTO, AuditMethod.ENUMERATE, AuditMethod.REACHABLE])
    audit_rule.set_defaults(handler='audit_rule')
    theorems = audit_commands.add_parser('theorems')
    theorems.add_argument('--n', type=int, default=THEOREM_MAX_AGENTS)
    theorems.add_argument('--m', type=int, default=THEOREM_MAX_OBJECTS)
    theorems.add_argument('--no-apda', action='store_true', help='skip the APDA equivalence check')
    theorems.set_defaults(handler='audit_theorems')

    mech = commands.add_parser('mech', help='mechanism trees')
    mech_commands = mech.add_subparsers(dest='mech_command', required=True)
    mech_verify = mech_commands.add_parser('verify')
    mech_verify.add_argument('--mechanism', required=True)
    mech_verify.add_argument('--props', default=','.join(MechanismProperty.CHECKS))
    mech_verify.add_argument('--market', help='priorities of the rule to compare against')
    mech_verify.add_argument('--rule', choices=['fpttc', 'apda'], default='fpttc')
    mech_verify.set_defaults(handler='mech_verify')
    mech_run = mech_commands.add_parser('run')
    mech_run.add_argument('--mechanism', required=True)
    mech_run.add_argument('--profile', required=True)
    mech_run.set_defaults(handler='mech_run')
    mech_search = mech_commands.add_parser('search')
    mech_search.add_argument('--market', required=True)
    mech_search.add_argument('--domain', default=DEFAULT_DOMAIN_KIND)
    mech_search.add_argument('--require', default=SearchRequirement.OSP,
                             help='comma-separated subset of simple,osp,sosp')
    mech_search.add_argument('--rule', choices=['fpttc', 'apda'], default='fpttc')
    mech_search.add_argument('--allow-single-edge', action='store_true')
    mech_search.set_defaults(handler='mech_search')
    sweep = mech_commands.add_parser('sweep')
    sweep.add_argument('--n', type=int, default=THEOREM_MAX_AGENTS)
    sweep.add_argument('--m', type=int, default=THEOREM_MAX_OBJECTS)
    sweep.add_argument('--sample', type=int, help='check a random sample of structures')
    sweep.add_argument('--seed', type=int, default=SWEEP_SAMPLE_SEED)
    sweep.set_defaults(handler='mech_sweep')
    return parser


def main(argv=None):
    """Parse arguments, run one command and print its JSON result"""
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if (args.verbose or DEBUG_MODE) else LOG_LEVEL
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')

    try:
        payload, code = CommandRunner(args).dispatch()
    except INPUT_ERRORS as e:
        logger.debug("Command failed", exc_info=True)
        payload, code = {'error': str(e)}, EXIT_USAGE

    print(json.dumps(payload, indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
