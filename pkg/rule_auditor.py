"""
Behavioral audits of priority rules over a preference domain
Dual ownership, weak serial dictatorship, rule equality and the
structure-level theorem sweep
"""

import itertools
import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Mapping, Optional

from config import *
from market_model import (DomainError, InvariantError, LimitExceededError, Market, PreferenceDomain,
                          PreferenceProfile, PriorityStructure, check_same_market)
from apda_engine import apda_allocation
from priority_analyzer import (find_ergin_cycle, find_priority_cycle, find_weak_cycle,
                               is_dual_dictatorship, is_serial_dictatorship, wsd_rank_condition)
from ttc_engine import Rule, _find_cycles, effective_jobs, fpttc_allocation, run_fpttc

logger = logging.getLogger(__name__)


class AuditCheck:
    """Names of the behavioral checks"""
    DUAL_OWNERSHIP = 'dual-ownership'
    WSD = 'wsd'
    APDA_EQUIVALENCE = 'apda-equivalence'
    RULES_EQUAL = 'rules-equal'


class AuditMethod:
    """How a behavioral audit visits the domain"""
    ENUMERATE = 'enumerate'
    REACHABLE = 'reachable'
    AUTO = 'auto'


def pick_method(method: str, domain: PreferenceDomain) -> str:
    """Resolve 'auto': enumerate small or explicit domains, walk step states otherwise"""
    if method != AuditMethod.AUTO:
        return method
    if domain.kind == DOMAIN_KINDS['EXPLICIT'] or domain.size <= AUDIT_ENUMERATION_LIMIT:
        return AuditMethod.ENUMERATE
    return AuditMethod.REACHABLE


@dataclass(frozen=True)
class AuditWitness:
    """Offending profile, the step where it shows (if any) and details"""

    profile: PreferenceProfile
    step_index: Optional[int]
    detail: Mapping

    def to_json(self):
        return {'profile': self.profile.to_json(), 'step': self.step_index, 'detail': dict(self.detail)}


@dataclass(frozen=True)
class AuditReport:
    property_name: str
    holds: bool
    witness: Optional[AuditWitness]
    profiles_checked: int

    def __post_init__(self):
        if self.holds != (self.witness is None):
            raise InvariantError("an audit fails exactly when it carries a witness")

    def to_json(self):
        return {
            'property': self.property_name,
            'holds': self.holds,
            'profiles_checked': self.profiles_checked,
            'witness': None if self.witness is None else self.witness.to_json(),
        }


# Per-profile checks; module level so worker processes can import them

def _ownership_json(step):
    return {agent: sorted(objs, key=step.remaining_objects.index) for agent, objs in step.ownership.items()}


def dual_ownership_violation(structure, profile):
    for step in run_fpttc(structure, profile).steps:
        if len(step.ownership) > 2:
            return step.index, {'ownership': _ownership_json(step)}
    return None


def wsd_violation(structure, profile):
    for step in run_fpttc(structure, profile).steps:
        if len(step.remaining_objects) > 2 and len(step.ownership) != 1:
            return step.index, {'ownership': _ownership_json(step)}
    return None


def apda_equivalence_violation(structure, profile):
    ttc = fpttc_allocation(structure, profile)
    apda = apda_allocation(structure, profile)
    if ttc != apda:
        return None, {'fpttc': ttc.to_json(), 'apda': apda.to_json()}
    return None


def _scan_chunk(args):
    profile_check, structure, domain, chunk = args
    for offset, indices in enumerate(chunk):
        found = profile_check(structure, domain.profile_at(indices))
        if found is not None:
            return offset, indices, found
    return None


def scan_domain(name: str, profile_check, structure: PriorityStructure, domain: PreferenceDomain, jobs=1) -> AuditReport:
    """
    Run a per-profile check at every profile until it reports a violation

    Args:
        profile_check: module-level function (structure, profile) -> None or (step, detail)
        jobs: worker processes; the first violation in enumeration order wins
    """
    check_same_market(structure.market, domain.market)
    jobs = effective_jobs(jobs)
    started = time.time()

    if jobs == 1 or domain.size <= PARALLEL_CHUNK_SIZE:
        checked = 0
        for profile in domain.profiles():
            checked += 1
            found = profile_check(structure, profile)
            if found is not None:
                step, detail = found
                return AuditReport(name, False, AuditWitness(profile, step, detail), checked)
            if checked % PROGRESS_INTERVAL == 0:
                logger.debug(f"{name}: {checked:,}/{domain.size:,} profiles")
        logger.info(f"{name} holds on {checked:,} profiles ({time.time() - started:.1f}s)")
        return AuditReport(name, True, None, checked)

    indices = domain.index_profiles()
    tasks = []
    while True:
        chunk = list(itertools.islice(indices, PARALLEL_CHUNK_SIZE))
        if not chunk:
            break
        tasks.append((profile_check, structure, domain, chunk))

    checked = 0
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for (_, _, _, chunk), result in zip(tasks, pool.map(_scan_chunk, tasks)):
            if result is not None:
                offset, profile_indices, (step, detail) = result
                witness = AuditWitness(domain.profile_at(profile_indices), step, detail)
                return AuditReport(name, False, witness, checked + offset + 1)
            checked += len(chunk)
    logger.info(f"{name} holds on {checked:,} profiles ({time.time() - started:.1f}s, {jobs} workers)")
    return AuditReport(name, True, None, checked)


def _too_many_owners(objects, ownership):
    return len(ownership) > 2


def _not_single_owner(objects, ownership):
    return len(objects) > 2 and len(ownership) != 1


def _relevant(prefix, objects):
    return tuple(x for x in prefix if x == OUTSIDE_OPTION or x in objects)


def reachable_scan(name: str, violates, profile_check, structure: PriorityStructure, domain: PreferenceDomain) -> AuditReport:
    """
    Exact audit over step states instead of profiles, for full domains

    Each agent carries the prefix of its ranking revealed so far. At a step
    its choice is the first revealed item still available; when none is,
    the search branches over the unrevealed available items. Objects that
    are gone never matter again, so states with equal remaining sets and
    equal relevant prefixes are explored once. A violation is completed to
    a full profile and re-checked with the per-profile check.
    """
    if domain.kind == DOMAIN_KINDS['EXPLICIT']:
        raise DomainError("step-state audits need a no-outside or with-outside domain")
    check_same_market(structure.market, domain.market)
    market = structure.market
    outside_last = domain.kind == DOMAIN_KINDS['NO_OUTSIDE']
    item_order = sorted(market.items)
    visited = set()
    classes = 0

    def explore(agents, objects, prefixes, step):
        nonlocal classes
        if not agents or not objects:
            classes += 1
            return None
        key = (agents, objects, tuple(_relevant(prefixes[a], objects) for a in agents))
        if key in visited:
            return None
        visited.add(key)

        ownership = structure.owners(agents, objects)
        if violates(objects, ownership):
            classes += 1
            return prefixes, step

        owner_of = {obj: agent for agent, objs in ownership.items() for obj in objs}
        options = []
        for agent in agents:
            revealed = _relevant(prefixes[agent], objects)
            if revealed:
                options.append([(revealed[0], prefixes[agent])])
                continue
            fresh = [x for x in item_order
                     if (x in owner_of or (x == OUTSIDE_OPTION and not outside_last))
                     and x not in prefixes[agent]]
            options.append([(x, prefixes[agent] + (x,)) for x in fresh])

        for combo in itertools.product(*options):
            pointers = {}
            for agent, (choice, _) in zip(agents, combo):
                pointers[agent] = agent if choice == OUTSIDE_OPTION else owner_of[choice]
            in_cycle = {a for cycle in _find_cycles(pointers) for a in cycle}
            taken = {choice for agent, (choice, _) in zip(agents, combo) if agent in in_cycle}
            next_prefixes = dict(prefixes)
            next_prefixes.update((agent, prefix) for agent, (_, prefix) in zip(agents, combo))
            found = explore(tuple(a for a in agents if a not in in_cycle),
                            tuple(o for o in objects if o not in taken), next_prefixes, step + 1)
            if found is not None:
                return found
        return None

    found = explore(market.agents, market.objects, {a: () for a in market.agents}, 1)
    if found is None:
        logger.info(f"{name} holds over {len(visited):,} step states")
        return AuditReport(name, True, None, classes)

    prefixes, _ = found
    rankings = {}
    for agent in market.agents:
        rest = [x for x in market.items if x not in prefixes[agent]]
        rankings[agent] = prefixes[agent] + tuple(rest)
    profile = PreferenceProfile.from_mapping(market, rankings)
    confirmed = profile_check(structure, profile)
    if confirmed is None:
        raise InvariantError(f"step-state witness {profile} does not reproduce {name}")
    step, detail = confirmed
    return AuditReport(name, False, AuditWitness(profile, step, detail), classes)


def check_dual_ownership_at(structure: PriorityStructure, profile: PreferenceProfile) -> AuditReport:
    """Dual ownership along the steps of a single profile"""
    check_same_market(structure.market, profile.market)
    found = dual_ownership_violation(structure, profile)
    if found is None:
        return AuditReport(AuditCheck.DUAL_OWNERSHIP, True, None, 1)
    step, detail = found
    return AuditReport(AuditCheck.DUAL_OWNERSHIP, False, AuditWitness(profile, step, detail), 1)


def _audit(name, profile_check, violates, structure, domain, jobs, method):
    if method == AuditMethod.ENUMERATE:
        return scan_domain(name, profile_check, structure, domain, jobs)
    if method == AuditMethod.REACHABLE:
        return reachable_scan(name, violates, profile_check, structure, domain)
    raise ValueError(f"unknown audit method {method!r}")


def check_dual_ownership(structure: PriorityStructure, domain: PreferenceDomain, jobs=1,
                         method=None) -> AuditReport:
    """At most two owners at every step of every profile"""
    method = method or AuditMethod.ENUMERATE
    return _audit(AuditCheck.DUAL_OWNERSHIP, dual_ownership_violation, _too_many_owners,
                  structure, domain, jobs, method)


def check_weak_serial_dictatorship(structure: PriorityStructure, domain: PreferenceDomain, jobs=1,
                                   method=None) -> AuditReport:
    """A single owner whenever more than two objects remain"""
    if not domain.forces_outside_last():
        raise DomainError("weak serial dictatorship is defined on domains without outside options")
    method = method or AuditMethod.ENUMERATE
    return _audit(AuditCheck.WSD, wsd_violation, _not_single_owner, structure, domain, jobs, method)


def check_apda_equivalence(structure: PriorityStructure, domain: PreferenceDomain, jobs=1) -> AuditReport:
    return scan_domain(AuditCheck.APDA_EQUIVALENCE, apda_equivalence_violation, structure, domain, jobs)


def rules_equal(rule1: Rule, rule2: Rule, domain: PreferenceDomain) -> AuditReport:
    """Pointwise equality of two rules, first disagreement as witness"""
    checked = 0
    for profile in domain.profiles():
        checked += 1
        first, second = rule1(profile), rule2(profile)
        if first != second:
            detail = {'first': first.to_json(), 'second': second.to_json()}
            return AuditReport(AuditCheck.RULES_EQUAL, False, AuditWitness(profile, None, detail), checked)
    return AuditReport(AuditCheck.RULES_EQUAL, True, None, checked)


@dataclass
class TheoremReport:
    """Outcome of the exhaustive structure sweep"""

    n: int
    m: int
    structures_checked: int = 0
    tallies: Counter = field(default_factory=Counter)
    counterexamples: List[dict] = field(default_factory=list)

    @property
    def passed(self):
        return not self.counterexamples

    def to_json(self):
        return {
            'n': self.n,
            'm': self.m,
            'structures_checked': self.structures_checked,
            'passed': self.passed,
            'tallies': dict(sorted(self.tallies.items())),
            'counterexamples': self.counterexamples,
        }


def theorem_sweep_estimate(n: int, m: int) -> int:
    """FPTTC runs needed by the sweep, dominated by the with-outside domain"""
    structures = math.factorial(n) ** m
    return structures * (math.factorial(m + 1) ** n + 2 * math.factorial(m) ** n)


def _small_market(n, m):
    return Market(tuple(str(k + 1) for k in range(n)), tuple(f"a{k + 1}" for k in range(m)))


def verify_structure_theorems(n: int, m: int, include_apda=True, jobs=1) -> TheoremReport:
    """
    Check every structural characterization against behavior for all (n!)^m structures

    Raises:
        LimitExceededError: n or m above the configured limits
    """
    if n < 1 or m < 1:
        raise ValueError("need at least one agent and one object")
    if n > THEOREM_MAX_AGENTS or m > THEOREM_MAX_OBJECTS:
        raise LimitExceededError(
            f"theorem sweep is limited to n <= {THEOREM_MAX_AGENTS}, m <= {THEOREM_MAX_OBJECTS}",
            theorem_sweep_estimate(n, m))

    market = _small_market(n, m)
    restricted = PreferenceDomain.no_outside(market)
    unrestricted = PreferenceDomain.with_outside(market)
    report = TheoremReport(n, m)
    started = time.time()

    for structure in PriorityStructure.all_structures(market):
        facts = {
            'acyclic': find_priority_cycle(structure) is None,
            'strongly_acyclic': find_weak_cycle(structure) is None,
            'ergin_acyclic': find_ergin_cycle(structure) is None,
            'dual_dictatorship': is_dual_dictatorship(structure)[0],
            'rank_condition': wsd_rank_condition(structure)[0],
            'serial_dictatorship': is_serial_dictatorship(structure),
            'dual_ownership_no_outside': check_dual_ownership(structure, restricted, jobs).holds,
            'dual_ownership_with_outside': check_dual_ownership(structure, unrestricted, jobs).holds,
            'wsd_behavioral': check_weak_serial_dictatorship(structure, restricted, jobs).holds,
        }
        claims = {
            'dual ownership without outside option iff acyclic':
                facts['dual_ownership_no_outside'] == facts['acyclic'],
            'dual ownership with outside option iff strongly acyclic':
                facts['dual_ownership_with_outside'] == facts['strongly_acyclic'],
            'strongly acyclic iff dual dictatorship':
                facts['strongly_acyclic'] == facts['dual_dictatorship'],
            'weak serial dictatorship iff rank condition':
                facts['wsd_behavioral'] == facts['rank_condition'],
            'ergin acyclic implies strongly acyclic':
                facts['strongly_acyclic'] or not facts['ergin_acyclic'],
            'strongly acyclic implies acyclic':
                facts['acyclic'] or not facts['strongly_acyclic'],
            'dual ownership with outside option implies without':
                facts['dual_ownership_no_outside'] or not facts['dual_ownership_with_outside'],
        }
        if m > n:
            claims['weak serial dictatorship iff serial dictatorship'] = \
                facts['wsd_behavioral'] == facts['serial_dictatorship']
        if include_apda:
            facts['apda_equals_fpttc'] = check_apda_equivalence(structure, unrestricted, jobs).holds
            claims['apda equals fpttc with outside option iff ergin acyclic'] = \
                facts['apda_equals_fpttc'] == facts['ergin_acyclic']

        report.structures_checked += 1
        report.tallies.update(name for name, value in facts.items() if value)
        for claim, ok in claims.items():
            if not ok:
                logger.error(f"Counterexample to '{claim}': {structure}")
                report.counterexamples.append({'claim': claim, 'priorities': structure.to_json(), 'facts': facts})
        logger.debug(f"Structure {report.structures_checked}: {structure}")

    logger.info(f"Theorem sweep n={n} m={m}: {report.structures_checked} structures, "
                f"{len(report.counterexamples)} counterexamples ({time.time() - started:.1f}s)")
    return report
