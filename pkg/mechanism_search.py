"""
Memoized search for mechanisms implementing a rule
Any implementing mechanism reproduces the rule's values, so each node can be
judged from the rule table alone: a state is a leaf when the rule is
constant on it, otherwise some mover must split its possible preferences
into blocks that pass the local dominance test, and every block must be
solvable in turn.
"""

import logging
import math
import random
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from config import *
from market_model import (Allocation, InvariantError, LimitExceededError, Market, MarketError,
                          PreferenceDomain, PriorityStructure, check_same_market)
from mechanism_tree import (Mechanism, MechanismEdge, MechanismNode, RuleValues, _rule_value,
                            check_osp, check_simple, check_sosp, implements, validate)
from priority_analyzer import wsd_rank_condition
from ttc_engine import run_rule

logger = logging.getLogger(__name__)


class SearchRequirement:
    SIMPLE = 'simple'
    OSP = 'osp'
    SOSP = 'sosp'

    ALL = frozenset((SIMPLE, OSP, SOSP))


@dataclass(frozen=True)
class SearchState:
    """Possible preference indices per agent and agents who already moved"""

    sets: Tuple[FrozenSet[int], ...]
    moved: FrozenSet[int] = frozenset()


@dataclass(frozen=True)
class SearchOutcome:
    mechanism: Optional[Mechanism]
    states_explored: int

    @property
    def found(self):
        return self.mechanism is not None

    def to_json(self):
        if self.mechanism is None:
            return {'result': 'none', 'states_explored': self.states_explored}
        return {'result': 'found', 'states_explored': self.states_explored,
                'mechanism': self.mechanism.to_json()}


def set_partitions(elements: List) -> Iterator[List[List]]:
    """Every partition of a list, blocks ordered by their first element"""
    if not elements:
        yield []
        return
    first, rest = elements[0], elements[1:]
    for partition in set_partitions(rest):
        yield [[first]] + partition
        for k in range(len(partition)):
            yield partition[:k] + [[first] + partition[k]] + partition[k + 1:]


def _components(members: List[int], linked) -> List[List[int]]:
    """Connected components of the 'linked' relation, each sorted"""
    parent = {q: q for q in members}

    def find(q):
        while parent[q] != q:
            parent[q] = parent[parent[q]]
            q = parent[q]
        return q

    for a_pos, a in enumerate(members):
        for b in members[a_pos + 1:]:
            if linked(a, b):
                parent[find(a)] = find(b)
    groups: Dict[int, List[int]] = {}
    for q in members:
        groups.setdefault(find(q), []).append(q)
    return sorted(groups.values(), key=lambda g: g[0])


class MechanismSearch:
    """Existence search over one rule table"""

    def __init__(self, rule: RuleValues, domain: PreferenceDomain, require: Iterable[str],
                 allow_single_edge=False, max_profiles=SEARCH_MAX_PROFILES):
        self.require = frozenset(require)
        unknown = self.require - SearchRequirement.ALL
        if unknown:
            raise MarketError(f"unknown requirements {sorted(unknown)}")
        if domain.size > max_profiles:
            raise LimitExceededError(f"mechanism search is limited to {max_profiles} profiles", domain.size)

        self.domain = domain
        self.market = domain.market
        self.simple = SearchRequirement.SIMPLE in self.require
        self.strong = SearchRequirement.SOSP in self.require
        self.obvious = self.strong or SearchRequirement.OSP in self.require
        self.allow_single_edge = allow_single_edge

        market = self.market
        item_code = {item: c for c, item in enumerate(market.items)}
        sizes = tuple(len(options) for options in domain.preferences)
        self.codes = np.empty(sizes + (market.n,), dtype=np.int16)
        for indices in domain.index_profiles():
            allocation = _rule_value(rule, domain.profile_at(indices))
            self.codes[indices] = [item_code[item] for item in allocation.assignment]
        # positions[k][q, c]: place of item c in agent k's q-th preference
        self.positions = [np.array([[p.position[item] for item in market.items] for p in options])
                          for options in domain.preferences]

        self.memo: Dict[tuple, object] = {}
        self.in_progress = set()
        self.states_explored = 0

    def _key(self, state: SearchState):
        return (state.sets, state.moved if self.simple else None)

    def _sub_table(self, sets):
        return self.codes[np.ix_(*[sorted(s) for s in sets])]

    def _reachable(self, sub, sets, k) -> Dict[int, np.ndarray]:
        """Item codes agent k can get for each own preference, opponents free"""
        rows = np.moveaxis(sub[..., k], k, 0).reshape(len(sets[k]), -1)
        return {q: np.unique(row) for q, row in zip(sorted(sets[k]), rows)}

    def _candidate_partitions(self, sub, sets, k) -> Iterator[List[FrozenSet[int]]]:
        members = sorted(sets[k])
        if len(members) >= 2:
            if not self.obvious:
                yield [frozenset([q]) for q in members]
            else:
                reach = self._reachable(sub, sets, k)
                pos = self.positions[k]

                def beats(q, r):
                    return pos[q, reach[q]].max() <= pos[q, reach[r]].min()

                # Preferences that cannot be told apart at this node share a component
                components = _components(members, lambda a, b: not (beats(a, b) and beats(b, a)))
                if len(components) >= 2:
                    if not self.strong:
                        yield [frozenset(c) for c in components]
                    else:
                        groupings = [g for g in set_partitions(components) if len(g) >= 2]
                        groupings.sort(key=len, reverse=True)
                        for grouping in groupings:
                            blocks = [frozenset(q for c in group for q in c) for group in grouping]
                            if self._strongly_separated(blocks, reach, pos):
                                yield blocks
        if self.allow_single_edge and self.simple:
            yield [sets[k]]

    @staticmethod
    def _strongly_separated(blocks, reach, pos):
        for k, block in enumerate(blocks):
            inside = np.unique(np.concatenate([reach[q] for q in block]))
            outside = np.unique(np.concatenate([reach[q] for h, b in enumerate(blocks) if h != k for q in b]))
            for q in block:
                if pos[q, inside].max() > pos[q, outside].min():
                    return False
        return True

    def solve(self, state: SearchState):
        key = self._key(state)
        if key in self.memo:
            return self.memo[key]
        if key in self.in_progress:
            return None
        self.in_progress.add(key)
        self.states_explored += 1

        sub = self._sub_table(state.sets)
        flat = sub.reshape(-1, self.market.n)
        plan = None
        if (flat == flat[0]).all():
            plan = ('leaf', tuple(int(c) for c in flat[0]))
        else:
            plan = self._split(state, sub)

        self.in_progress.discard(key)
        self.memo[key] = plan
        return plan

    def _split(self, state: SearchState, sub):
        for k in range(self.market.n):
            if self.simple and k in state.moved:
                continue
            for blocks in self._candidate_partitions(sub, state.sets, k):
                children = []
                for block in blocks:
                    child = SearchState(state.sets[:k] + (block,) + state.sets[k + 1:], state.moved | {k})
                    plan = self.solve(child)
                    if plan is None:
                        break
                    children.append((block, plan))
                else:
                    return ('node', k, tuple(children))
        return None

    def run(self) -> SearchOutcome:
        started = time.time()
        root = SearchState(tuple(frozenset(range(len(options))) for options in self.domain.preferences))
        plan = self.solve(root)
        logger.info(f"Search {sorted(self.require)}: {'found' if plan else 'none'} after "
                    f"{self.states_explored:,} states ({time.time() - started:.2f}s)")
        if plan is None:
            return SearchOutcome(None, self.states_explored)
        return SearchOutcome(self.build(plan), self.states_explored)

    def build(self, plan) -> Mechanism:
        """Turn a plan into a Mechanism with preorder node ids"""
        market = self.market
        nodes, edges = [], []
        counters = {'v': 0, 'l': 0}

        def emit(plan):
            if plan[0] == 'leaf':
                counters['l'] += 1
                node_id = f"l{counters['l']}"
                allocation = Allocation(market, tuple(market.items[c] for c in plan[1]))
                nodes.append(MechanismNode(node_id, allocation=allocation))
                return node_id
            _, k, children = plan
            counters['v'] += 1
            node_id = f"v{counters['v']}"
            nodes.append(MechanismNode(node_id, agent=market.agents[k]))
            options = self.domain.preferences[k]
            for block, child in children:
                target = emit(child)
                edges.append(MechanismEdge(node_id, target, frozenset(options[q] for q in block)))
            return node_id

        root = emit(plan)
        return Mechanism(self.domain, nodes, edges, root)


def search_mechanism(rule: RuleValues, domain: PreferenceDomain, require: Iterable[str],
                     allow_single_edge=False, max_profiles=SEARCH_MAX_PROFILES) -> SearchOutcome:
    """
    Decide whether some mechanism with the required properties implements a rule

    Args:
        rule: callable or mapping from profile to allocation, total on the domain
        require: any subset of {'simple', 'osp', 'sosp'}
        allow_single_edge: also try nodes with a single outgoing edge

    Raises:
        LimitExceededError: the domain has more profiles than max_profiles
    """
    search = MechanismSearch(rule, domain, require, allow_single_edge, max_profiles)
    outcome = search.run()
    if outcome.found:
        recheck_mechanism(outcome.mechanism, rule, search.require)
    return outcome


def recheck_mechanism(mechanism, rule, require):
    """Re-run the tree checks on a search result; raises InvariantError on any failure"""
    checks = [validate(mechanism), implements(mechanism, rule)]
    if SearchRequirement.OSP in require:
        checks.append(check_osp(mechanism))
    if SearchRequirement.SOSP in require:
        checks.append(check_sosp(mechanism))
    if SearchRequirement.SIMPLE in require:
        checks.append(check_simple(mechanism))
    failed = [c.property_name for c in checks if not c.holds]
    if failed:
        raise InvariantError(f"search produced a mechanism failing {failed}")


def sosp_implementable_fpttc(structure: PriorityStructure, domain: PreferenceDomain) -> bool:
    check_same_market(structure.market, domain.market)
    return search_mechanism(run_rule(structure, domain), domain, {SearchRequirement.SOSP}).found


def simple_osp_implementable(rule: RuleValues, domain: PreferenceDomain) -> bool:
    return search_mechanism(rule, domain, {SearchRequirement.SIMPLE, SearchRequirement.OSP}).found


def osp_implementable(rule: RuleValues, domain: PreferenceDomain) -> bool:
    return search_mechanism(rule, domain, {SearchRequirement.OSP}).found


@dataclass
class SearchSweepReport:
    n: int
    m: int
    structures_checked: int = 0
    sosp_found: int = 0
    simple_osp_found: int = 0
    counterexamples: List[dict] = field(default_factory=list)

    @property
    def passed(self):
        return not self.counterexamples

    def to_json(self):
        return {
            'n': self.n,
            'm': self.m,
            'structures_checked': self.structures_checked,
            'sosp_found': self.sosp_found,
            'simple_osp_found': self.simple_osp_found,
            'passed': self.passed,
            'counterexamples': self.counterexamples,
        }


def verify_search_theorems(n: int, m: int, sample: Optional[int] = None,
                           seed=SWEEP_SAMPLE_SEED) -> SearchSweepReport:
    """
    Compare search results with the structural characterizations on L^n(A)

    Checks, per structure: SOSP-implementable iff the rank condition holds,
    and simply strategy-proof iff SOSP-implementable.
    """
    if n > THEOREM_MAX_AGENTS or m > THEOREM_MAX_OBJECTS:
        raise LimitExceededError(
            f"search sweep is limited to n <= {THEOREM_MAX_AGENTS}, m <= {THEOREM_MAX_OBJECTS}",
            math.factorial(n) ** m)
    market = Market(tuple(str(k + 1) for k in range(n)), tuple(f"a{k + 1}" for k in range(m)))
    domain = PreferenceDomain.no_outside(market)
    structures = list(PriorityStructure.all_structures(market))
    if sample is not None and sample < len(structures):
        structures = random.Random(seed).sample(structures, sample)

    report = SearchSweepReport(n, m)
    started = time.time()
    for structure in structures:
        table = run_rule(structure, domain)
        sosp = search_mechanism(table, domain, {SearchRequirement.SOSP}).found
        simple_osp = search_mechanism(table, domain, {SearchRequirement.SIMPLE, SearchRequirement.OSP}).found
        rank_condition = wsd_rank_condition(structure)[0]

        report.structures_checked += 1
        report.sosp_found += sosp
        report.simple_osp_found += simple_osp
        facts = {'sosp': sosp, 'simple_osp': simple_osp, 'rank_condition': rank_condition}
        for claim, ok in (('sosp implementable iff rank condition', sosp == rank_condition),
                          ('simply strategy-proof iff sosp implementable', simple_osp == sosp)):
            if not ok:
                logger.error(f"Counterexample to '{claim}': {structure}")
                report.counterexamples.append({'claim': claim, 'priorities': structure.to_json(), 'facts': facts})

    logger.info(f"Search sweep n={n} m={m}: {report.structures_checked} structures "
                f"({time.time() - started:.1f}s)")
    return report
