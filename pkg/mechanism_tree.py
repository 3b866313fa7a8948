"""
Extensive-form mechanisms over a finite preference domain
Representation, validation, execution and the OSP / SOSP / simplicity /
implementation checks
"""

import itertools
import logging
import re
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from config import *
from market_model import (AgentId, Allocation, DomainError, Item, LimitExceededError, MarketError,
                          Preference, PreferenceDomain, PreferenceProfile)

logger = logging.getLogger(__name__)

RuleValues = Union[Callable[[PreferenceProfile], Allocation], Mapping[PreferenceProfile, Allocation]]


class MechanismProperty:
    """Property names used in verdicts"""
    VALID = 'valid'
    OSP = 'osp'
    SOSP = 'sosp'
    SIMPLE = 'simple'
    IMPLEMENTS = 'implements'

    CHECKS = (VALID, OSP, SOSP, SIMPLE)


@dataclass(frozen=True)
class MechanismNode:
    """Internal node with a mover, or leaf with an allocation"""

    node_id: str
    agent: Optional[AgentId] = None
    allocation: Optional[Allocation] = None

    @property
    def is_leaf(self):
        return self.allocation is not None


@dataclass(frozen=True)
class MechanismEdge:
    source: str
    target: str
    label: FrozenSet[Preference]


@dataclass(frozen=True)
class VerificationVerdict:
    property_name: str
    holds: bool
    witness: Optional[dict] = None

    def to_json(self):
        return {'property': self.property_name, 'holds': self.holds, 'witness': self.witness}


def node_sort_key(node_id: str):
    """Natural order: v2 before v10"""
    return [int(part) if part.isdigit() else part for part in re.split(r'(\d+)', node_id)]


class Mechanism:
    """Rooted game tree whose edges carry sets of the mover's preferences"""

    def __init__(self, domain: PreferenceDomain, nodes: Iterable[MechanismNode],
                 edges: Iterable[MechanismEdge], root: str):
        self.domain = domain
        self.market = domain.market
        self.nodes: Dict[str, MechanismNode] = {}
        for node in nodes:
            if node.node_id in self.nodes:
                raise MarketError(f"duplicate node id {node.node_id!r}")
            self.nodes[node.node_id] = node
        self.edges = tuple(edges)
        self.root = root

        self._children: Dict[str, List[MechanismEdge]] = {node_id: [] for node_id in self.nodes}
        self._incoming: Dict[str, List[MechanismEdge]] = {node_id: [] for node_id in self.nodes}
        for edge in self.edges:
            self._children.setdefault(edge.source, []).append(edge)
            self._incoming.setdefault(edge.target, []).append(edge)

        self._validity = None
        self._table = None

    def children(self, node_id: str) -> Tuple[MechanismEdge, ...]:
        return tuple(self._children.get(node_id, ()))

    def node(self, node_id: str) -> MechanismNode:
        return self.nodes[node_id]

    def internal_nodes(self) -> List[str]:
        return sorted((k for k, v in self.nodes.items() if not v.is_leaf), key=node_sort_key)

    def walk(self):
        """
        Depth-first (node_id, consistent sets, movers on path) from the root

        consistent sets[k] holds the preferences of agent k still possible at
        the node: the label of the agent's last edge, or the full domain set.
        """
        start = tuple(frozenset(options) for options in self.domain.preferences)
        stack = [(self.root, start, ())]
        while stack:
            node_id, sets, movers = stack.pop()
            yield node_id, sets, movers
            node = self.nodes[node_id]
            if node.is_leaf:
                continue
            k = self.market.agent_index[node.agent]
            for edge in reversed(self.children(node_id)):
                child_sets = sets[:k] + (edge.label,) + sets[k + 1:]
                stack.append((edge.target, child_sets, movers + (node.agent,)))

    def require_valid(self):
        verdict = validate(self)
        if not verdict.holds:
            raise MarketError(f"invalid mechanism: {verdict.witness['reason']}")

    def outcome_table(self) -> Dict[Tuple[int, ...], Allocation]:
        """f^G over the domain, keyed by per-agent preference indices"""
        if self._table is None:
            self.require_valid()
            index = self.domain._index
            table = {}
            for node_id, sets, _ in self.walk():
                node = self.nodes[node_id]
                if not node.is_leaf:
                    continue
                ranges = [sorted(index[k][p] for p in s) for k, s in enumerate(sets)]
                for combo in itertools.product(*ranges):
                    table[combo] = node.allocation
            self._table = table
        return self._table

    def to_json(self):
        nodes = []
        for node_id in sorted(self.nodes, key=node_sort_key):
            node = self.nodes[node_id]
            if node.is_leaf:
                nodes.append({'id': node_id, 'alloc': node.allocation.to_json()})
            else:
                nodes.append({'id': node_id, 'agent': node.agent})
        edges = []
        for edge in self.edges:
            label = sorted(edge.label, key=lambda p: p.ranking)
            edges.append({'from': edge.source, 'to': edge.target,
                          'label': {'explicit': [list(p.ranking) for p in label]}})
        return {
            'market': self.market.to_json(),
            'domain': self.domain.to_json(),
            'root': self.root,
            'nodes': nodes,
            'edges': edges,
        }


# Label patterns

def _pattern_clause(clause: str) -> Callable[[Preference], bool]:
    key, _, value = clause.partition('=')
    key = key.strip()
    value = value.strip()
    if key == 'top':
        allowed = {item.strip() for item in value.split('|')}
        return lambda p: p.first in allowed
    if key == 'before':
        chain = [item.strip() for item in value.split(',')]
        if len(chain) < 2:
            raise MarketError(f"'before' needs at least two items: {clause!r}")
        return lambda p: all(p.prefers(a, b) for a, b in zip(chain, chain[1:]))
    if key == 'above':
        head, _, rest = value.partition(':')
        others = [item.strip() for item in rest.split(',') if item.strip()]
        if not others:
            raise MarketError(f"'above' needs items after ':' in {clause!r}")
        return lambda p: all(p.prefers(head.strip(), other) for other in others)
    raise MarketError(f"unknown label pattern {clause!r}")


def expand_pattern(pattern: str, candidates: Iterable[Preference]) -> FrozenSet[Preference]:
    """
    Preferences among candidates matching a label pattern

    Clauses are joined with ';' and all must hold:
        top=a1|a2        favorite item is one of those listed
        before=a2,a3,@0  items appear in this relative order
        above=@0:a1,a2   first item ranked above each of the rest
    """
    tests = [_pattern_clause(clause) for clause in pattern.split(';') if clause.strip()]
    if not tests:
        raise MarketError("empty label pattern")
    try:
        return frozenset(p for p in candidates if all(test(p) for test in tests))
    except KeyError as e:
        raise MarketError(f"pattern {pattern!r} names unknown item {e.args[0]!r}") from None


def resolve_labels(domain: PreferenceDomain, nodes: Mapping[str, MechanismNode],
                   raw_edges: Sequence[Tuple[str, str, dict]], root: str) -> List[MechanismEdge]:
    """
    Turn JSON labels into preference sets

    Patterns are intersected with the mover's inherited label; explicit
    labels are taken literally.
    """
    market = domain.market
    by_source: Dict[str, List[int]] = {}
    for k, (source, _, _) in enumerate(raw_edges):
        by_source.setdefault(source, []).append(k)

    resolved: Dict[int, FrozenSet[Preference]] = {}
    full = tuple(frozenset(options) for options in domain.preferences)
    stack = [(root, full)]
    seen = set()
    while stack:
        node_id, sets = stack.pop()
        if node_id in seen or node_id not in nodes:
            continue
        seen.add(node_id)
        node = nodes[node_id]
        if node.is_leaf:
            continue
        market.check_agent(node.agent)
        agent_k = market.agent_index[node.agent]
        for k in by_source.get(node_id, []):
            _, target, label = raw_edges[k]
            resolved[k] = _resolve_label(label, sets[agent_k])
            stack.append((target, sets[:agent_k] + (resolved[k],) + sets[agent_k + 1:]))

    edges = []
    for k, (source, target, label) in enumerate(raw_edges):
        if k not in resolved:
            # Unreachable edge: resolve against the mover's whole domain set
            mover = nodes[source].agent if source in nodes else None
            base = frozenset(domain.options(mover)) if mover in market.agent_index else frozenset()
            resolved[k] = _resolve_label(label, base)
        edges.append(MechanismEdge(source, target, resolved[k]))
    return edges


def _resolve_label(label: dict, inherited: FrozenSet[Preference]) -> FrozenSet[Preference]:
    if 'pattern' in label:
        return expand_pattern(label['pattern'], inherited)
    if 'explicit' in label:
        return frozenset(Preference(tuple(ranking)) for ranking in label['explicit'])
    raise MarketError(f"edge label needs 'explicit' or 'pattern': {label}")


# Validation and execution

def _invalid(node_id, reason):
    return VerificationVerdict(MechanismProperty.VALID, False, {'node': node_id, 'reason': reason})


def validate(m: Mechanism) -> VerificationVerdict:
    """Tree shape, node kinds, label disjointness and label continuity"""
    if m._validity is not None:
        return m._validity
    m._validity = verdict = _validate(m)
    if not verdict.holds:
        logger.debug(f"Invalid mechanism: {verdict.witness}")
    return verdict


def _validate(m: Mechanism) -> VerificationVerdict:
    market = m.market
    if m.root not in m.nodes:
        return _invalid(m.root, "root is not a node")
    for edge in m.edges:
        for end in (edge.source, edge.target):
            if end not in m.nodes:
                return _invalid(end, f"edge {edge.source}->{edge.target} refers to an unknown node")
    if m._incoming[m.root]:
        return _invalid(m.root, "root has an incoming edge")
    for node_id in sorted(m.nodes, key=node_sort_key):
        if len(m._incoming[node_id]) > 1:
            return _invalid(node_id, "node has more than one parent")

    for node_id in sorted(m.nodes, key=node_sort_key):
        node = m.nodes[node_id]
        if node.is_leaf == (node.agent is not None):
            return _invalid(node_id, "node must carry exactly one of agent or allocation")
        if node.is_leaf:
            if node.allocation.market != market:
                return _invalid(node_id, "leaf allocation is over another market")
            if m.children(node_id):
                return _invalid(node_id, "leaf has outgoing edges")
        else:
            if node.agent not in market.agent_index:
                return _invalid(node_id, f"unknown mover {node.agent!r}")
            if not m.children(node_id):
                return _invalid(node_id, "internal node has no outgoing edge")

    reached = set()
    for node_id, sets, _ in m.walk():
        reached.add(node_id)
        node = m.nodes[node_id]
        if node.is_leaf:
            continue
        k = market.agent_index[node.agent]
        admissible = frozenset(m.domain.preferences[k])
        union = set()
        for edge in m.children(node_id):
            if not edge.label:
                return _invalid(node_id, f"edge {edge.source}->{edge.target} has an empty label")
            if not edge.label <= admissible:
                return _invalid(node_id, f"edge {edge.source}->{edge.target} has preferences outside the domain")
            if union & edge.label:
                return _invalid(node_id, f"edge {edge.source}->{edge.target} overlaps a sibling label")
            union |= edge.label
        if union != sets[k]:
            return _invalid(node_id, "outgoing labels do not cover exactly the inherited label")

    if reached != set(m.nodes):
        missing = sorted(set(m.nodes) - reached, key=node_sort_key)
        return _invalid(missing[0], "node is not reachable from the root")
    return VerificationVerdict(MechanismProperty.VALID, True)


def run_mechanism(m: Mechanism, profile: PreferenceProfile) -> Allocation:
    """Follow the edges selected by the profile down to a leaf"""
    if profile.market != m.market:
        raise MarketError("profile is over another market")
    node = m.nodes[m.root]
    while not node.is_leaf:
        pref = profile[node.agent]
        for edge in m.children(node.node_id):
            if pref in edge.label:
                node = m.nodes[edge.target]
                break
        else:
            raise DomainError(f"preference {pref} of agent {node.agent} matches no edge at {node.node_id}")
    return node.allocation


def _rule_value(rule: RuleValues, profile: PreferenceProfile) -> Allocation:
    if callable(rule):
        return rule(profile)
    return rule[profile]


def implements(m: Mechanism, rule: RuleValues) -> VerificationVerdict:
    """f^G equals the rule at every profile of the domain"""
    table = m.outcome_table()
    for indices in m.domain.index_profiles():
        profile = m.domain.profile_at(indices)
        expected = _rule_value(rule, profile)
        if table[indices] != expected:
            return VerificationVerdict(MechanismProperty.IMPLEMENTS, False, {
                'profile': profile.to_json(),
                'mechanism': table[indices].to_json(),
                'rule': expected.to_json(),
            })
    return VerificationVerdict(MechanismProperty.IMPLEMENTS, True)


def check_simple(m: Mechanism) -> VerificationVerdict:
    """No agent moves twice along any root-to-leaf path"""
    m.require_valid()
    for node_id, _, movers in m.walk():
        node = m.nodes[node_id]
        if not node.is_leaf and node.agent in movers:
            return VerificationVerdict(MechanismProperty.SIMPLE, False, {'node': node_id, 'agent': node.agent})
    return VerificationVerdict(MechanismProperty.SIMPLE, True)


# Dominance checks

def outcome_sets(table: Mapping[Tuple[int, ...], Allocation], sets: Sequence[Iterable[int]],
                 k: int) -> Dict[int, FrozenSet[Item]]:
    """
    Items agent k can end up with, per own preference index

    Opponents range over their sets; table maps index tuples to allocations.
    """
    opponents = [sorted(s) for s in sets]
    result = {}
    for own in sorted(sets[k]):
        opponents[k] = [own]
        result[own] = frozenset(table[combo].assignment[k] for combo in itertools.product(*opponents))
    return result


def _node_context(m: Mechanism):
    """Internal nodes in id order with their consistent index sets"""
    index = m.domain._index
    contexts = {}
    for node_id, sets, _ in m.walk():
        node = m.nodes[node_id]
        if node.is_leaf:
            continue
        index_sets = [frozenset(index[k][p] for p in s) for k, s in enumerate(sets)]
        contexts[node_id] = index_sets
    return [(node_id, contexts[node_id]) for node_id in sorted(contexts, key=node_sort_key)]


def _edge_blocks(m: Mechanism, node_id: str, k: int):
    index = m.domain._index[k]
    return [(edge, frozenset(index[p] for p in edge.label)) for edge in m.children(node_id)]


def _dominance_check(m: Mechanism, strong: bool) -> VerificationVerdict:
    name = MechanismProperty.SOSP if strong else MechanismProperty.OSP
    table = m.outcome_table()
    for node_id, sets in _node_context(m):
        agent = m.nodes[node_id].agent
        k = m.market.agent_index[agent]
        options = m.domain.preferences[k]
        reachable = outcome_sets(table, sets, k)
        for edge, block in _edge_blocks(m, node_id, k):
            elsewhere = frozenset().union(*(reachable[q] for q in sets[k] if q not in block))
            if not elsewhere:
                continue
            via_edge = frozenset().union(*(reachable[q] for q in block)) if strong else None
            for own in sorted(block):
                pref = options[own]
                worst = pref.worst(via_edge if strong else reachable[own])
                best = pref.top(elsewhere)
                if pref.prefers(best, worst):
                    deviation = next(options[q] for q in sorted(sets[k])
                                     if q not in block and best in reachable[q])
                    return VerificationVerdict(name, False, {
                        'node': node_id,
                        'agent': agent,
                        'edge': [edge.source, edge.target],
                        'preference': str(pref),
                        'worst': worst,
                        'best': best,
                        'deviation': str(deviation),
                    })
    return VerificationVerdict(name, True)


def check_osp(m: Mechanism) -> VerificationVerdict:
    """
    Obvious strategy-proofness in grouped form

    For each edge and each preference on it, the worst outcome with that
    preference held fixed beats the best outcome through any other edge.
    """
    return _dominance_check(m, strong=False)


def check_sosp(m: Mechanism) -> VerificationVerdict:
    """Strong form: the worst outcome ranges over every preference on the edge"""
    return _dominance_check(m, strong=True)


def _naive_guard(m: Mechanism):
    if m.domain.size > NAIVE_CHECK_MAX_PROFILES:
        raise LimitExceededError(
            f"pairwise checks are limited to {NAIVE_CHECK_MAX_PROFILES} profiles", m.domain.size)


def _naive_nodes(m: Mechanism):
    table = m.outcome_table()
    for node_id, sets in _node_context(m):
        k = m.market.agent_index[m.nodes[node_id].agent]
        edge_of = {}
        for position, (_, block) in enumerate(_edge_blocks(m, node_id, k)):
            for q in block:
                edge_of[q] = position
        profiles = list(itertools.product(*(sorted(s) for s in sets)))
        yield node_id, k, edge_of, profiles, table


def check_osp_naive(m: Mechanism) -> VerificationVerdict:
    """Pairwise definition of OSP over all profiles through each node"""
    _naive_guard(m)
    for node_id, k, edge_of, profiles, table in _naive_nodes(m):
        for truth in profiles:
            pref = m.domain.preferences[k][truth[k]]
            for lie in profiles:
                if edge_of[lie[k]] == edge_of[truth[k]]:
                    continue
                mine, other = table[truth].assignment[k], table[lie].assignment[k]
                if not pref.weakly_prefers(mine, other):
                    return VerificationVerdict(MechanismProperty.OSP, False, {
                        'node': node_id, 'preference': str(pref), 'worst': mine, 'best': other})
    return VerificationVerdict(MechanismProperty.OSP, True)


def check_sosp_naive(m: Mechanism) -> VerificationVerdict:
    """Triple-profile definition of SOSP over all profiles through each node"""
    _naive_guard(m)
    for node_id, k, edge_of, profiles, table in _naive_nodes(m):
        for truth in profiles:
            pref = m.domain.preferences[k][truth[k]]
            for same in profiles:
                if edge_of[same[k]] != edge_of[truth[k]]:
                    continue
                mine = table[same].assignment[k]
                for lie in profiles:
                    if edge_of[lie[k]] == edge_of[truth[k]]:
                        continue
                    other = table[lie].assignment[k]
                    if not pref.weakly_prefers(mine, other):
                        return VerificationVerdict(MechanismProperty.SOSP, False, {
                            'node': node_id, 'preference': str(pref), 'worst': mine, 'best': other})
    return VerificationVerdict(MechanismProperty.SOSP, True)


def verify(m: Mechanism, props: Iterable[str]) -> Dict[str, VerificationVerdict]:
    """Run the named checks; an invalid tree fails every other check"""
    validity = validate(m)
    checks = {
        MechanismProperty.VALID: lambda: validity,
        MechanismProperty.OSP: lambda: check_osp(m),
        MechanismProperty.SOSP: lambda: check_sosp(m),
        MechanismProperty.SIMPLE: lambda: check_simple(m),
    }
    verdicts = {}
    for prop in props:
        if prop not in checks:
            raise MarketError(f"unknown mechanism property {prop!r}")
        if prop != MechanismProperty.VALID and not validity.holds:
            verdicts[prop] = VerificationVerdict(prop, False, validity.witness)
        else:
            verdicts[prop] = checks[prop]()
    return verdicts
