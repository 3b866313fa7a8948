"""
Structural analysis of priority structures
Weak, priority and Ergin cycles, dual dictatorship, the rank condition for
weak serial dictatorship and serial dictatorship detection
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from config import *
from market_model import AgentId, LimitExceededError, ObjectId, PriorityStructure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeakCycleWitness:
    """i1 tops a1, i2 tops a2 and i3 tops a3 within the triple"""

    agents: Tuple[AgentId, AgentId, AgentId]
    objects: Tuple[ObjectId, ObjectId, ObjectId]

    def holds_in(self, structure: PriorityStructure) -> bool:
        if len(set(self.agents)) != 3 or len(set(self.objects)) != 3:
            return False
        for k, (agent, obj) in enumerate(zip(self.agents, self.objects)):
            order = structure.order(obj)
            others = [a for h, a in enumerate(self.agents) if h != k]
            if not all(order.prefers(agent, other) for other in others):
                return False
        return True

    def to_json(self):
        return {'agents': list(self.agents), 'objects': list(self.objects)}


@dataclass(frozen=True)
class PriorityCycleWitness:
    """A weak cycle plus supporting (agent, object) pairs"""

    cycle: WeakCycleWitness
    support: Tuple[Tuple[AgentId, ObjectId], ...]

    @property
    def support_agents(self):
        return frozenset(agent for agent, _ in self.support)

    def holds_in(self, structure: PriorityStructure) -> bool:
        if not self.cycle.holds_in(structure):
            return False
        agents = list(self.cycle.agents) + [a for a, _ in self.support]
        objects = list(self.cycle.objects) + [o for _, o in self.support]
        if len(set(agents)) != len(agents) or len(set(objects)) != len(objects):
            return False
        support = self.support_agents
        return all(structure.order(obj).upper_contour(agent) <= support
                   for agent, obj in zip(agents, objects))

    def to_json(self):
        return {**self.cycle.to_json(), 'support': [list(pair) for pair in self.support]}


@dataclass(frozen=True)
class ErginCycleWitness:
    """i1 > i2 > i3 at a1 and i3 > i1 at a2"""

    agents: Tuple[AgentId, AgentId, AgentId]
    objects: Tuple[ObjectId, ObjectId]

    def holds_in(self, structure: PriorityStructure) -> bool:
        if len(set(self.agents)) != 3 or len(set(self.objects)) != 2:
            return False
        i1, i2, i3 = self.agents
        first, second = (structure.order(o) for o in self.objects)
        return first.prefers(i1, i2) and first.prefers(i2, i3) and second.prefers(i3, i1)

    def to_json(self):
        return {'agents': list(self.agents), 'objects': list(self.objects)}


def iter_weak_cycles(structure: PriorityStructure) -> Iterator[WeakCycleWitness]:
    """Weak cycles in lexicographic order of (agents, objects)"""
    market = structure.market
    ranks = structure.rank_matrix
    for triple in itertools.permutations(range(market.n), 3):
        columns = ranks[:, triple]
        # tops[h] marks objects where triple[h] beats the other two
        tops = [np.flatnonzero(columns[:, h] == columns.min(axis=1)) for h in range(3)]
        if any(len(t) == 0 for t in tops):
            continue
        for a1 in tops[0]:
            for a2 in tops[1]:
                if a2 == a1:
                    continue
                for a3 in tops[2]:
                    if a3 == a1 or a3 == a2:
                        continue
                    yield WeakCycleWitness(
                        tuple(market.agents[i] for i in triple),
                        (market.objects[a1], market.objects[a2], market.objects[a3]))


def find_weak_cycle(structure: PriorityStructure) -> Optional[WeakCycleWitness]:
    return next(iter_weak_cycles(structure), None)


def iter_ergin_cycles(structure: PriorityStructure) -> Iterator[ErginCycleWitness]:
    """Scan (i, k) pairs where k beats i somewhere, then the middle agent j"""
    market = structure.market
    ranks = structure.rank_matrix
    for i1, i3 in itertools.permutations(range(market.n), 2):
        back = np.flatnonzero(ranks[:, i3] < ranks[:, i1])
        if not back.size:
            continue
        for i2 in range(market.n):
            if i2 == i1 or i2 == i3:
                continue
            chain = np.flatnonzero((ranks[:, i1] < ranks[:, i2]) & (ranks[:, i2] < ranks[:, i3]))
            for a1 in chain:
                for a2 in back:
                    if a1 != a2:
                        yield ErginCycleWitness(
                            (market.agents[i1], market.agents[i2], market.agents[i3]),
                            (market.objects[a1], market.objects[a2]))


def find_ergin_cycle(structure: PriorityStructure) -> Optional[ErginCycleWitness]:
    return next(iter_ergin_cycles(structure), None)


def _needed_agents(structure, cycle):
    needed = set()
    for agent, obj in zip(cycle.agents, cycle.objects):
        needed |= structure.order(obj).upper_contour(agent)
    return frozenset(needed)


def _find_support(structure: PriorityStructure, cycle: WeakCycleWitness):
    """
    Backtracking search for a support closed under upper contours

    Starts from the agents that outrank the triple and repeatedly gives the
    earliest unpaired support agent an unused object, adding that object's
    upper contour to the support.
    """
    market = structure.market
    triple = frozenset(cycle.agents)
    needed = _needed_agents(structure, cycle)
    if needed & triple:
        return None
    free_objects = [o for o in market.objects if o not in cycle.objects]
    failed = set()

    def extend(support, pairs):
        paired = {agent for agent, _ in pairs}
        pending = [a for a in market.agents if a in support and a not in paired]
        if not pending:
            return pairs
        used = frozenset(obj for _, obj in pairs)
        key = (support, frozenset(paired), used)
        if key in failed:
            return None
        agent = pending[0]
        for obj in free_objects:
            if obj in used:
                continue
            contour = structure.order(obj).upper_contour(agent)
            if contour & triple:
                continue
            found = extend(support | contour, pairs + ((agent, obj),))
            if found is not None:
                return found
        failed.add(key)
        return None

    return extend(needed, ())


def find_priority_cycle(structure: PriorityStructure) -> Optional[PriorityCycleWitness]:
    """First weak cycle that admits a support, or None when the structure is acyclic"""
    for cycle in iter_weak_cycles(structure):
        support = _find_support(structure, cycle)
        if support is not None:
            return PriorityCycleWitness(cycle, support)
    return None


def find_priority_cycle_bruteforce(structure: PriorityStructure) -> Optional[PriorityCycleWitness]:
    """Exhaustive oracle over every support subset and pairing"""
    market = structure.market
    if market.n > BRUTEFORCE_MAX_SIZE or market.m > BRUTEFORCE_MAX_SIZE:
        raise LimitExceededError(
            f"brute-force cycle search is limited to {BRUTEFORCE_MAX_SIZE} agents and objects",
            max(market.n, market.m))

    for cycle in iter_weak_cycles(structure):
        needed = _needed_agents(structure, cycle)
        rest_agents = [a for a in market.agents if a not in cycle.agents]
        rest_objects = [o for o in market.objects if o not in cycle.objects]
        for size in range(min(len(rest_agents), len(rest_objects)) + 1):
            for agents in itertools.combinations(rest_agents, size):
                support = frozenset(agents)
                if not needed <= support:
                    continue
                for objects in itertools.permutations(rest_objects, size):
                    pairs = tuple(zip(agents, objects))
                    if all(structure.order(o).upper_contour(a) <= support for a, o in pairs):
                        return PriorityCycleWitness(cycle, pairs)
    return None


def is_dual_dictatorship(structure: PriorityStructure):
    """
    At most two agents top any reduced structure

    The top owner set only grows with the object set, so every agent subset
    is checked against all objects.

    Returns:
        (holds, witness) with witness = (agents, objects) of the first failure
    """
    market = structure.market
    for size in range(3, market.n + 1):
        for agents in itertools.combinations(market.agents, size):
            if len(structure.top_owners(agents, market.objects)) > 2:
                return False, (agents, market.objects)
    return True, None


def wsd_rank_condition(structure: PriorityStructure):
    """
    rank(i, a) <= |A| - 2 implies rank(i, a) == rank(i, b) for all a, b

    Returns:
        (holds, witness) with witness = (agent, a, b) of the first violation
    """
    market = structure.market
    ranks = structure.rank_matrix
    bound = market.m - 2
    for j, agent in enumerate(market.agents):
        column = ranks[:, j]
        for a in np.flatnonzero(column <= bound):
            differs = np.flatnonzero(column != column[a])
            if len(differs):
                return False, (agent, market.objects[a], market.objects[differs[0]])
    return True, None


def is_serial_dictatorship(structure: PriorityStructure) -> bool:
    ranks = structure.rank_matrix
    return bool(np.all(ranks == ranks[0]))


def analyze_structure(structure: PriorityStructure):
    """Full structural report as plain data"""
    priority_cycle = find_priority_cycle(structure)
    weak_cycle = find_weak_cycle(structure)
    ergin_cycle = find_ergin_cycle(structure)
    dual, dual_witness = is_dual_dictatorship(structure)
    wsd, wsd_witness = wsd_rank_condition(structure)

    witnesses = {}
    if priority_cycle is not None:
        witnesses['priority_cycle'] = priority_cycle.to_json()
    if weak_cycle is not None:
        witnesses['weak_cycle'] = weak_cycle.to_json()
    if ergin_cycle is not None:
        witnesses['ergin_cycle'] = ergin_cycle.to_json()
    if dual_witness is not None:
        witnesses['dual_dictatorship'] = {'agents': list(dual_witness[0]), 'objects': list(dual_witness[1])}
    if wsd_witness is not None:
        witnesses['wsd_rank_condition'] = dict(zip(('agent', 'a', 'b'), wsd_witness))

    return {
        'acyclic': priority_cycle is None,
        'strongly_acyclic': weak_cycle is None,
        'ergin_acyclic': ergin_cycle is None,
        'dual_dictatorship': dual,
        'serial_dictatorship': is_serial_dictatorship(structure),
        'wsd_rank_condition': wsd,
        'witnesses': witnesses,
    }
