"""
Fixed-priority top trading cycles (FPTTC)
Runs the step procedure with full traces and tabulates the rule over a
preference domain
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, FrozenSet, List, Mapping, Tuple

import psutil

from config import *
from market_model import (AgentId, Allocation, InvariantError, Item, ObjectId, Preference,
                          PreferenceDomain, PreferenceProfile, PriorityStructure, check_same_market)

logger = logging.getLogger(__name__)

Rule = Callable[[PreferenceProfile], Allocation]


@dataclass(frozen=True)
class StepRecord:
    """Everything that happened at one step of the procedure"""

    index: int
    remaining_agents: Tuple[AgentId, ...]
    remaining_objects: Tuple[ObjectId, ...]
    ownership: Mapping[AgentId, FrozenSet[ObjectId]]
    pointers: Mapping[AgentId, AgentId]
    cycles: Tuple[Tuple[AgentId, ...], ...]
    assigned_agents: FrozenSet[AgentId]
    assigned_objects: FrozenSet[ObjectId]
    assignments: Mapping[AgentId, Item]

    @property
    def top_owners(self) -> FrozenSet[AgentId]:
        return frozenset(self.ownership)

    def to_json(self):
        return {
            'step': self.index,
            'remaining_agents': list(self.remaining_agents),
            'remaining_objects': list(self.remaining_objects),
            'ownership': {agent: sorted(objs, key=self.remaining_objects.index)
                          for agent, objs in self.ownership.items()},
            'pointers': dict(self.pointers),
            'cycles': [list(cycle) for cycle in self.cycles],
            'assigned_agents': [a for a in self.remaining_agents if a in self.assigned_agents],
            'assigned_objects': [o for o in self.remaining_objects if o in self.assigned_objects],
            'assignments': dict(self.assignments),
        }


@dataclass(frozen=True)
class FpttcTrace:
    """Ordered step records and the final allocation"""

    steps: Tuple[StepRecord, ...]
    allocation: Allocation

    def cumulative_assigned_agents(self, s: int) -> FrozenSet[AgentId]:
        """I^s: agents assigned at steps 1..s"""
        return frozenset().union(*(step.assigned_agents for step in self.steps[:s]))

    def cumulative_assigned_objects(self, s: int) -> FrozenSet[ObjectId]:
        return frozenset().union(*(step.assigned_objects for step in self.steps[:s]))

    def to_json(self):
        return [step.to_json() for step in self.steps]


def _pointer_graph(owners: Mapping[AgentId, FrozenSet[ObjectId]], prefs: Mapping[AgentId, Preference]):
    """Each agent points to the owner of its favorite acceptable object, or to itself"""
    owner_of: Dict[ObjectId, AgentId] = {}
    for agent, objs in owners.items():
        if agent not in prefs:
            raise InvariantError(f"owner {agent} is not an agent of this round")
        for obj in objs:
            if obj in owner_of:
                raise InvariantError(f"object {obj} owned by both {owner_of[obj]} and {agent}")
            owner_of[obj] = agent

    candidates = tuple(owner_of) + (OUTSIDE_OPTION,)
    pointers: Dict[AgentId, AgentId] = {}
    choices: Dict[AgentId, Item] = {}
    for agent, pref in prefs.items():
        choice = pref.top(candidates)
        choices[agent] = choice
        pointers[agent] = agent if choice == OUTSIDE_OPTION else owner_of[choice]
    return pointers, choices


def _find_cycles(pointers: Mapping[AgentId, AgentId]) -> List[Tuple[AgentId, ...]]:
    """All cycles of a functional graph, each rotated to start at its earliest agent"""
    order = {agent: k for k, agent in enumerate(pointers)}
    done = set()
    cycles = []
    for start in pointers:
        if start in done:
            continue
        path = []
        on_path = {}
        node = start
        while node not in done and node not in on_path:
            on_path[node] = len(path)
            path.append(node)
            node = pointers[node]
        if node in on_path:
            cycle = path[on_path[node]:]
            first = min(range(len(cycle)), key=lambda k: order[cycle[k]])
            cycles.append(tuple(cycle[first:] + cycle[:first]))
        done.update(path)
    cycles.sort(key=lambda cycle: order[cycle[0]])
    return cycles


def _execute_round(owners, prefs):
    pointers, choices = _pointer_graph(owners, prefs)
    cycles = _find_cycles(pointers)
    # The pointed object is the favorite among remaining objects and the outside option
    assignments = {agent: choices[agent] for cycle in cycles for agent in cycle}
    return pointers, cycles, assignments


def ttc_round(owners: Mapping[AgentId, FrozenSet[ObjectId]],
              prefs: Mapping[AgentId, Preference]) -> Tuple[List[Tuple[AgentId, ...]], Dict[AgentId, Item]]:
    """
    Run one top trading cycles round and execute every cycle of its pointer graph

    Args:
        owners: objects held by each owner; the sets must be disjoint
        prefs: preference of every agent taking part in the round

    Returns:
        (cycles, assignments) with cycles listed by their earliest agent
    """
    _, cycles, assignments = _execute_round(owners, prefs)
    return cycles, assignments


def run_fpttc(structure: PriorityStructure, profile: PreferenceProfile) -> FpttcTrace:
    """Run the FPTTC rule of a priority structure at one profile"""
    check_same_market(structure.market, profile.market)
    market = structure.market

    agents = list(market.agents)
    objects = list(market.objects)
    final: Dict[AgentId, Item] = {}
    steps = []

    while agents and objects:
        ownership = structure.owners(agents, objects)
        prefs = {agent: profile[agent] for agent in agents}
        pointers, cycles, assignments = _execute_round(ownership, prefs)

        assigned_objects = frozenset(v for v in assignments.values() if v != OUTSIDE_OPTION)
        steps.append(StepRecord(
            index=len(steps) + 1,
            remaining_agents=tuple(agents),
            remaining_objects=tuple(objects),
            ownership=ownership,
            pointers=pointers,
            cycles=tuple(cycles),
            assigned_agents=frozenset(assignments),
            assigned_objects=assigned_objects,
            assignments=assignments,
        ))

        final.update(assignments)
        agents = [a for a in agents if a not in assignments]
        objects = [o for o in objects if o not in assigned_objects]

    # Objects ran out first
    for agent in agents:
        final[agent] = OUTSIDE_OPTION

    allocation = Allocation(market, tuple(final[a] for a in market.agents))
    return FpttcTrace(tuple(steps), allocation)


def fpttc_allocation(structure: PriorityStructure, profile: PreferenceProfile) -> Allocation:
    return run_fpttc(structure, profile).allocation


def fpttc_rule(structure: PriorityStructure) -> Rule:
    """The rule T as a profile -> allocation callable"""
    def rule(profile):
        return fpttc_allocation(structure, profile)
    return rule


def effective_jobs(jobs=None) -> int:
    if jobs is None:
        jobs = DEFAULT_JOBS
    return max(1, min(int(jobs), MAX_JOBS))


def warn_if_large(size: int):
    """Log when a full rule table may not fit comfortably in memory"""
    needed = size * BYTES_PER_TABLE_ENTRY
    available = psutil.virtual_memory().available
    if needed > available * MEMORY_HEADROOM_FRACTION:
        logger.warning(f"Tabulating {size:,} profiles needs about {needed / 2**20:.0f} MiB "
                       f"({available / 2**20:.0f} MiB available)")


def _allocate_chunk(args):
    allocate, structure, domain, chunk = args
    return [allocate(structure, domain.profile_at(indices)).assignment for indices in chunk]


def tabulate_rule(allocate: Callable[[PriorityStructure, PreferenceProfile], Allocation],
                  structure: PriorityStructure, domain: PreferenceDomain,
                  jobs=1) -> Dict[PreferenceProfile, Allocation]:
    """
    Evaluate a priority rule at every profile of a domain

    Args:
        allocate: module-level function (structure, profile) -> Allocation
        jobs: worker processes; output order is enumeration order regardless
    """
    check_same_market(structure.market, domain.market)
    jobs = effective_jobs(jobs)
    warn_if_large(domain.size)

    if jobs == 1 or domain.size <= PARALLEL_CHUNK_SIZE:
        return {profile: allocate(structure, profile) for profile in domain.profiles()}

    logger.info(f"Tabulating {domain.size:,} profiles on {jobs} workers")
    indices = domain.index_profiles()
    tasks = []
    while True:
        chunk = list(itertools.islice(indices, PARALLEL_CHUNK_SIZE))
        if not chunk:
            break
        tasks.append((allocate, structure, domain, chunk))

    table = {}
    market = domain.market
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for (_, _, _, chunk), results in zip(tasks, pool.map(_allocate_chunk, tasks)):
            for indices, assignment in zip(chunk, results):
                table[domain.profile_at(indices)] = Allocation(market, assignment)
    return table


def run_rule(structure: PriorityStructure, domain: PreferenceDomain, jobs=1) -> Dict[PreferenceProfile, Allocation]:
    """Tabulate T over a domain in enumeration order"""
    return tabulate_rule(fpttc_allocation, structure, domain, jobs)
