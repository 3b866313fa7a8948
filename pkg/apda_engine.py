"""
Agent-proposing deferred acceptance (APDA)
Simultaneous proposals with round-by-round records
"""

import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Tuple

from config import *
from market_model import (AgentId, Allocation, InvariantError, Item, ObjectId, PreferenceDomain,
                          PreferenceProfile, PriorityStructure, check_same_market)
from ttc_engine import Rule, fpttc_allocation, tabulate_rule

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ApdaRoundRecord:
    """Applications and tentative holdings after one round"""

    index: int
    applications: Mapping[AgentId, Item]
    tentative_holders: Mapping[ObjectId, AgentId]
    rejected: FrozenSet[AgentId]
    finalized_outside: FrozenSet[AgentId]

    def to_json(self):
        return {
            'round': self.index,
            'applications': dict(self.applications),
            'tentative_holders': dict(self.tentative_holders),
            'rejected': sorted(self.rejected),
            'finalized_outside': sorted(self.finalized_outside),
        }


def run_apda(structure: PriorityStructure, profile: PreferenceProfile) -> Tuple[Allocation, List[ApdaRoundRecord]]:
    """
    Run APDA at one profile

    Every rejected agent applies to its next item in the same round. Applying
    to the outside option is final.
    """
    check_same_market(structure.market, profile.market)
    market = structure.market
    max_rounds = market.n * (market.m + 1)

    next_choice = {agent: 0 for agent in market.agents}
    holders: Dict[ObjectId, AgentId] = {}
    outside = set()
    applicants = list(market.agents)
    rounds = []

    while applicants:
        if len(rounds) >= max_rounds:
            raise InvariantError(f"APDA did not stop within {max_rounds} rounds")

        applications = {}
        contenders: Dict[ObjectId, List[AgentId]] = {}
        finalized = set()
        for agent in applicants:
            item = profile[agent].ranking[next_choice[agent]]
            next_choice[agent] += 1
            applications[agent] = item
            if item == OUTSIDE_OPTION:
                finalized.add(agent)
            else:
                contenders.setdefault(item, []).append(agent)

        rejected = set()
        for obj, agents in contenders.items():
            order = structure.order(obj)
            pool = agents + ([holders[obj]] if obj in holders else [])
            best = order.top(pool)
            holders[obj] = best
            rejected.update(a for a in pool if a != best)

        outside |= finalized
        rounds.append(ApdaRoundRecord(
            index=len(rounds) + 1,
            applications=applications,
            tentative_holders={o: holders[o] for o in market.objects if o in holders},
            rejected=frozenset(rejected),
            finalized_outside=frozenset(finalized),
        ))
        applicants = [a for a in market.agents if a in rejected]

    final = {agent: obj for obj, agent in holders.items()}
    for agent in outside:
        final[agent] = OUTSIDE_OPTION
    allocation = Allocation(market, tuple(final[a] for a in market.agents))
    logger.debug(f"APDA finished in {len(rounds)} rounds: {allocation}")
    return allocation, rounds


def apda_allocation(structure: PriorityStructure, profile: PreferenceProfile) -> Allocation:
    return run_apda(structure, profile)[0]


def apda_rule(structure: PriorityStructure) -> Rule:
    """The rule D as a profile -> allocation callable"""
    def rule(profile):
        return apda_allocation(structure, profile)
    return rule


def run_apda_rule(structure: PriorityStructure, domain: PreferenceDomain, jobs=1) -> Dict[PreferenceProfile, Allocation]:
    return tabulate_rule(apda_allocation, structure, domain, jobs)


def blocking_pairs(structure: PriorityStructure, profile: PreferenceProfile, allocation: Allocation):
    """Pairs (i, a) where i prefers a to its assignment and outranks a's holder"""
    holder = {item: agent for agent, item in allocation.as_dict().items() if item != OUTSIDE_OPTION}
    pairs = []
    for agent, pref in profile.items():
        current = allocation[agent]
        for obj in structure.market.objects:
            if not pref.prefers(obj, current):
                continue
            if obj not in holder or structure.order(obj).prefers(agent, holder[obj]):
                pairs.append((agent, obj))
    return pairs


def apda_equals_fpttc(structure: PriorityStructure, domain: PreferenceDomain):
    """
    Compare D and T on every profile of a domain

    Returns:
        (equal, witness) where witness is the first disagreeing profile or None
    """
    check_same_market(structure.market, domain.market)
    for profile in domain.profiles():
        if apda_allocation(structure, profile) != fpttc_allocation(structure, profile):
            logger.info(f"APDA and FPTTC differ at {profile}")
            return False, profile
    return True, None
