"""
Core market model for priority-based assignment
Agents, objects, strict preferences, priority structures, allocations and
finite preference domains
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, Iterator, Mapping, Sequence, Tuple, Union

import numpy as np

from config import *

logger = logging.getLogger(__name__)

AgentId = str
ObjectId = str
Item = str  # an ObjectId or OUTSIDE_OPTION


class MarketError(ValueError):
    """Invalid argument: unknown token, empty subset, malformed ranking"""


class InvariantError(RuntimeError):
    """An internal invariant of a procedure was broken"""


class DomainError(ValueError):
    """A preference lies outside the admissible set it was checked against"""


class LimitExceededError(RuntimeError):
    """A configured size limit would be exceeded"""

    def __init__(self, message, estimate):
        super().__init__(f"{message} (estimated size {estimate:,})")
        self.estimate = estimate


def _check_permutation(ranking, expected, what):
    if len(ranking) != len(expected) or set(ranking) != set(expected):
        raise MarketError(f"{what} {list(ranking)} is not a permutation of {sorted(expected)}")


@dataclass(frozen=True)
class Market:
    """Ordered agents and objects of one assignment problem"""

    agents: Tuple[AgentId, ...]
    objects: Tuple[ObjectId, ...]

    def __post_init__(self):
        object.__setattr__(self, 'agents', tuple(str(a) for a in self.agents))
        object.__setattr__(self, 'objects', tuple(str(o) for o in self.objects))

        if not self.agents:
            raise MarketError("market needs at least one agent")
        if not self.objects:
            raise MarketError("market needs at least one object")
        if len(set(self.agents)) != len(self.agents):
            raise MarketError(f"duplicate agent ids in {list(self.agents)}")
        if len(set(self.objects)) != len(self.objects):
            raise MarketError(f"duplicate object ids in {list(self.objects)}")
        if OUTSIDE_OPTION in self.objects or OUTSIDE_OPTION in self.agents:
            raise MarketError(f"{OUTSIDE_OPTION} is reserved for the outside option")
        shared = set(self.agents) & set(self.objects)
        if shared:
            raise MarketError(f"tokens used both as agent and object: {sorted(shared)}")

    @property
    def n(self):
        return len(self.agents)

    @property
    def m(self):
        return len(self.objects)

    @cached_property
    def items(self) -> Tuple[Item, ...]:
        """Objects in declaration order followed by the outside option"""
        return self.objects + (OUTSIDE_OPTION,)

    @cached_property
    def agent_index(self) -> Dict[AgentId, int]:
        return {agent: k for k, agent in enumerate(self.agents)}

    @cached_property
    def object_index(self) -> Dict[ObjectId, int]:
        return {obj: k for k, obj in enumerate(self.objects)}

    def check_agent(self, agent):
        if agent not in self.agent_index:
            raise MarketError(f"unknown agent {agent!r}")

    def check_object(self, obj):
        if obj not in self.object_index:
            raise MarketError(f"unknown object {obj!r}")

    def sort_agents(self, agents: Iterable[AgentId]) -> Tuple[AgentId, ...]:
        """Agents in market declaration order"""
        agents = set(agents)
        for agent in agents:
            self.check_agent(agent)
        return tuple(a for a in self.agents if a in agents)

    def sort_objects(self, objects: Iterable[ObjectId]) -> Tuple[ObjectId, ...]:
        objects = set(objects)
        for obj in objects:
            self.check_object(obj)
        return tuple(o for o in self.objects if o in objects)

    def restrict(self, agents: Iterable[AgentId], objects: Iterable[ObjectId]) -> 'Market':
        """Sub-market keeping declaration order"""
        return Market(self.sort_agents(agents), self.sort_objects(objects))

    def to_json(self):
        return {'agents': list(self.agents), 'objects': list(self.objects)}


@dataclass(frozen=True)
class Preference:
    """Strict ranking over every object plus the outside option"""

    ranking: Tuple[Item, ...]

    def __post_init__(self):
        object.__setattr__(self, 'ranking', tuple(str(x) for x in self.ranking))
        if len(set(self.ranking)) != len(self.ranking):
            raise MarketError(f"ranking {list(self.ranking)} repeats an item")
        if OUTSIDE_OPTION not in self.ranking:
            raise MarketError(f"ranking {list(self.ranking)} must rank {OUTSIDE_OPTION}")

    @cached_property
    def position(self) -> Dict[Item, int]:
        return {item: k for k, item in enumerate(self.ranking)}

    def check_market(self, market: Market):
        _check_permutation(self.ranking, market.items, "preference")

    def prefers(self, a: Item, b: Item) -> bool:
        """Strict part P"""
        return self.position[a] < self.position[b]

    def weakly_prefers(self, a: Item, b: Item) -> bool:
        """Weak part R"""
        return self.position[a] <= self.position[b]

    def is_acceptable(self, item: Item) -> bool:
        return self.position[item] < self.position[OUTSIDE_OPTION]

    def top(self, subset: Iterable[Item]) -> Item:
        subset = tuple(subset)
        if not subset:
            raise MarketError("top of an empty item set")
        try:
            return min(subset, key=self.position.__getitem__)
        except KeyError as e:
            raise MarketError(f"item {e.args[0]!r} is not ranked by {self}") from None

    def worst(self, subset: Iterable[Item]) -> Item:
        subset = tuple(subset)
        if not subset:
            raise MarketError("worst of an empty item set")
        try:
            return max(subset, key=self.position.__getitem__)
        except KeyError as e:
            raise MarketError(f"item {e.args[0]!r} is not ranked by {self}") from None

    @property
    def first(self) -> Item:
        """tau(P), the favorite item"""
        return self.ranking[0]

    def ranks_outside_last(self) -> bool:
        return self.ranking[-1] == OUTSIDE_OPTION

    def __str__(self):
        return " ".join(self.ranking)


@dataclass(frozen=True)
class PreferenceProfile:
    """One preference per agent, aligned with market.agents"""

    market: Market
    preferences: Tuple[Preference, ...]

    def __post_init__(self):
        object.__setattr__(self, 'preferences', tuple(self.preferences))
        if len(self.preferences) != self.market.n:
            raise MarketError(
                f"profile has {len(self.preferences)} preferences for {self.market.n} agents")
        for pref in self.preferences:
            pref.check_market(self.market)

    @classmethod
    def _trusted(cls, market, preferences):
        # Domain members are validated once when the domain is built
        profile = object.__new__(cls)
        object.__setattr__(profile, 'market', market)
        object.__setattr__(profile, 'preferences', preferences)
        return profile

    @classmethod
    def from_mapping(cls, market: Market,
                     mapping: Mapping[AgentId, Union[Preference, Sequence[Item]]]) -> 'PreferenceProfile':
        missing = [a for a in market.agents if a not in mapping]
        extra = [a for a in mapping if a not in market.agent_index]
        if missing or extra:
            raise MarketError(f"profile agents mismatch: missing {missing}, unknown {extra}")
        prefs = []
        for agent in market.agents:
            value = mapping[agent]
            prefs.append(value if isinstance(value, Preference) else Preference(tuple(value)))
        return cls(market, tuple(prefs))

    def __getitem__(self, agent: AgentId) -> Preference:
        try:
            return self.preferences[self.market.agent_index[agent]]
        except KeyError:
            raise MarketError(f"unknown agent {agent!r}") from None

    def items(self):
        return zip(self.market.agents, self.preferences)

    def replace(self, agent: AgentId, pref: Preference) -> 'PreferenceProfile':
        prefs = list(self.preferences)
        prefs[self.market.agent_index[agent]] = pref
        return PreferenceProfile(self.market, tuple(prefs))

    def to_json(self):
        return {agent: list(pref.ranking) for agent, pref in self.items()}

    def __str__(self):
        return "; ".join(f"{agent}: {pref}" for agent, pref in self.items())


@dataclass(frozen=True)
class PriorityOrder:
    """Strict ranking of agents for one object"""

    ranking: Tuple[AgentId, ...]

    def __post_init__(self):
        object.__setattr__(self, 'ranking', tuple(str(a) for a in self.ranking))
        if not self.ranking:
            raise MarketError("empty priority order")
        if len(set(self.ranking)) != len(self.ranking):
            raise MarketError(f"priority order {list(self.ranking)} repeats an agent")

    @cached_property
    def position(self) -> Dict[AgentId, int]:
        return {agent: k for k, agent in enumerate(self.ranking)}

    def _position_of(self, agent):
        try:
            return self.position[agent]
        except KeyError:
            raise MarketError(f"unknown agent {agent!r}") from None

    def top(self, subset: Iterable[AgentId]) -> AgentId:
        subset = tuple(subset)
        if not subset:
            raise MarketError("top of an empty agent set")
        return min(subset, key=self._position_of)

    def prefers(self, i: AgentId, j: AgentId) -> bool:
        return self._position_of(i) < self._position_of(j)

    def upper_contour(self, agent: AgentId) -> FrozenSet[AgentId]:
        """U(i, >): agents with strictly higher priority"""
        return frozenset(self.ranking[:self._position_of(agent)])

    def rank(self, agent: AgentId) -> int:
        return self._position_of(agent) + 1

    def restricted_to(self, agents: Iterable[AgentId]) -> 'PriorityOrder':
        keep = set(agents)
        return PriorityOrder(tuple(a for a in self.ranking if a in keep))

    def __str__(self):
        return "(" + ",".join(self.ranking) + ")"


@dataclass(frozen=True)
class PriorityStructure:
    """One priority order per object, aligned with market.objects"""

    market: Market
    orders: Tuple[PriorityOrder, ...]

    def __post_init__(self):
        object.__setattr__(self, 'orders', tuple(self.orders))
        if len(self.orders) != self.market.m:
            raise MarketError(f"{len(self.orders)} priority orders for {self.market.m} objects")
        for obj, order in zip(self.market.objects, self.orders):
            _check_permutation(order.ranking, self.market.agents, f"priority order of {obj}")

    @classmethod
    def from_mapping(cls, market: Market,
                     mapping: Mapping[ObjectId, Sequence[AgentId]]) -> 'PriorityStructure':
        missing = [o for o in market.objects if o not in mapping]
        extra = [o for o in mapping if o not in market.object_index]
        if missing or extra:
            raise MarketError(f"priority objects mismatch: missing {missing}, unknown {extra}")
        return cls(market, tuple(PriorityOrder(tuple(mapping[o])) for o in market.objects))

    @classmethod
    def all_structures(cls, market: Market) -> Iterator['PriorityStructure']:
        """Every (n!)^m structure of the market, lexicographically"""
        orders = [PriorityOrder(p) for p in itertools.permutations(market.agents)]
        for combo in itertools.product(orders, repeat=market.m):
            structure = object.__new__(cls)
            object.__setattr__(structure, 'market', market)
            object.__setattr__(structure, 'orders', combo)
            yield structure

    def order(self, obj: ObjectId) -> PriorityOrder:
        try:
            return self.orders[self.market.object_index[obj]]
        except KeyError:
            raise MarketError(f"unknown object {obj!r}") from None

    __getitem__ = order

    @cached_property
    def rank_matrix(self) -> np.ndarray:
        """rank_matrix[k, j] is the rank of agent j under object k (1-based)"""
        index = self.market.agent_index
        matrix = np.zeros((self.market.m, self.market.n), dtype=np.int64)
        for k, order in enumerate(self.orders):
            for r, agent in enumerate(order.ranking):
                matrix[k, index[agent]] = r + 1
        matrix.setflags(write=False)
        return matrix

    def reduced(self, agents: Iterable[AgentId], objects: Iterable[ObjectId]) -> 'PriorityStructure':
        market = self.market.restrict(agents, objects)
        if not market.agents or not market.objects:
            raise MarketError("reduced structure needs nonempty agents and objects")
        return PriorityStructure(market, tuple(
            self.order(obj).restricted_to(market.agents) for obj in market.objects))

    def owners(self, agents: Iterable[AgentId], objects: Iterable[ObjectId]) -> Dict[AgentId, FrozenSet[ObjectId]]:
        """Objects owned by each top agent of the reduced structure"""
        agents = tuple(agents)
        held: Dict[AgentId, set] = {}
        for obj in objects:
            held.setdefault(self.order(obj).top(agents), set()).add(obj)
        return {agent: frozenset(held[agent]) for agent in self.market.agents if agent in held}

    def top_owners(self, agents: Iterable[AgentId], objects: Iterable[ObjectId]) -> FrozenSet[AgentId]:
        agents = tuple(agents)
        objects = tuple(objects)
        if not agents or not objects:
            raise MarketError("top owner set needs nonempty agents and objects")
        return frozenset(self.order(obj).top(agents) for obj in objects)

    def to_json(self):
        return {obj: list(order.ranking) for obj, order in zip(self.market.objects, self.orders)}

    def __str__(self):
        return " ".join(f"{obj}={order}" for obj, order in zip(self.market.objects, self.orders))


@dataclass(frozen=True)
class Allocation:
    """One item per agent; objects used at most once"""

    market: Market
    assignment: Tuple[Item, ...]

    def __post_init__(self):
        object.__setattr__(self, 'assignment', tuple(self.assignment))
        if len(self.assignment) != self.market.n:
            raise MarketError(f"allocation covers {len(self.assignment)} of {self.market.n} agents")
        items = set(self.market.items)
        seen = set()
        for agent, item in zip(self.market.agents, self.assignment):
            if item not in items:
                raise MarketError(f"agent {agent} assigned unknown item {item!r}")
            if item != OUTSIDE_OPTION:
                if item in seen:
                    raise MarketError(f"object {item} assigned twice")
                seen.add(item)

    @classmethod
    def from_mapping(cls, market: Market, mapping: Mapping[AgentId, Item]) -> 'Allocation':
        missing = [a for a in market.agents if a not in mapping]
        extra = [a for a in mapping if a not in market.agent_index]
        if missing or extra:
            raise MarketError(f"allocation agents mismatch: missing {missing}, unknown {extra}")
        return cls(market, tuple(str(mapping[a]) for a in market.agents))

    def __getitem__(self, agent: AgentId) -> Item:
        try:
            return self.assignment[self.market.agent_index[agent]]
        except KeyError:
            raise MarketError(f"unknown agent {agent!r}") from None

    def as_dict(self) -> Dict[AgentId, Item]:
        return dict(zip(self.market.agents, self.assignment))

    to_json = as_dict

    def __str__(self):
        return "(" + ", ".join(self.assignment) + ")"


@dataclass(frozen=True)
class PreferenceDomain:
    """Admissible preferences per agent, each set sorted by token sequence"""

    market: Market
    kind: str
    preferences: Tuple[Tuple[Preference, ...], ...]

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS.values():
            raise MarketError(f"unknown domain kind {self.kind!r}")
        prefs = tuple(tuple(sorted(set(options), key=lambda p: p.ranking)) for options in self.preferences)
        object.__setattr__(self, 'preferences', prefs)
        if len(prefs) != self.market.n:
            raise MarketError(f"domain covers {len(prefs)} of {self.market.n} agents")
        for agent, options in zip(self.market.agents, prefs):
            if not options:
                raise MarketError(f"agent {agent} has no admissible preference")
            for pref in options:
                pref.check_market(self.market)
                if self.kind == DOMAIN_KINDS['NO_OUTSIDE'] and not pref.ranks_outside_last():
                    raise MarketError(f"{pref} does not rank {OUTSIDE_OPTION} last")
        if self.kind == DOMAIN_KINDS['WITH_OUTSIDE']:
            full = math.factorial(self.market.m + 1)
            if any(len(options) != full for options in prefs):
                raise MarketError("with-outside domain must contain every ranking")

    @classmethod
    def no_outside(cls, market: Market) -> 'PreferenceDomain':
        """L(A): all rankings of the objects, outside option last"""
        options = tuple(Preference(p + (OUTSIDE_OPTION,)) for p in itertools.permutations(market.objects))
        return cls(market, DOMAIN_KINDS['NO_OUTSIDE'], (options,) * market.n)

    @classmethod
    def with_outside(cls, market: Market) -> 'PreferenceDomain':
        """L(A u {a0}): every ranking of all items"""
        options = tuple(Preference(p) for p in itertools.permutations(market.items))
        return cls(market, DOMAIN_KINDS['WITH_OUTSIDE'], (options,) * market.n)

    @classmethod
    def explicit(cls, market: Market,
                 mapping: Mapping[AgentId, Iterable[Union[Preference, Sequence[Item]]]]) -> 'PreferenceDomain':
        missing = [a for a in market.agents if a not in mapping]
        extra = [a for a in mapping if a not in market.agent_index]
        if missing or extra:
            raise MarketError(f"domain agents mismatch: missing {missing}, unknown {extra}")
        per_agent = []
        for agent in market.agents:
            per_agent.append(tuple(
                p if isinstance(p, Preference) else Preference(tuple(p)) for p in mapping[agent]))
        return cls(market, DOMAIN_KINDS['EXPLICIT'], tuple(per_agent))

    @classmethod
    def product_closure(cls, profiles: Sequence[PreferenceProfile]) -> 'PreferenceDomain':
        """Smallest product domain containing every given profile"""
        if not profiles:
            raise MarketError("product closure of no profiles")
        market = profiles[0].market
        mapping = {agent: {profile[agent] for profile in profiles} for agent in market.agents}
        return cls.explicit(market, mapping)

    @property
    def size(self) -> int:
        return math.prod(len(options) for options in self.preferences)

    def options(self, agent: AgentId) -> Tuple[Preference, ...]:
        return self.preferences[self.market.agent_index[agent]]

    @cached_property
    def _index(self):
        return tuple({pref: k for k, pref in enumerate(options)} for options in self.preferences)

    def index_of(self, agent: AgentId, pref: Preference) -> int:
        try:
            return self._index[self.market.agent_index[agent]][pref]
        except KeyError:
            raise DomainError(f"{pref} is not admissible for agent {agent}") from None

    def indices_of(self, profile: PreferenceProfile) -> Tuple[int, ...]:
        return tuple(self.index_of(agent, pref) for agent, pref in profile.items())

    def contains(self, profile: PreferenceProfile) -> bool:
        return all(pref in self._index[k] for k, pref in enumerate(profile.preferences))

    def forces_outside_last(self) -> bool:
        return all(p.ranks_outside_last() for options in self.preferences for p in options)

    def index_profiles(self) -> Iterator[Tuple[int, ...]]:
        return itertools.product(*(range(len(options)) for options in self.preferences))

    def profile_at(self, indices: Sequence[int]) -> PreferenceProfile:
        return PreferenceProfile._trusted(
            self.market, tuple(options[k] for options, k in zip(self.preferences, indices)))

    def profiles(self) -> Iterator[PreferenceProfile]:
        market = self.market
        for combo in itertools.product(*self.preferences):
            yield PreferenceProfile._trusted(market, combo)

    def to_json(self):
        if self.kind != DOMAIN_KINDS['EXPLICIT']:
            return {'kind': self.kind}
        return {
            'kind': self.kind,
            'prefs': {agent: [list(p.ranking) for p in options]
                      for agent, options in zip(self.market.agents, self.preferences)}
        }


# Primitive queries

def top_pref(p: Preference, subset: Iterable[Item]) -> Item:
    return p.top(subset)


def top_agent(o: PriorityOrder, subset: Iterable[AgentId]) -> AgentId:
    return o.top(subset)


def upper_contour(o: PriorityOrder, agent: AgentId) -> FrozenSet[AgentId]:
    return o.upper_contour(agent)


def rank(o: PriorityOrder, agent: AgentId) -> int:
    return o.rank(agent)


def reduced_structure(s: PriorityStructure, agents: Iterable[AgentId],
                      objects: Iterable[ObjectId]) -> PriorityStructure:
    return s.reduced(agents, objects)


def top_owner_set(s: PriorityStructure, agents: Iterable[AgentId],
                  objects: Iterable[ObjectId]) -> FrozenSet[AgentId]:
    return s.top_owners(agents, objects)


def enumerate_profiles(d: PreferenceDomain) -> Iterator[PreferenceProfile]:
    return d.profiles()


def check_same_market(*markets: Market):
    first = markets[0]
    for other in markets[1:]:
        if other != first:
            raise MarketError("structure, profile and domain must share one market")
