"""
JSON reading and writing for markets, profiles, domains and mechanisms
"""

import json
import logging
import re
from pathlib import Path
from typing import Optional, Tuple, Union

from config import *
from market_model import (Allocation, Market, MarketError, PreferenceDomain, PreferenceProfile,
                          PriorityStructure)
from mechanism_tree import Mechanism, MechanismNode, node_sort_key, resolve_labels

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_json(path: PathLike):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def _require(data, key, what):
    if not isinstance(data, dict) or key not in data:
        raise MarketError(f"{what} needs a '{key}' entry")
    return data[key]


def _token_list(value, what):
    if not isinstance(value, list) or not all(isinstance(token, str) for token in value):
        raise MarketError(f"{what} must be a list of strings, got {value!r}")
    return value


def _ranking_map(value, what):
    """Dict from ids to rankings, each a list of strings"""
    if not isinstance(value, dict):
        raise MarketError(f"{what} must map ids to rankings, got {value!r}")
    return {key: _token_list(ranking, f"{what} entry {key!r}") for key, ranking in value.items()}


def load_market(data) -> Tuple[Market, Optional[PriorityStructure]]:
    """Market plus its priority structure when 'priorities' is present"""
    agents = _token_list(_require(data, 'agents', 'market'), 'market agents')
    objects = _token_list(_require(data, 'objects', 'market'), 'market objects')
    market = Market(tuple(agents), tuple(objects))
    structure = None
    if 'priorities' in data:
        structure = PriorityStructure.from_mapping(market, _ranking_map(data['priorities'], 'priorities'))
    return market, structure


def load_structure(data) -> PriorityStructure:
    _, structure = load_market(data)
    if structure is None:
        raise MarketError("market file has no 'priorities'")
    return structure


def dump_structure(structure: PriorityStructure):
    return {**structure.market.to_json(), 'priorities': structure.to_json()}


def load_profile(market: Market, data) -> PreferenceProfile:
    return PreferenceProfile.from_mapping(market, _ranking_map(data, 'profile'))


def load_domain(market: Market, data) -> PreferenceDomain:
    kind = _require(data, 'kind', 'domain')
    if kind == DOMAIN_KINDS['NO_OUTSIDE']:
        return PreferenceDomain.no_outside(market)
    if kind == DOMAIN_KINDS['WITH_OUTSIDE']:
        return PreferenceDomain.with_outside(market)
    if kind == DOMAIN_KINDS['EXPLICIT']:
        prefs = _require(data, 'prefs', 'explicit domain')
        if not isinstance(prefs, dict):
            raise MarketError(f"explicit domain prefs must map agents to ranking lists, got {prefs!r}")
        options = {}
        for agent, rankings in prefs.items():
            if not isinstance(rankings, list):
                raise MarketError(f"domain options of {agent!r} must be a list of rankings")
            options[agent] = [_token_list(r, f"domain ranking of {agent!r}") for r in rankings]
        return PreferenceDomain.explicit(market, options)
    raise MarketError(f"unknown domain kind {kind!r}")


def dump_domain(domain: PreferenceDomain):
    return domain.to_json()


def domain_from_argument(market: Market, argument: str) -> PreferenceDomain:
    """A domain kind name or the path of a domain file"""
    if argument in (DOMAIN_KINDS['NO_OUTSIDE'], DOMAIN_KINDS['WITH_OUTSIDE']):
        return load_domain(market, {'kind': argument})
    return load_domain(market, read_json(argument))


def _label_items(label):
    if not isinstance(label, dict):
        raise MarketError(f"edge label must be an object, got {label!r}")
    if 'explicit' in label:
        return {item for ranking in label['explicit'] for item in _token_list(ranking, 'label ranking')}
    pattern = label.get('pattern')
    if not isinstance(pattern, str):
        raise MarketError(f"edge label needs 'explicit' or 'pattern': {label}")
    items = set()
    for clause in pattern.split(';'):
        _, _, value = clause.partition('=')
        items.update(token.strip() for token in re.split(r'[|,:]', value) if token.strip())
    return items


def derive_market(data) -> Market:
    """
    Market of a mechanism file without a 'market' entry

    Agents come from movers and leaf allocations; objects from every item
    named in allocations, labels or an explicit domain. Both are put in
    natural order.
    """
    agents, items = set(), set()
    for raw in _require(data, 'nodes', 'mechanism'):
        if not isinstance(raw, dict):
            raise MarketError(f"mechanism node must be an object, got {raw!r}")
        if 'agent' in raw:
            agents.add(str(raw['agent']))
        if 'alloc' in raw:
            alloc = _require(raw, 'alloc', 'leaf')
            if not isinstance(alloc, dict):
                raise MarketError(f"leaf allocation must map agents to items, got {alloc!r}")
            agents.update(alloc)
            items.update(str(item) for item in alloc.values())
    for raw in _require(data, 'edges', 'mechanism'):
        items |= _label_items(_require(raw, 'label', 'edge'))
    domain = _require(data, 'domain', 'mechanism')
    if isinstance(domain, dict) and isinstance(domain.get('prefs'), dict):
        agents.update(domain['prefs'])
        for rankings in domain['prefs'].values():
            if isinstance(rankings, list):
                items.update(item for ranking in rankings if isinstance(ranking, list) for item in ranking)
    items.discard(OUTSIDE_OPTION)
    return Market(tuple(sorted(agents, key=node_sort_key)), tuple(sorted(items, key=node_sort_key)))


def load_mechanism(data, market: Optional[Market] = None) -> Mechanism:
    """
    Build a mechanism from its JSON form

    Labels may be explicit ranking lists or patterns; patterns are resolved
    against the label the mover inherits at that node. The market is read
    from the file, else taken from the caller, else derived from the tree.
    """
    if isinstance(data, dict) and 'market' in data:
        declared, _ = load_market(data['market'])
        if market is not None and declared != market:
            raise MarketError(f"market mismatch: mechanism is over {declared.to_json()}, "
                              f"not {market.to_json()}")
        market = declared
    elif market is None:
        market = derive_market(data)
    domain = load_domain(market, _require(data, 'domain', 'mechanism'))

    nodes = {}
    for raw in _require(data, 'nodes', 'mechanism'):
        node_id = _require(raw, 'id', 'node')
        if 'alloc' in raw:
            if not isinstance(raw['alloc'], dict):
                raise MarketError(f"leaf {node_id!r} allocation must map agents to items")
            allocation = Allocation.from_mapping(market, raw['alloc'])
            node = MechanismNode(node_id, agent=raw.get('agent'), allocation=allocation)
        else:
            node = MechanismNode(node_id, agent=_require(raw, 'agent', f"node {node_id}"))
        if node_id in nodes:
            raise MarketError(f"duplicate node id {node_id!r}")
        nodes[node_id] = node

    raw_edges = []
    for raw in _require(data, 'edges', 'mechanism'):
        label = _require(raw, 'label', 'edge')
        _label_items(label)
        raw_edges.append((_require(raw, 'from', 'edge'), _require(raw, 'to', 'edge'), label))

    root = _require(data, 'root', 'mechanism')
    edges = resolve_labels(domain, nodes, raw_edges, root)
    mechanism = Mechanism(domain, nodes.values(), edges, root)
    logger.debug(f"Loaded mechanism with {len(nodes)} nodes and {len(edges)} edges")
    return mechanism


def dump_mechanism(mechanism: Mechanism):
    return mechanism.to_json()
