"""Small hand-built KGs used in tests, docs, and the demo CLI path.

The sports KG overlays two seasonal views on one entity set. The same player
captains different teams in different views, so a two-hop captain/win query
answers differently under equal-match and wildcard view semantics: requiring
both hops in one view keeps derivations season-consistent, while wildcard
admits the cross-view chain.
"""
from __future__ import annotations

from .kg import MultiViewKG
from .queries import Query, build_query, equal, exact, wildcard

SPORTS_ENTITIES = ["FC Barcelona", "Messi", "LaLiga", "Argentina NT", "Copa America"]
SPORTS_RELATIONS = ["captain", "win"]
SPORTS_VIEWS = ["2015", "2021"]

_E = {name: i for i, name in enumerate(SPORTS_ENTITIES)}
_R = {name: i for i, name in enumerate(SPORTS_RELATIONS)}
_V = {name: i for i, name in enumerate(SPORTS_VIEWS)}


def sports_kg() -> MultiViewKG:
    quadruples = [
        ("FC Barcelona", "captain", "Messi", "2015"),
        ("Messi", "win", "LaLiga", "2015"),
        ("Argentina NT", "captain", "Messi", "2021"),
        ("Messi", "win", "Copa America", "2021"),
    ]
    facts = [(_E[h], _R[r], _E[t], _V[v]) for h, r, t, v in quadruples]
    return MultiViewKG(SPORTS_ENTITIES, SPORTS_RELATIONS, SPORTS_VIEWS, facts)


def sports_chain_query(semantics: str = "equal") -> Query:
    """Two-hop query: what did the team captained by FC Barcelona's captain win?

    ``semantics``: "equal" pins both hops to one shared view, "wildcard" lets
    each hop pick any view, "exact-2015"/"exact-2021" pin both hops to the
    named season.
    """
    anchor = [_E["FC Barcelona"]]
    relations = [_R["captain"], _R["win"]]
    if semantics == "equal":
        constraints = [equal(0), equal(0)]
    elif semantics == "wildcard":
        constraints = [wildcard(), wildcard()]
    elif semantics.startswith("exact-"):
        view = _V[semantics.removeprefix("exact-")]
        constraints = [exact(view), exact(view)]
    else:
        raise ValueError(f"unknown semantics {semantics!r}")
    return build_query("2p", anchor, relations, constraints)


def sports_entity(name: str) -> int:
    return _E[name]


def sports_view(name: str) -> int:
    return _V[name]
