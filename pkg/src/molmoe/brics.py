"""Fragmentation of molecular graphs at retrosynthetically meaningful bonds.

A fixed table of eight cleavage rules stands in for the full 16-environment
scheme: it covers the dominant acyclic linkages in drug-like molecules
(amides, esters, ethers, amines, aryl attachments, biaryls, sulfonamides,
olefin attachments). All matching bonds are cut simultaneously and the
connected components of what remains are the fragments, so the result is a
unique partition of the atom set. Ring bonds are never cut.

Fragments index into the parent graph; no dummy atoms are introduced.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .graph import Bond, MolecularGraph, connected_components


def _is_sp3_carbon(g: MolecularGraph, u: int) -> bool:
    a = g.atoms[u]
    if a.element != "C" or a.is_aromatic:
        return False
    return all(g.bonds[bi].order == "single" for bi in g.incident_bonds(u))


def _is_carbonyl_carbon(g: MolecularGraph, u: int) -> bool:
    a = g.atoms[u]
    if a.element != "C" or a.is_aromatic:
        return False
    for bi in g.incident_bonds(u):
        b = g.bonds[bi]
        if b.order == "double" and g.atoms[b.other(u)].element == "O":
            return True
    return False


def _is_sulfonyl_sulfur(g: MolecularGraph, u: int) -> bool:
    if g.atoms[u].element != "S":
        return False
    doubles = 0
    for bi in g.incident_bonds(u):
        b = g.bonds[bi]
        if b.order == "double" and g.atoms[b.other(u)].element == "O":
            doubles += 1
    return doubles >= 2


def _is_olefinic_carbon(g: MolecularGraph, u: int) -> bool:
    a = g.atoms[u]
    if a.element != "C" or a.is_aromatic:
        return False
    for bi in g.incident_bonds(u):
        b = g.bonds[bi]
        if b.order == "double" and g.atoms[b.other(u)].element == "C":
            return True
    return False


def _is_aromatic_carbon(g: MolecularGraph, u: int) -> bool:
    return g.atoms[u].element == "C" and g.atoms[u].is_aromatic


def _amide(g: MolecularGraph, u: int, v: int) -> bool:
    return (_is_carbonyl_carbon(g, u)
            and g.atoms[v].element == "N" and not g.atoms[v].is_aromatic)


def _ester(g: MolecularGraph, u: int, v: int) -> bool:
    # carbonyl carbon to a bridging oxygen; a bare hydroxyl is not cut
    if not (_is_carbonyl_carbon(g, u) and g.atoms[v].element == "O"):
        return False
    others = [w for w in g.neighbors(v) if w != u]
    return any(g.atoms[w].element == "C" for w in others)


def _ether(g: MolecularGraph, u: int, v: int) -> bool:
    if g.atoms[v].element != "O" or g.atoms[v].is_aromatic:
        return False
    nbrs = g.neighbors(v)
    if len(nbrs) != 2:
        return False
    return all(_is_sp3_carbon(g, w) for w in nbrs)


def _amine(g: MolecularGraph, u: int, v: int) -> bool:
    # C-N that is neither the amide bond itself nor a methyl-stripping cut
    if g.atoms[u].element != "C" or _is_carbonyl_carbon(g, u):
        return False
    if g.atoms[v].element != "N" or g.atoms[v].is_aromatic:
        return False
    return g.atoms[u].degree >= 2


def _aryl_alkyl(g: MolecularGraph, u: int, v: int) -> bool:
    return (_is_aromatic_carbon(g, u)
            and _is_sp3_carbon(g, v) and g.atoms[v].degree >= 2)


def _biaryl(g: MolecularGraph, u: int, v: int) -> bool:
    return g.atoms[u].is_aromatic and g.atoms[v].is_aromatic


def _sulfonamide(g: MolecularGraph, u: int, v: int) -> bool:
    return (_is_sulfonyl_sulfur(g, u)
            and g.atoms[v].element == "N" and not g.atoms[v].is_aromatic)


def _olefin_attach(g: MolecularGraph, u: int, v: int) -> bool:
    return (_is_olefinic_carbon(g, u)
            and _is_sp3_carbon(g, v) and g.atoms[v].degree >= 2)


@dataclass(frozen=True)
class CleavageRule:
    """A structural condition on a single acyclic bond and its endpoints."""

    id: str
    predicate: Callable[[MolecularGraph, int, int], bool]
    both_directions: bool = True

    def matches(self, g: MolecularGraph, bond: Bond) -> bool:
        if bond.in_ring or bond.order != "single":
            return False
        if self.predicate(g, bond.u, bond.v):
            return True
        return self.both_directions and self.predicate(g, bond.v, bond.u)


_RULES = (
    CleavageRule("amide-CN", _amide),
    CleavageRule("ester-CO", _ester),
    CleavageRule("ether-CO", _ether),
    CleavageRule("amine-CN", _amine),
    CleavageRule("aryl-alkyl-CC", _aryl_alkyl),
    CleavageRule("biaryl-CC", _biaryl, both_directions=False),
    CleavageRule("sulfonamide-SN", _sulfonamide),
    CleavageRule("olefin-attach-CC", _olefin_attach),
)


def rule_table() -> tuple[CleavageRule, ...]:
    """The fixed, ordered cleavage rule set."""
    return _RULES


@dataclass(frozen=True)
class Fragment:
    """A connected set of parent-graph atom indices left after cleavage."""

    node_indices: tuple[int, ...]
    rule_ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.node_indices)


def cleavable_bonds(g: MolecularGraph) -> list[tuple[int, str]]:
    """Bond indices that match a rule, with the first matching rule's id."""
    found = []
    for bi, bond in enumerate(g.bonds):
        for rule in _RULES:
            if rule.matches(g, bond):
                found.append((bi, rule.id))
                break
    return found


def brics_decompose(g: MolecularGraph) -> list[Fragment]:
    """Cut every matching bond at once; components become fragments.

    With no matching bond the whole molecule is the single fragment.
    Fragments are ordered by their smallest atom index.
    """
    g.refresh_degrees()
    cuts = cleavable_bonds(g)
    cut_rule = dict(cuts)
    comps = connected_components(g, blocked_bonds=frozenset(cut_rule))
    comps.sort(key=lambda c: c[0])
    fragments = []
    for comp in comps:
        members = set(comp)
        bounding = sorted(
            {rule_id for bi, rule_id in cuts
             if g.bonds[bi].u in members or g.bonds[bi].v in members}
        )
        fragments.append(Fragment(tuple(comp), tuple(bounding)))
    return fragments
