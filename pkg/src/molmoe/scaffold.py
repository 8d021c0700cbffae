"""Bemis-Murcko scaffolds for scaffold-based dataset splitting.

The scaffold is what remains after iteratively deleting non-ring atoms of
degree one: ring systems plus the linkers between them. Acyclic molecules
have an empty scaffold and map to the empty key.
"""

from __future__ import annotations

from .canon import canonical_key
from .graph import MolecularGraph


def murcko_scaffold_atoms(g: MolecularGraph) -> list[int]:
    """Atom indices of the scaffold: rings plus inter-ring linkers."""
    alive = set(range(g.num_atoms))
    degree = {u: len(g.neighbors(u)) for u in alive}
    changed = True
    while changed:
        changed = False
        for u in sorted(alive):
            if degree[u] <= 1 and not g.atoms[u].in_ring:
                alive.discard(u)
                for w in g.neighbors(u):
                    if w in alive:
                        degree[w] -= 1
                changed = True
    return sorted(alive)


def murcko_scaffold(g: MolecularGraph) -> str:
    """Canonical scaffold key; empty string for acyclic molecules."""
    return canonical_key(g, murcko_scaffold_atoms(g))
