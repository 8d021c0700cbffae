"""Canonical keys for molecular graphs and their subgraphs.

The key is an order-independent text encoding: atoms are ranked by iterated
neighborhood refinement (with individualization to break residual ties), the
graph is relabeled by rank, and atoms plus edges are listed in that canonical
order. Two parses of the same molecule yield the same key no matter how the
SMILES was written; non-isomorphic (sub)graphs yield different keys.

Hydrogen counts and parent-graph degrees are deliberately excluded from the
atom labels so that keys compare induced subgraphs (scaffolds, fragments) by
their own topology, not by what was attached to them in the parent.
"""

from __future__ import annotations

from .graph import MolecularGraph

_ORDER_CODE = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}


def _refine(init: list[int], adj: list[list[tuple[int, str]]]) -> list[int]:
    """Iterate neighborhood refinement to a fixed point; returns dense ranks."""
    ranks = _densify(init)
    n = len(ranks)
    while True:
        sigs = [
            (ranks[u], tuple(sorted((code, ranks[w]) for w, code in adj[u])))
            for u in range(n)
        ]
        new_ranks = _densify_keys(sigs)
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _densify(values) -> list[int]:
    ordered = sorted(set(values))
    lookup = {v: i for i, v in enumerate(ordered)}
    return [lookup[v] for v in values]


def _densify_keys(keys) -> list[int]:
    ordered = sorted(set(keys))
    lookup = {k: i for i, k in enumerate(ordered)}
    return [lookup[k] for k in keys]


def _encode(ranks: list[int], labels: list[str],
            adj: list[list[tuple[int, str]]]) -> str:
    order = sorted(range(len(ranks)), key=lambda u: ranks[u])
    pos = {u: i for i, u in enumerate(order)}
    atom_part = ",".join(labels[u] for u in order)
    edges = []
    for u in range(len(ranks)):
        for w, code in adj[u]:
            if pos[u] < pos[w]:
                edges.append(f"{pos[u]}{code}{pos[w]}")
    return atom_part + "|" + ";".join(sorted(edges))


def _canonical_string(ranks: list[int], labels: list[str],
                      adj: list[list[tuple[int, str]]]) -> str:
    n = len(ranks)
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied = sorted(r for r, c in counts.items() if c > 1)
    if not tied:
        return _encode(ranks, labels, adj)
    # individualize one member of the smallest tied class, refine, recurse;
    # the lexicographically smallest outcome is the canonical one
    target = tied[0]
    best: str | None = None
    for u in range(n):
        if ranks[u] != target:
            continue
        bumped = [r * 2 for r in ranks]
        bumped[u] -= 1
        candidate = _canonical_string(_refine(bumped, adj), labels, adj)
        if best is None or candidate < best:
            best = candidate
    assert best is not None
    return best


def canonical_key(g: MolecularGraph, atom_indices=None) -> str:
    """Canonical text key of ``g`` or of the induced subgraph on the indices."""
    if atom_indices is None:
        keep = list(range(g.num_atoms))
    else:
        keep = sorted(set(int(i) for i in atom_indices))
    if not keep:
        return ""
    local = {gidx: i for i, gidx in enumerate(keep)}
    labels = []
    for gidx in keep:
        a = g.atoms[gidx]
        charge = f"{a.formal_charge:+d}" if a.formal_charge else ""
        labels.append(f"{a.element.lower() if a.is_aromatic else a.element}{charge}")
    adj: list[list[tuple[int, str]]] = [[] for _ in keep]
    for b in g.bonds:
        if b.u in local and b.v in local:
            code = _ORDER_CODE[b.order]
            adj[local[b.u]].append((local[b.v], code))
            adj[local[b.v]].append((local[b.u], code))
    init = _densify_keys([(labels[i], len(adj[i])) for i in range(len(keep))])
    return _canonical_string(_refine(init, adj), labels, adj)
