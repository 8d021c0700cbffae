"""Test-only helpers: alternative SMILES writings and shared checks.

The writer emits a *valid, non-canonical* SMILES for a parsed graph, used to
build equivalence fixtures (same molecule, different writing). It is test
apparatus, not part of the package surface.
"""

from __future__ import annotations

import numpy as np

from molmoe.graph import MolecularGraph
from molmoe.smiles import AROMATIC_LOWER, ORGANIC_UPPER, ORDER_SUM, VALENCES

_BOND_CHAR = {"double": "=", "triple": "#", "aromatic": ":"}


def _inferred_hydrogens(g: MolecularGraph, idx: int) -> int:
    atom = g.atoms[idx]
    if atom.element == "*":
        return 0
    if atom.is_aromatic:
        return max(0, 3 - atom.degree) if atom.element in ("C", "B") else 0
    total = sum(ORDER_SUM[g.bonds[bi].order] for bi in g.incident_bonds(idx))
    count = int(total + 0.5)
    for v in VALENCES.get(atom.element, ()):
        if v >= count:
            return v - count
    return 0


def _atom_token(g: MolecularGraph, idx: int) -> str:
    atom = g.atoms[idx]
    symbol = atom.element.lower() if atom.is_aromatic else atom.element
    bare_ok = (
        atom.formal_charge == 0
        and ((atom.is_aromatic and symbol in AROMATIC_LOWER)
             or (not atom.is_aromatic and atom.element in ORGANIC_UPPER)
             or atom.element == "*")
        and atom.num_hydrogens == _inferred_hydrogens(g, idx)
    )
    if bare_ok:
        return symbol
    h = ""
    if atom.num_hydrogens == 1:
        h = "H"
    elif atom.num_hydrogens > 1:
        h = f"H{atom.num_hydrogens}"
    charge = ""
    if atom.formal_charge == 1:
        charge = "+"
    elif atom.formal_charge == -1:
        charge = "-"
    elif atom.formal_charge > 1:
        charge = f"+{atom.formal_charge}"
    elif atom.formal_charge < -1:
        charge = f"-{-atom.formal_charge}"
    return f"[{symbol}{h}{charge}]"


def _bond_prefix(g: MolecularGraph, bond_index: int) -> str:
    bond = g.bonds[bond_index]
    if bond.order in _BOND_CHAR:
        return _BOND_CHAR[bond.order]
    # explicit '-' whenever both ends are aromatic, so the reader cannot
    # promote an implicit ring bond to aromatic
    if g.atoms[bond.u].is_aromatic and g.atoms[bond.v].is_aromatic:
        return "-"
    return ""


def write_smiles_variant(g: MolecularGraph, start: int = 0,
                         rng: np.random.Generator | None = None) -> str:
    """Emit a valid SMILES for ``g`` starting at ``start``.

    Neighbor order is shuffled when ``rng`` is given, producing different
    but equivalent writings of the same molecule.
    """
    g.refresh_degrees()
    visited = [False] * g.num_atoms
    ring_digits: dict[int, int] = {}  # bond index -> digit
    next_digit = [1]
    tree_children: dict[int, list[tuple[int, int]]] = {}
    closures: dict[int, list[int]] = {u: [] for u in range(g.num_atoms)}

    # first pass: build DFS tree and assign ring-closure digits
    order_stack = [(start, -1)]
    visited[start] = True
    seen_bonds: set[int] = set()
    dfs_order = []
    while order_stack:
        u, parent_bond = order_stack.pop()
        dfs_order.append(u)
        nbrs = list(g.incident_bonds(u))
        if rng is not None:
            rng.shuffle(nbrs)
        children = []
        for bi in nbrs:
            if bi == parent_bond or bi in seen_bonds:
                continue
            w = g.bonds[bi].other(u)
            if visited[w]:
                seen_bonds.add(bi)
                digit = next_digit[0]
                next_digit[0] += 1
                ring_digits[bi] = digit
                closures[u].append(bi)
                closures[w].append(bi)
            else:
                visited[w] = True
                seen_bonds.add(bi)
                children.append((w, bi))
        tree_children[u] = children
        for w, bi in reversed(children):
            order_stack.append((w, bi))

    # second pass: emit, depth first, branches parenthesized
    def emit(u: int, via_bond: int) -> str:
        parts = []
        if via_bond >= 0:
            parts.append(_bond_prefix(g, via_bond))
        parts.append(_atom_token(g, u))
        for bi in closures[u]:
            digit = ring_digits[bi]
            if digit > 9:
                token = f"%{digit:02d}"
            else:
                token = str(digit)
            # bond symbol only at the opening mention
            opening = bi not in emitted_closures
            if opening:
                emitted_closures.add(bi)
                parts.append(_bond_prefix(g, bi) + token)
            else:
                parts.append(token)
        children = tree_children[u]
        for pos, (w, bi) in enumerate(children):
            if pos < len(children) - 1:
                parts.append("(" + emit(w, bi) + ")")
            else:
                parts.append(emit(w, bi))
        return "".join(parts)

    emitted_closures: set[int] = set()
    return emit(start, -1)
