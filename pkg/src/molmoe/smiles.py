"""SMILES parser for the grammar subset this package supports.

Supported: the organic subset written bare (B, C, N, O, P, S, F, Cl, Br, I),
aromatic lowercase (b, c, n, o, p, s), bracket atoms with explicit hydrogen
count and charge, bonds ``- = # :``, branches, ring closures ``0``-``9`` and
``%nn``, the ``.`` component separator, and a bare ``*`` wildcard.

Not supported: isotopes (parse error) and atom classes. Stereo markers
(``/``, ``\\``, ``@``, ``@@``) are accepted and dropped with a warning, since
nothing downstream is stereo-aware.

Aromaticity is purely notational: atoms written lowercase are aromatic and
must sit in a ring; Kekule-written rings are not promoted. An implicit bond
between two aromatic atoms inside a ring is aromatic, otherwise single.
Multi-component inputs keep the largest component (warned).
"""

from __future__ import annotations

import re
import warnings

from .graph import Atom, Bond, MolecularGraph, connected_components

ORGANIC_UPPER = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_LOWER = {"b", "c", "n", "o", "p", "s"}

# Smallest standard valence not below the current bond-order sum.
VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5),
    "S": (2, 4, 6), "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}

BOND_CHARS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
ORDER_SUM = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}

_BRACKET_RE = re.compile(
    r"\[(?P<isotope>\d+)?(?P<element>\*|[a-z]|[A-Z][a-z]?)"
    r"(?P<stereo>@{1,2})?"
    r"(?P<hcount>H\d?)?"
    r"(?P<charge>[+-]\d|\+{1,2}|-{1,2})?"
    r"(?P<rest>[^\]]*)\]"
)


class SmilesParseError(ValueError):
    """Malformed SMILES; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class SmilesWarning(UserWarning):
    pass


class _PendingAtom:
    __slots__ = ("atom", "offset", "explicit_h")

    def __init__(self, atom: Atom, offset: int, explicit_h: bool):
        self.atom = atom
        self.offset = offset
        self.explicit_h = explicit_h


class _PendingBond:
    __slots__ = ("u", "v", "order", "offset")

    def __init__(self, u: int, v: int, order: str | None, offset: int):
        self.u = u
        self.v = v
        self.order = order  # None means written implicitly
        self.offset = offset


def _parse_bracket_atom(text: str, pos: int) -> tuple[Atom, bool, int]:
    m = _BRACKET_RE.match(text, pos)
    if m is None:
        raise SmilesParseError("malformed bracket atom", pos)
    if m.group("isotope"):
        raise SmilesParseError("isotopes are not supported", pos + 1)
    if m.group("rest"):
        raise SmilesParseError(
            f"unsupported bracket content {m.group('rest')!r}", pos)
    symbol = m.group("element")
    aromatic = symbol.islower() and symbol != "*"
    if aromatic and symbol not in AROMATIC_LOWER:
        raise SmilesParseError(f"unknown aromatic element {symbol!r}", pos + 1)
    if m.group("stereo"):
        warnings.warn("ignoring atom stereo marker", SmilesWarning, stacklevel=4)
    hcount = 0
    if m.group("hcount"):
        digits = m.group("hcount")[1:]
        hcount = int(digits) if digits else 1
    charge = 0
    if m.group("charge"):
        c = m.group("charge")
        if c[-1].isdigit():
            charge = int(c[1]) * (1 if c[0] == "+" else -1)
        else:
            charge = c.count("+") - c.count("-")
    atom = Atom(element=symbol.capitalize() if aromatic else symbol,
                formal_charge=charge, is_aromatic=aromatic,
                num_hydrogens=hcount)
    return atom, True, m.end()


def parse_smiles(s: str) -> MolecularGraph:
    """Parse a SMILES string into an (unfeaturized) molecular graph."""
    if not s or not s.strip():
        raise SmilesParseError("empty SMILES", 0)
    text = s.strip()

    atoms: list[_PendingAtom] = []
    bonds: list[_PendingBond] = []
    anchor: int | None = None
    pending_bond: str | None = None
    pending_bond_offset = 0
    branch_stack: list[tuple[int, int]] = []  # (anchor atom, '(' offset)
    ring_open: dict[int, tuple[int, str | None, int]] = {}  # num -> (atom, order, offset)

    def add_atom(atom: Atom, offset: int, explicit_h: bool) -> None:
        nonlocal anchor, pending_bond
        idx = len(atoms)
        atoms.append(_PendingAtom(atom, offset, explicit_h))
        if anchor is not None:
            bonds.append(_PendingBond(anchor, idx, pending_bond, offset))
        elif pending_bond is not None:
            raise SmilesParseError("bond with no preceding atom",
                                   pending_bond_offset)
        pending_bond = None
        anchor = idx

    def close_ring(num: int, offset: int) -> None:
        nonlocal pending_bond
        if anchor is None:
            raise SmilesParseError("ring closure before any atom", offset)
        if num in ring_open:
            other, other_order, other_offset = ring_open.pop(num)
            if other == anchor:
                raise SmilesParseError(
                    f"ring closure {num} bonds an atom to itself", offset)
            if other_order is not None and pending_bond is not None \
                    and other_order != pending_bond:
                raise SmilesParseError(
                    f"conflicting bond orders on ring closure {num}", offset)
            order = pending_bond if pending_bond is not None else other_order
            if any((b.u, b.v) in ((other, anchor), (anchor, other)) for b in bonds):
                raise SmilesParseError(
                    f"ring closure {num} duplicates an existing bond", offset)
            bonds.append(_PendingBond(other, anchor, order, offset))
        else:
            ring_open[num] = (anchor, pending_bond, offset)
        pending_bond = None

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "[":
            atom, explicit_h, end = _parse_bracket_atom(text, i)
            add_atom(atom, i, explicit_h)
            i = end
        elif ch.isupper():
            symbol = ch
            if text[i:i + 2] in ("Cl", "Br"):
                symbol = text[i:i + 2]
            if symbol not in ORGANIC_UPPER:
                raise SmilesParseError(f"unknown element token {symbol!r}", i)
            add_atom(Atom(element=symbol), i, False)
            i += len(symbol)
        elif ch in AROMATIC_LOWER:
            add_atom(Atom(element=ch.upper(), is_aromatic=True), i, False)
            i += 1
        elif ch == "*":
            add_atom(Atom(element="*"), i, False)
            i += 1
        elif ch in BOND_CHARS:
            if pending_bond is not None:
                raise SmilesParseError("two bond symbols in a row", i)
            pending_bond = BOND_CHARS[ch]
            pending_bond_offset = i
            i += 1
        elif ch in "/\\":
            warnings.warn("ignoring bond stereo marker", SmilesWarning,
                          stacklevel=2)
            i += 1
        elif ch == "(":
            if anchor is None:
                raise SmilesParseError("branch before any atom", i)
            branch_stack.append((anchor, i))
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesParseError("unmatched ')'", i)
            if pending_bond is not None:
                raise SmilesParseError("dangling bond before ')'",
                                       pending_bond_offset)
            anchor = branch_stack.pop()[0]
            i += 1
        elif ch.isdigit():
            close_ring(int(ch), i)
            i += 1
        elif ch == "%":
            if i + 2 >= n or not text[i + 1:i + 3].isdigit():
                raise SmilesParseError("'%' needs two digits", i)
            close_ring(int(text[i + 1:i + 3]), i)
            i += 3
        elif ch == ".":
            if pending_bond is not None:
                raise SmilesParseError("bond across component separator",
                                       pending_bond_offset)
            anchor = None
            i += 1
        else:
            raise SmilesParseError(f"unexpected character {ch!r}", i)

    if branch_stack:
        raise SmilesParseError("unclosed '('", branch_stack[0][1])
    if pending_bond is not None:
        raise SmilesParseError("dangling bond at end of input",
                               pending_bond_offset)
    if ring_open:
        num, (_, _, offset) = min(ring_open.items(), key=lambda kv: kv[1][2])
        raise SmilesParseError(f"unbalanced ring closure {num}", offset)
    if not atoms:
        raise SmilesParseError("no atoms in input", 0)

    return _finalize(text, atoms, bonds)


def _finalize(source: str, pending_atoms: list[_PendingAtom],
              pending_bonds: list[_PendingBond]) -> MolecularGraph:
    g = MolecularGraph(
        atoms=[p.atom for p in pending_atoms],
        bonds=[Bond(b.u, b.v) for b in pending_bonds],
        source_smiles=source,
    )

    # key the largest connected component before anything else
    comps = connected_components(g)
    if len(comps) > 1:
        comps.sort(key=lambda c: (-len(c), c[0]))
        keep = set(comps[0])
        warnings.warn(
            f"multi-component SMILES: keeping largest component "
            f"({len(keep)} of {g.num_atoms} atoms)", SmilesWarning,
            stacklevel=3)
        remap = {old: new for new, old in enumerate(sorted(keep))}
        pending_atoms = [pending_atoms[i] for i in sorted(keep)]
        kept_bonds = [b for b in pending_bonds if b.u in remap]
        for b in kept_bonds:
            b.u, b.v = remap[b.u], remap[b.v]
        pending_bonds = kept_bonds
        g = MolecularGraph(
            atoms=[p.atom for p in pending_atoms],
            bonds=[Bond(b.u, b.v) for b in pending_bonds],
            source_smiles=source,
        )

    _perceive_rings(g)

    # resolve bond orders: implicit bonds between two aromatic ring atoms
    # are aromatic, every other implicit bond is single
    for bond, pend in zip(g.bonds, pending_bonds):
        if pend.order is not None:
            bond.order = pend.order
        else:
            u_ar = g.atoms[bond.u].is_aromatic
            v_ar = g.atoms[bond.v].is_aromatic
            bond.order = "aromatic" if (u_ar and v_ar and bond.in_ring) else "single"

    for idx, pend in enumerate(pending_atoms):
        atom = g.atoms[idx]
        if atom.is_aromatic and not atom.in_ring:
            raise SmilesParseError(
                f"aromatic atom {atom.element.lower()!r} outside any ring",
                pend.offset)

    g.refresh_degrees()
    for idx, pend in enumerate(pending_atoms):
        if not pend.explicit_h:
            g.atoms[idx].num_hydrogens = _implicit_hydrogens(g, idx)
    return g


def _perceive_rings(g: MolecularGraph) -> None:
    """Mark ring bonds (non-bridges) and ring atoms via one DFS."""
    n = g.num_atoms
    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * g.num_bonds
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            u, parent_bond, state = stack.pop()
            if state == 0:
                if disc[u] != -1:
                    continue
                disc[u] = low[u] = timer
                timer += 1
                stack.append((u, parent_bond, 1))
                for bi in g.incident_bonds(u):
                    if bi == parent_bond:
                        continue
                    w = g.bonds[bi].other(u)
                    if disc[w] == -1:
                        stack.append((w, bi, 0))
                    else:
                        low[u] = min(low[u], disc[w])
            else:
                for bi in g.incident_bonds(u):
                    if bi == parent_bond:
                        continue
                    w = g.bonds[bi].other(u)
                    if disc[w] > disc[u]:  # tree child
                        low[u] = min(low[u], low[w])
                        if low[w] > disc[u]:
                            is_bridge[bi] = True
    for bi, bond in enumerate(g.bonds):
        bond.in_ring = not is_bridge[bi]
    for u, atom in enumerate(g.atoms):
        atom.in_ring = any(g.bonds[bi].in_ring for bi in g.incident_bonds(u))


def _implicit_hydrogens(g: MolecularGraph, idx: int) -> int:
    atom = g.atoms[idx]
    if atom.element == "*":
        return 0
    if atom.is_aromatic:
        # only aromatic carbon (and boron) carries implicit hydrogens;
        # aromatic N/O/P/S must be written bracketed to claim one
        if atom.element in ("C", "B"):
            return max(0, 3 - atom.degree)
        return 0
    order_sum = 0.0
    for bi in g.incident_bonds(idx):
        order_sum += ORDER_SUM[g.bonds[bi].order]
    valences = VALENCES.get(atom.element)
    if valences is None:
        return 0
    bond_count = int(order_sum + 0.5)
    for v in valences:
        if v >= bond_count:
            return v - bond_count
    return 0
