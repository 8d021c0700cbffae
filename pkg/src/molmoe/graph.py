"""Molecular graph types and the fixed atom/bond featurization.

Heavy atoms are nodes, bonds are undirected edges stored once. Feature
layout is fixed so that checkpoints and fixtures stay stable:

atom rows (``ATOM_FEATURE_DIM`` columns):
    element one-hot over ``ELEMENTS`` + "other" slot   (11)
    degree one-hot, 0-5, clipped                        (6)
    formal charge one-hot, -2..+2, clipped              (5)
    hydrogen count one-hot, 0-4, clipped                (5)
    aromatic flag                                       (1)
    in-ring flag                                        (1)

bond rows (``BOND_FEATURE_DIM`` columns):
    order one-hot over ``BOND_ORDERS``                  (4)
    in-ring flag                                        (1)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ELEMENTS = ("B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I")
BOND_ORDERS = ("single", "double", "triple", "aromatic")

ATOM_FEATURE_DIM = (len(ELEMENTS) + 1) + 6 + 5 + 5 + 1 + 1
BOND_FEATURE_DIM = len(BOND_ORDERS) + 1

BOND_ORDER_VALUE = {"single": 1.0, "double": 2.0, "triple": 3.0, "aromatic": 1.5}


@dataclass
class Atom:
    element: str
    formal_charge: int = 0
    is_aromatic: bool = False
    num_hydrogens: int = 0
    degree: int = 0
    in_ring: bool = False


@dataclass
class Bond:
    u: int
    v: int
    order: str = "single"
    in_ring: bool = False

    def other(self, atom_index: int) -> int:
        return self.v if atom_index == self.u else self.u


@dataclass
class MolecularGraph:
    atoms: list[Atom]
    bonds: list[Bond]
    source_smiles: str = ""
    atom_features: np.ndarray | None = None
    bond_features: np.ndarray | None = None
    _neighbors: list[list[int]] | None = field(default=None, repr=False)
    _incident: list[list[int]] | None = field(default=None, repr=False)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def _build_adjacency_lists(self) -> None:
        nbrs: list[list[int]] = [[] for _ in self.atoms]
        inc: list[list[int]] = [[] for _ in self.atoms]
        for i, b in enumerate(self.bonds):
            nbrs[b.u].append(b.v)
            nbrs[b.v].append(b.u)
            inc[b.u].append(i)
            inc[b.v].append(i)
        self._neighbors = nbrs
        self._incident = inc

    def neighbors(self, u: int) -> list[int]:
        if self._neighbors is None:
            self._build_adjacency_lists()
        return self._neighbors[u]

    def incident_bonds(self, u: int) -> list[int]:
        """Indices into ``bonds`` of the bonds touching atom ``u``."""
        if self._incident is None:
            self._build_adjacency_lists()
        return self._incident[u]

    def adjacency(self) -> np.ndarray:
        """Symmetric boolean adjacency matrix with zero diagonal."""
        n = self.num_atoms
        a = np.zeros((n, n), dtype=bool)
        for b in self.bonds:
            a[b.u, b.v] = True
            a[b.v, b.u] = True
        return a

    def bond_between(self, u: int, v: int) -> Bond | None:
        for i in self.incident_bonds(u):
            b = self.bonds[i]
            if b.other(u) == v:
                return b
        return None

    def refresh_degrees(self) -> None:
        if self._neighbors is None:
            self._build_adjacency_lists()
        for u, atom in enumerate(self.atoms):
            atom.degree = len(self._neighbors[u])


def _one_hot(index: int, size: int) -> list[float]:
    row = [0.0] * size
    row[index] = 1.0
    return row


def atom_feature_vector(atom: Atom) -> np.ndarray:
    try:
        elem_idx = ELEMENTS.index(atom.element)
    except ValueError:
        elem_idx = len(ELEMENTS)  # "other" slot
    degree = min(max(atom.degree, 0), 5)
    charge = min(max(atom.formal_charge, -2), 2)
    hydrogens = min(max(atom.num_hydrogens, 0), 4)
    row = (
        _one_hot(elem_idx, len(ELEMENTS) + 1)
        + _one_hot(degree, 6)
        + _one_hot(charge + 2, 5)
        + _one_hot(hydrogens, 5)
        + [1.0 if atom.is_aromatic else 0.0]
        + [1.0 if atom.in_ring else 0.0]
    )
    return np.array(row)


def bond_feature_vector(bond: Bond) -> np.ndarray:
    row = _one_hot(BOND_ORDERS.index(bond.order), len(BOND_ORDERS))
    row.append(1.0 if bond.in_ring else 0.0)
    return np.array(row)


def featurize(g: MolecularGraph) -> MolecularGraph:
    """Populate ``atom_features`` and ``bond_features`` in place."""
    g.refresh_degrees()
    if g.num_atoms:
        g.atom_features = np.stack([atom_feature_vector(a) for a in g.atoms])
    else:
        g.atom_features = np.zeros((0, ATOM_FEATURE_DIM))
    if g.num_bonds:
        g.bond_features = np.stack([bond_feature_vector(b) for b in g.bonds])
    else:
        g.bond_features = np.zeros((0, BOND_FEATURE_DIM))
    return g


def induced_subgraph(g: MolecularGraph, atom_indices) -> MolecularGraph:
    """Subgraph on ``atom_indices`` with atoms re-indexed in sorted order."""
    keep = sorted(set(int(i) for i in atom_indices))
    remap = {old: new for new, old in enumerate(keep)}
    atoms = [
        Atom(a.element, a.formal_charge, a.is_aromatic, a.num_hydrogens,
             0, a.in_ring)
        for a in (g.atoms[i] for i in keep)
    ]
    bonds = [
        Bond(remap[b.u], remap[b.v], b.order, b.in_ring)
        for b in g.bonds
        if b.u in remap and b.v in remap
    ]
    sub = MolecularGraph(atoms=atoms, bonds=bonds, source_smiles=g.source_smiles)
    sub.refresh_degrees()
    return sub


def connected_components(g: MolecularGraph, blocked_bonds=frozenset()) -> list[list[int]]:
    """Connected components, optionally ignoring the given bond indices."""
    n = g.num_atoms
    seen = [False] * n
    comps: list[list[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for bi in g.incident_bonds(u):
                if bi in blocked_bonds:
                    continue
                w = g.bonds[bi].other(u)
                if not seen[w]:
                    seen[w] = True
                    stack.append(w)
        comps.append(sorted(comp))
    return comps
