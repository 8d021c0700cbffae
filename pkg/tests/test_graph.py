import numpy as np
import pytest

from molmoe.graph import (ATOM_FEATURE_DIM, BOND_FEATURE_DIM, ELEMENTS,
                          connected_components, featurize, induced_subgraph)
from molmoe.smiles import parse_smiles

ELEMENT_SLOTS = len(ELEMENTS) + 1
DEGREE_BASE = ELEMENT_SLOTS
CHARGE_BASE = DEGREE_BASE + 6
HCOUNT_BASE = CHARGE_BASE + 5
AROMATIC_COL = HCOUNT_BASE + 5
RING_COL = AROMATIC_COL + 1


def test_feature_dimensions():
    g = featurize(parse_smiles("CCO"))
    assert g.atom_features.shape == (3, ATOM_FEATURE_DIM)
    assert g.bond_features.shape == (2, BOND_FEATURE_DIM)


def test_methane_feature_slots():
    row = featurize(parse_smiles("C")).atom_features[0]
    assert row[ELEMENTS.index("C")] == 1.0
    assert row[DEGREE_BASE + 0] == 1.0        # degree 0
    assert row[CHARGE_BASE + 2] == 1.0        # charge 0
    assert row[HCOUNT_BASE + 4] == 1.0        # four hydrogens
    assert row[AROMATIC_COL] == 0.0
    assert row[RING_COL] == 0.0
    assert row.sum() == 4.0                   # four one-hot groups, two flags off


def test_benzene_atom_flags():
    g = featurize(parse_smiles("c1ccccc1"))
    assert (g.atom_features[:, AROMATIC_COL] == 1.0).all()
    assert (g.atom_features[:, RING_COL] == 1.0).all()


def test_charged_oxygen_feature():
    g = featurize(parse_smiles("[O-]C"))
    row = g.atom_features[0]
    assert row[CHARGE_BASE + 1] == 1.0        # charge -1


def test_unknown_element_maps_to_other_slot():
    g = featurize(parse_smiles("[Se]C"))
    assert g.atom_features[0][len(ELEMENTS)] == 1.0


def test_bond_features():
    g = featurize(parse_smiles("C=Cc1ccccc1"))
    double = g.bond_features[0]
    assert double[1] == 1.0 and double[4] == 0.0
    aromatic_rows = g.bond_features[g.bond_features[:, 3] == 1.0]
    assert (aromatic_rows[:, 4] == 1.0).all()  # aromatic bonds in ring


def test_adjacency_matrix():
    g = parse_smiles("CC(C)O")
    a = g.adjacency()
    assert a.shape == (4, 4)
    assert (a == a.T).all()
    assert not a.diagonal().any()
    assert a.sum() == 2 * g.num_bonds


def test_induced_subgraph_reindexes():
    g = parse_smiles("CC(=O)Nc1ccccc1")
    ring = [i for i, a in enumerate(g.atoms) if a.in_ring]
    sub = induced_subgraph(g, ring)
    assert sub.num_atoms == 6
    assert sub.num_bonds == 6
    assert all(a.element == "C" for a in sub.atoms)


def test_connected_components_with_blocked_bonds():
    g = parse_smiles("CCO")
    assert connected_components(g) == [[0, 1, 2]]
    assert connected_components(g, frozenset({0})) == [[0], [1, 2]]


def test_degree_bounds_are_clipped():
    # a 6-coordinate sulfur exceeds the degree-5 one-hot and lands in slot 5
    g = featurize(parse_smiles("FS(F)(F)(F)(F)F"))
    s_row = g.atom_features[1]
    assert s_row[DEGREE_BASE + 5] == 1.0


@pytest.mark.parametrize("smiles", ["C", "CCO", "c1ccccc1", "CC(=O)NC"])
def test_feature_rows_sum_to_constant(smiles):
    g = featurize(parse_smiles(smiles))
    sums = g.atom_features[:, :HCOUNT_BASE + 5].sum(axis=1)
    assert (sums == 4.0).all()  # element, degree, charge, hcount one-hots


def test_featurize_empty_bond_list():
    g = featurize(parse_smiles("C"))
    assert g.bond_features.shape == (0, BOND_FEATURE_DIM)
    assert np.isfinite(g.atom_features).all()
