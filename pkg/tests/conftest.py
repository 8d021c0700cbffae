import warnings
from pathlib import Path

import numpy as np
import pytest

from molmoe.brics import brics_decompose
from molmoe.graph import featurize
from molmoe.smiles import SmilesWarning, parse_smiles

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def corpus_smiles() -> list[str]:
    return FIXTURES.joinpath("corpus.smi").read_text().split()


@pytest.fixture(scope="session")
def corpus_graphs(corpus_smiles):
    """Parsed and featurized corpus; stereo/component warnings silenced."""
    graphs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmilesWarning)
        for s in corpus_smiles:
            graphs.append((s, featurize(parse_smiles(s))))
    return graphs


@pytest.fixture(scope="session")
def corpus_fragments(corpus_graphs):
    return [(s, g, brics_decompose(g)) for s, g in corpus_graphs]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_tape():
    from molmoe import autodiff as ad
    ad.active_tape().clear()
    yield
    ad.active_tape().clear()
