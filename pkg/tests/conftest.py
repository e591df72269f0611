import numpy as np
import pytest

from anatomy_forge.anchors import fit_anchors
from anatomy_forge.bank import build_bank
from anatomy_forge.demo import graph_text, make_demo_corpus
from anatomy_forge.relations import load_graph


@pytest.fixture(scope="session")
def corpus():
    return make_demo_corpus()


@pytest.fixture(scope="session")
def demo_bank(corpus):
    raw = sorted({int(v) for g in corpus for v in np.unique(g.data) if v})
    ids = [f"sub_{i:02d}" for i in range(len(corpus))]
    return build_bank(corpus, raw, source_ids=ids)


@pytest.fixture(scope="session")
def demo_anchors(corpus, demo_bank):
    return fit_anchors(corpus, demo_bank.class_map)


@pytest.fixture(scope="session")
def demo_graph(demo_bank):
    return load_graph(graph_text(), demo_bank.n_classes)
