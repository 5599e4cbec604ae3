import numpy as np
import pytest
import scipy.sparse as sp

from gchgnn.hetero_graph import HeteroGraph, MetaPath, Relation
from gchgnn.storage import write_fmat


def make_toy_graph(with_features=True, with_labels=False) -> HeteroGraph:
    """Small citation-flavored fixture: 5 papers, 3 authors, 2 subjects.

    PA edges: (P0,A0) (P1,A0) (P1,A1) (P2,A1) (P3,A2)
    PS edges: (P0,S0) (P1,S0) (P2,S1) (P3,S1) (P4,S1)

    Hand-enumerated composition (diagonal cleared):
      paper-author-paper pairs: {0,1}, {1,2}
      paper-subject-paper pairs: {0,1}, {2,3}, {2,4}, {3,4}
    so papers 0 and 1 are linked under both meta-paths.
    """
    type_names = ["paper", "author", "subject"]
    type_of = np.array([0] * 5 + [1] * 3 + [2] * 2, dtype=np.int32)
    pa = sp.csr_matrix(
        (np.ones(5, dtype=bool), ([0, 1, 1, 2, 3], [0, 0, 1, 1, 2])), shape=(5, 3))
    ps = sp.csr_matrix(
        (np.ones(5, dtype=bool), ([0, 1, 2, 3, 4], [0, 0, 1, 1, 1])), shape=(5, 2))
    relations = [Relation("PA", "paper", "author"), Relation("PS", "paper", "subject")]
    features = {}
    if with_features:
        rng = np.random.default_rng(11)
        features = {
            "paper": rng.normal(size=(5, 4)).astype(np.float32),
            "author": rng.normal(size=(3, 4)).astype(np.float32),
            "subject": rng.normal(size=(2, 4)).astype(np.float32),
        }
    labels = {0: 0, 1: 0, 2: 1, 3: 1, 4: 1} if with_labels else None
    return HeteroGraph(type_names, type_of, relations,
                       {"PA": pa, "PS": ps}, features, labels)


@pytest.fixture
def toy_graph():
    return make_toy_graph()


@pytest.fixture
def toy_graph_labeled():
    return make_toy_graph(with_labels=True)


@pytest.fixture
def pap():
    return MetaPath.parse("PAP", "PA,~PA")


@pytest.fixture
def psp():
    return MetaPath.parse("PSP", "PS,~PS")


def write_dataset_dir(d, g: HeteroGraph):
    """Materialize a HeteroGraph as the on-disk dataset layout."""
    g.save(d)
    return d


def write_minimal_dataset(d, edges=(), labels=None):
    """Three-type dataset written file by file, for loader error tests."""
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "nodes.tsv", "w") as fh:
        for gid, t in [(0, "paper"), (1, "paper"), (2, "author"), (3, "subject")]:
            fh.write(f"{gid}\t{t}\n")
    with open(d / "edges.tsv", "w") as fh:
        for s, t, r in edges:
            fh.write(f"{s}\t{t}\t{r}\n")
    rng = np.random.default_rng(3)
    write_fmat(d / "features_paper.fmat", rng.normal(size=(2, 3)))
    write_fmat(d / "features_author.fmat", rng.normal(size=(1, 3)))
    write_fmat(d / "features_subject.fmat", rng.normal(size=(1, 3)))
    if labels:
        with open(d / "labels.tsv", "w") as fh:
            for gid, cls in labels:
                fh.write(f"{gid}\t{cls}\n")
    return d
