import pytest
import torch

from src.kg_data import (
    BoundsError,
    DatasetError,
    ParseError,
    SparseGraph,
    TypeCatalog,
    graphs_to_triples,
    load_dataset,
    load_labels,
    subgraphs_to_graphs,
    triples_to_graphs,
)


def _write(path, text):
    path.write_text(text, encoding='utf-8')
    return path


def test_minimal_vocabulary(tmp_path):
    line = "a\tr\tb\n"
    store = load_dataset(_write(tmp_path / "train.txt", line), _write(tmp_path / "valid.txt", line),
                         _write(tmp_path / "test.txt", line))
    assert store.d_e == 2
    assert store.d_r == 1
    assert store.training_split == [(0, 0, 1)]


def test_vocabulary_follows_first_occurrence(store):
    assert store.entities == ("/m/a", "/m/b", "/m/c", "/m/d")
    assert store.relations == ("/people/person/friend", "/location/location/contains")
    assert store.train == ((0, 0, 1), (1, 0, 2), (2, 1, 0), (0, 1, 3))
    assert store.valid == ((1, 1, 3),)
    assert store.test == ((3, 0, 0),)


def test_final_mode_moves_valid_into_training(dataset_dir):
    from src.kg_data import load_dataset_dir

    tuning = load_dataset_dir(dataset_dir)
    final = load_dataset_dir(dataset_dir, final_mode=True)
    assert tuning.training_split == list(tuning.train)
    assert tuning.evaluation_split == list(tuning.valid)
    assert final.training_split == list(final.train) + list(final.valid)
    assert final.evaluation_split == list(final.test)


def test_filters_cover_every_split(store):
    assert store.tail_filter[(0, 0)] == frozenset({1})
    assert store.tail_filter[(0, 1)] == frozenset({3})
    # (/m/b, contains, /m/d) is in valid, (/m/d, friend, /m/a) in test
    assert store.head_filter[(1, 3)] == frozenset({0, 1})
    assert store.head_filter[(0, 0)] == frozenset({3})
    assert store.is_true((3, 0, 0))
    assert not store.is_true((3, 0, 1))


def test_short_line_reports_line_number(tmp_path):
    bad = _write(tmp_path / "train.txt", "a\tr\tb\nc\tr\n")
    ok = _write(tmp_path / "ok.txt", "a\tr\tb\n")
    with pytest.raises(ParseError) as exc:
        load_dataset(bad, ok, ok)
    assert exc.value.line_number == 2


def test_long_line_reports_line_number(tmp_path):
    bad = _write(tmp_path / "train.txt", "a\tr\tb\na\tr\tb\tc\n")
    ok = _write(tmp_path / "ok.txt", "a\tr\tb\n")
    with pytest.raises(ParseError) as exc:
        load_dataset(bad, ok, ok)
    assert exc.value.line_number == 2


def test_empty_file_is_dataset_error(tmp_path):
    empty = _write(tmp_path / "train.txt", "")
    ok = _write(tmp_path / "ok.txt", "a\tr\tb\n")
    with pytest.raises(DatasetError):
        load_dataset(empty, ok, ok)


def test_encode_decode(store):
    triple = store.encode("/m/a", "/people/person/friend", "/m/b")
    assert triple == (0, 0, 1)
    assert store.decode(triple) == ("/m/a", "/people/person/friend", "/m/b")
    with pytest.raises(BoundsError):
        store.encode("/m/zz", "/people/person/friend", "/m/b")
    with pytest.raises(BoundsError):
        store.decode((0, 7, 1))


def test_triple_to_graph():
    graphs = triples_to_graphs([(0, 5, 3)], d_e=4, d_r=6, dtype=torch.float64)
    assert graphs.A[0].tolist() == [[0, 1], [0, 0]]
    assert graphs.E[0, 0, 1, 5] == 1
    assert graphs.E[0].sum() == 1
    assert graphs.F[0, 0].tolist() == [1, 0, 0, 0]
    assert graphs.F[0, 1].tolist() == [0, 0, 0, 1]


def test_self_loop_graph():
    graphs = triples_to_graphs([(2, 1, 2)], d_e=4, d_r=3)
    assert graphs.A[0].tolist() == [[1, 0], [0, 0]]
    assert graphs.E[0, 0, 0, 1] == 1
    assert graphs.F[0, 0, 2] == 1
    # Second node repeats the subject
    assert graphs.F[0, 1, 2] == 1


def test_out_of_range_triple():
    with pytest.raises(BoundsError):
        triples_to_graphs([(0, 6, 3)], d_e=4, d_r=6)
    with pytest.raises(BoundsError):
        triples_to_graphs([(4, 0, 0)], d_e=4, d_r=6)


def test_graphs_to_triples():
    graphs = triples_to_graphs([(0, 5, 3), (2, 1, 2)], d_e=4, d_r=6)
    assert graphs_to_triples(graphs) == [(0, 5, 3), (2, 1, 2)]
    assert graphs_to_triples(graphs, per_graph=True) == [[(0, 5, 3)], [(2, 1, 2)]]


def test_edgeless_graph_has_no_triples():
    graphs = triples_to_graphs([(0, 1, 1)], d_e=2, d_r=2)
    graphs.A.zero_()
    assert graphs_to_triples(graphs) == []


def test_edge_direction_read_off():
    A = torch.zeros(1, 2, 2)
    E = torch.zeros(1, 2, 2, 5)
    F = torch.zeros(1, 2, 8)
    A[0, 1, 0] = 1
    E[0, 1, 0, 4] = 1
    F[0, 1, 7] = 1
    F[0, 0, 2] = 1
    assert graphs_to_triples(SparseGraph(A, E, F)) == [(7, 4, 2)]


def test_subgraphs_with_more_nodes():
    graphs = subgraphs_to_graphs([[(0, 0, 1), (1, 1, 2)]], n=3, d_e=4, d_r=2)
    assert graphs.F[0].argmax(dim=-1).tolist() == [0, 1, 2]
    assert graphs.A[0].tolist() == [[0, 1, 0], [0, 0, 1], [0, 0, 0]]
    assert sorted(graphs_to_triples(graphs)) == [(0, 0, 1), (1, 1, 2)]
    with pytest.raises(ValueError):
        subgraphs_to_graphs([[(0, 0, 1), (2, 0, 3)]], n=3, d_e=4, d_r=2)


def test_sparse_graph_flatten_width():
    graphs = triples_to_graphs([(0, 1, 2)] * 3, d_e=5, d_r=2)
    assert len(graphs) == 3
    assert graphs.flatten().shape == (3, 4 + 8 + 10)
    assert len(graphs[1]) == 1


def test_base_type():
    assert TypeCatalog.base_type("/people/measured_person") == "people"
    assert TypeCatalog.base_type("people") == "people"
    assert TypeCatalog.base_type("") == ""


def test_type_catalog(catalog):
    assert "people" in catalog.base_types_of(0)
    assert catalog.has_type(0, "people")
    assert not catalog.has_type(2, "people")
    assert catalog.has_type(2, "location/loc", match_mode="substring")
    assert catalog.skipped == 1
    assert catalog.baseline("people") == pytest.approx(0.5)


def test_entity_without_types():
    catalog = TypeCatalog(types={0: frozenset({"/people/person"})})
    assert catalog.types_of(5) == frozenset()
    assert not catalog.has_type(5, "people")


def test_load_labels(tmp_path):
    path = _write(tmp_path / "labels.txt", "/m/a\tAlice\n/m/b\tBob\n")
    assert load_labels(path) == {"/m/a": "Alice", "/m/b": "Bob"}
