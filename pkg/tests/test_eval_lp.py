import numpy as np
import pytest

from src.eval_lp import (
    RankRecord,
    _half_rank,
    evaluate,
    rank_triple,
    read_key_values,
    subset_sample,
    summarize,
    write_lp_report,
    write_rank_table,
)
from src.kg_data import BoundsError, load_dataset_dir
from src.tensor_core import ContractError


class TableScorer:
    """Scores from a dict, zero for anything unlisted."""

    def __init__(self, table):
        self.table = table
        self.calls = 0

    def __call__(self, triples):
        self.calls += 1
        return np.array([self.table.get(tuple(t), 0.0) for t in triples])


def hashed_scorer(triples):
    return np.array([((37 * s + 11 * r + 5 * o) % 17) / 17.0 for s, r, o in triples])


def test_half_rank_ties():
    assert _half_rank(np.array([5.0, 5.0, 5.0, 3.0]), target=0, excluded=[]) == 2.0
    assert _half_rank(np.array([1.0, 9.0, 3.0]), target=1, excluded=[]) == 1.0
    assert _half_rank(np.array([9.0, 5.0, 7.0]), target=1, excluded=[0]) == 2.0


def test_filtered_rank_is_one_lower(make_dataset):
    store = load_dataset_dir(make_dataset([("a", "r", "b"), ("a", "r", "c")], [("a", "r", "c")], [("a", "r", "b")]))
    a, r, b, c = store.entity_index['a'], 0, store.entity_index['b'], store.entity_index['c']
    scorer = TableScorer({(a, r, c): 10.0, (a, r, b): 5.0})

    raw = rank_triple((a, r, b), scorer, store, filtered=False)
    filtered = rank_triple((a, r, b), scorer, store, filtered=True)
    assert raw.tail_rank == 2.0
    assert filtered.tail_rank == raw.tail_rank - 1


def test_rank_triple_bounds(store):
    with pytest.raises(BoundsError):
        rank_triple((0, 0, 9), hashed_scorer, store)


def test_summarize_examples():
    perfect = summarize([RankRecord((0, 0, 1), 1.0, 1.0)])
    assert perfect.mrr == 1.0
    assert all(value == 1.0 for value in perfect.hits.values())

    report = summarize([RankRecord((0, 0, 1), 2.0, 4.0)])
    assert report.mrr == pytest.approx(0.375)
    assert report.hits_at(1) == 0.0
    assert report.hits_at(3) == 0.5
    assert report.hits_at(10) == 1.0

    third = summarize([RankRecord((0, 0, 1), 3.0, 3.0)])
    assert (third.hits_at(1), third.hits_at(3), third.hits_at(10)) == (0.0, 1.0, 1.0)


def test_empty_evaluation_is_contract_error(store):
    with pytest.raises(ContractError):
        summarize([])
    with pytest.raises(ContractError):
        evaluate([], hashed_scorer, store, progress_bar=False)


def test_evaluate_is_order_and_batch_invariant(store):
    triples = list(store.train) + list(store.valid) + list(store.test)
    base = evaluate(triples, hashed_scorer, store, progress_bar=False)
    reversed_order = evaluate(triples[::-1], hashed_scorer, store, progress_bar=False)
    tiny_batches = evaluate(triples, hashed_scorer, store, batch_size=1, progress_bar=False)
    threaded = evaluate(triples, hashed_scorer, store, workers=3, progress_bar=False)

    assert reversed_order.mrr == base.mrr
    assert reversed_order.hits == base.hits
    assert tiny_batches.mrr == base.mrr
    assert threaded.mrr == base.mrr
    assert [rec.triple for rec in threaded.records] == triples


def _random_table(store, seed, decimals=1):
    """Random scores over every candidate triple, rounded so that ties occur."""
    rng = np.random.default_rng(seed)
    return TableScorer({(s, r, o): round(float(rng.random()), decimals)
                        for s in range(store.d_e) for r in range(store.d_r) for o in range(store.d_e)})


def _all_triples(store):
    return list(store.train) + list(store.valid) + list(store.test)


@pytest.mark.parametrize("seed", range(5))
def test_filtered_rank_never_exceeds_raw(store, seed):
    scorer = _random_table(store, seed)
    for triple in _all_triples(store):
        raw = rank_triple(triple, scorer, store, filtered=False)
        filtered = rank_triple(triple, scorer, store, filtered=True)
        assert 1.0 <= filtered.head_rank <= raw.head_rank <= store.d_e
        assert 1.0 <= filtered.tail_rank <= raw.tail_rank <= store.d_e


def test_constant_scorer_ranks_in_the_middle(store):
    def constant(triples):
        return np.zeros(len(triples))

    report = evaluate(_all_triples(store), constant, store, filtered=False, progress_bar=False)
    middle = 1 + (store.d_e - 1) / 2
    assert all(rec.head_rank == middle and rec.tail_rank == middle for rec in report.records)
    assert report.mrr == pytest.approx(1 / middle, abs=1e-12)


def test_hits_grow_with_k():
    rng = np.random.default_rng(0)
    records = [RankRecord((0, 0, 1), float(h), float(t)) for h, t in rng.integers(1, 30, size=(200, 2)) / 2 + 0.5]
    hits = summarize(records, hits_at=tuple(range(1, 31))).hits
    values = [hits[k] for k in range(1, 31)]
    assert values == sorted(values)
    assert values[-1] == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_report_is_exact_under_shuffled_order(store, seed):
    triples = _all_triples(store)
    scorer = _random_table(store, seed + 10, decimals=6)
    shuffled = [triples[i] for i in np.random.default_rng(seed).permutation(len(triples))]
    base = evaluate(triples, scorer, store, progress_bar=False)
    other = evaluate(shuffled, scorer, store, progress_bar=False)
    assert other.mrr == base.mrr
    assert other.hits == base.hits
    assert other.to_dict() == base.to_dict()


def test_subset_sample():
    split = [(i, 0, i + 1) for i in range(300)]
    assert subset_sample(split, 1.0) == split
    assert len(subset_sample(split, 1 / 3)) == 100
    assert len(subset_sample(split[:100], 0.29)) == 29
    assert len(subset_sample(split[:100], 0.57)) == 57
    assert subset_sample(split, 0.25, seed=3) == subset_sample(split, 0.25, seed=3)
    sample = subset_sample(split, 0.25, seed=3)
    assert sample == sorted(sample)
    with pytest.raises(ContractError):
        subset_sample(split, 0.0)


def test_report_writers(tmp_path):
    report = summarize([RankRecord((0, 0, 1), 2.0, 4.0)])
    path = tmp_path / "lp_report.txt"
    write_lp_report(report, path, {'split': 'test', 'fraction': 1.0})
    lines = path.read_text(encoding='utf-8').splitlines()
    assert lines[:2] == ['config.fraction=1.0', 'config.split=test']
    values = read_key_values(path)
    assert values['mrr'] == '0.375000'
    assert values['hits@10'] == '1.000000'
    assert values['count'] == '1'

    ranks = tmp_path / "ranks.tsv"
    write_rank_table(report.records, ranks)
    assert ranks.read_text(encoding='utf-8').splitlines() == ['s\tr\to\thead_rank\ttail_rank', '0\t0\t1\t2.0\t4.0']
