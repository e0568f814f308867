"""
Entity-ranking link prediction with filtered MRR and Hits@k.

Works with any scorer mapping a list of index triples to scores where
higher means more plausible.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

import config
from src.kg_data import Triple, TripleStore
from src.tensor_core import ContractError

logger = logging.getLogger(__name__)

Scorer = Callable[[Sequence[Triple]], np.ndarray]

# Slack for round-off in fraction·|split| before flooring
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True)
class RankRecord:
    triple: Triple
    head_rank: float
    tail_rank: float


@dataclass
class LpReport:
    mrr: float
    hits: Dict[int, float]
    count: int
    filtered: bool
    records: List[RankRecord] = field(default_factory=list, repr=False)

    def hits_at(self, k: int) -> float:
        return self.hits[k]

    def to_dict(self) -> Dict[str, object]:
        values: Dict[str, object] = {
            'count': self.count,
            'filtered': self.filtered,
            'mrr': f"{self.mrr:.6f}",
        }
        for k, value in sorted(self.hits.items()):
            values[f'hits@{k}'] = f"{value:.6f}"
        return values


def _score_candidates(candidates: List[Triple], scorer: Scorer, batch_size: int) -> np.ndarray:
    scores = [np.asarray(scorer(candidates[start:start + batch_size]), dtype=np.float64)
              for start in range(0, len(candidates), batch_size)]
    return np.concatenate(scores)


def _half_rank(scores: np.ndarray, target: int, excluded: Sequence[int]) -> float:
    """1 + #strictly greater + #ties / 2 over candidates other than the target."""
    keep = np.ones(len(scores), dtype=bool)
    keep[list(excluded)] = False
    keep[target] = False
    target_score = scores[target]
    others = scores[keep]
    greater = int(np.count_nonzero(others > target_score))
    ties = int(np.count_nonzero(others == target_score))
    return 1.0 + greater + ties / 2.0


def rank_triple(triple: Triple, scorer: Scorer, store: TripleStore, filtered: bool = True,
                batch_size: int = config.LP_CANDIDATE_BATCH) -> RankRecord:
    """
    Rank the true head and tail among all entity replacements.

    When filtered, replacements forming other true triples (any split) are
    dropped from the candidate pool.
    """
    store.check_triple(triple)
    s, r, o = triple
    entities = range(store.d_e)

    tail_scores = _score_candidates([(s, r, e) for e in entities], scorer, batch_size)
    head_scores = _score_candidates([(e, r, o) for e in entities], scorer, batch_size)

    tail_excluded = store.tail_filter.get((s, r), frozenset()) if filtered else frozenset()
    head_excluded = store.head_filter.get((r, o), frozenset()) if filtered else frozenset()

    return RankRecord(
        triple=(s, r, o),
        head_rank=_half_rank(head_scores, s, sorted(head_excluded - {s})),
        tail_rank=_half_rank(tail_scores, o, sorted(tail_excluded - {o})),
    )


def summarize(records: Sequence[RankRecord], filtered: bool = True,
              hits_at: Tuple[int, ...] = config.HITS_AT) -> LpReport:
    """MRR and Hits@k averaged over both head and tail ranks."""
    if not records:
        raise ContractError("Cannot summarise an empty evaluation set")
    ranks = np.array([[rec.head_rank, rec.tail_rank] for rec in records], dtype=np.float64)
    # Order-independent sum
    mrr = math.fsum((1.0 / ranks).ravel().tolist()) / ranks.size
    hits = {k: int(np.count_nonzero(ranks <= k)) / ranks.size for k in hits_at}
    return LpReport(mrr=mrr, hits=hits, count=len(records), filtered=filtered, records=list(records))


def evaluate(triples: Sequence[Triple], scorer: Scorer, store: TripleStore, filtered: bool = True,
             batch_size: int = config.LP_CANDIDATE_BATCH, workers: int = config.LP_WORKERS,
             progress_bar: bool = True, hits_at: Tuple[int, ...] = config.HITS_AT) -> LpReport:
    """
    Rank every triple and aggregate.

    Args:
        triples: Evaluation triples
        scorer: Frozen scorer, higher is better
        store: Dataset providing the vocabulary and filter indexes
        filtered: Filtered or raw ranking
        batch_size: Candidates per scorer call
        workers: Threads ranking triples concurrently
        progress_bar: Whether to show progress bar

    Returns:
        LpReport whose records follow the order of ``triples``
    """
    triples = [tuple(t) for t in triples]
    if not triples:
        raise ContractError("Link prediction needs a non-empty evaluation set")

    def rank(triple):
        return rank_triple(triple, scorer, store, filtered, batch_size)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = pool.map(rank, triples)
            records = list(tqdm(results, total=len(triples), desc="Ranking")) if progress_bar else list(results)
    else:
        iterator = tqdm(triples, desc="Ranking") if progress_bar else triples
        records = [rank(t) for t in iterator]

    report = summarize(records, filtered, hits_at)
    logger.info(f"Link prediction on {report.count} triples: mrr={report.mrr:.4f} "
                + " ".join(f"hits@{k}={v:.4f}" for k, v in sorted(report.hits.items())))
    return report


def subset_sample(split: Sequence[Triple], fraction: float, seed: int = config.SEED) -> List[Triple]:
    """floor(fraction·|split|) triples drawn without replacement, kept in split order."""
    if not 0 < fraction <= 1:
        raise ContractError(f"fraction must be in (0, 1], got {fraction}")
    size = min(len(split), math.floor(fraction * len(split) + _FLOOR_SLACK))
    rng = np.random.default_rng(seed)
    indices = np.sort(rng.choice(len(split), size=size, replace=False))
    return [tuple(split[i]) for i in indices]


def write_key_values(values: Dict[str, object], path: Union[str, Path],
                     run_config: Optional[Dict[str, object]] = None) -> None:
    """Flat key=value file: the effective config first as config.<key> lines, then the values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"config.{key}={value}" for key, value in sorted((run_config or {}).items())]
    lines += [f"{key}={value}" for key, value in sorted(values.items())]
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')


def write_lp_report(report: LpReport, path: Union[str, Path],
                    run_config: Optional[Dict[str, object]] = None) -> None:
    write_key_values(report.to_dict(), path, run_config)
    logger.info(f"Link prediction report saved to {path}")


def write_rank_table(records: Sequence[RankRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(
        [(*rec.triple, rec.head_rank, rec.tail_rank) for rec in records],
        columns=['s', 'r', 'o', 'head_rank', 'tail_rank'],
    )
    df.to_csv(path, sep='\t', index=False)
    logger.info(f"Rank table with {len(df)} rows saved to {path}")


def read_key_values(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a key=value report back into a dict."""
    values = {}
    for line in Path(path).read_text(encoding='utf-8').splitlines():
        if '=' in line:
            key, value = line.split('=', 1)
            values[key] = value
    return values
