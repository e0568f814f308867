"""
Knowledge-graph data: TSV ingestion, vocabularies, filter indexes, type
metadata and conversion between index triples and sparse graph tensors.
"""

import csv
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import pandas as pd
import torch

import config

# Setup logging
logging.basicConfig(
    level=config.LOG_LEVEL,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(config.LOG_FILE),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger(__name__)

Triple = Tuple[int, int, int]
PathLike = Union[str, Path]


class DatasetError(ValueError):
    """Raised when a dataset file is unusable as a whole."""


class ParseError(DatasetError):
    """Raised for a malformed line; carries the file and 1-based line number."""

    def __init__(self, path: PathLike, line_number: int, message: str):
        self.path = Path(path)
        self.line_number = line_number
        super().__init__(f"{self.path}:{line_number}: {message}")


class BoundsError(IndexError):
    """Raised when an entity or relation index falls outside its vocabulary."""


@dataclass(frozen=True)
class TripleStore:
    """Indexed triple splits with vocabularies and head/tail filter indexes."""

    entities: Tuple[str, ...]
    relations: Tuple[str, ...]
    train: Tuple[Triple, ...]
    valid: Tuple[Triple, ...]
    test: Tuple[Triple, ...]
    final_mode: bool = False
    head_filter: Dict[Tuple[int, int], FrozenSet[int]] = field(default_factory=dict, repr=False)
    tail_filter: Dict[Tuple[int, int], FrozenSet[int]] = field(default_factory=dict, repr=False)
    entity_index: Dict[str, int] = field(default_factory=dict, repr=False)
    relation_index: Dict[str, int] = field(default_factory=dict, repr=False)

    @property
    def d_e(self) -> int:
        return len(self.entities)

    @property
    def d_r(self) -> int:
        return len(self.relations)

    @property
    def training_split(self) -> List[Triple]:
        """Train file, plus the valid file in final mode."""
        if self.final_mode:
            return list(self.train) + list(self.valid)
        return list(self.train)

    @property
    def evaluation_split(self) -> List[Triple]:
        """Valid file while tuning, test file in final mode."""
        if self.final_mode:
            return list(self.test)
        return list(self.valid)

    def split(self, name: str) -> List[Triple]:
        if name == 'train':
            return self.training_split
        if name in ('eval', 'evaluation'):
            return self.evaluation_split
        if name in ('valid', 'test'):
            return list(getattr(self, name))
        raise ValueError(f"Unknown split: {name}")

    def all_triples(self) -> FrozenSet[Triple]:
        return frozenset(self.train) | frozenset(self.valid) | frozenset(self.test)

    def is_true(self, triple: Triple) -> bool:
        s, r, o = triple
        return o in self.tail_filter.get((s, r), frozenset())

    def check_triple(self, triple: Triple) -> None:
        s, r, o = triple
        if not (0 <= s < self.d_e and 0 <= o < self.d_e):
            raise BoundsError(f"Entity index out of range [0, {self.d_e}) in {triple}")
        if not 0 <= r < self.d_r:
            raise BoundsError(f"Relation index out of range [0, {self.d_r}) in {triple}")

    def encode(self, subject: str, relation: str, obj: str) -> Triple:
        try:
            return (self.entity_index[subject], self.relation_index[relation], self.entity_index[obj])
        except KeyError as e:
            raise BoundsError(f"Identifier not in vocabulary: {e.args[0]}")

    def decode(self, triple: Triple) -> Tuple[str, str, str]:
        self.check_triple(triple)
        s, r, o = triple
        return self.entities[s], self.relations[r], self.entities[o]


def _read_tsv(path: PathLike, n_fields: int) -> pd.DataFrame:
    """Read a header-less UTF-8 TSV, insisting on exactly ``n_fields`` per line."""
    path = Path(path)
    try:
        df = pd.read_csv(
            path,
            sep='\t',
            header=None,
            dtype=str,
            keep_default_na=False,
            na_filter=False,
            quoting=csv.QUOTE_NONE,
            skip_blank_lines=False,
            encoding='utf-8',
        )
    except pd.errors.EmptyDataError:
        raise DatasetError(f"{path}: empty file")
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        line_number = int(match.group(1)) if match else 0
        raise ParseError(path, line_number, f"expected {n_fields} tab-separated fields")

    if df.empty:
        raise DatasetError(f"{path}: empty file")
    if df.shape[1] != n_fields:
        raise ParseError(path, 1, f"expected {n_fields} tab-separated fields, found {df.shape[1]}")

    # Short lines are padded by the parser; reject them with their line number
    bad = df.isna().any(axis=1) | (df == '').any(axis=1)
    if bad.any():
        line_number = int(bad.to_numpy().nonzero()[0][0]) + 1
        raise ParseError(path, line_number, f"expected {n_fields} non-empty tab-separated fields")

    return df


def load_dataset(train_path: PathLike, valid_path: PathLike, test_path: PathLike,
                 final_mode: bool = False) -> TripleStore:
    """
    Load the three triple files and build vocabularies and filter indexes.

    Args:
        train_path: Training TSV (subject, relation, object per line)
        valid_path: Validation TSV
        test_path: Test TSV
        final_mode: Train on train+valid and evaluate on test when True

    Returns:
        Immutable TripleStore
    """
    frames = {}
    for name, path in (('train', train_path), ('valid', valid_path), ('test', test_path)):
        frames[name] = _read_tsv(path, 3)
        logger.info(f"Loaded {len(frames[name])} {name} triples from {path}")

    # Vocabularies in first-occurrence order over train, valid, test
    entity_index: Dict[str, int] = {}
    relation_index: Dict[str, int] = {}
    for name in ('train', 'valid', 'test'):
        for s, r, o in frames[name].itertuples(index=False, name=None):
            for entity in (s, o):
                if entity not in entity_index:
                    entity_index[entity] = len(entity_index)
            if r not in relation_index:
                relation_index[r] = len(relation_index)

    splits = {}
    for name, df in frames.items():
        splits[name] = tuple(
            (entity_index[s], relation_index[r], entity_index[o])
            for s, r, o in df.itertuples(index=False, name=None)
        )

    heads = defaultdict(set)
    tails = defaultdict(set)
    for name in ('train', 'valid', 'test'):
        for s, r, o in splits[name]:
            heads[(r, o)].add(s)
            tails[(s, r)].add(o)

    store = TripleStore(
        entities=tuple(entity_index),
        relations=tuple(relation_index),
        train=splits['train'],
        valid=splits['valid'],
        test=splits['test'],
        final_mode=final_mode,
        head_filter={key: frozenset(value) for key, value in heads.items()},
        tail_filter={key: frozenset(value) for key, value in tails.items()},
        entity_index=entity_index,
        relation_index=relation_index,
    )

    total = len(store.train) + len(store.valid) + len(store.test)
    logger.info(f"Dataset ready: d_e={store.d_e}, d_r={store.d_r}, {total} triples, final_mode={final_mode}")
    return store


def load_dataset_dir(dataset_dir: PathLike, final_mode: bool = False) -> TripleStore:
    """Load ``train.txt``/``valid.txt``/``test.txt`` from one directory."""
    dataset_dir = Path(dataset_dir)
    return load_dataset(
        dataset_dir / config.SPLIT_FILES['train'],
        dataset_dir / config.SPLIT_FILES['valid'],
        dataset_dir / config.SPLIT_FILES['test'],
        final_mode=final_mode,
    )


@dataclass(frozen=True)
class TypeCatalog:
    """Entity index to type strings, e.g. ``/people/measured_person``."""

    types: Dict[int, FrozenSet[str]]
    skipped: int = 0

    @staticmethod
    def base_type(type_string: str) -> str:
        """First non-empty path segment: ``/people/measured_person`` -> ``people``."""
        for segment in type_string.split('/'):
            if segment:
                return segment
        return ''

    def types_of(self, entity: int) -> FrozenSet[str]:
        return self.types.get(entity, frozenset())

    def base_types_of(self, entity: int) -> FrozenSet[str]:
        return frozenset(self.base_type(t) for t in self.types_of(entity))

    def has_type(self, entity: int, key_type: str, match_mode: str = 'base') -> bool:
        if match_mode == 'base':
            return key_type in self.base_types_of(entity)
        if match_mode == 'substring':
            return any(key_type in t for t in self.types_of(entity))
        raise ValueError(f"Unknown match mode: {match_mode}")

    def baseline(self, key_type: str, match_mode: str = 'base') -> float:
        """Fraction of catalogued entities carrying ``key_type``."""
        typed = [e for e, t in self.types.items() if t]
        if not typed:
            return 0.0
        hits = sum(1 for e in typed if self.has_type(e, key_type, match_mode))
        return hits / len(typed)


def load_type_catalog(path: PathLike, store: TripleStore) -> TypeCatalog:
    """
    Load ``identifier<TAB>type`` lines into a catalog over the store's entities.

    Identifiers missing from the vocabulary are skipped and counted.
    """
    df = _read_tsv(path, 2)

    types = defaultdict(set)
    skipped = 0
    for identifier, type_string in df.itertuples(index=False, name=None):
        entity = store.entity_index.get(identifier)
        if entity is None:
            skipped += 1
            continue
        types[entity].add(type_string)

    if skipped:
        logger.warning(f"Skipped {skipped} type lines for entities outside the vocabulary")
    missing = store.d_e - len(types)
    if missing:
        logger.info(f"{missing} entities have no type metadata")

    return TypeCatalog(types={e: frozenset(t) for e, t in types.items()}, skipped=skipped)


def load_labels(path: PathLike) -> Dict[str, str]:
    """Optional ``identifier<TAB>label`` file for human-readable reports."""
    df = _read_tsv(path, 2)
    return dict(df.itertuples(index=False, name=None))


@dataclass
class SparseGraph:
    """
    Batched one-hot graph tensors.

    A: (b, n, n) adjacency, E: (b, n, n, d_r) edge attributes,
    F: (b, n, d_e) node attributes.
    """

    A: torch.Tensor
    E: torch.Tensor
    F: torch.Tensor

    def __len__(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def __getitem__(self, index) -> 'SparseGraph':
        if isinstance(index, int):
            index = slice(index, index + 1)
        return SparseGraph(self.A[index], self.E[index], self.F[index])

    def to(self, dtype: torch.dtype) -> 'SparseGraph':
        return SparseGraph(self.A.to(dtype), self.E.to(dtype), self.F.to(dtype))

    def flatten(self) -> torch.Tensor:
        """(b, n² + n²·d_r + n·d_e) encoder input."""
        b = len(self)
        return torch.cat([self.A.reshape(b, -1), self.E.reshape(b, -1), self.F.reshape(b, -1)], dim=-1)


def _empty_graphs(b: int, n: int, d_e: int, d_r: int, dtype: torch.dtype) -> SparseGraph:
    return SparseGraph(
        A=torch.zeros(b, n, n, dtype=dtype),
        E=torch.zeros(b, n, n, d_r, dtype=dtype),
        F=torch.zeros(b, n, d_e, dtype=dtype),
    )


def _check_bounds(triple: Triple, d_e: int, d_r: int) -> None:
    s, r, o = triple
    if not (0 <= s < d_e and 0 <= o < d_e and 0 <= r < d_r):
        raise BoundsError(f"Triple {triple} outside vocabulary bounds d_e={d_e}, d_r={d_r}")


def subgraphs_to_graphs(subgraphs: Sequence[Sequence[Triple]], n: int, d_e: int, d_r: int,
                        dtype: torch.dtype = torch.float32) -> SparseGraph:
    """
    Convert lists of triples into n-node graphs.

    One node per distinct entity: subjects first, then objects not seen yet.
    Unused node rows repeat the first entity so every F row stays one-hot.
    """
    graphs = _empty_graphs(len(subgraphs), n, d_e, d_r, dtype)
    for b, triples in enumerate(subgraphs):
        if not triples:
            raise ValueError(f"Subgraph {b} has no triples")
        for triple in triples:
            _check_bounds(triple, d_e, d_r)

        nodes: Dict[int, int] = {}
        for s, _, _ in triples:
            nodes.setdefault(s, len(nodes))
        for _, _, o in triples:
            nodes.setdefault(o, len(nodes))
        if len(nodes) > n:
            raise ValueError(f"Subgraph {b} has {len(nodes)} entities but n={n}")

        for entity, node in nodes.items():
            graphs.F[b, node, entity] = 1
        first = triples[0][0]
        for node in range(len(nodes), n):
            graphs.F[b, node, first] = 1

        for s, r, o in triples:
            i, j = nodes[s], nodes[o]
            graphs.A[b, i, j] = 1
            graphs.E[b, i, j, :] = 0
            graphs.E[b, i, j, r] = 1

    return graphs


def triples_to_graphs(batch: Sequence[Triple], n: int = 2, *, d_e: int, d_r: int,
                      dtype: torch.dtype = torch.float32) -> SparseGraph:
    """
    One graph per triple: subject at node 0, object at node 1.

    A self-loop (s, r, s) sets A[0,0] and F[1] repeats the subject.
    """
    return subgraphs_to_graphs([[tuple(t)] for t in batch], n, d_e, d_r, dtype)


def graphs_to_triples(graphs: SparseGraph, per_graph: bool = False) -> Union[List[Triple], List[List[Triple]]]:
    """
    Read triples off (discrete) graphs, one per nonzero adjacency entry.

    Rows without an incident edge contribute nothing.
    """
    result: List[List[Triple]] = []
    entities = graphs.F.argmax(dim=-1)
    relations = graphs.E.argmax(dim=-1)
    for b in range(len(graphs)):
        triples = []
        for i, j in torch.nonzero(graphs.A[b] > 0.5, as_tuple=False).tolist():
            triples.append((int(entities[b, i]), int(relations[b, i, j]), int(entities[b, j])))
        result.append(triples)

    if per_graph:
        return result
    return [t for triples in result for t in triples]
