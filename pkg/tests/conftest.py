"""Shared fixtures: tiny TSV datasets written into tmp_path."""

import pytest
import torch

from src.kg_data import load_dataset_dir, load_type_catalog

FRIEND = "/people/person/friend"
CONTAINS = "/location/location/contains"

# Entities index as /m/a=0, /m/b=1, /m/c=2, /m/d=3; relations FRIEND=0, CONTAINS=1
TRAIN = [
    ("/m/a", FRIEND, "/m/b"),
    ("/m/b", FRIEND, "/m/c"),
    ("/m/c", CONTAINS, "/m/a"),
    ("/m/a", CONTAINS, "/m/d"),
]
VALID = [("/m/b", CONTAINS, "/m/d")]
TEST = [("/m/d", FRIEND, "/m/a")]
TYPES = [
    ("/m/a", "/people/person"),
    ("/m/b", "/people/person"),
    ("/m/c", "/location/location"),
    ("/m/d", "/film/film"),
    ("/m/unknown", "/people/person"),
]


def write_tsv(path, rows):
    path.write_text("".join("\t".join(row) + "\n" for row in rows), encoding='utf-8')
    return path


@pytest.fixture
def make_dataset(tmp_path):
    """Factory writing train/valid/test (and optionally types) into a fresh directory."""
    counter = {'n': 0}

    def _make(train, valid, test, types=None):
        counter['n'] += 1
        dataset_dir = tmp_path / f"kg{counter['n']}"
        dataset_dir.mkdir()
        write_tsv(dataset_dir / "train.txt", train)
        write_tsv(dataset_dir / "valid.txt", valid)
        write_tsv(dataset_dir / "test.txt", test)
        if types is not None:
            write_tsv(dataset_dir / "entity2type.txt", types)
        return dataset_dir

    return _make


@pytest.fixture
def dataset_dir(make_dataset):
    return make_dataset(TRAIN, VALID, TEST, TYPES)


@pytest.fixture
def store(dataset_dir):
    return load_dataset_dir(dataset_dir)


@pytest.fixture
def catalog(dataset_dir, store):
    return load_type_catalog(dataset_dir / "entity2type.txt", store)


@pytest.fixture
def generator():
    return torch.Generator().manual_seed(0)
