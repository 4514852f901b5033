"""
Shared fixtures: random alignment tasks and a float64 torch default for
numerical tests.
"""

import os
import sys

import numpy as np
import pytest
import torch

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.kg.core import AlignmentTask, SeedAlignment, build_graph


def random_task(rng: np.random.Generator, n1: int = 20, n2: int = 20, r1: int = 3, r2: int = 3,
                m1: int = 40, m2: int = 40, num_seeds: int = 5, num_valid: int = 0, num_test: int = 0):
    """Independent random graphs with random one-to-one seed, valid and test pairs"""
    def facts(n, r, m):
        return np.stack([rng.integers(0, n, m), rng.integers(0, r, m), rng.integers(0, n, m)], axis=1)

    g1 = build_graph(facts(n1, r1, m1), n1, r1)
    g2 = build_graph(facts(n2, r2, m2), n2, r2)
    total = min(n1, n2, num_seeds + num_valid + num_test)
    left = rng.permutation(n1)[:total]
    right = rng.permutation(n2)[:total]
    pairs = [(int(u), int(v)) for u, v in zip(left, right)]
    return AlignmentTask(
        g1=g1, g2=g2,
        train_seeds=SeedAlignment.from_pairs(pairs[:num_seeds]),
        valid_pairs=SeedAlignment.from_pairs(pairs[num_seeds:num_seeds + num_valid]),
        test_pairs=SeedAlignment.from_pairs(pairs[num_seeds + num_valid:]),
    )


def path_task():
    """G1 and G2 are the path a-b-c-d (ids 0..3) under one relation, seed (c, c')"""
    edges = [(0, 0, 1), (1, 0, 2), (2, 0, 3)]
    g = build_graph(edges, 4, 1)
    return AlignmentTask(g1=g, g2=build_graph(edges, 4, 1), train_seeds=SeedAlignment.from_pairs([(2, 2)]))


@pytest.fixture
def make_task():
    return random_task


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def registry_db(tmp_path, monkeypatch):
    """Point the run registry at a throwaway database"""
    path = tmp_path / "runs.db"
    monkeypatch.setenv("ALIGN_DB_PATH", str(path))
    return path
