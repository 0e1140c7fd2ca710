import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from regtab.core import RelationInventory, RelationalTriple, Sentence, Span
from regtab.tagging import Tag, TagGrid, encode_tags

from oracle import enumerate_conflicts, oracle_decode_all


@pytest.fixture
def contains_fixture():
    """The nested-city walk-through sentence with its four gold pairs.

    Objects localize to first mentions, so the two pairs rooted at the last
    token share one UL corner; that region is recovered by the BR-side pass.
    """
    tokens = "Seattle and New York City in New York are popular in the USA".split()
    sentence = Sentence(tuple(tokens))
    inventory = RelationInventory(("Contains",))
    gold = [
        RelationalTriple(Span(6, 7), 0, Span(2, 4)),    # (New York, New York City)
        RelationalTriple(Span(12, 12), 0, Span(0, 0)),  # (USA, Seattle)
        RelationalTriple(Span(12, 12), 0, Span(2, 3)),  # (USA, New York)
        RelationalTriple(Span(12, 12), 0, Span(2, 4)),  # (USA, New York City)
    ]
    return sentence, inventory, gold


def random_span(rng: np.random.Generator, n: int, max_len: int = 4) -> Span:
    length = int(rng.integers(1, min(max_len, n) + 1))
    start = int(rng.integers(0, n - length + 1))
    return Span(start, start + length - 1)


def random_triple_set(rng: np.random.Generator, max_n: int = 12, max_r: int = 4):
    """A random sentence size, inventory size, and mixed-pattern triple set."""
    n = int(rng.integers(2, max_n + 1))
    r = int(rng.integers(1, max_r + 1))
    count = int(rng.integers(1, 6))
    triples: list[RelationalTriple] = []
    for _ in range(count):
        kind = rng.random()
        if triples and kind < 0.2:
            # share the subject span with an existing triple
            base = triples[int(rng.integers(len(triples)))]
            triples.append(RelationalTriple(base.subject, int(rng.integers(r)), random_span(rng, n)))
        elif triples and kind < 0.35:
            base = triples[int(rng.integers(len(triples)))]
            triples.append(RelationalTriple(random_span(rng, n), int(rng.integers(r)), base.object))
        elif triples and kind < 0.5 and r > 1:
            # same entity pair under another relation
            base = triples[int(rng.integers(len(triples)))]
            triples.append(
                RelationalTriple(base.subject, int((base.relation + 1) % r), base.object)
            )
        elif kind < 0.7:
            # degenerate single-point region
            row, col = int(rng.integers(n)), int(rng.integers(n))
            triples.append(
                RelationalTriple(Span(row, row), int(rng.integers(r)), Span(col, col))
            )
        else:
            triples.append(
                RelationalTriple(random_span(rng, n), int(rng.integers(r)), random_span(rng, n))
            )
    return n, r, sorted(set(triples))


def recoverable_triple_set(rng: np.random.Generator, max_n: int = 12, max_r: int = 4):
    """Draw random triple sets until one is conflict-free and unambiguous.

    Unambiguous means the independent reference decoder recovers the set
    from its own encoding, so round-trip assertions on the production
    pipeline are not circular.
    """
    while True:
        n, r, triples = random_triple_set(rng, max_n, max_r)
        if enumerate_conflicts(triples):
            continue
        sentence = Sentence(tuple(f"t{i}" for i in range(n)))
        inventory = RelationInventory(tuple(f"rel{i}" for i in range(r)))
        grids, conflicts = encode_tags(sentence, triples, inventory)
        assert not conflicts
        if oracle_decode_all(grids, sentence) != set(triples):
            continue
        return sentence, inventory, triples, grids


def random_grid(rng: np.random.Generator, max_n: int = 8, max_cells: int = 6) -> TagGrid:
    """A sparse random grid with up to `max_cells` non-NONE cells."""
    n = int(rng.integers(2, max_n + 1))
    cells = np.zeros((n, n), dtype=np.int8)
    k = int(rng.integers(0, max_cells + 1))
    flat = rng.choice(n * n, size=min(k, n * n), replace=False)
    for idx in flat:
        cells[idx // n, idx % n] = int(rng.choice([Tag.UL, Tag.BR, Tag.SP]))
    return TagGrid(0, cells)
