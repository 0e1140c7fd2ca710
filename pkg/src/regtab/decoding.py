"""Turn predicted tag grids back into relational triples.

Every SP cell is a triple on its own.  Every UL cell is matched to the
nearest BR cell weakly bottom-right of it; every BR cell to the nearest UL
weakly upper-left.  An anchor that finds no corner partner falls back to
SP cells in the same direction, which tolerates corner/point confusions in
model output.  Unmatched anchors are dropped silently.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .core import Cell, DataFormatError, RelationInventory, RelationalTriple, Sentence, Span
from .tagging import Tag, TagGrid


class SearchDirection(Enum):
    BOTTOM_RIGHT = "bottom-right"
    UPPER_LEFT = "upper-left"


@dataclass(frozen=True)
class DecodedTripleSet:
    triples: frozenset[RelationalTriple]

    def __len__(self) -> int:
        return len(self.triples)


def nearest_match(
    anchor: Cell,
    candidates: Iterable[Cell],
    direction: SearchDirection,
) -> Optional[Cell]:
    """Nearest candidate weakly in `direction` from the anchor.

    Distances are Euclidean; the weak inequality admits cells sharing the
    anchor's row or column (and the anchor cell itself).  Ties break on
    smaller row, then smaller column.
    """
    ar, ac = anchor
    best = None
    best_key = None
    for row, col in candidates:
        if direction is SearchDirection.BOTTOM_RIGHT:
            if row < ar or col < ac:
                continue
        else:
            if row > ar or col > ac:
                continue
        d2 = (row - ar) ** 2 + (col - ac) ** 2
        key = (d2, row, col)
        if best_key is None or key < best_key:
            best, best_key = (row, col), key
    return best


def decode_grid(grid: TagGrid, sentence: Sentence) -> set[RelationalTriple]:
    """Run the three matching passes over one relation's grid."""
    if grid.n != sentence.n:
        raise DataFormatError(
            f"grid size {grid.n} does not match sentence length {sentence.n}"
        )
    relation = grid.relation
    sp_cells = grid.tagged_cells(Tag.SP)
    ul_cells = grid.tagged_cells(Tag.UL)
    br_cells = grid.tagged_cells(Tag.BR)

    triples: set[RelationalTriple] = set()

    for row, col in sp_cells:
        triples.add(RelationalTriple(Span(row, row), relation, Span(col, col)))

    for row, col in ul_cells:
        match = nearest_match((row, col), br_cells, SearchDirection.BOTTOM_RIGHT)
        if match is None:
            match = nearest_match((row, col), sp_cells, SearchDirection.BOTTOM_RIGHT)
        if match is not None:
            triples.add(RelationalTriple(Span(row, match[0]), relation, Span(col, match[1])))

    for row, col in br_cells:
        match = nearest_match((row, col), ul_cells, SearchDirection.UPPER_LEFT)
        if match is None:
            match = nearest_match((row, col), sp_cells, SearchDirection.UPPER_LEFT)
        if match is not None:
            triples.add(RelationalTriple(Span(match[0], row), relation, Span(match[1], col)))

    return triples


def decode_all(
    grids: list[TagGrid],
    sentence: Sentence,
    inventory: Optional[RelationInventory] = None,
) -> DecodedTripleSet:
    """Union of per-relation decodes; expects exactly one grid per relation."""
    relations = [g.relation for g in grids]
    if len(set(relations)) != len(relations):
        raise DataFormatError("duplicate relation ids among grids")
    if inventory is not None and sorted(relations) != list(range(len(inventory))):
        raise DataFormatError(
            f"expected one grid per relation (0..{len(inventory) - 1}), got ids {sorted(relations)}"
        )
    triples: set[RelationalTriple] = set()
    for grid in grids:
        triples |= decode_grid(grid, sentence)
    return DecodedTripleSet(frozenset(triples))
