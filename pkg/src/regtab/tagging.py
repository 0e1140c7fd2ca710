"""Encode gold triples as per-relation tag grids.

Each relation gets an N x N grid.  A triple's rectangle is marked by its
upper-left (UL) and bottom-right (BR) corner cells, or by a single SP cell
when the rectangle collapses to a point.  Everything else stays NONE.

Grid dump line format (one line per non-NONE cell, lines sorted
lexicographically): ``relation_name TAB row TAB col TAB tag``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .core import (
    Cell,
    DataFormatError,
    RelationInventory,
    RelationalTriple,
    Sentence,
    region_of,
    validate_triple,
)


class Tag(IntEnum):
    NONE = 0
    UL = 1
    BR = 2
    SP = 3


TAG_COUNT = 4

# Conflict resolution: SP carries a whole triple on its own, so it outranks
# the corner tags; UL beats BR purely for determinism.
_PRIORITY = {Tag.SP: 0, Tag.UL: 1, Tag.BR: 2}


@dataclass(frozen=True, eq=False)
class TagGrid:
    relation: int
    cells: np.ndarray  # (N, N) int8 of Tag values, read-only

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise DataFormatError(f"tag grid must be square, got shape {cells.shape}")

    def __eq__(self, other):
        if not isinstance(other, TagGrid):
            return NotImplemented
        return self.relation == other.relation and np.array_equal(self.cells, other.cells)

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    def tagged_cells(self, tag: Tag) -> list[Cell]:
        return [(int(r), int(c)) for r, c in np.argwhere(self.cells == int(tag))]

    @classmethod
    def empty(cls, relation: int, n: int) -> "TagGrid":
        return cls(relation, np.zeros((n, n), dtype=np.int8))


@dataclass(frozen=True)
class TagConflict:
    relation: int
    cell: Cell
    tags: frozenset[Tag]

    def __post_init__(self):
        if len(self.tags) < 2:
            raise DataFormatError("a tag conflict needs at least two distinct tags")


def encode_tags(
    sentence: Sentence,
    triples: list[RelationalTriple],
    inventory: RelationInventory,
) -> tuple[list[TagGrid], list[TagConflict]]:
    """Build one grid per relation from gold triples.

    Duplicate triples are dropped (set semantics).  When two triples demand
    different tags for one cell, the cell keeps the highest-priority tag
    (SP > UL > BR) and the collision is reported as a TagConflict.
    """
    unique = sorted(set(triples))
    for triple in unique:
        validate_triple(sentence, triple, inventory)

    n = sentence.n
    demands: dict[tuple[int, Cell], set[Tag]] = {}

    def demand(relation: int, cell: Cell, tag: Tag) -> None:
        demands.setdefault((relation, cell), set()).add(tag)

    for triple in unique:
        region = region_of(triple)
        if region.is_point:
            demand(triple.relation, region.ul, Tag.SP)
        else:
            demand(triple.relation, region.ul, Tag.UL)
            demand(triple.relation, region.br, Tag.BR)

    grids = [np.zeros((n, n), dtype=np.int8) for _ in range(len(inventory))]
    conflicts = []
    for (relation, cell), tags in sorted(demands.items()):
        winner = min(tags, key=_PRIORITY.__getitem__)
        grids[relation][cell] = int(winner)
        if len(tags) > 1:
            conflicts.append(TagConflict(relation, cell, frozenset(tags)))

    return [TagGrid(r, g) for r, g in enumerate(grids)], conflicts


def dump_grids(grids: list[TagGrid], inventory: RelationInventory) -> str:
    """Serialize non-NONE cells, one line each, sorted lexicographically."""
    lines = []
    for grid in grids:
        name = inventory.name_of(grid.relation)
        for tag in (Tag.UL, Tag.BR, Tag.SP):
            for row, col in grid.tagged_cells(tag):
                lines.append(f"{name}\t{row}\t{col}\t{tag.name}")
    return "\n".join(sorted(lines))


def parse_grid_dump(text: str, inventory: RelationInventory, n: int) -> list[TagGrid]:
    """Rebuild grids from :func:`dump_grids` output for an n-token sentence."""
    cells = [np.zeros((n, n), dtype=np.int8) for _ in range(len(inventory))]
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"grid dump line {lineno}: expected 4 fields, got {len(parts)}")
        name, row_s, col_s, tag_s = parts
        relation = inventory.id_of(name)
        try:
            row, col = int(row_s), int(col_s)
            tag = Tag[tag_s]
        except (ValueError, KeyError) as exc:
            raise DataFormatError(f"grid dump line {lineno}: {exc}") from None
        if tag == Tag.NONE:
            raise DataFormatError(f"grid dump line {lineno}: NONE cells must be omitted")
        if not (0 <= row < n and 0 <= col < n):
            raise DataFormatError(f"grid dump line {lineno}: cell ({row}, {col}) outside {n}x{n} grid")
        if cells[relation][row, col]:
            raise DataFormatError(
                f"grid dump line {lineno}: cell ({row}, {col}) of {name!r} assigned twice"
            )
        cells[relation][row, col] = int(tag)
    return [TagGrid(r, g) for r, g in enumerate(cells)]
