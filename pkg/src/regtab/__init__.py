"""Region-based table filling for relational triple extraction.

A triple is a rectangle on its relation's N x N token-pair table, marked
by corner tags (UL/BR) or a single point (SP).  This package provides the
tag encoding, the bi-directional nearest-neighbor decoding, a convolutional
scoring model with relation-residual logits, training, evaluation, data
loading, and a CLI.
"""

from .core import (
    Cell,
    DataFormatError,
    EntityPairRegion,
    NumericError,
    RegtabError,
    RelationInventory,
    RelationalTriple,
    Sentence,
    Span,
    region_of,
    spans_of,
    spans_overlap,
)
from .decoding import DecodedTripleSet, SearchDirection, decode_all, decode_grid, nearest_match
from .evaluation import MatchMode, OverlapPattern, classify_overlap, match_counts, micro_prf
from .tagging import Tag, TagConflict, TagGrid, encode_tags

__version__ = "0.1.0"

__all__ = [
    "Cell",
    "DataFormatError",
    "DecodedTripleSet",
    "EntityPairRegion",
    "MatchMode",
    "NumericError",
    "OverlapPattern",
    "RegtabError",
    "RelationInventory",
    "RelationalTriple",
    "SearchDirection",
    "Sentence",
    "Span",
    "Tag",
    "TagConflict",
    "TagGrid",
    "classify_overlap",
    "decode_all",
    "decode_grid",
    "encode_tags",
    "match_counts",
    "micro_prf",
    "nearest_match",
    "region_of",
    "spans_of",
    "spans_overlap",
]
