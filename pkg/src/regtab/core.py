"""Token-level domain types shared by every stage of the pipeline.

Token indices are 0-based everywhere.  On a pair table, rows index the
subject dimension and columns index the object dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

Cell = tuple[int, int]  # (row, col) coordinate on a pair table


class RegtabError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(RegtabError):
    """Input data violates the expected schema or an invariant."""


class NumericError(RegtabError):
    """A numeric computation hit bad shapes or non-finite values."""


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token interval [start, end]."""

    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start <= self.end):
            raise DataFormatError(f"invalid span ({self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(self.tokens) == 0:
            raise DataFormatError("sentence must contain at least one token")
        if any(not isinstance(t, str) or t == "" for t in self.tokens):
            raise DataFormatError("sentence tokens must be non-empty strings")

    @property
    def n(self) -> int:
        return len(self.tokens)

    def text_of(self, span: Span) -> str:
        return " ".join(self.tokens[span.start : span.end + 1])


@dataclass(frozen=True, order=True)
class RelationalTriple:
    subject: Span
    relation: int
    object: Span


@dataclass(frozen=True)
class RelationInventory:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) == 0:
            raise DataFormatError("relation inventory must not be empty")
        if len(set(self.names)) != len(self.names):
            raise DataFormatError("relation names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataFormatError(f"unknown relation name {name!r}") from None

    def name_of(self, relation: int) -> str:
        if not (0 <= relation < len(self.names)):
            raise DataFormatError(f"relation id {relation} out of range")
        return self.names[relation]


@dataclass(frozen=True)
class EntityPairRegion:
    """Rectangle on a relation table: ul/br are its corner cells."""

    ul: Cell
    br: Cell

    def __post_init__(self):
        if self.ul[0] > self.br[0] or self.ul[1] > self.br[1]:
            raise DataFormatError(f"region corners out of order: {self.ul} vs {self.br}")

    @property
    def is_point(self) -> bool:
        return self.ul == self.br


def region_of(triple: RelationalTriple) -> EntityPairRegion:
    """Map a triple to its rectangle: rows cover the subject, columns the object."""
    return EntityPairRegion(
        ul=(triple.subject.start, triple.object.start),
        br=(triple.subject.end, triple.object.end),
    )


def spans_of(region: EntityPairRegion) -> tuple[Span, Span]:
    """Inverse of :func:`region_of`: recover (subject, object) spans."""
    return Span(region.ul[0], region.br[0]), Span(region.ul[1], region.br[1])


def spans_overlap(a: Span, b: Span) -> bool:
    return a.start <= b.end and b.start <= a.end


def validate_triple(sentence: Sentence, triple: RelationalTriple, inventory: RelationInventory) -> None:
    """Raise DataFormatError unless the triple fits the sentence and inventory."""
    n = sentence.n
    for role, span in (("subject", triple.subject), ("object", triple.object)):
        if span.end >= n:
            raise DataFormatError(
                f"{role} span ({span.start}, {span.end}) exceeds sentence length {n}"
            )
    if not (0 <= triple.relation < len(inventory)):
        raise DataFormatError(
            f"relation id {triple.relation} outside inventory of size {len(inventory)}"
        )
