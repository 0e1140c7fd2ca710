"""Micro precision/recall/F1, overlap-pattern classification, corpus stats.

Partial matching compares (relation, subject tail, object tail); exact
matching compares full boundaries.  True positives are counted per match
key as min(pred occurrences, gold occurrences) over full-distinct triples,
so an exact match always implies a partial match.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .core import DataFormatError, RelationalTriple, spans_overlap


class MatchMode(Enum):
    PARTIAL = "partial"
    EXACT = "exact"


class OverlapPattern(Enum):
    NORMAL = "Normal"
    SEO = "SEO"
    EPO = "EPO"
    HTO = "HTO"


# Triple-count buckets used in per-scenario breakdowns.
BUCKETS = ("1", "2", "3", "4", "5+")


def bucket_of(triple_count: int) -> str:
    return str(triple_count) if triple_count < 5 else "5+"


def match_key(triple: RelationalTriple, mode: MatchMode):
    if mode is MatchMode.PARTIAL:
        return (triple.relation, triple.subject.end, triple.object.end)
    return (triple.relation, triple.subject.start, triple.subject.end,
            triple.object.start, triple.object.end)


def match_counts(
    pred: Iterable[RelationalTriple],
    gold: Iterable[RelationalTriple],
    mode: MatchMode,
) -> tuple[int, int, int]:
    """(tp, predicted, gold) for one sentence under the given mode."""
    pred_set = set(pred)
    gold_set = set(gold)
    pred_keys = Counter(match_key(t, mode) for t in pred_set)
    gold_keys = Counter(match_key(t, mode) for t in gold_set)
    tp = sum(min(c, gold_keys[k]) for k, c in pred_keys.items())
    return tp, len(pred_set), len(gold_set)


def micro_prf(tp: int, pred_count: int, gold_count: int) -> tuple[float, float, float]:
    precision = tp / pred_count if pred_count else 0.0
    recall = tp / gold_count if gold_count else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def classify_overlap(triples: Iterable[RelationalTriple]) -> set[OverlapPattern]:
    """Patterns a sentence's gold triples exhibit (multi-label)."""
    unique = sorted(set(triples))
    if not unique:
        raise DataFormatError("classify_overlap needs at least one triple")

    patterns: set[OverlapPattern] = set()
    for t in unique:
        if spans_overlap(t.subject, t.object):
            patterns.add(OverlapPattern.HTO)
    for i, a in enumerate(unique):
        for b in unique[i + 1 :]:
            pair_match = (a.subject == b.subject and a.object == b.object) or (
                a.subject == b.object and a.object == b.subject
            )
            if pair_match:
                patterns.add(OverlapPattern.EPO)
            elif {a.subject, a.object} & {b.subject, b.object}:
                patterns.add(OverlapPattern.SEO)
    if not patterns:
        patterns.add(OverlapPattern.NORMAL)
    return patterns


def exclusive_pattern(triples: Iterable[RelationalTriple]) -> OverlapPattern:
    """Single-label variant: EPO > SEO > HTO priority, else Normal."""
    patterns = classify_overlap(triples)
    for p in (OverlapPattern.EPO, OverlapPattern.SEO, OverlapPattern.HTO):
        if p in patterns:
            return p
    return OverlapPattern.NORMAL


@dataclass(frozen=True)
class CorpusStats:
    sentence_count: int
    triple_count: int
    relation_count: int
    pattern_counts: dict[str, int]  # multi-label sentence counts
    pattern_counts_exclusive: dict[str, int]
    triple_buckets: dict[str, int]
    avg_entity_len: float
    avg_region_area: float


def corpus_stats(corpus) -> CorpusStats:
    """Dataset summary: patterns, triple-count buckets, entity sizes."""
    pattern_counts = {p.value: 0 for p in OverlapPattern}
    exclusive_counts = {p.value: 0 for p in OverlapPattern}
    buckets = {b: 0 for b in BUCKETS}
    entity_lens: list[int] = []
    areas: list[int] = []
    triple_total = 0

    for _, triples in corpus.examples:
        unique = set(triples)
        triple_total += len(unique)
        if unique:
            for p in classify_overlap(unique):
                pattern_counts[p.value] += 1
            exclusive_counts[exclusive_pattern(unique).value] += 1
            buckets[bucket_of(len(unique))] += 1
        for t in unique:
            entity_lens.extend((t.subject.length, t.object.length))
            areas.append(t.subject.length * t.object.length)

    return CorpusStats(
        sentence_count=len(corpus.examples),
        triple_count=triple_total,
        relation_count=len(corpus.inventory),
        pattern_counts=pattern_counts,
        pattern_counts_exclusive=exclusive_counts,
        triple_buckets=buckets,
        avg_entity_len=sum(entity_lens) / len(entity_lens) if entity_lens else 0.0,
        avg_region_area=sum(areas) / len(areas) if areas else 0.0,
    )


@dataclass(frozen=True)
class EvalReport:
    mode: MatchMode
    overall: tuple[int, int, int]  # tp, pred, gold
    per_pattern: dict[str, tuple[int, int, int]]
    per_bucket: dict[str, tuple[int, int, int]]

    def prf(self) -> tuple[float, float, float]:
        return micro_prf(*self.overall)


def evaluate_sentences(
    pred_sets: Sequence[set[RelationalTriple]],
    gold_sets: Sequence[set[RelationalTriple]],
    mode: MatchMode,
) -> EvalReport:
    """Pool counts over sentences, with per-pattern and per-bucket splits.

    A sentence contributes to every pattern subset it exhibits (multi-label),
    mirroring how complex-scenario breakdowns are usually reported.
    """
    if len(pred_sets) != len(gold_sets):
        raise DataFormatError("prediction and gold sentence counts differ")
    overall = [0, 0, 0]
    per_pattern = {p.value: [0, 0, 0] for p in OverlapPattern}
    per_bucket = {b: [0, 0, 0] for b in BUCKETS}
    for pred, gold in zip(pred_sets, gold_sets):
        counts = match_counts(pred, gold, mode)
        for i in range(3):
            overall[i] += counts[i]
        if gold:
            for p in classify_overlap(gold):
                for i in range(3):
                    per_pattern[p.value][i] += counts[i]
            b = bucket_of(len(set(gold)))
            for i in range(3):
                per_bucket[b][i] += counts[i]
    return EvalReport(
        mode=mode,
        overall=tuple(overall),
        per_pattern={k: tuple(v) for k, v in per_pattern.items()},
        per_bucket={k: tuple(v) for k, v in per_bucket.items()},
    )


def _fmt_row(label: str, counts: tuple[int, int, int]) -> str:
    p, r, f1 = micro_prf(*counts)
    return f"{label:<10} {p:8.4f} {r:8.4f} {f1:8.4f} {counts[0]:>6} {counts[1]:>6} {counts[2]:>6}"


def render_report(report: EvalReport) -> str:
    lines = [
        f"match mode: {report.mode.value}",
        f"{'subset':<10} {'prec':>8} {'rec':>8} {'f1':>8} {'tp':>6} {'pred':>6} {'gold':>6}",
        _fmt_row("overall", report.overall),
    ]
    for name, counts in report.per_pattern.items():
        lines.append(_fmt_row(name, counts))
    for name, counts in report.per_bucket.items():
        lines.append(_fmt_row(f"T={name}", counts))
    return "\n".join(lines)


def report_kv_lines(report: EvalReport) -> list[str]:
    """Machine-readable `key TAB value` lines."""
    p, r, f1 = report.prf()
    lines = [
        f"mode\t{report.mode.value}",
        f"precision\t{p!r}",
        f"recall\t{r!r}",
        f"f1\t{f1!r}",
        f"tp\t{report.overall[0]}",
        f"pred\t{report.overall[1]}",
        f"gold\t{report.overall[2]}",
    ]
    for name, counts in report.per_pattern.items():
        _, _, sf1 = micro_prf(*counts)
        lines.append(f"f1[{name}]\t{sf1!r}")
    for name, counts in report.per_bucket.items():
        _, _, sf1 = micro_prf(*counts)
        lines.append(f"f1[T={name}]\t{sf1!r}")
    return lines


def stats_kv_lines(stats: CorpusStats) -> list[str]:
    lines = [
        f"sentences\t{stats.sentence_count}",
        f"triples\t{stats.triple_count}",
        f"relations\t{stats.relation_count}",
        f"avg_entity_len\t{stats.avg_entity_len!r}",
        f"avg_region_area\t{stats.avg_region_area!r}",
    ]
    for name, count in stats.pattern_counts.items():
        lines.append(f"pattern[{name}]\t{count}")
    for name, count in stats.pattern_counts_exclusive.items():
        lines.append(f"pattern_exclusive[{name}]\t{count}")
    for name, count in stats.triple_buckets.items():
        lines.append(f"bucket[T={name}]\t{count}")
    return lines
