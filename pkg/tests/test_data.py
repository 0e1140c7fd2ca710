import json

import numpy as np
import pytest

from regtab.core import DataFormatError, RelationInventory, Span
from regtab.data import (
    SyntheticSpec,
    gen_synthetic,
    load_corpus,
    load_inventory,
    locate_span,
    split_corpus,
    write_corpus,
    write_inventory,
)
from regtab.decoding import decode_all
from regtab.evaluation import (
    MatchMode,
    OverlapPattern,
    classify_overlap,
    corpus_stats,
    match_counts,
    micro_prf,
)
from regtab.tagging import Tag, encode_tags

from oracle import scan_locate


# ------------------------------------------------------------------ locate_span


def test_locate_suffix_match():
    assert locate_span(["New", "York", "City"], ["York", "City"]) == Span(1, 2)


def test_locate_order_sensitive():
    assert locate_span(["New", "York", "City"], ["City", "York"]) is None


def test_locate_first_occurrence():
    tokens = ["a", "b", "x", "y", "b", "x", "z"]
    assert locate_span(tokens, ["b", "x"]) == Span(1, 2)


def test_locate_case_sensitive():
    assert locate_span(["New"], ["new"]) is None


def test_locate_matches_scan_oracle():
    rng = np.random.default_rng(3)
    words = [f"w{i}" for i in range(5)]
    for _ in range(500):
        tokens = [words[int(i)] for i in rng.integers(0, 5, size=rng.integers(1, 12))]
        m = int(rng.integers(1, 4))
        start = int(rng.integers(0, len(tokens))) if rng.random() < 0.7 else None
        if start is not None and start + m <= len(tokens):
            entity = tokens[start : start + m]
        else:
            entity = [words[int(i)] for i in rng.integers(0, 5, size=m)]
        hits = scan_locate(tokens, entity)
        found = locate_span(tokens, entity)
        if hits:
            assert found == Span(hits[0], hits[0] + m - 1)
        else:
            assert found is None


def test_locate_rejects_empty_entity():
    with pytest.raises(DataFormatError):
        locate_span(["a"], [])


# ------------------------------------------------------------------ load_corpus


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def test_load_simple_record(tmp_path):
    path = tmp_path / "c.jsonl"
    write_jsonl(path, [{"text": "A works at B", "triple_list": [["A", "works_at", "B"]]}])
    corpus = load_corpus(str(path))
    assert len(corpus) == 1
    sentence, triples = corpus.examples[0]
    assert triples[0].subject == Span(0, 0)
    assert triples[0].object == Span(3, 3)
    assert corpus.inventory.names == ("works_at",)


def test_load_counts_ambiguity(tmp_path):
    path = tmp_path / "c.jsonl"
    write_jsonl(
        path,
        [
            {"text": "A sees A daily", "triple_list": [["A", "r", "daily"]]},
            {"text": "B hits C", "triple_list": [["missing", "r", "C"]]},
        ],
    )
    corpus = load_corpus(str(path))
    assert len(corpus) == 1  # second record skipped
    assert corpus.load_stats.records == 2
    assert corpus.load_stats.skipped_records == 1
    assert corpus.load_stats.unlocatable_entities == 1
    assert corpus.load_stats.ambiguous_entities == 1  # "A" occurs twice


def test_load_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    corpus = load_corpus(str(path))
    assert len(corpus) == 0


def test_load_json_array(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps([{"text": "A r B", "triple_list": [["A", "r", "B"]]}]))
    corpus = load_corpus(str(path), fmt="json-array")
    assert len(corpus) == 1


def test_load_bad_json_line_reports_position(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"text": "ok", "triple_list": []}\n{oops\n')
    with pytest.raises(DataFormatError) as err:
        load_corpus(str(path))
    assert ":2" in str(err.value)


def test_load_missing_fields_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    write_jsonl(path, [{"text": "no triples here"}])
    with pytest.raises(DataFormatError):
        load_corpus(str(path))


def test_load_unknown_relation_with_fixed_inventory(tmp_path):
    path = tmp_path / "c.jsonl"
    write_jsonl(path, [{"text": "A r B", "triple_list": [["A", "r", "B"]]}])
    with pytest.raises(DataFormatError):
        load_corpus(str(path), inventory=RelationInventory(("other",)))


def test_partial_variant_uses_tail_tokens(tmp_path):
    path = tmp_path / "c.jsonl"
    write_jsonl(
        path,
        [{"text": "New York City lies east", "triple_list": [["New York City", "r", "east"]]}],
    )
    corpus = load_corpus(str(path), variant="partial")
    _, triples = corpus.examples[0]
    assert triples[0].subject == Span(2, 2)  # just "City"
    assert corpus.variant == "partial"


def test_inventory_file_round_trip(tmp_path):
    inv = RelationInventory(("b", "a", "c"))
    path = tmp_path / "rels.txt"
    write_inventory(inv, str(path))
    assert load_inventory(str(path)).names == ("b", "a", "c")


# ------------------------------------------------------------------ synthetic generation


def test_synthetic_deterministic():
    spec = SyntheticSpec(sentences=40, seed=9)
    a = gen_synthetic(spec)
    b = gen_synthetic(spec)
    assert a.examples == b.examples


def test_synthetic_all_epo():
    spec = SyntheticSpec(
        sentences=60,
        triples_per_sentence=(1, 3),
        mix={"normal": 0.0, "seo": 0.0, "epo": 1.0, "hto": 0.0},
        seed=10,
    )
    corpus = gen_synthetic(spec)
    for _, triples in corpus.examples:
        if len(triples) >= 2:
            assert OverlapPattern.EPO in classify_overlap(triples)


def test_synthetic_single_token_entities_yield_sp_only():
    spec = SyntheticSpec(
        sentences=30,
        triples_per_sentence=(1, 1),
        entity_len=(1, 1),
        mix={"normal": 1.0, "seo": 0.0, "epo": 0.0, "hto": 0.0},
        seed=11,
    )
    corpus = gen_synthetic(spec)
    for sentence, triples in corpus.examples:
        grids, conflicts = encode_tags(sentence, list(triples), corpus.inventory)
        assert not conflicts
        total_sp = sum(len(g.tagged_cells(Tag.SP)) for g in grids)
        non_none = sum(int((g.cells != 0).sum()) for g in grids)
        assert total_sp == 1 and non_none == 1


def test_synthetic_hto_mix():
    spec = SyntheticSpec(
        sentences=30,
        mix={"normal": 0.0, "seo": 0.0, "epo": 0.0, "hto": 1.0},
        seed=12,
    )
    corpus = gen_synthetic(spec)
    for _, triples in corpus.examples:
        assert OverlapPattern.HTO in classify_overlap(triples)


def test_synthetic_pattern_mix_within_tolerance():
    mix = {"normal": 0.4, "seo": 0.3, "epo": 0.2, "hto": 0.1}
    spec = SyntheticSpec(
        sentences=1000, triples_per_sentence=(2, 3), mix=dict(mix), seed=13
    )
    corpus = gen_synthetic(spec)
    stats = corpus_stats(corpus)
    for name, requested in mix.items():
        key = name.upper() if name != "normal" else "Normal"
        observed = stats.pattern_counts[key] / len(corpus)
        assert abs(observed - requested) <= 0.05, (name, observed, requested)


def test_synthetic_infeasible_specs_rejected():
    with pytest.raises(DataFormatError):
        SyntheticSpec(relation_count=1, mix={"normal": 0.5, "epo": 0.5})
    with pytest.raises(DataFormatError):
        SyntheticSpec(vocab_size=10, sentence_len=(5, 15))
    with pytest.raises(DataFormatError):
        SyntheticSpec(entity_len=(1, 1), mix={"normal": 0.5, "hto": 0.5})
    with pytest.raises(DataFormatError):
        SyntheticSpec(triples_per_sentence=(0, 2))


def test_synthetic_spec_kv_parsing():
    text = """
    # comment line
    vocab_size = 40
    sentences=25
    mix_epo=0.5
    mix_normal=0.5
    mix_seo = 0
    mix_hto = 0
    seed=3
    """
    spec = SyntheticSpec.from_kv(text)
    assert spec.vocab_size == 40
    assert spec.sentences == 25
    assert spec.mix["epo"] == 0.5
    with pytest.raises(DataFormatError):
        SyntheticSpec.from_kv("unknown_key=1")
    with pytest.raises(DataFormatError):
        SyntheticSpec.from_kv("vocab_size")


# ------------------------------------------------------------------ pipeline round trips


def test_gold_oracle_pipeline_f1_is_one():
    spec = SyntheticSpec(sentences=80, seed=14)
    corpus = gen_synthetic(spec)
    totals = [0, 0, 0]
    for sentence, gold in corpus.examples:
        grids, conflicts = encode_tags(sentence, list(gold), corpus.inventory)
        assert not conflicts
        pred = set(decode_all(grids, sentence, corpus.inventory).triples)
        counts = match_counts(pred, set(gold), MatchMode.EXACT)
        for i in range(3):
            totals[i] += counts[i]
    assert micro_prf(*totals) == (1.0, 1.0, 1.0)


def test_write_then_load_round_trip(tmp_path):
    spec = SyntheticSpec(sentences=50, seed=15)
    corpus = gen_synthetic(spec)
    path = tmp_path / "synth.jsonl"
    write_corpus(corpus, str(path))
    loaded = load_corpus(str(path), inventory=corpus.inventory)
    assert loaded.load_stats.skipped_records == 0
    assert len(loaded) == len(corpus)
    for (s1, t1), (s2, t2) in zip(corpus.examples, loaded.examples):
        assert s1 == s2
        assert set(t1) == set(t2)


def test_split_corpus_partition():
    spec = SyntheticSpec(sentences=30, seed=16)
    corpus = gen_synthetic(spec)
    train_c, dev_c = split_corpus(corpus, 0.2, seed=0)
    assert len(train_c) + len(dev_c) == len(corpus)
    assert len(dev_c) == 6
    with pytest.raises(DataFormatError):
        split_corpus(corpus, 1.5, seed=0)
