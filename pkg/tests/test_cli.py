import json
import os

import numpy as np
import pytest

from regtab.cli import main
from regtab.data import SyntheticSpec, gen_synthetic, load_corpus, write_corpus, write_inventory


@pytest.fixture
def synth_files(tmp_path):
    spec = SyntheticSpec(sentences=30, seed=21, entity_len=(1, 2), sentence_len=(4, 9))
    corpus = gen_synthetic(spec)
    corpus_path = tmp_path / "corpus.jsonl"
    inv_path = tmp_path / "rels.txt"
    write_corpus(corpus, str(corpus_path))
    write_inventory(corpus.inventory, str(inv_path))
    return tmp_path, corpus, str(corpus_path), str(inv_path)


def run(args):
    return main(args)


def test_usage_error_exit_code(capsys):
    assert run(["no-such-command"]) == 1
    assert run(["encode"]) == 1  # missing required flags


def test_missing_file_exit_code(tmp_path, capsys):
    assert (
        run(["stats", "--input", str(tmp_path / "nope.jsonl")]) == 2
    )


def test_stats_output(synth_files, capsys):
    _, corpus, corpus_path, inv_path = synth_files
    assert run(["stats", "--input", corpus_path, "--inventory", inv_path]) == 0
    out = capsys.readouterr().out
    assert "relations: 3" in out
    assert "pattern counts (multi-label)" in out


def test_stats_kv_file(synth_files):
    tmp_path, _, corpus_path, inv_path = synth_files
    out_path = tmp_path / "stats.txt"
    assert run([
        "stats", "--input", corpus_path, "--inventory", inv_path, "--output", str(out_path)
    ]) == 0
    text = out_path.read_text()
    assert "relations\t3" in text
    assert not os.path.exists(str(out_path) + ".partial")


def test_encode_decode_pipeline_identity(synth_files, capsys):
    tmp_path, corpus, corpus_path, inv_path = synth_files
    grids_path = tmp_path / "grids.tsv"
    triples_path = tmp_path / "triples.jsonl"
    assert run(["encode", "--input", corpus_path, "--inventory", inv_path,
                "--output", str(grids_path)]) == 0
    assert run(["decode", "--input", str(grids_path), "--inventory", inv_path,
                "--output", str(triples_path)]) == 0

    decoded = [json.loads(line) for line in triples_path.read_text().splitlines()]
    assert len(decoded) == len(corpus.examples)
    for record, (sentence, gold) in zip(decoded, corpus.examples):
        got = {
            (tuple(t["subject"]), t["relation"], tuple(t["object"]))
            for t in record["triples"]
        }
        expected = {
            (
                (t.subject.start, t.subject.end),
                corpus.inventory.name_of(t.relation),
                (t.object.start, t.object.end),
            )
            for t in gold
        }
        assert got == expected


def test_decode_empty_dump(tmp_path):
    inv_path = tmp_path / "rels.txt"
    inv_path.write_text("r0\n")
    dump = tmp_path / "empty.tsv"
    dump.write_text("")
    out = tmp_path / "triples.jsonl"
    assert run(["decode", "--input", str(dump), "--inventory", str(inv_path),
                "--output", str(out)]) == 0
    assert out.read_text() == ""


def test_gen_data_round_trip(tmp_path):
    out = tmp_path / "gen.jsonl"
    inv_out = tmp_path / "gen-rels.txt"
    assert run(["gen-data", "--sentences", "12", "--seed", "4",
                "--output", str(out), "--inventory-out", str(inv_out)]) == 0
    corpus = load_corpus(str(out))
    assert len(corpus) == 12
    assert inv_out.read_text().splitlines() == ["rel0", "rel1", "rel2"]


def test_gen_data_from_spec_file(tmp_path):
    spec_path = tmp_path / "spec.kv"
    spec_path.write_text(
        "sentences=8\nvocab_size=40\nrelation_count=2\nmix_epo=0\nmix_normal=1\n"
        "mix_seo=0\nmix_hto=0\nseed=5\n"
    )
    out = tmp_path / "gen.jsonl"
    assert run(["gen-data", "--config", str(spec_path), "--output", str(out)]) == 0
    corpus = load_corpus(str(out))
    assert len(corpus) == 8
    assert len(corpus.inventory) == 2


def test_gradcheck_exit_code(capsys):
    assert run(["gradcheck", "--seed", "7", "--hidden", "8", "--tokens", "4"]) == 0
    out = capsys.readouterr().out
    assert "max relative gradient error" in out
    assert run(["gradcheck"]) == 0  # default configuration


def test_train_eval_dump_cycle(synth_files, capsys):
    tmp_path, corpus, corpus_path, inv_path = synth_files
    ckpt = tmp_path / "model.ckpt"
    metrics = tmp_path / "metrics.tsv"
    code = run([
        "train", "--train", corpus_path, "--inventory", inv_path,
        "--checkpoint", str(ckpt), "--metrics", str(metrics),
        "--epochs", "2", "--hidden", "8", "--bottleneck", "4",
        "--vocab-size", "50", "--seed", "1", "--lr", "0.002",
    ])
    assert code == 0
    assert ckpt.exists()
    lines = metrics.read_text().splitlines()
    assert len(lines) == 2 and all(len(l.split("\t")) == 5 for l in lines)

    report_path = tmp_path / "report.txt"
    assert run(["eval", "--input", corpus_path, "--checkpoint", str(ckpt),
                "--match", "exact", "--output", str(report_path)]) == 0
    report = report_path.read_text()
    assert "overall" in report and "f1\t" in report

    csv_path = tmp_path / "scores.csv"
    assert run(["dump-scores", "--input", corpus_path, "--checkpoint", str(ckpt),
                "--limit", "2", "--output", str(csv_path)]) == 0
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "sentence,component,row,col,tag,score"
    first = rows[1].split(",")
    assert first[1] == "shared" and first[4] == "NONE"
    # shared + one block per relation, 4 tags per cell
    sentence_n = corpus.examples[0][0].n
    expected_rows = sum(
        (1 + len(corpus.inventory)) * s.n * s.n * 4 for s, _ in corpus.examples[:2]
    )
    assert len(rows) == 1 + expected_rows


def test_eval_threads_match_serial(synth_files, tmp_path):
    tmp_dir, corpus, corpus_path, inv_path = synth_files
    ckpt = tmp_dir / "m.ckpt"
    metrics = tmp_dir / "m.tsv"
    assert run(["train", "--train", corpus_path, "--inventory", inv_path,
                "--checkpoint", str(ckpt), "--metrics", str(metrics),
                "--epochs", "1", "--hidden", "8", "--bottleneck", "4",
                "--vocab-size", "50", "--seed", "2"]) == 0
    out1 = tmp_dir / "r1.txt"
    out2 = tmp_dir / "r2.txt"
    assert run(["eval", "--input", corpus_path, "--checkpoint", str(ckpt),
                "--output", str(out1)]) == 0
    assert run(["eval", "--input", corpus_path, "--checkpoint", str(ckpt),
                "--threads", "4", "--output", str(out2)]) == 0
    assert out1.read_text() == out2.read_text()


def test_partial_variant_enforced(synth_files, tmp_path):
    tmp_dir, corpus, corpus_path, inv_path = synth_files
    ckpt = tmp_dir / "m2.ckpt"
    metrics = tmp_dir / "m2.tsv"
    assert run(["train", "--train", corpus_path, "--inventory", inv_path,
                "--checkpoint", str(ckpt), "--metrics", str(metrics),
                "--epochs", "1", "--hidden", "8", "--bottleneck", "4",
                "--vocab-size", "50", "--seed", "2"]) == 0
    code = run(["eval", "--input", corpus_path, "--checkpoint", str(ckpt),
                "--variant", "partial", "--match", "exact"])
    assert code == 2


def test_partial_variant_train_and_eval(synth_files):
    tmp_dir, corpus, corpus_path, inv_path = synth_files
    ckpt = tmp_dir / "mp.ckpt"
    metrics = tmp_dir / "mp.tsv"
    assert run(["train", "--train", corpus_path, "--inventory", inv_path,
                "--variant", "partial", "--checkpoint", str(ckpt), "--metrics", str(metrics),
                "--epochs", "1", "--hidden", "8", "--bottleneck", "4",
                "--vocab-size", "50", "--seed", "2"]) == 0
    report = tmp_dir / "mp-report.txt"
    assert run(["eval", "--input", corpus_path, "--checkpoint", str(ckpt),
                "--variant", "partial", "--output", str(report)]) == 0
    assert "mode\tpartial" in report.read_text()


def test_config_file_overrides(synth_files, tmp_path):
    tmp_dir, corpus, corpus_path, inv_path = synth_files
    cfg = tmp_dir / "opts.kv"
    cfg.write_text("epochs=1\nhidden=8\nbottleneck=4\nvocab_size=50\nseed=9\n")
    ckpt = tmp_dir / "m3.ckpt"
    metrics = tmp_dir / "m3.tsv"
    assert run(["train", "--train", corpus_path, "--inventory", inv_path,
                "--checkpoint", str(ckpt), "--metrics", str(metrics),
                "--config", str(cfg)]) == 0
    assert len(metrics.read_text().splitlines()) == 1  # epochs taken from config


def test_gen_data_and_encode_bit_reproducible(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        grids = tmp_path / f"{name}.tsv"
        assert run(["gen-data", "--sentences", "10", "--seed", "6", "--output", str(out)]) == 0
        assert run(["encode", "--input", str(out), "--output", str(grids)]) == 0
        outputs.append((out.read_bytes(), grids.read_bytes()))
    assert outputs[0] == outputs[1]


def test_no_partial_artifacts_on_failure(tmp_path):
    bad_corpus = tmp_path / "bad.jsonl"
    bad_corpus.write_text("{broken\n")
    out = tmp_path / "grids.tsv"
    inv = tmp_path / "rels.txt"
    inv.write_text("r\n")
    code = run(["encode", "--input", str(bad_corpus), "--inventory", str(inv),
                "--output", str(out)])
    assert code == 2
    assert not out.exists()
