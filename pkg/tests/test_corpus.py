import json
import shutil
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from apakit.corpus import (
    Bucket,
    CorpusSplit,
    QcThresholds,
    RaterAnnotationSet,
    SchemaDescriptor,
    average_raters,
    buckets_from_edges,
    distribution_report,
    load_corpus,
    load_rater_sets,
    rater_qc,
    rater_series,
    read_canonical,
    write_canonical,
)
from apakit.errors import AlignmentError, IngestionError, InsufficientDataError
from apakit.scorekit import validate_annotation

from conftest import make_annotation
from qc_fixtures import five_rater_fixture


def _copy_fixture(src, tmp_path):
    dst = tmp_path / "so762"
    shutil.copytree(src, dst)
    return dst


def _edit_scores(root, fn):
    path = root / "resource" / "scores.json"
    data = json.loads(path.read_text())
    fn(data)
    path.write_text(json.dumps(data))


# -- ingestion ----------------------------------------------------------------


def test_fixture_loads_both_splits(fixture_corpus):
    assert set(fixture_corpus) == {"train", "test"}
    assert len(fixture_corpus["train"]) == len(fixture_corpus["test"]) == 5
    for split in fixture_corpus.values():
        assert split.quarantine == []
        for u in split.utterances:
            assert validate_annotation(u, averaged=True) == []


def test_fixture_phones_are_rescaled_and_native_kept(fixture_corpus):
    for u in fixture_corpus["train"].utterances:
        for g in u.phones:
            for p in g:
                assert p.scale == "0-10" and p.accuracy == pytest.approx(5 * p.native)


def test_speakers_come_from_spk2utt(fixture_corpus):
    assert fixture_corpus["test"].speakers["0001"] == ["000100001"]


def test_empty_directory_is_an_ingestion_error(tmp_path):
    with pytest.raises(IngestionError):
        load_corpus(tmp_path)


def test_missing_root_is_an_ingestion_error(tmp_path):
    with pytest.raises(IngestionError):
        load_corpus(tmp_path / "nope")


def test_word_count_mismatch_is_quarantined(fixture_root, tmp_path):
    root = _copy_fixture(fixture_root, tmp_path)
    _edit_scores(root, lambda d: d["000100001"].update(text=d["000100001"]["text"] + " EXTRA"))
    test = load_corpus(root)["test"]
    assert [uid for uid, _ in test.quarantine] == ["000100001"]
    assert len(test) == 4


def test_split_sizes_equal_records_minus_quarantine(fixture_root, tmp_path):
    root = _copy_fixture(fixture_root, tmp_path)
    _edit_scores(root, lambda d: d["000200003"]["words"][0].update(stress=7))
    splits = load_corpus(root)
    total = sum(len(s) + len(s.quarantine) for s in splits.values())
    assert total == len(json.loads((root / "resource" / "scores.json").read_text()))
    # averaged stress 7 is legal
    assert not splits["test"].quarantine


def test_non_numeric_score_is_a_schema_error(fixture_root, tmp_path):
    root = _copy_fixture(fixture_root, tmp_path)
    _edit_scores(root, lambda d: d["000100001"].update(fluency="good"))
    with pytest.raises(IngestionError, match="fluency"):
        load_corpus(root)


def test_id_listed_but_missing_is_a_schema_error(fixture_root, tmp_path):
    root = _copy_fixture(fixture_root, tmp_path)
    _edit_scores(root, lambda d: d.pop("000100001"))
    with pytest.raises(IngestionError, match="000100001"):
        load_corpus(root)


def test_flat_jsonl_layout_with_renamed_fields(tmp_path):
    rec = {"id": "p1", "text": "hello there", "accuracy": 8, "fluency": 9, "prosody": 7, "completeness": 10,
           "total": 8, "words": [{"text": "hello", "accuracy": 8, "stress": 10, "total": 8},
                                 {"text": "there", "accuracy": 7, "stress": 5, "total": 6}]}
    (tmp_path / "train.jsonl").write_text(json.dumps(rec) + "\n")
    schema = SchemaDescriptor.from_mapping({"prosody": "prosody", "utterance_id": "id", "has_phones": False})
    split = load_corpus(tmp_path, schema)["train"]
    (u,) = split.utterances
    assert u.phones is None and u.sentence.prosody == 7 and [w.word for w in u.words] == ["hello", "there"]


def test_schema_rejects_unknown_field():
    with pytest.raises(IngestionError):
        SchemaDescriptor.from_mapping({"pitch": "f0"})


def test_canonical_round_trip_skips_header(fixture_corpus, tmp_path):
    utts = fixture_corpus["train"].utterances
    path = tmp_path / "train.jsonl"
    assert write_canonical(utts, path, header={"tool": "apakit"}) == 5
    assert json.loads(path.read_text().splitlines()[0]) == {"_header": {"tool": "apakit"}}
    assert read_canonical(path) == utts


def test_read_canonical_reports_bad_line(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"_header": {}}\nnot json\n')
    with pytest.raises(IngestionError, match=":2:"):
        read_canonical(path)


# -- averaging ----------------------------------------------------------------


def _raters(*anns):
    return RaterAnnotationSet("u1", {f"r{i}": a for i, a in enumerate(anns)})


def test_identical_raters_average_to_themselves(annotation):
    assert average_raters(_raters(*[annotation] * 5)) == annotation


def test_sentence_accuracy_mean():
    anns = [make_annotation(sentence=(acc, 9, 7, 10, 8)) for acc in (8, 8, 9, 9, 10)]
    assert average_raters(_raters(*anns)).sentence.accuracy == pytest.approx(8.8)


def test_stress_mean_is_fractional():
    anns = [make_annotation(word_scores=[(8, s, 8), (8, 10, 8)]) for s in (10, 10, 10, 5, 5)]
    avg = average_raters(_raters(*anns))
    assert avg.words[0].stress == pytest.approx(8.0)
    assert validate_annotation(avg, averaged=True) == []


@given(st.permutations(range(5)), st.lists(st.integers(0, 10), min_size=5, max_size=5))
def test_average_commutes_with_rater_order(order, accs):
    anns = [make_annotation(sentence=(a, 9, 7, 10, 8)) for a in accs]
    shuffled = [anns[i] for i in order]
    a, b = average_raters(_raters(*anns)), average_raters(_raters(*shuffled))
    assert a.sentence.accuracy == pytest.approx(b.sentence.accuracy, abs=1e-12)


def test_structure_mismatch_is_an_alignment_error(annotation):
    other = make_annotation(words=("good", "evening"))
    with pytest.raises(AlignmentError):
        average_raters(_raters(annotation, other))


def test_single_rater_is_rejected(annotation):
    with pytest.raises(AlignmentError):
        RaterAnnotationSet("u1", {"r1": annotation})


def test_rater_sets_from_list_valued_score_file(tmp_path):
    rec = {"text": "hi", "accuracy": [8, 9], "fluency": [9, 9], "prosodic": [7, 8], "completeness": [10, 10],
           "total": [8, 9], "words": [{"text": "hi", "accuracy": [8, 6], "stress": [10, 5], "total": [8, 6],
                                       "phones": ["HH", "AY"], "phones-accuracy": [[2, 1], [1.5, 2]]}]}
    path = tmp_path / "raters.json"
    path.write_text(json.dumps({"u1": rec}))
    (s,) = load_rater_sets(path)
    assert sorted(s.raters) == ["rater1", "rater2"]
    r2 = s.raters["rater2"]
    assert r2.sentence.accuracy == 9 and r2.words[0].stress == 5
    assert [p.accuracy for p in r2.phones[0]] == [1.5, 2] and r2.phones[0][0].scale == "0-2"
    avg = average_raters(s)
    assert avg.words[0].accuracy == 7 and avg.phones[0][0].accuracy == pytest.approx(1.75)


def test_rater_sets_from_explicit_raters(tmp_path, fixture_root):
    scores = json.loads((fixture_root / "resource" / "scores.json").read_text())
    lines = [json.dumps({"utterance_id": uid, "raters": {"a": rec, "b": rec}}) for uid, rec in scores.items()]
    path = tmp_path / "raters.jsonl"
    path.write_text("\n".join(lines) + "\n")
    sets = load_rater_sets(path)
    assert len(sets) == len(scores)
    rep = rater_qc(sets)
    assert rep.passed and rep.pairs[0].sentence_pcc == pytest.approx(1.0)


# -- QC -----------------------------------------------------------------------


def _pair(report, a, b):
    return next(p for p in report.pairs if {p.rater_a, p.rater_b} == {a, b})


def test_identical_raters_pass():
    sets = five_rater_fixture("sentence", "pcc", 1.0 - 1e-9)
    rep = rater_qc(sets)
    assert rep.passed
    assert _pair(rep, "rater1", "rater2").sentence_pcc == pytest.approx(1.0)
    assert _pair(rep, "rater1", "rater2").word_scc == pytest.approx(1.0)


def test_sentence_pcc_055_is_flagged():
    rep = rater_qc(five_rater_fixture("sentence", "pcc", 0.55))
    p = _pair(rep, "rater1", "rater5")
    assert p.sentence_pcc == pytest.approx(0.55, abs=1e-3)
    assert "sentence_pcc" in p.failures and not rep.passed
    assert not _pair(rep, "rater1", "rater2").flagged


def test_word_scc_045_is_flagged_on_scc_only():
    rep = rater_qc(five_rater_fixture("word", "scc", 0.45, outlier=40))
    p = _pair(rep, "rater2", "rater5")
    assert p.word_pcc > 0.7 - 0.05 and p.word_scc == pytest.approx(0.45, abs=1e-3)
    assert p.failures == ["word_scc"]


def test_qc_is_symmetric_in_each_pair():
    sets = five_rater_fixture("sentence", "pcc", 0.62, seed=3)
    for a, b in (("rater1", "rater5"), ("rater3", "rater4")):
        sa, wa = rater_series(sets, a)
        sb, wb = rater_series(sets, b)
        assert oracles.pearson(sa, sb) == pytest.approx(oracles.pearson(sb, sa))
    swapped = [RaterAnnotationSet(s.utterance_id, {"rater1": s.raters["rater5"], "rater5": s.raters["rater1"],
                                                   **{k: v for k, v in s.raters.items() if k not in
                                                      ("rater1", "rater5")}}) for s in sets]
    a, b = _pair(rater_qc(sets), "rater1", "rater5"), _pair(rater_qc(swapped), "rater1", "rater5")
    assert (a.sentence_pcc, a.word_scc, a.failures) == (b.sentence_pcc, b.word_scc, b.failures)


def test_threshold_equality_fails_when_strict():
    t = QcThresholds(strict=True)
    assert not t.passes(0.6, 0.6) and t.passes(0.6000001, 0.6)
    assert QcThresholds(strict=False).passes(0.6, 0.6)
    assert not t.passes(None, 0.6)


def test_qc_needs_two_utterances():
    sets = five_rater_fixture("sentence", "pcc", 0.7)
    with pytest.raises(InsufficientDataError):
        rater_qc(sets[:1])


def test_qc_rejects_mismatched_rater_ids():
    sets = five_rater_fixture("sentence", "pcc", 0.7)
    s = sets[1]
    sets[1] = RaterAnnotationSet(s.utterance_id, {**s.raters, "rater6": s.raters["rater1"]})
    with pytest.raises(AlignmentError):
        rater_qc(sets)


def test_qc_report_serializes():
    d = rater_qc(five_rater_fixture("sentence", "pcc", 0.55)).to_dict()
    assert d["passed"] is False and len(d["pairs"]) == 10
    json.dumps(d)


# -- distributions ------------------------------------------------------------


def test_bucket_parse_and_membership():
    half, closed = Bucket.parse("[0,8)"), Bucket.parse("[8,10]")
    assert 7.99 in half and 8 not in half and 8 in closed and 10 in closed
    assert str(half) == "[0,8)" and str(closed) == "[8,10]"
    with pytest.raises(ValueError):
        Bucket.parse("0-8")


def test_buckets_from_edges_closes_the_last():
    assert [str(b) for b in buckets_from_edges([0, 5, 8, 10])] == ["[0,5)", "[5,8)", "[8,10]"]


def test_empty_split_gives_zero_histogram():
    hist = distribution_report(CorpusSplit("test", []), "completeness", buckets_from_edges([0, 8, 10]))
    assert [n for _, n in hist] == [0, 0]


def test_histogram_matches_direct_count(fixture_corpus):
    split = fixture_corpus["test"]
    buckets = [Bucket.parse("[0,8)"), Bucket.parse("[8,10]"), Bucket.parse("[5,8]")]
    hist = dict((str(b), n) for b, n in distribution_report(split, "completeness", buckets))
    values = [u.sentence.completeness for u in split.utterances]
    assert hist["[0,8)"] == sum(v < 8 for v in values)
    assert hist["[8,10]"] == sum(8 <= v <= 10 for v in values)
    assert hist["[5,8]"] == sum(5 <= v <= 8 for v in values)


def test_histogram_at_word_level(fixture_corpus):
    split = fixture_corpus["test"]
    hist = distribution_report(split, "stress", [Bucket(0, 10, True)], granularity="word")
    assert hist[0][1] == sum(len(u.words) for u in split.utterances)


def test_histogram_rejects_unknown_aspect(fixture_corpus):
    with pytest.raises(ValueError):
        distribution_report(fixture_corpus["test"], "stress", [Bucket(0, 10, True)])


def test_corpus_split_rejects_duplicate_ids(annotation):
    with pytest.raises(IngestionError):
        CorpusSplit("x", [annotation, replace(annotation)])
