import json
import math

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from apakit.errors import MetricError
from apakit.metrics import (
    TOO_FEW,
    ZERO_VAR_GOLD,
    ZERO_VAR_PRED,
    MetricCell,
    MetricReport,
    MetricValue,
    PairedSeries,
    average_ranks,
    evaluate,
    fmt_pair,
    pcc,
    render_report,
    rmse,
    scc,
    score_cell,
)
from apakit.promptgen import TaskSpec
from apakit.respparse import from_annotation

# small integer-ish grids force ties, which is the interesting case for ranks
score = st.integers(0, 20).map(lambda k: k / 2)


@st.composite
def paired(draw, min_size=2, max_size=50):
    n = draw(st.integers(min_size, max_size))
    return draw(st.lists(score, min_size=n, max_size=n)), draw(st.lists(score, min_size=n, max_size=n))


def test_pcc_perfect_linear():
    assert pcc([1, 2, 3], [2, 4, 6]).value == pytest.approx(1.0, abs=1e-12)


def test_pcc_quadratic_matches_hand_oracle():
    assert pcc([1, 2, 3], [1, 4, 9]).value == pytest.approx(0.98974, abs=1e-5)
    assert pcc([1, 2, 3], [1, 4, 9]).value == pytest.approx(oracles.pearson([1, 2, 3], [1, 4, 9]), abs=1e-12)


def test_constant_gold_is_undefined_with_reason():
    v = pcc([9, 8, 10, 7], [10, 10, 10, 10])
    assert v.value is None and v.undefined_reason == ZERO_VAR_GOLD and not v.defined
    assert scc([9, 8, 10, 7], [10, 10, 10, 10]).undefined_reason == ZERO_VAR_GOLD


def test_constant_prediction_is_undefined_with_reason():
    assert pcc([5, 5, 5], [1, 2, 3]).undefined_reason == ZERO_VAR_PRED


def test_single_pair_correlation_is_undefined():
    v = pcc([5], [7])
    assert v.undefined_reason == TOO_FEW and v.n == 1


@pytest.mark.parametrize("pred, gold, expected", [
    ([1, 2, 3], [1, 4, 9], 1.0),
    ([1, 2, 3], [3, 2, 1], -1.0),
])
def test_scc_examples(pred, gold, expected):
    assert scc(pred, gold).value == pytest.approx(expected, abs=1e-9)


def test_scc_with_tie_uses_average_ranks():
    # ranks (1, 2.5, 2.5, 4) vs (1, 3, 2, 4): cov 4.5, variances 4.5 and 5
    expected = 4.5 / math.sqrt(4.5 * 5)
    assert oracles.spearman([1, 2, 2, 3], [1, 3, 2, 4]) == pytest.approx(expected, abs=1e-12)
    assert scc([1, 2, 2, 3], [1, 3, 2, 4]).value == pytest.approx(expected, abs=1e-9)
    # breaking the tie by position instead would give 0.8
    assert oracles.pearson([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


@pytest.mark.parametrize("pred, gold, expected", [
    ([4, 5, 6], [4, 5, 6], 0.0),
    ([0, 0], [3, 4], 3.53553),
    ([5], [7], 2.0),
])
def test_rmse_examples(pred, gold, expected):
    assert rmse(pred, gold).value == pytest.approx(expected, abs=1e-5)


@pytest.mark.parametrize("fn", [pcc, scc, rmse])
def test_length_mismatch_raises(fn):
    with pytest.raises(MetricError):
        fn([1, 2, 3], [1, 2])


@pytest.mark.parametrize("fn", [pcc, scc, rmse])
def test_non_finite_raises(fn):
    with pytest.raises(MetricError):
        fn([1, float("nan")], [1, 2])


def test_paired_series_accepted_directly():
    s = PairedSeries([1, 2, 3], [1, 4, 9], "sentence", "accuracy")
    assert pcc(s).value == pcc([1, 2, 3], [1, 4, 9]).value


@given(st.lists(score, min_size=1, max_size=50))
def test_average_ranks_match_brute_force(xs):
    assert list(average_ranks(xs)) == oracles.brute_ranks(xs)


@given(paired())
def test_metrics_match_oracle(pair):
    p, g = pair
    for ours, ref in ((pcc, oracles.pearson), (scc, oracles.spearman)):
        got, want = ours(p, g).value, ref(p, g)
        assert (got is None) == (want is None)
        if want is not None:
            assert got == pytest.approx(want, abs=1e-9)
    assert rmse(p, g).value == pytest.approx(oracles.rmse(p, g), abs=1e-9)


@given(paired())
def test_correlations_are_symmetric(pair):
    p, g = pair
    for fn in (pcc, scc):
        a, b = fn(p, g).value, fn(g, p).value
        assert (a is None) == (b is None)
        if a is not None:
            assert a == pytest.approx(b, abs=1e-12)


@given(paired(), st.floats(0.1, 10), st.floats(-5, 5))
def test_positive_affine_invariance(pair, a, b):
    p, g = pair
    assume(pcc(p, g).defined)
    q = [a * x + b for x in p]
    assert pcc(q, g).value == pytest.approx(pcc(p, g).value, abs=1e-9)
    assert scc(q, g).value == pytest.approx(scc(p, g).value, abs=1e-9)


@given(paired())
def test_scc_invariant_under_monotone_transform(pair):
    p, g = pair
    assume(scc(p, g).defined)
    assert scc([math.exp(x) for x in p], g).value == pytest.approx(scc(p, g).value, abs=1e-12)


@given(paired(min_size=1))
def test_scc_is_pearson_of_ranks(pair):
    p, g = pair
    assert scc(p, g) == pcc(list(average_ranks(p)), list(average_ranks(g)))


@given(st.lists(st.floats(0, 2, allow_nan=False), min_size=1, max_size=30), st.data())
def test_rescale_linearity(native_pred, data):
    native_gold = data.draw(st.lists(st.floats(0, 2, allow_nan=False),
                                     min_size=len(native_pred), max_size=len(native_pred)))
    wide = rmse([5 * x for x in native_pred], [5 * x for x in native_gold]).value
    assert wide == pytest.approx(5 * rmse(native_pred, native_gold).value, abs=1e-12)


def test_phone_cell_reports_native_rmse_by_default():
    pred, gold = [10.0, 5.0, 0.0], [9.0, 5.0, 1.0]
    native = score_cell("phone", "accuracy", pred, gold)
    wide = score_cell("phone", "accuracy", pred, gold, phone_rmse_scale="0-10")
    assert native.rmse_scale == "0-2" and wide.rmse_scale == "0-10"
    assert native.rmse.value == pytest.approx(wide.rmse.value / 5, abs=1e-12)
    assert native.pcc == wide.pcc


def test_fmt_pair_rounds_to_two_decimals():
    cell = MetricCell("word", "accuracy", MetricValue(0.736, 10), MetricValue(0.701, 10), MetricValue(1.0, 10))
    assert fmt_pair(cell) == "0.74 / 0.70"


def test_undefined_cell_renders_as_dash():
    undefined = MetricValue(None, 5, ZERO_VAR_GOLD)
    cell = MetricCell("sentence", "completeness", undefined, undefined, MetricValue(0.5, 5))
    assert fmt_pair(cell) == "- / -"
    text = render_report(MetricReport({("sentence", "completeness"): cell}, 5))
    assert "- / -" in text and "Completeness" in text and ZERO_VAR_GOLD in text


# -- evaluate ---------------------------------------------------------------


def _gold_responses(utts, task):
    return {u.utterance_id: from_annotation(u, task) for u in utts}


def test_evaluate_identity_is_perfect(fixture_corpus):
    utts = fixture_corpus["train"].utterances + fixture_corpus["test"].utterances
    task = TaskSpec.full()
    rep = evaluate(_gold_responses(utts, task), utts, task)
    assert set(rep.cells) == set(task.targets())
    for key, cell in rep.cells.items():
        assert cell.rmse.value == pytest.approx(0.0, abs=1e-12)
        if cell.pcc.defined:
            assert cell.pcc.value == pytest.approx(1.0) and cell.scc.value == pytest.approx(1.0)
    assert rep.n_utterances == len(utts) and rep.n_excluded == 0


def test_evaluate_constant_completeness_is_dash(fixture_corpus):
    utts = fixture_corpus["test"].utterances
    for u in utts:
        u.sentence.completeness = 10.0
    task = TaskSpec.parse("sentence")
    rep = evaluate(_gold_responses(utts, task), utts, task)
    cell = rep.cell("sentence", "completeness")
    assert cell.pcc.undefined_reason == ZERO_VAR_GOLD
    assert "- / -" in render_report(rep)


def test_evaluate_counts_exclusions(fixture_corpus):
    utts = fixture_corpus["train"].utterances + fixture_corpus["test"].utterances
    task = TaskSpec.parse("sentence")
    responses = _gold_responses(utts, task)
    failed = {u.utterance_id: "bad line" for u in utts[::2]}
    for uid in failed:
        del responses[uid]
    rep = evaluate(responses, utts, task, failures=failed)
    assert rep.n_excluded == len(utts) // 2
    assert rep.excluded_fraction == pytest.approx(0.5)
    assert all(reason.startswith("parse:") for reason in rep.exclusions.values())


def test_evaluate_excludes_misaligned_words(fixture_corpus):
    utts = fixture_corpus["test"].utterances
    task = TaskSpec.parse("word")
    responses = _gold_responses(utts, task)
    extra = responses[utts[0].utterance_id]
    extra.words.append(extra.words[-1])
    rep = evaluate(responses, utts, task)
    assert rep.n_excluded == 1
    assert rep.exclusions[utts[0].utterance_id].startswith("alignment:")


def test_evaluate_without_usable_utterances_raises(fixture_corpus):
    with pytest.raises(MetricError):
        evaluate({}, fixture_corpus["test"].utterances, TaskSpec.full())


def test_report_omits_cells_not_requested(fixture_corpus):
    utts = fixture_corpus["test"].utterances
    task = TaskSpec.parse("word:stress")
    rep = evaluate(_gold_responses(utts, task), utts, task)
    text = render_report(rep)
    assert "Stress" in text and "Fluency" not in text and "Phoneme" not in text


def test_report_json_round_trip(fixture_corpus):
    utts = fixture_corpus["test"].utterances
    task = TaskSpec.full()
    rep = evaluate(_gold_responses(utts, task), utts, task)
    back = MetricReport.from_dict(json.loads(render_report(rep, "json")))
    assert back.to_dict() == rep.to_dict()
    csv_lines = render_report(rep, "csv").splitlines()
    assert len(csv_lines) == 1 + len(task.targets())


def test_text_report_has_table_layout(fixture_corpus):
    utts = fixture_corpus["test"].utterances
    task = TaskSpec.full()
    text = render_report(evaluate(_gold_responses(utts, task), utts, task), label="echo")
    lines = text.splitlines()
    assert "Phoneme Score" in lines[0] and "Word Score (PCC / SCC)" in lines[0]
    assert "Utterance Score (PCC / SCC)" in lines[0]
    assert lines[1].startswith("Model") and lines[3].startswith("echo")
    # every column separator lines up between header and data row
    assert [i for i, c in enumerate(lines[1]) if c == "|"] == [i for i, c in enumerate(lines[3]) if c == "|"]
