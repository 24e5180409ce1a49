import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from opinionsum.domain import ThemeDefinition, ThemeSet
from opinionsum.evaluation import (
    NO_FRAGMENTS,
    Dimension,
    EmptySource,
    EmptyTally,
    JudgeVerdict,
    MalformedDecimal,
    OutOfRange,
    aspect_coverage_f1,
    alignscore_rows,
    geval_faithfulness,
    identify_themes_in_text,
    pairwise_judge,
    sentiment_bin,
    sentiment_score,
    tally,
    theme_coverage_count,
)
from opinionsum.gateway import MalformedPayload
from opinionsum.mock import MockGateway
from opinionsum.prompts import builtin_theme_set

FOUR = {"rooms", "location", "food", "service"}


def strict(**kw):
    return MockGateway(strict=True, max_retries=kw.pop("max_retries", 0), **kw)


# --- coverage F1 ---------------------------------------------------------------------------

def test_f1_identity():
    assert aspect_coverage_f1(FOUR, FOUR) == 1.0


def test_f1_partial():
    assert abs(aspect_coverage_f1({"rooms", "food"}, FOUR) - 2 * 2 / (2 + 4)) <= 1e-12
    assert aspect_coverage_f1({"rooms", "food"}, FOUR) == pytest.approx(0.6667, abs=5e-5)


def test_f1_empty_summary():
    assert aspect_coverage_f1(set(), FOUR) == 0.0


def test_f1_empty_source():
    with pytest.raises(EmptySource):
        aspect_coverage_f1({"rooms"}, set())


names = st.sets(st.sampled_from("abcdefgh"), min_size=1)


@given(names, names)
def test_f1_symmetric_and_bounded(a, b):
    assert aspect_coverage_f1(a, b) == aspect_coverage_f1(b, a)
    assert 0.0 <= aspect_coverage_f1(a, b) <= 1.0


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_f1_monotone_in_overlap(ns, nr, data):
    k = data.draw(st.integers(0, min(ns, nr) - 1))
    def sets(overlap):
        S = {f"s{i}" for i in range(ns - overlap)} | {f"x{i}" for i in range(overlap)}
        R = {f"r{i}" for i in range(nr - overlap)} | {f"x{i}" for i in range(overlap)}
        return S, R
    assert aspect_coverage_f1(*sets(k)) <= aspect_coverage_f1(*sets(k + 1))


# --- theme identification -----------------------------------------------------------------

SPACE6 = ThemeSet(list(builtin_theme_set("space"))[:6])


def test_identify_sentinel_everywhere():
    assert identify_themes_in_text("text", SPACE6, strict().when("identify", f"  {NO_FRAGMENTS}\n")) == set()


def _fragments_for(present):
    return lambda req: "- a fragment" if req.meta["theme"].theme_id in present else NO_FRAGMENTS


def test_identify_one_theme():
    g = strict().when("identify", _fragments_for({"Rooms"}))
    assert identify_themes_in_text("The room was big.", SPACE6, g) == {"Rooms"}
    assert len(g.calls) == 6


def test_coverage_counts():
    ids = SPACE6.ids
    assert theme_coverage_count("s", SPACE6, strict().when("identify", "- x")) == 6
    assert theme_coverage_count("s", SPACE6, strict().when("identify", NO_FRAGMENTS)) == 0
    assert theme_coverage_count("s", SPACE6, strict().when("identify", _fragments_for(set(ids[:4])))) == 4


def test_identify_with_heuristic_mock():
    themes = ThemeSet([ThemeDefinition("rooms", "Beds and room size."), ThemeDefinition("food", "Breakfast and bar.")])
    assert identify_themes_in_text("The bed was huge and comfy.", themes, MockGateway()) == {"rooms"}


# --- G-Eval faithfulness ---------------------------------------------------------------------

def test_geval_constant():
    assert geval_faithfulness("reviews", "summary", strict().when("geval", "0.84")) == pytest.approx(0.84)


def test_geval_mean_of_runs():
    g = strict().when("geval", ["1.0", "0.5", "0.0"])
    assert geval_faithfulness("reviews", "summary", g) == 0.5
    assert len(g.calls) == 3


@pytest.mark.parametrize("raw", ["high", "0.5 maybe", "1.2", "-0.1"])
def test_geval_malformed(raw):
    with pytest.raises(MalformedDecimal):
        geval_faithfulness("r", "s", strict().when("geval", raw))


@given(st.lists(st.integers(0, 100), min_size=1, max_size=5))
def test_geval_average_is_order_invariant(hundredths):
    vals = [f"{h / 100:.2f}" for h in hundredths]
    fwd = geval_faithfulness("r", "s", strict().when("geval", vals), runs=len(vals))
    rev = geval_faithfulness("r", "s", strict().when("geval", vals[::-1]), runs=len(vals))
    assert fwd == pytest.approx(rev) and 0.0 <= fwd <= 1.0


# --- sentiment ----------------------------------------------------------------------------------

@pytest.mark.parametrize("score, bin_", [(92, ">80"), (65, "50-80"), (50, "50-80"), (80, "50-80"), (49, "<50"), (81, ">80")])
def test_sentiment_bins(score, bin_):
    s = sentiment_score("summary", strict().when("sentiment", json.dumps({"score": score})))
    assert s == score and sentiment_bin(s) == bin_


def test_sentiment_out_of_range():
    with pytest.raises(OutOfRange):
        sentiment_score("summary", strict().when("sentiment", '{"score": 130}'))


def test_sentiment_malformed():
    with pytest.raises(MalformedPayload):
        sentiment_score("summary", strict().when("sentiment", '{"score": "high"}'))


# --- pairwise judging -----------------------------------------------------------------------------

def _judge(*answers):
    return strict().when("judge", [json.dumps({"answer": str(a), "reasoning": f"r{a}"}) for a in answers])


def test_tie_both_orders():
    v = pairwise_judge("in", "A", "B", "coverage", _judge(3, 3))
    assert v.answer == 3 and v.position_consistent


def test_swap_consistent_preference():
    v = pairwise_judge("in", "A", "B", "faithfulness", _judge(1, 2))
    assert v.answer == 1 and v.position_consistent and v.raw_answers == (1, 2)


def test_swap_inconsistent_becomes_tie():
    v = pairwise_judge("in", "A", "B", "coverage", _judge(1, 1))
    assert v.answer == 3 and v.position_consistent is False


def test_single_pass_protocol():
    g = _judge(2)
    v = pairwise_judge("in", "A", "B", Dimension.COVERAGE, g, debias=False)
    assert v.answer == 2 and len(g.calls) == 1


def test_swapped_call_presents_reversed_pair():
    g = _judge(1, 2)
    pairwise_judge("in", "first summary", "second summary", "coverage", g)
    assert g.calls[0].meta["summary1"] == "first summary" and g.calls[1].meta["summary1"] == "second summary"


def _preferring(winner):
    """Judge that always prefers the summary text ``winner`` wherever it is shown."""
    def respond(req):
        m = req.meta
        ans = 1 if m["summary1"] == winner else 2 if m["summary2"] == winner else 3
        return json.dumps({"answer": ans, "reasoning": ""})
    return strict().when("judge", respond)


@given(st.sampled_from(["A", "B", "C"]))
def test_debiased_preference_ignores_presentation_order(winner):
    ab = pairwise_judge("in", "A", "B", "coverage", _preferring(winner))
    ba = pairwise_judge("in", "B", "A", "coverage", _preferring(winner))
    assert ab.answer == {1: 2, 2: 1, 3: 3}[ba.answer]


def test_judge_rejects_empty_summary():
    with pytest.raises(ValueError):
        pairwise_judge("in", " ", "B", "coverage", _judge(1))


def test_judge_malformed_answer():
    g = strict().when("judge", '{"answer": "4"}')
    with pytest.raises(MalformedPayload):
        pairwise_judge("in", "A", "B", "coverage", g)


def test_verdict_validation():
    with pytest.raises(ValueError):
        JudgeVerdict(0, "", "coverage")


# --- tallies --------------------------------------------------------------------------------------

def test_tally_small():
    t = tally([1, 1, 2, 3])
    assert (t.prefer_1, t.prefer_2, t.tie) == (2, 1, 1)
    assert t.percentages() == {"prefer_1": 50.0, "prefer_2": 25.0, "tie": 25.0}


def test_tally_empty():
    t = tally([])
    assert t.total == 0
    with pytest.raises(EmptyTally):
        t.percentages()


def test_tally_thirty_scripted_verdicts():
    answers = [1] * 17 + [2] * 9 + [3] * 4
    random.Random(0).shuffle(answers)
    verdicts = [pairwise_judge("in", "A", "B", "coverage", _judge(a), debias=False) for a in answers]
    pct = tally(verdicts).percentages()
    assert pct["prefer_1"] == pytest.approx(1700 / 30)
    assert pct["prefer_2"] == pytest.approx(30.0)
    assert pct["tie"] == pytest.approx(400 / 30)


@given(st.lists(st.sampled_from([1, 2, 3])))
def test_tally_sums(xs):
    assert tally(xs).total == len(xs)


def test_alignscore_rows():
    rows = alignscore_rows("ctx", "Rooms are big. Staff were kind!")
    assert rows == [{"context": "ctx", "claim": "Rooms are big."}, {"context": "ctx", "claim": "Staff were kind!"}]
