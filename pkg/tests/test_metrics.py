import itertools
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slnscreen import fixtures
from slnscreen.corpus import VoteSet, chunk_vote_sets
from slnscreen.errors import NotComputableError, VoteSetError
from slnscreen.metrics import (
    ConfusionMatrix2,
    ConfusionMatrix4,
    Ratio,
    aggregate_users,
    build_user_report,
    case_confusion,
    diagnostic_metrics,
    group_confusion,
    majority_vote,
    round_half_up,
    score_vote_set,
    tabulate_confusion4,
)
from slnscreen.trainer import PredictionRow

D = Decimal


def test_round_half_up():
    assert round_half_up(Fraction(9375, 100)) == D("93.75")
    assert round_half_up(Fraction(859375, 10000)) == D("85.94")
    assert round_half_up(Fraction(921875, 10000)) == D("92.19")
    assert round_half_up(Fraction(84375, 1000)) == D("84.38")
    assert round_half_up(Fraction(1, 3)) == D("0.33")
    assert round_half_up(Fraction(100)) == D("100.00")


def test_ratio_rendering():
    assert Ratio(161, 320).render() == "50.31"
    assert str(Ratio(161, 320)) == "161/320"
    assert Ratio(0, 0).render() == "not computable"
    assert Ratio(0, 0).rendered() is None


def test_table1_image_accuracy():
    m = tabulate_confusion4(fixtures.table1_predictions())
    assert m == fixtures.table1()
    assert (m.trace, m.total) == (161, 320)
    assert m.accuracy.rendered() == D("50.31")


def test_all_correct_and_empty():
    m = tabulate_confusion4([(c, c) for c in range(4) for _ in range(80)])
    assert m.counts == tuple(tuple(80 if i == j else 0 for j in range(4)) for i in range(4))
    assert m.accuracy.rendered() == D("100.00")
    assert tabulate_confusion4([]).accuracy.render() == "not computable"


def test_table2_grouping():
    m2 = group_confusion(fixtures.table1())
    assert m2 == ConfusionMatrix2(tn=152, fp=8, fn=37, tp=123)
    acc = diagnostic_metrics(m2).accuracy
    assert (acc.numerator, acc.denominator) == (275, 320)
    assert acc.rendered() == D("85.94")


def test_grouping_degenerate():
    assert group_confusion(ConfusionMatrix4(((0,) * 4,) * 4)) == ConfusionMatrix2(0, 0, 0, 0)
    diag = ConfusionMatrix4(tuple(tuple(80 if i == j else 0 for j in range(4)) for i in range(4)))
    assert group_confusion(diag) == ConfusionMatrix2(tn=160, fp=0, fn=0, tp=160)


def test_table3_vote_examples():
    for ex in fixtures.table3():
        outcome = score_vote_set(ex["observed_dx"], ex["predicted_dx"])
        assert outcome.agreeing == ex["agreeing"]
        assert ("Correct" if outcome.correct else "Incorrect") == ex["outcome"]
    assert [score_vote_set(e["observed_dx"], e["predicted_dx"]).describe() for e in fixtures.table3()] == [
        "2/5 -> Incorrect", "3/5 -> Correct", "5/5 -> Correct", "4/5 -> Correct"]


def test_majority_vote_needs_five():
    for n in (0, 4, 6):
        with pytest.raises(VoteSetError):
            majority_vote([True] * n)


def test_majority_vote_permutation_invariant_exhaustive():
    for votes in itertools.product([False, True], repeat=5):
        results = {majority_vote(p) for p in itertools.permutations(votes)}
        assert results == {sum(votes) >= 3}


def test_table4_metrics():
    m = diagnostic_metrics(fixtures.table4())
    assert [(r.numerator, r.denominator) for _, r in m.items()] == [(59, 64), (27, 32), (32, 32), (27, 27), (32, 37)]
    assert m.rendered() == {"accuracy": D("92.19"), "sensitivity": D("84.38"), "specificity": D("100.00"),
                            "ppv": D("100.00"), "npv": D("86.49")}


def test_table2_metrics_match_user1_row():
    m = diagnostic_metrics(group_confusion(fixtures.table1()))
    users, _ = fixtures.table5()
    user1 = users[0][1]
    for name in ("sensitivity", "specificity", "ppv", "npv"):
        assert m.rendered()[name] == user1[name]
    assert diagnostic_metrics(fixtures.table4()).accuracy.rendered() == user1["accuracy"]


def test_zero_matrix_metrics_not_computable():
    m = diagnostic_metrics(ConfusionMatrix2(0, 0, 0, 0))
    assert all(r.render() == "not computable" for _, r in m.items())


def test_case_confusion_user1_shape():
    sets = [VoteSet(f"V{i}", "S", tuple(f"V{i}-{k}" for k in range(5)), 3 if i < 32 else 0) for i in range(64)]
    preds = {}
    for i, vs in enumerate(sets):
        # 5 positive sets under-called, the rest right
        call = (0 if i < 5 else 2) if i < 32 else 0
        preds.update({p: call for p in vs.patch_ids})
    m = case_confusion(sets, preds)
    assert m == ConfusionMatrix2(tn=32, fp=0, fn=5, tp=27)
    assert m.total == 64


def test_case_confusion_missing_prediction():
    vs = VoteSet("V", "S", ("a", "b", "c", "d", "e"), 0)
    with pytest.raises(VoteSetError, match="patch e"):
        case_confusion([vs], {k: 0 for k in "abcd"})


def test_aggregate_table5_means():
    users, printed = fixtures.table5()
    means = aggregate_users(users)
    assert means == {"accuracy": D("91.15"), "sensitivity": D("77.92"), "specificity": D("92.09"),
                     "ppv": D("90.86"), "npv": D("80.66")}
    assert means == printed


def test_aggregate_single_and_identical():
    row = {"accuracy": D("87.5"), "sensitivity": D("78.75"), "specificity": D("89.38"),
           "ppv": D("88.11"), "npv": D("80.79")}
    assert aggregate_users([("u", row)]) == {k: round_half_up(Fraction(v)) for k, v in row.items()}
    assert aggregate_users([("a", row), ("b", row), ("c", row)]) == aggregate_users([("u", row)])


def test_aggregate_rejects_not_computable():
    good = diagnostic_metrics(ConfusionMatrix2(1, 1, 1, 1))
    bad = diagnostic_metrics(ConfusionMatrix2(5, 0, 0, 0))
    with pytest.raises(NotComputableError, match="user B: metric sensitivity"):
        aggregate_users([("A", dict(good.items())), ("B", dict(bad.items()))])
    with pytest.raises(NotComputableError):
        aggregate_users([])


counts = st.integers(0, 200)


@given(counts, counts, counts, counts)
def test_metric_identities(tn, fp, fn, tp):
    m = diagnostic_metrics(ConfusionMatrix2(tn, fp, fn, tp))
    assert m.accuracy.numerator == tp + tn and m.accuracy.denominator == tn + fp + fn + tp
    for _, r in m.items():
        assert r.computable == (r.denominator != 0)
        if r.computable:
            assert D(0) <= r.rendered() <= D(100)


@given(counts, st.integers(1, 200), st.integers(0, 200))
def test_fp_zero_gives_exact_hundreds(tn, tp, fn):
    m = diagnostic_metrics(ConfusionMatrix2(tn + 1, 0, fn, tp))
    assert m.specificity.value == 1 and m.ppv.value == 1
    assert m.specificity.render() == "100.00" and m.ppv.render() == "100.00"


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=60))
def test_grouping_conserves_total(pairs):
    m4 = tabulate_confusion4(pairs)
    assert m4.total == len(pairs) == group_confusion(m4).total


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60), st.data())
def test_fixing_one_prediction_never_lowers_accuracy(pairs, data):
    wrong = [i for i, (o, p) in enumerate(pairs) if o != p]
    before = tabulate_confusion4(pairs).accuracy.value
    if wrong:
        i = data.draw(st.sampled_from(wrong))
        pairs = list(pairs)
        pairs[i] = (pairs[i][0], pairs[i][0])
    assert tabulate_confusion4(pairs).accuracy.value >= before


def _rows_for(obs_pred):
    rows = []
    for s, (obs, preds) in enumerate(obs_pred):
        for j, p in enumerate(preds):
            rows.append(PredictionRow(f"S{s}-P{j:02d}", f"S{s}", f"C{s}", obs, p, (0.25,) * 4))
    return rows


def test_user_report_consistency():
    rows = _rows_for([(3, [3, 2, 0, 1, 3] * 2), (0, [0, 0, 1, 2, 3] * 2)])
    sets = chunk_vote_sets((r.patch_id, r.slide_id, r.observed_dx) for r in rows)
    report = build_user_report("u", rows, sets)
    assert report.case_matrix.total * 5 == report.image_matrix.total == 20
    assert report.case_matrix == ConfusionMatrix2(tn=2, fp=0, fn=0, tp=2)


def test_user_report_rejects_partial_cover():
    rows = _rows_for([(3, [3] * 10)])
    sets = chunk_vote_sets((r.patch_id, r.slide_id, r.observed_dx) for r in rows[:5])
    with pytest.raises(VoteSetError):
        build_user_report("u", rows, sets)
