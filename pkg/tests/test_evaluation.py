import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incomepanel.evaluation import (
    ConfusionMatrix,
    SplitSpec,
    accuracy,
    confusion,
    confusion_markdown,
    markdown_table,
    percentage_split,
    roc_auc_ovr,
    score_predictions,
    weighted_auc,
    write_metrics_csv,
)

RF_CONFUSION = np.array([[2064, 299, 19], [473, 749, 75], [87, 180, 192]])


def concordant_pair_auc(scores, positives):
    pos = [s for s, p in zip(scores, positives) if p]
    neg = [s for s, p in zip(scores, positives) if not p]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def test_auc_equals_pair_oracle(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        scores = rng.integers(0, 8, n) / 7.0 if rng.random() < 0.5 else rng.random(n)
        labels = rng.random(n) < rng.uniform(0.1, 0.9)
        if labels.all() or not labels.any():
            labels[0] = not labels[0]
        assert roc_auc_ovr(scores, labels) == concordant_pair_auc(scores, labels)


def test_auc_edge_cases():
    assert roc_auc_ovr([0.1, 0.9], [False, True]) == 1.0
    assert roc_auc_ovr([0.5, 0.5], [False, True]) == 0.5
    assert np.isnan(roc_auc_ovr([0.1, 0.2], [True, True]))


def test_accuracy_of_reference_confusion():
    assert RF_CONFUSION.sum() == 4138
    assert round(accuracy(ConfusionMatrix(RF_CONFUSION)), 4) == 72.6196


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(1, 3)), min_size=1, max_size=80))
def test_confusion_counts_and_accuracy(pairs):
    actual, predicted = (np.array(v) for v in zip(*pairs))
    cm = confusion(actual, predicted)
    assert cm.total == len(pairs)
    for a, p in pairs:
        assert cm.counts[a - 1, p - 1] >= 1
    assert accuracy(cm) == pytest.approx(100.0 * np.mean(actual == predicted))


def test_weighted_auc():
    assert weighted_auc([0.8, 0.6, 0.9], [0.5, 0.3, 0.2]) == pytest.approx(0.76)
    assert weighted_auc([0.8, np.nan, 0.6], [0.5, 0.0, 0.5]) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        weighted_auc([0.8, np.nan, 0.6], [0.5, 0.1, 0.4])


def test_single_class_test_side_is_flagged():
    actual = np.array([2, 2, 2])
    r = score_predictions("m", actual, actual, np.tile([0.2, 0.5, 0.3], (3, 1)), n_train=5)
    assert r.accuracy == 100.0 and r.weighted_auc == 0.5 and r.auc_undefined


@pytest.mark.parametrize("n, fraction", [(10, 0.8), (7, 0.5), (101, 0.8), (2, 0.5)])
def test_row_split_sizes(n, fraction):
    train, test = percentage_split(n, SplitSpec(fraction, seed=3))
    assert len(train) == int(np.floor(n * fraction + 0.5))
    assert sorted(np.r_[train, test].tolist()) == list(range(n))
    again = percentage_split(n, SplitSpec(fraction, seed=3))
    assert np.array_equal(train, again[0])


def test_group_split_keeps_individuals_whole():
    groups = np.repeat(np.arange(25), 4)
    train, test = percentage_split(100, SplitSpec(0.8, seed=1, group_by_individual=True), groups)
    assert not set(groups[train]) & set(groups[test])
    assert len(train) == 80
    with pytest.raises(ValueError):
        percentage_split(100, SplitSpec(0.8, group_by_individual=True))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(1.0)


def test_report_tables(tmp_path):
    actual = np.array([1, 1, 2, 3, 1])
    predicted = np.array([1, 2, 2, 3, 1])
    scores = np.eye(3)[predicted - 1] * 0.8 + 0.1
    r = score_predictions("Random Forest", actual, predicted, scores, n_train=20)
    assert r.accuracy == 80.0
    table = markdown_table([r])
    assert "| Random Forest | 80.0000 % | " in table
    assert confusion_markdown(r.confusion, ["a", "b", "c"]).splitlines()[2] == "| a | 2 | 1 | 0 |"
    write_metrics_csv([r], tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "experiment,metric,value"
    assert "Random Forest,accuracy,80.0" in rows
    # accuracy recomputes exactly from the stored confusion counts
    counts = {row.split(",")[1]: int(row.split(",")[2]) for row in rows if ",confusion_" in row}
    diag = sum(counts[f"confusion_{k}_{k}"] for k in (1, 2, 3))
    assert 100.0 * diag / sum(counts.values()) == r.accuracy
