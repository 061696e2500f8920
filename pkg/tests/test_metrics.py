import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebosal.metrics import (
    AGGREGATE_COLUMNS,
    REPORT_COLUMNS,
    CycleReport,
    accuracy,
    aggregate,
    auroc,
    auroc_arrays,
    final_rows,
    read_csv,
    write_aggregate_csv,
    write_csv,
    write_dat,
)

from oracles import SD_04_06, brute_force_auroc


def report(cycle=1, seed=0, method="ebosal", acc=0.5, prec=0.75, auc=0.8, **kw):
    base = dict(
        cycle=cycle, seed=seed, method=method, n_labeled=10, spent_budget=4, test_accuracy=acc,
        query_precision_cycle=prec, query_precision_cumulative=prec, energy_auroc=auc,
        mean_E_known=-4.25, mean_E_unknown=1.0 / 3.0, fallback_engaged=False,
    )
    base.update(kw)
    return CycleReport(**base)


# --------------------------------------------------------------- accuracy


def test_accuracy_cases():
    targets = np.array([0, 1, 2, 1])
    assert accuracy(np.eye(3)[targets], targets) == 1.0
    assert accuracy(np.zeros((4, 3)), np.array([0, 1, 2, 0])) == 0.5  # ties pick class 0
    assert accuracy(np.eye(3)[[0, 1, 0, 0]], targets) == 0.5


def test_constant_predictor_on_balanced_set():
    targets = np.repeat(np.arange(4), 5)
    assert accuracy(np.tile([0.0, 0.0, 1.0, 0.0], (20, 1)), targets) == 0.25


def test_accuracy_needs_test_samples():
    with pytest.raises(ValueError):
        accuracy(np.zeros((0, 3)), np.zeros(0, dtype=int))


# --------------------------------------------------------------- auroc


def test_auroc_hand_cases():
    scores = {0: 1.0, 1: 3.0, 2: 2.0, 3: 4.0}
    labels = {0: False, 1: False, 2: True, 3: True}
    assert auroc(scores, labels) == 0.75
    assert auroc({0: 1.0, 1: 5.0}, {0: False, 1: True}) == 1.0
    assert auroc(dict.fromkeys(range(6), 2.0), {i: i % 2 == 0 for i in range(6)}) == 0.5


def test_auroc_one_class_is_nan():
    assert math.isnan(auroc({0: 1.0, 1: 2.0}, {0: True, 1: True}))


score_lists = st.lists(st.integers(-5, 5), min_size=1, max_size=12)


@given(score_lists, score_lists)
def test_auroc_matches_brute_force(pos, neg):
    s = np.array(pos + neg, dtype=float)
    lab = np.array([True] * len(pos) + [False] * len(neg))
    assert abs(auroc_arrays(s, lab) - brute_force_auroc(pos, neg)) < 1e-12


@given(score_lists, score_lists)
def test_auroc_invariant_under_increasing_transform(pos, neg):
    s = np.array(pos + neg, dtype=float)
    lab = np.array([True] * len(pos) + [False] * len(neg))
    assert auroc_arrays(np.exp(s / 3) * 7 - 2, lab) == pytest.approx(auroc_arrays(s, lab), abs=1e-12)


# --------------------------------------------------------------- csv


def test_empty_report_list_writes_header_only(tmp_path):
    p = tmp_path / "r.csv"
    write_csv([], p)
    assert p.read_text() == ",".join(REPORT_COLUMNS) + "\n"


def test_one_report_two_lines_and_formatting(tmp_path):
    p = tmp_path / "r.csv"
    write_csv([report(fallback_engaged=True)], p)
    lines = p.read_bytes().split(b"\n")
    assert lines[-1] == b"" and len(lines) == 3
    assert b"\r" not in p.read_bytes()
    row = dict(zip(REPORT_COLUMNS, lines[1].decode().split(",")))
    assert row["mean_E_unknown"] == "0.333333"
    assert row["fallback_engaged"] == "1" and row["truncated"] == "0"


def test_same_reports_give_identical_bytes(tmp_path):
    rs = [report(cycle=c, acc=c / 7) for c in range(1, 4)]
    write_csv(rs, tmp_path / "a.csv")
    write_csv(rs, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_round_trip_to_printed_precision(tmp_path):
    rs = [report(cycle=c, acc=1 / 3, auc=float("nan"), mean_E_known=-123.456789) for c in (1, 2)]
    p = tmp_path / "r.csv"
    write_csv(rs, p)
    back = read_csv(p)
    assert [r.cycle for r in back] == [1, 2]
    assert back[0].test_accuracy == pytest.approx(1 / 3, rel=1e-5)
    assert math.isnan(back[0].energy_auroc)
    assert back[0].mean_E_known == pytest.approx(-123.457)
    assert back[0].fallback_engaged is False and back[0].method == "ebosal"


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_path_names_the_path(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    with pytest.raises(OSError, match="ro"):
        write_csv([report()], d / "r.csv")


def test_missing_directory_error_names_the_path(tmp_path):
    target = tmp_path / "nope" / "r.csv"
    with pytest.raises(OSError, match="nope"):
        write_csv([report()], target)


# --------------------------------------------------------------- aggregation


def test_single_seed_mean_and_zero_sd():
    (row,) = aggregate([report(acc=0.7)])
    assert row.mean["test_accuracy"] == 0.7 and row.sd["test_accuracy"] == 0.0 and row.n_seeds == 1


def test_two_seed_sd_uses_n_minus_one():
    (row,) = aggregate([report(seed=0, acc=0.4), report(seed=1, acc=0.6)])
    assert row.mean["test_accuracy"] == pytest.approx(0.5)
    assert abs(row.sd["test_accuracy"] - SD_04_06) < 1e-12


def test_nan_auroc_rows_are_dropped_and_counted():
    (row,) = aggregate([report(seed=0, auc=0.9), report(seed=1, auc=float("nan")), report(seed=2, auc=0.7)])
    assert row.mean["energy_auroc"] == pytest.approx(0.8)
    assert row.auroc_dropped == 1
    (only_nan,) = aggregate([report(auc=float("nan"))])
    assert math.isnan(only_nan.mean["energy_auroc"]) and only_nan.auroc_dropped == 1


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_aggregate_mean_matches_numpy(values):
    (row,) = aggregate([report(seed=i, acc=v) for i, v in enumerate(values)])
    assert row.mean["test_accuracy"] == pytest.approx(np.mean(values), abs=1e-12)
    expected_sd = np.std(values, ddof=1) if len(values) > 1 else 0.0
    assert row.sd["test_accuracy"] == pytest.approx(expected_sd, abs=1e-12)


def test_groups_are_sorted_by_method_then_cycle():
    rows = aggregate([report(method="random", cycle=2), report(method="ebosal", cycle=2), report(cycle=1)])
    assert [(r.method, r.cycle) for r in rows] == [("ebosal", 1), ("ebosal", 2), ("random", 2)]
    finals = final_rows(rows)
    assert finals["ebosal"].cycle == 2 and finals["random"].cycle == 2


def test_aggregate_csv_and_dat_layout(tmp_path):
    rows = aggregate([report(method=m, cycle=c, acc=c / 10) for m in ("ebosal", "random") for c in (1, 2)])
    write_aggregate_csv(rows, tmp_path / "agg.csv")
    lines = (tmp_path / "agg.csv").read_text().splitlines()
    assert lines[0].split(",") == AGGREGATE_COLUMNS and len(lines) == 5
    write_dat(rows, "test_accuracy", tmp_path / "acc.dat")
    dat = (tmp_path / "acc.dat").read_text().splitlines()
    assert dat[0] == "# cycle ebosal_mean ebosal_sd random_mean random_sd"
    assert dat[1].split() == ["1", "0.1", "0", "0.1", "0"]
