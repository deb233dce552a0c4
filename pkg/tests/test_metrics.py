"""Score definitions against hand-worked cases, a per-pixel oracle and invariants."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import Undefined, brute_bc, brute_miou, brute_sc
from sitsscd.errors import DimensionError, InputError, MetricError
from sitsscd.metrics import (
    ChangeSeries,
    LabelSeries,
    MetricsReport,
    ScdConfusion,
    bc_score,
    csv_rows,
    derive_change,
    evaluate,
    mean_report,
    miou,
    sc_score,
    scs,
)


def series(labels, ignore=None):
    return LabelSeries(np.asarray(labels), None if ignore is None else np.asarray(ignore, bool))


def one_hot_logits(labels, k):
    return np.moveaxis(np.eye(k)[labels], -1, 1)


# ---------------------------------------------------------------- change maps

def test_constant_series_has_no_change():
    c = derive_change(series(np.zeros((4, 2, 2), int)))
    assert not c.change.any() and c.valid.all()


def test_single_flip_gives_one_change():
    lab = np.zeros((12, 3, 3), int)
    lab[5:, 1, 2] = 1
    c = derive_change(series(lab))
    assert c.change.sum() == 1 and c.change[4, 1, 2]


def test_ignored_date_masks_both_adjacent_pairs():
    ign = np.zeros((4, 1, 1), bool)
    ign[2] = True
    c = derive_change(series(np.zeros((4, 1, 1), int), ign))
    assert c.valid[:, 0, 0].tolist() == [True, False, False]


def test_change_needs_two_dates():
    with pytest.raises(InputError):
        derive_change(series(np.zeros((1, 2, 2), int)))


# ---------------------------------------------------------------- mIoU

def test_perfect_prediction():
    lab = np.random.default_rng(0).integers(0, 3, (3, 4, 4))
    assert miou(series(lab), series(lab))[0] == 1.0


def test_hand_confusion_two_classes():
    gt = series(np.array([0, 0, 1, 1]).reshape(1, 2, 2))
    pred = series(np.array([0, 1, 1, 1]).reshape(1, 2, 2))
    m, per = miou(pred, gt, 2)
    assert per.tolist() == [0.5, 2 / 3]
    assert m == pytest.approx(7 / 12, abs=1e-15)


def test_all_ignored_is_an_error():
    lab = np.zeros((1, 2, 2), int)
    with pytest.raises(MetricError, match="no valid pixels"):
        miou(series(lab), series(lab, np.ones((1, 2, 2))))


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        miou(series(np.zeros((1, 2, 2), int)), series(np.zeros((1, 2, 3), int)))


# ---------------------------------------------------------------- BC

def _change(mask):
    mask = np.asarray(mask, bool)
    return ChangeSeries(mask, np.ones_like(mask))


def test_bc_one_hit_one_miss_one_false_alarm():
    gt = _change([[[1, 1, 0]]])
    pred = _change([[[1, 0, 1]]])
    assert bc_score(pred, gt) == pytest.approx(1 / 3)


def test_bc_vacuous_case():
    empty = _change(np.zeros((2, 2, 2)))
    assert bc_score(empty, empty) == 1.0


def test_bc_perfect():
    gt = _change([[[1, 0]]])
    assert bc_score(gt, gt) == 1.0


# ---------------------------------------------------------------- SC / SCS

def test_sc_wrong_new_class_scores_zero():
    gt = np.zeros((2, 1, 1), int)
    gt[1] = 1
    pred = gt.copy()
    pred[1] = 2
    assert sc_score(series(pred), series(gt), 3) == 0.0


def test_sc_ignores_errors_outside_change_support():
    rng = np.random.default_rng(3)
    gt = np.zeros((4, 16, 16), int)
    mask = rng.random((16, 16)) < 0.05
    gt[2:, mask] = 1
    pred = gt.copy()
    outside = np.broadcast_to(~mask, gt.shape)
    pred[outside] = rng.integers(0, 3, outside.sum())
    assert sc_score(series(pred), series(gt), 3) == 1.0


def test_sc_without_change_support_errors():
    lab = np.zeros((3, 2, 2), int)
    with pytest.raises(MetricError, match="no change support"):
        sc_score(series(lab), series(lab), 2)


def test_sc_anchor_choice():
    gt = np.array([0, 1]).reshape(2, 1, 1)
    pred = np.array([0, 0]).reshape(2, 1, 1)
    assert sc_score(series(pred), series(gt), 2, anchor="earlier") == 1.0
    assert sc_score(series(pred), series(gt), 2, anchor="later") == 0.0


@pytest.mark.parametrize("sc_pct,bc_pct,expected", [(41.0, 22.4, 31.7), (25.7, 1.7, 13.7)])
def test_scs_reference_pairs(sc_pct, bc_pct, expected):
    assert abs(100 * scs(sc_pct / 100, bc_pct / 100) - expected) < 0.05


@given(st.floats(0, 1))
def test_scs_idempotent(x):
    assert scs(x, x) == pytest.approx(x)


# ---------------------------------------------------------------- evaluate / reports

def test_perfect_logits_score_one():
    lab = np.random.default_rng(1).integers(0, 3, (4, 5, 5))
    lab[2:, 0, 0] = (lab[1, 0, 0] + 1) % 3
    rep = evaluate(one_hot_logits(lab, 3), series(lab))
    assert (rep.miou, rep.bc, rep.sc, rep.scs) == (1.0, 1.0, 1.0, 1.0)


def test_argmax_ties_go_to_lowest_class():
    logits = np.zeros((2, 3, 1, 1))
    gt = series(np.array([0, 1]).reshape(2, 1, 1))
    rep = evaluate(logits, gt)
    assert rep.confusion[1, 0] == 1 and rep.confusion[0, 0] == 1


def test_report_scs_is_exact_mean():
    rng = np.random.default_rng(5)
    gt = rng.integers(0, 3, (4, 6, 6))
    rep = evaluate(rng.standard_normal((4, 3, 6, 6)), series(gt))
    assert rep.scs == (rep.sc + rep.bc) / 2
    assert all(0 <= v <= 1 for v in (rep.miou, rep.bc, rep.sc, rep.scs))


def test_report_json_round_trip():
    rng = np.random.default_rng(6)
    gt = rng.integers(0, 3, (3, 4, 4))
    rep = evaluate(rng.standard_normal((3, 3, 4, 4)), series(gt))
    back = MetricsReport.from_dict(__import__("json").loads(rep.to_json()))
    assert (back.miou, back.bc, back.sc, back.scs) == (rep.miou, rep.bc, rep.sc, rep.scs)
    assert set(rep.to_dict()) >= {"miou", "per_class_iou", "bc", "sc", "scs", "pixel_counts"}


def test_confusions_merge_like_concatenation():
    rng = np.random.default_rng(7)
    gt = rng.integers(0, 3, (3, 4, 8))
    pred = rng.integers(0, 3, (3, 4, 8))
    whole = ScdConfusion.from_series(series(pred), series(gt), 3)
    left = ScdConfusion.from_series(series(pred[..., :4]), series(gt[..., :4]), 3)
    right = ScdConfusion.from_series(series(pred[..., 4:]), series(gt[..., 4:]), 3)
    merged = right + left
    for name in ("semantic", "change", "semantic_change"):
        np.testing.assert_array_equal(getattr(merged, name), getattr(whole, name))
    assert merged.report().scs == whole.report().scs
    assert merged.report("per_tile").miou == pytest.approx(
        np.mean([left.report().miou, right.report().miou]))


def test_csv_rows_use_table_column_order():
    text = csv_rows([("Ours", {"SCS": 31.7, "SC": 41.0, "BC": 22.4, "mIoU": 60.5})])
    assert text.splitlines() == ["name,SCS,SC,BC,mIoU", "Ours,31.7,41.0,22.4,60.5"]


def test_mean_report_keeps_scs_identity():
    rng = np.random.default_rng(8)
    reps = [evaluate(rng.standard_normal((3, 2, 4, 4)), series(rng.integers(0, 2, (3, 4, 4))))
            for _ in range(3)]
    m = mean_report(reps)
    assert m["scs"] == (m["sc"] + m["bc"]) / 2


# ---------------------------------------------------------------- properties

label_cube = st.tuples(st.integers(2, 4), st.integers(1, 4), st.integers(1, 4), st.integers(2, 4),
                       st.integers(0, 2**31 - 1))


def _draw(params):
    t, h, w, k, seed = params
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, k, (t, h, w))
    pred = rng.integers(0, k, (t, h, w))
    ign = rng.random((t, h, w)) < 0.2
    return rng, gt, pred, ign, k


def _scores(pred, gt, ign, k):
    out = {"miou": None, "bc": None, "sc": None}
    try:
        out["miou"] = miou(series(pred, ign), series(gt, ign), k)[0]
    except MetricError:
        pass
    out["bc"] = bc_score(derive_change(series(pred), ign), derive_change(series(gt, ign)))
    try:
        out["sc"] = sc_score(series(pred, ign), series(gt, ign), k)
    except MetricError:
        pass
    return out


@given(label_cube)
def test_class_permutation_invariance(params):
    rng, gt, pred, ign, k = _draw(params)
    perm = rng.permutation(k)
    assert _scores(perm[pred], perm[gt], ign, k) == pytest.approx(_scores(pred, gt, ign, k)) or \
        _scores(perm[pred], perm[gt], ign, k) == _scores(pred, gt, ign, k)


@given(label_cube)
def test_values_at_ignored_pixels_do_not_matter(params):
    rng, gt, pred, ign, k = _draw(params)
    pred2, gt2 = pred.copy(), gt.copy()
    pred2[ign] = rng.integers(0, k, ign.sum())
    gt2[ign] = rng.integers(0, k, ign.sum())
    assert _scores(pred2, gt2, ign, k) == _scores(pred, gt, ign, k)


@given(label_cube)
def test_bc_monotone_in_detections(params):
    _, gt, pred, ign, k = _draw(params)
    g = derive_change(series(gt, ign))
    p = derive_change(series(pred), ign)
    base = bc_score(p, g)
    missed = g.change & ~p.change
    if missed.any():
        better = p.change.copy()
        better[tuple(np.argwhere(missed)[0])] = True
        assert bc_score(ChangeSeries(better, p.valid), g) >= base
    quiet = g.valid & ~g.change & ~p.change
    if quiet.any():
        worse = p.change.copy()
        worse[tuple(np.argwhere(quiet)[0])] = True
        assert bc_score(ChangeSeries(worse, p.valid), g) <= base


@given(label_cube)
def test_matches_brute_force_oracle(params):
    _, gt, pred, ign, k = _draw(params)
    got = _scores(pred, gt, ign, k)
    try:
        assert got["miou"] == brute_miou(pred, gt, ign, k)
    except Undefined:
        assert got["miou"] is None
    assert got["bc"] == brute_bc(pred, gt, ign)
    try:
        assert got["sc"] == brute_sc(pred, gt, ign, k)
    except Undefined:
        assert got["sc"] is None
