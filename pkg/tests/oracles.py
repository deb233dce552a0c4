"""Independent reference implementations used as test oracles.

The scorers here walk pixel by pixel in plain Python and never build a
confusion matrix, so they share no code path with the package.
"""

import itertools

import numpy as np


class Undefined(Exception):
    """The score has no support on this input."""


def _iou_mean(pairs, classes):
    ious = []
    for c in classes:
        tp = sum(1 for p, g in pairs if p == c and g == c)
        fp = sum(1 for p, g in pairs if p == c and g != c)
        fn = sum(1 for p, g in pairs if p != c and g == c)
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    if not ious:
        raise Undefined
    total = 0.0
    for v in ious:
        total += v
    return total / len(ious)


def _cells(shape):
    return itertools.product(*(range(n) for n in shape))


def brute_miou(pred, gt, ignore, k):
    pairs = [(int(pred[c]), int(gt[c])) for c in _cells(gt.shape) if not ignore[c]]
    return _iou_mean(pairs, range(k))


def _pair_cells(gt):
    t, h, w = gt.shape
    for s in range(t - 1):
        for i in range(h):
            for j in range(w):
                yield s, i, j


def brute_bc(pred, gt, ignore):
    tp = fp = fn = 0
    for s, i, j in _pair_cells(gt):
        if ignore[s, i, j] or ignore[s + 1, i, j]:
            continue
        g = gt[s, i, j] != gt[s + 1, i, j]
        p = pred[s, i, j] != pred[s + 1, i, j]
        tp += g and p
        fp += p and not g
        fn += g and not p
    return 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)


def brute_sc(pred, gt, ignore, k):
    pairs = []
    for s, i, j in _pair_cells(gt):
        if ignore[s, i, j] or ignore[s + 1, i, j]:
            continue
        if gt[s, i, j] != gt[s + 1, i, j]:
            pairs.append((int(pred[s + 1, i, j]), int(gt[s + 1, i, j])))
    return _iou_mean(pairs, range(k))


def monte_carlo_random_miou(gt_labels, k, draws, seed):
    """Average mIoU of uniform random labels against fixed ground truth."""
    rng = np.random.default_rng(seed)
    vals = []
    flat = gt_labels.ravel()
    for _ in range(draws):
        pred = rng.integers(0, k, flat.size)
        ious = []
        for c in range(k):
            p, g = pred == c, flat == c
            union = np.sum(p | g)
            if union:
                ious.append(np.sum(p & g) / union)
        vals.append(np.mean(ious))
    return float(np.mean(vals)), float(np.std(vals) / np.sqrt(draws))
