"""Acceptance criteria 1-10, each printed as one PASS/FAIL line.

Criteria 6-8 train toy models on the synthetic world; runs are cached
for the session so criteria 6 and 7 share the same trained models.
"""

import itertools
import json
import time
import zlib

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import Undefined, brute_bc, brute_miou, brute_sc, monte_carlo_random_miou
from test_data import IDS, NO_SHIFT_TABLE, SPATIAL_TABLE, _span
from test_tensor import GRAD_CASES
from sitsscd.cli import main
from sitsscd.data import (
    DYNAMICEARTHNET_SUBSETS,
    MUDS_SUBSETS,
    SyntheticWorldConfig,
    check_plan,
    make_plan,
    plan_no_shift,
    plan_spatial,
    plan_temporal,
    month_days,
    synth_generate,
)
from sitsscd.errors import MetricError
from sitsscd.experiments import SEEDS, run_setting, shift_world, toy_world
from sitsscd.inference import evaluate_samples, make_scheme
from sitsscd.metrics import LabelSeries, bc_score, derive_change, miou, sc_score, scs
from sitsscd.model import AttentionMaps, ModelConfig, TemporalAttentionUNet, apply_attention, init_params
from sitsscd.tensor import Tensor, grad_check
from sitsscd.training import focal_loss, random_baseline


def report(n, title, ok, detail, seconds, budget):
    ok = ok and seconds < budget
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}; {seconds:.1f}s of {budget:.0f}s]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- 1

def test_c1_scs_arithmetic():
    t0 = time.perf_counter()
    got = [100 * scs(0.410, 0.224), 100 * scs(0.257, 0.017)]
    ok = abs(got[0] - 31.7) < 0.05 and abs(got[1] - 13.7) < 0.05
    assert report(1, "SCS arithmetic", ok, f"{got[0]:.2f} vs 31.7, {got[1]:.2f} vs 13.7",
                  time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- 2

def _package_scores(pred, gt, ign, k):
    p, g = LabelSeries(pred, ign), LabelSeries(gt, ign)
    out = {}
    try:
        out["miou"] = miou(p, g, k)[0]
    except MetricError:
        out["miou"] = None
    if gt.shape[0] < 2:
        return out
    out["bc"] = bc_score(derive_change(LabelSeries(pred), ign), derive_change(g))
    try:
        out["sc"] = sc_score(p, g, k)
        out["scs"] = scs(out["sc"], out["bc"])
    except MetricError:
        out["sc"] = out["scs"] = None
    return out


def _oracle_scores(pred, gt, ign, k):
    out = {}
    try:
        out["miou"] = brute_miou(pred, gt, ign, k)
    except Undefined:
        out["miou"] = None
    if gt.shape[0] < 2:
        return out
    out["bc"] = brute_bc(pred, gt, ign)
    try:
        out["sc"] = brute_sc(pred, gt, ign, k)
        out["scs"] = (out["sc"] + out["bc"]) / 2
    except Undefined:
        out["sc"] = out["scs"] = None
    return out


def _exhaustive_cases():
    """Every (pred, gt) pair for the cube shapes small enough to list, with and without an ignore pattern."""
    for t, side, k in itertools.product((1, 2, 3), (1, 2, 3), (2, 3)):
        n = t * side * side
        if k ** (2 * n) > 70_000:
            continue
        shape = (t, side, side)
        masks = [np.zeros(shape, bool)]
        if n > 1:
            m = np.zeros(n, bool)
            m[-1] = True
            masks.append(m.reshape(shape))
        for ign in masks:
            for flat in itertools.product(range(k), repeat=2 * n):
                a = np.array(flat).reshape((2,) + shape)
                yield a[0], a[1], ign, k


def _random_cases(count, seed, max_t, max_side, max_k):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        t = int(rng.integers(1, max_t + 1))
        h, w = (int(v) for v in rng.integers(1, max_side + 1, 2))
        if max_side <= 3:
            w = h
        k = int(rng.integers(2, max_k + 1))
        gt = rng.integers(0, k, (t, h, w))
        # correlated prediction so every score takes nontrivial values
        pred = np.where(rng.random((t, h, w)) < 0.6, gt, rng.integers(0, k, (t, h, w)))
        ign = rng.random((t, h, w)) < rng.uniform(0, 0.3)
        yield pred, gt, ign, k


def test_c2_metrics_oracle():
    t0 = time.perf_counter()
    counts = {"exhaustive": 0, "cube": 0, "larger": 0}
    bad = []
    sources = [("exhaustive", _exhaustive_cases()), ("cube", _random_cases(2000, 11, 3, 3, 3)),
               ("larger", _random_cases(1000, 12, 6, 9, 6))]
    for name, cases in sources:
        for pred, gt, ign, k in cases:
            counts[name] += 1
            if _package_scores(pred, gt, ign, k) != _oracle_scores(pred, gt, ign, k):
                bad.append((name, pred, gt, ign, k))
    ok = not bad and counts["larger"] == 1000
    detail = f"{counts['exhaustive']} enumerated + {counts['cube']} random in-cube + {counts['larger']} larger, " \
             f"{len(bad)} mismatches"
    assert report(2, "metrics oracle", ok, detail, time.perf_counter() - t0, 120)


# ---------------------------------------------------------------- 3

def _composition_error():
    cfg = ModelConfig(n_classes=3, in_channels=2, levels=2, feature_size=8, key_dim=2, heads=2,
                      channels_per_level=[4, 8], norm_groups=2)
    m = TemporalAttentionUNet(cfg, init_params(cfg, 0, dtype=np.float64))
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 2, 8, 8))
    y = rng.integers(0, 3, (3, 8, 8))
    names = ["enc.0.conv.w", "enc.1.down.w", "attn.query.w", "attn.key.b", "dec.0.up.w", "dec.0.norm.g",
             "head.w", "head.b"]

    def f(xv, *ws):
        m.bind(dict(zip(names, ws)))
        try:
            return focal_loss(m.forward(xv, [0, 40, 200]), y, 2.0)
        finally:
            m.unbind()

    return grad_check(f, [x] + [m.params[n] for n in names])


def test_c3_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {}
    for name, (f, shapes) in sorted(GRAD_CASES.items()):
        r = np.random.default_rng(zlib.crc32(name.encode()))
        inputs = [r.standard_normal(s) + (0.3 * np.sign(r.standard_normal(s)) if name == "relu" else 0)
                  for s in shapes]
        errors[name] = grad_check(f, inputs)
    labels = rng.integers(0, 3, (2, 3, 3))
    errors["focal_loss"] = grad_check(lambda z: focal_loss(z, labels, 2.0), rng.standard_normal((2, 3, 3, 3)))
    w = rng.random((1, 2, 3, 3, 2, 2))
    errors["apply_attention"] = grad_check(lambda a, b: apply_attention(a, b, 1, 2),
                                           [w, rng.standard_normal((3, 4, 2, 2))])
    worst_op = max(errors, key=errors.get)
    comp = _composition_error()
    ok = errors[worst_op] < 1e-4 and comp < 1e-3
    detail = f"{len(errors)} ops, worst {worst_op} {errors[worst_op]:.1e}; composition {comp:.1e}"
    assert report(3, "gradient suite", ok, detail, time.perf_counter() - t0, 300)


# ---------------------------------------------------------------- 4

def test_c4_attention_contracts():
    t0 = time.perf_counter()
    cfg = ModelConfig(n_classes=4, in_channels=3, levels=3, feature_size=16, key_dim=4, heads=4,
                      channels_per_level=[8, 8, 16], norm_groups=4)
    m = TemporalAttentionUNet(cfg, init_params(cfg, 5))
    rng = np.random.default_rng(4)
    worst_top = worst_prop = 0.0
    shapes_ok = identity_ok = nonneg = True
    for t in (1, 6, 12, 24):
        x = rng.standard_normal((t, 3, 16, 16)).astype(np.float32)
        days = np.sort(rng.choice(730, t, replace=False))
        out, maps = m.forward(x, days, return_attention=True)
        shapes_ok &= out.shape == (t, 4, 16, 16)
        top = maps[-1].weights.data.astype(np.float64)
        nonneg &= bool((top >= 0).all())
        worst_top = max(worst_top, float(np.abs(top.sum(axis=3) - 1).max()))
        for a in maps[:-1]:
            wts = a.weights.data.astype(np.float64)
            nonneg &= bool((wts >= -1e-7).all())
            worst_prop = max(worst_prop, float(np.abs(wts.sum(axis=3) - 1).max()))
        # identity attention injected at every level leaves the features untouched
        feats = m.encode(Tensor(x[None]))
        for f in feats:
            hh, ww = f.shape[-2:]
            eye = np.broadcast_to(np.eye(t, dtype=f.data.dtype)[None, None, :, :, None, None],
                                  (1, cfg.heads, t, t, hh, ww))
            fbar = m.apply_attention(AttentionMaps(Tensor(eye)), f, 1)
            identity_ok &= np.array_equal(fbar.data, f.data)
    ok = shapes_ok and identity_ok and nonneg and worst_top <= 1e-6 and worst_prop <= 1e-5
    detail = f"row-sum error {worst_top:.1e} top, {worst_prop:.1e} propagated; shapes {shapes_ok}; " \
             f"identity exact {identity_ok}"
    assert report(4, "attention contracts", ok, detail, time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- 5

def test_c5_fold_plans():
    t0 = time.perf_counter()
    ok = True
    plan = plan_no_shift(IDS)
    for f in plan.folds:
        train, val, test = NO_SHIFT_TABLE[f.name]
        ok &= sorted({u.quarter for u in f.train}) == sorted(_span(train, 4))
        ok &= {u.quarter for u in f.val} == {val} and {u.quarter for u in f.test} == {test}
    for subsets in (DYNAMICEARTHNET_SUBSETS, MUDS_SUBSETS):
        sp = plan_spatial(subsets=subsets)
        ok &= [tuple(s) for s in sp.subsets] == [tuple(s) for s in subsets]
        index = {a: i + 1 for i, s in enumerate(subsets) for a in s}
        for f in sp.folds:
            train, val, test = SPATIAL_TABLE[f.name]
            ok &= sorted({index[u.aoi_id] for u in f.train}) == sorted(_span(train, 5))
            ok &= {index[u.aoi_id] for u in f.val} == {val} and {index[u.aoi_id] for u in f.test} == {test}
        check_plan(sp, [a for s in subsets for a in s])
    for setting in ("no_shift", "spatial"):
        check_plan(make_plan(setting, IDS), IDS)
    check_plan(plan_temporal(IDS, 365, month_days(24)), IDS)
    assert report(5, "fold-plan conformance", ok, "reference rotations and subsets, invariants checked",
                  time.perf_counter() - t0, 1)


# ---------------------------------------------------------------- 6 and 7

_RUNS: dict = {}


def toy_run(kind, seed, variant="ours"):
    """Cached (run, world samples, seconds) per (kind, seed, variant)."""
    key = (kind, seed, variant)
    if key not in _RUNS:
        t0 = time.perf_counter()
        if kind == "toy":
            world, setting = toy_world(seed), "no_shift"
        else:
            world, setting = shift_world(kind, seed)
        samples = _RUNS.setdefault(("world", kind, seed), synth_generate(world))
        run = run_setting(world, setting, variant, seed, samples=samples)
        _RUNS[key] = (run, time.perf_counter() - t0)
    return _RUNS[key]


@pytest.mark.slow
def test_c6_toy_learning():
    rows, seconds = [], 0.0
    for seed in SEEDS:
        ours, s1 = toy_run("toy", seed)
        ltae, s2 = toy_run("toy", seed, "ltae")
        seconds += s1 + s2
        rows.append((ours.report.miou, ltae.report.miou))
    wins = sum(o >= 0.70 and o - l >= 0.03 for o, l in rows)
    detail = "ours/ltae mIoU " + ", ".join(f"{o:.3f}/{l:.3f}" for o, l in rows) + f"; {wins}/5 seeds"
    assert report(6, "toy-scale learning", wins >= 4, detail, seconds, 45 * 60)


@pytest.mark.slow
def test_c7_sequence_length():
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        run, _ = toy_run("toy", seed)
        n = run.test[0].n_dates
        full = run.report.scs
        contiguous = evaluate_samples(run.model, run.test, make_scheme(n, n // 2, "contiguous")).scs
        strided = evaluate_samples(run.model, run.test, make_scheme(n, n // 2, "strided")).scs
        rows.append((full, contiguous, strided))
    full_wins = sum(f > c for f, c, _ in rows)
    strided_wins = sum(s > c for _, c, s in rows)
    detail = "SCS full/contiguous/strided " + ", ".join(f"{f:.3f}/{c:.3f}/{s:.3f}" for f, c, s in rows) + \
             f"; full>contiguous {full_wins}/5, strided>contiguous {strided_wins}/5"
    assert report(7, "sequence-length trend", full_wins >= 4 and strided_wins >= 3, detail,
                  time.perf_counter() - t0, 10 * 60)


# ---------------------------------------------------------------- 8

@pytest.mark.slow
def test_c8_domain_shift_ordering():
    seconds = 0.0
    spatial_rows, temporal_rows = [], []
    for seed in SEEDS:
        base, s1 = toy_run("spatial_base", seed)
        shifted, s2 = toy_run("spatial", seed)
        spatial_rows.append((shifted.report.miou, base.report.miou))
        base_t, s3 = toy_run("temporal_base", seed)
        shifted_t, s4 = toy_run("temporal", seed)
        temporal_rows.append((shifted_t.report.miou, base_t.report.miou, shifted_t.report.bc, base_t.report.bc))
        seconds += s1 + s2 + s3 + s4
    spatial_wins = sum(s < b for s, b in spatial_rows)
    t = np.array(temporal_rows)
    miou_gap = abs(t[:, 0].mean() - t[:, 1].mean())
    bc_drop = t[:, 3].mean() - t[:, 2].mean()
    ok = spatial_wins >= 4 and miou_gap <= 0.03 and bc_drop >= 0.02
    detail = (f"spatial<no-shift mIoU {spatial_wins}/5 ("
              + ", ".join(f"{s:.3f}<{b:.3f}" for s, b in spatial_rows)
              + f"); temporal mean mIoU gap {100 * miou_gap:.1f} pts, mean BC drop {100 * bc_drop:.1f} pts ("
              + ", ".join(f"{r[2]:.3f} vs {r[3]:.3f}" for r in temporal_rows) + ")")
    assert report(8, "domain-shift ordering", ok, detail, seconds, 90 * 60)


# ---------------------------------------------------------------- 9

def test_c9_random_baseline():
    t0 = time.perf_counter()
    world = SyntheticWorldConfig(n_aoi=8, height=64, width=64, n_dates=12, n_classes=6, change_rate=0.013, seed=9)
    samples = synth_generate(world)
    # mIoU pools pixels, so the AoI series can be stacked along time
    gt = np.concatenate([s.labels for s in samples])
    pred = random_baseline(gt.shape, 6, np.random.default_rng(0)).labels
    measured = miou(LabelSeries(pred), LabelSeries(gt), 6)[0]
    expected, sem = monte_carlo_random_miou(gt, 6, draws=20, seed=1)
    ok = abs(measured - expected) <= 0.005
    detail = f"measured {100 * measured:.2f} vs Monte-Carlo {100 * expected:.2f} +- {100 * sem:.2f}"
    assert report(9, "random baseline sanity", ok, detail, time.perf_counter() - t0, 60)


# ---------------------------------------------------------------- 10

DET_INI = """\
[data]
n_aoi = 5
height = 32
width = 32
n_dates = 6
n_classes = 4
change_rate = 0.05

[model]
levels = 2
feature_size = 16
heads = 4
channels_per_level = 8,16

[train]
max_iters = 40
warmup_iters = 5
peak_lr = 0.002
batch_size = 2
val_every = 20
crop = 16

[eval]
per_class = true
"""


def _pipeline(root):
    ini = root / "det.ini"
    ini.write_text(DET_INI)
    base = ["--config", str(ini)]
    data, run = root / "data", root / "run"
    codes = [main(base + ["synth", "--out", str(data)]),
             main(base + ["split", "--data", str(data), "--setting", "no_shift"]),
             main(base + ["train", "--data", str(data), "--plan", str(data / "plan_no_shift.json"),
                          "--fold", "I", "--out", str(run)]),
             main(base + ["eval", "--data", str(data), "--plan", str(data / "plan_no_shift.json"),
                          "--fold", "I", "--checkpoint", str(run / "checkpoint.scdw"), "--out", str(run)])]
    files = {p.name: p.read_bytes() for p in sorted(run.iterdir())}
    files["manifest.json"] = (data / "manifest.json").read_bytes()
    return codes, files


def test_c10_determinism(tmp_path, monkeypatch):
    t0 = time.perf_counter()
    monkeypatch.setenv("SCD_THREADS", "1")
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    codes_a, a = _pipeline(tmp_path / "a")
    codes_b, b = _pipeline(tmp_path / "b")
    same = sorted(k for k in a if a[k] == b.get(k))
    ok = codes_a == codes_b == [0, 0, 0, 0] and a.keys() == b.keys() and len(same) == len(a)
    assert {"train_log.jsonl", "checkpoint.scdw", "report_I.json", "scores.csv"} <= set(a)
    detail = f"{len(same)}/{len(a)} files byte-identical ({', '.join(same)})"
    assert report(10, "determinism", ok, detail, time.perf_counter() - t0, 600)
