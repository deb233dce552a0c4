"""Cross-validation plans for the three domain-shift settings.

``no_shift``: every AoI is cut into four quarters; folds rotate which
quarters train, validate and test. ``temporal``: one fold, first year
trains, second year validates (half the AoIs) and tests (the other half).
``spatial``: AoIs are grouped into five subsets; folds rotate whole
subsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from ..errors import MetricError, PlanningError
from .sample import SitsSample

SETTINGS = ("no_shift", "temporal", "spatial")

# (train quarters, val quarter, test quarter) per fold
NO_SHIFT_FOLDS = (
    ((1, 2), 3, 4),
    ((4, 1), 2, 3),
    ((3, 4), 1, 2),
    ((2, 3), 4, 1),
)
# (train subsets, val subset, test subset) per fold, 1-based
SPATIAL_FOLDS = tuple(
    (tuple((k + i) % 5 + 1 for i in range(3)), (k + 3) % 5 + 1, (k + 4) % 5 + 1) for k in range(5)
)
FOLD_NAMES = ("I", "II", "III", "IV", "V")

DYNAMICEARTHNET_SUBSETS = (
    ("2235_3403_13", "4254_2915_13", "4421_3800_13", "4768_4131_13", "5111_4560_13", "5989_3554_13",
     "6730_3430_13", "6752_3115_13", "6810_3478_13", "6824_4117_13", "8077_5007_13"),
    ("2528_4620_13", "2850_4139_13", "4240_3972_13", "4426_3835_13", "4780_3377_13", "4856_4087_13",
     "5926_3715_13", "6381_3681_13", "6813_3313_13", "7026_3201_13", "7312_3008_13"),
    ("1417_3281_13", "1487_3335_13", "2415_3082_13", "2459_4406_13", "2624_4314_13", "3002_4273_13",
     "3998_3016_13", "4127_2991_13", "4169_3944_13", "4397_4302_13", "4838_3506_13"),
    ("1311_3077_13", "2470_5030_13", "2832_4366_13", "4223_3246_13", "4622_3159_13", "4806_3588_13",
     "5863_3800_13", "6204_3495_13", "6466_3380_13", "7367_5050_13", "7513_4968_13"),
    ("1700_3100_13", "2006_3280_13", "2029_3764_13", "2065_3647_13", "2697_3715_13", "4791_3920_13",
     "4881_3344_13", "5125_4049_13", "6468_3360_13", "6475_3361_13", "6688_3456_13"),
)
MUDS_SUBSETS = (
    ("1446_2989_13", "1474_3210_13", "1831_3648_13", "3041_4643_13", "4061_3941_13", "5184_3399_13",
     "5342_3524_13", "6460_3366_13", "6679_3549_13", "6813_3313_13", "6993_3202_13", "7394_5018_13"),
    ("1549_3087_13", "2345_3680_13", "4056_2688_13", "4102_2726_13", "4553_3325_13", "4742_4450_13",
     "4815_3378_13", "4819_3372_13", "5156_3514_13", "5916_3785_13", "6678_3579_13", "6838_3742_13"),
    ("1736_3318_13", "2027_3374_13", "2176_3279_13", "2383_3079_13", "2459_4406_13", "4802_4803_13",
     "4816_3380_13", "5105_3761_13", "5193_2903_13", "5759_3655_13", "6154_3539_13", "6864_3345_13"),
    ("1327_3160_13", "1433_3310_13", "2265_3451_13", "2528_4620_13", "3911_3441_13", "4838_3737_13",
     "5753_3655_13", "5927_3715_13", "6460_3370_13", "6468_3360_13", "6678_3548_13", "6764_3347_13"),
    ("1429_3296_13", "1950_3207_13", "2287_3888_13", "2309_3217_13", "2732_4164_13", "3699_3757_13",
     "4196_2710_13", "4688_2967_13", "4840_4088_13", "5557_3054_13", "6691_3363_13", "6763_3346_13"),
)


class Unit(NamedTuple):
    """An AoI, optionally restricted to one quarter and/or a half-open day range."""

    aoi_id: str
    quarter: Optional[int] = None
    date_range: Optional[tuple] = None

    def to_list(self):
        return [self.aoi_id, self.quarter, list(self.date_range) if self.date_range else None]


@dataclass
class Fold:
    train: list
    val: list
    test: list
    name: str = ""

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


@dataclass
class FoldPlan:
    setting: str
    folds: list
    subsets: Optional[list] = None
    split_day: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "split_day": self.split_day,
            "subsets": self.subsets,
            "folds": [
                {"name": f.name, **{k: [u.to_list() for u in v] for k, v in f.splits().items()}}
                for f in self.folds
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        def unit(x):
            return Unit(x[0], x[1], tuple(x[2]) if x[2] is not None else None)

        folds = [Fold(*[[unit(u) for u in f[k]] for k in ("train", "val", "test")], name=f.get("name", ""))
                 for f in d["folds"]]
        subsets = d.get("subsets")
        return cls(d["setting"], folds, [list(s) for s in subsets] if subsets else None, d.get("split_day"))

    def table(self) -> str:
        """Fold table in the ``Fold | Train | Val | Test`` layout."""
        lines = ["Fold\tTrain\tVal\tTest"]
        for f in self.folds:
            lines.append("\t".join([f.name, *(_describe(self, getattr(f, k)) for k in ("train", "val", "test"))]))
        return "\n".join(lines)


def _describe(plan: FoldPlan, units) -> str:
    if plan.setting == "no_shift":
        return "-".join(str(q) for q in dict.fromkeys(u.quarter for u in units))
    if plan.setting == "spatial" and plan.subsets:
        index = {a: i + 1 for i, s in enumerate(plan.subsets) for a in s}
        return "-".join(str(s) for s in dict.fromkeys(index[u.aoi_id] for u in units))
    ranges = sorted({u.date_range for u in units}, key=str)
    return f"{len({u.aoi_id for u in units})} AoIs {ranges}"


def _check_ids(aoi_ids) -> list[str]:
    ids = [str(a) for a in aoi_ids]
    if not ids:
        raise PlanningError("no AoI ids given")
    if len(set(ids)) != len(ids):
        raise PlanningError("duplicate AoI ids")
    return ids


def plan_no_shift(aoi_ids: Sequence[str]) -> FoldPlan:
    ids = _check_ids(aoi_ids)
    folds = []
    for name, (train, val, test) in zip(FOLD_NAMES, NO_SHIFT_FOLDS):
        folds.append(Fold(
            [Unit(a, q) for q in train for a in ids],
            [Unit(a, val) for a in ids],
            [Unit(a, test) for a in ids],
            name,
        ))
    return FoldPlan("no_shift", folds)


def plan_temporal(aoi_ids: Sequence[str], split_day: int = 365, days: Optional[Sequence[int]] = None) -> FoldPlan:
    """Dates before ``split_day`` train; later dates are split by AoI halves into val and test."""
    ids = _check_ids(aoi_ids)
    if len(ids) < 2:
        raise PlanningError("temporal plan needs at least two AoIs to separate val and test")
    if days is not None:
        days = np.asarray(days)
        if not (days < split_day).any() or not (days >= split_day).any():
            raise PlanningError(f"split day {split_day} leaves one side without dates")
    half = (len(ids) + 1) // 2
    before, after = (None, int(split_day)), (int(split_day), None)
    fold = Fold(
        [Unit(a, None, before) for a in ids],
        [Unit(a, None, after) for a in ids[:half]],
        [Unit(a, None, after) for a in ids[half:]],
        "I",
    )
    return FoldPlan("temporal", [fold], split_day=int(split_day))


def _subset_sizes(n: int, k: int = 5) -> list[int]:
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


def _l1(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.abs(p / p.sum() - q / q.sum()).sum())


def balance_subsets(histograms: Mapping[str, Sequence[float]], n_subsets: int = 5) -> list[list[str]]:
    """Greedy assignment of AoIs to equal-size subsets with similar class mixes.

    AoIs are placed most-atypical first into the open subset whose pooled
    histogram ends up closest (L1 on fractions) to the global one; a swap
    pass then lowers the worst subset's divergence while it can.
    """
    ids = sorted(histograms)
    hist = {a: np.asarray(histograms[a], dtype=np.float64) for a in ids}
    total = sum(hist.values())
    sizes = _subset_sizes(len(ids), n_subsets)
    order = sorted(ids, key=lambda a: (-_l1(hist[a], total), a))
    groups: list[list[str]] = [[] for _ in range(n_subsets)]
    pooled = [np.zeros_like(total) for _ in range(n_subsets)]
    for a in order:
        best, best_key = None, None
        for i in range(n_subsets):
            if len(groups[i]) >= sizes[i]:
                continue
            key = (_l1(pooled[i] + hist[a], total), len(groups[i]), i)
            if best_key is None or key < best_key:
                best, best_key = i, key
        groups[best].append(a)
        pooled[best] = pooled[best] + hist[a]

    def spread(pools):
        return max(_l1(p, total) for p in pools)

    improved = True
    while improved:
        improved = False
        current = spread(pooled)
        for i in range(n_subsets):
            for j in range(i + 1, n_subsets):
                for a in list(groups[i]):
                    for b in list(groups[j]):
                        pi = pooled[i] - hist[a] + hist[b]
                        pj = pooled[j] - hist[b] + hist[a]
                        trial = [pi if k == i else pj if k == j else p for k, p in enumerate(pooled)]
                        if spread(trial) < current - 1e-12:
                            groups[i][groups[i].index(a)] = b
                            groups[j][groups[j].index(b)] = a
                            pooled[i], pooled[j] = pi, pj
                            current = spread(pooled)
                            improved = True
                            break
                    else:
                        continue
                    break
    return [sorted(g) for g in groups]


def plan_spatial(
    aoi_ids: Optional[Sequence[str]] = None,
    subsets: Optional[Sequence[Sequence[str]]] = None,
    balance_by: Optional[Mapping[str, Sequence[float]]] = None,
    seed: int = 0,
) -> FoldPlan:
    """Five-fold plan over five AoI subsets.

    ``subsets`` are used verbatim; otherwise ``balance_by`` (class
    histograms per AoI) drives a greedy balanced grouping; otherwise the
    grouping is a seeded random partition.
    """
    if subsets is not None:
        groups = [[str(a) for a in s] for s in subsets]
        if len(groups) != 5:
            raise PlanningError(f"spatial plan needs 5 subsets, got {len(groups)}")
        flat = [a for g in groups for a in g]
        if len(set(flat)) != len(flat):
            raise PlanningError("subsets overlap")
        if any(not g for g in groups):
            raise PlanningError("empty subset")
        if aoi_ids is not None and set(_check_ids(aoi_ids)) != set(flat):
            raise PlanningError("subsets do not partition the given AoI ids")
    else:
        ids = _check_ids(aoi_ids if aoi_ids is not None else list(balance_by or []))
        if len(ids) < 5:
            raise PlanningError(f"cannot partition {len(ids)} AoIs into 5 nonempty subsets")
        if balance_by is not None:
            missing = set(ids) - set(balance_by)
            if missing:
                raise PlanningError(f"no class histogram for {sorted(missing)}")
            groups = balance_subsets({a: balance_by[a] for a in ids})
        else:
            perm = np.random.default_rng(seed).permutation(sorted(ids))
            sizes = _subset_sizes(len(ids))
            bounds = np.cumsum([0] + sizes)
            groups = [sorted(perm[bounds[i]:bounds[i + 1]].tolist()) for i in range(5)]
    folds = []
    for name, (train, val, test) in zip(FOLD_NAMES, SPATIAL_FOLDS):
        folds.append(Fold(
            [Unit(a) for s in train for a in groups[s - 1]],
            [Unit(a) for a in groups[val - 1]],
            [Unit(a) for a in groups[test - 1]],
            name,
        ))
    return FoldPlan("spatial", folds, subsets=groups)


def make_plan(setting: str, aoi_ids: Sequence[str], **kw) -> FoldPlan:
    if setting == "no_shift":
        return plan_no_shift(aoi_ids)
    if setting == "temporal":
        return plan_temporal(aoi_ids, **kw)
    if setting == "spatial":
        return plan_spatial(aoi_ids, **kw)
    raise PlanningError(f"unknown setting {setting!r}; expected one of {SETTINGS}")


def _overlap(u: Unit, v: Unit) -> bool:
    if u.aoi_id != v.aoi_id:
        return False
    if u.quarter is not None and v.quarter is not None and u.quarter != v.quarter:
        return False
    lo1, hi1 = u.date_range or (None, None)
    lo2, hi2 = v.date_range or (None, None)
    lo1 = -np.inf if lo1 is None else lo1
    lo2 = -np.inf if lo2 is None else lo2
    hi1 = np.inf if hi1 is None else hi1
    hi2 = np.inf if hi2 is None else hi2
    return max(lo1, lo2) < min(hi1, hi2)


def check_plan(plan: FoldPlan, aoi_ids: Sequence[str]) -> None:
    """Raise PlanningError unless every fold's splits are disjoint and cover every AoI."""
    ids = set(aoi_ids)
    for fold in plan.folds:
        parts = fold.splits()
        names = list(parts)
        for i, a in enumerate(names):
            units = parts[a]
            if len(set(units)) != len(units):
                raise PlanningError(f"fold {fold.name}: duplicate unit in {a}")
            for b in names[i + 1:]:
                for u in units:
                    for v in parts[b]:
                        if _overlap(u, v):
                            raise PlanningError(f"fold {fold.name}: {u} in {a} overlaps {v} in {b}")
        covered = {u.aoi_id for us in parts.values() for u in us}
        if covered != ids:
            raise PlanningError(f"fold {fold.name}: AoIs not covered: {sorted(ids - covered)}")
        if plan.setting == "no_shift":
            for a in ids:
                qs = sorted(u.quarter for us in parts.values() for u in us if u.aoi_id == a)
                if qs != [1, 2, 3, 4]:
                    raise PlanningError(f"fold {fold.name}: AoI {a} quarters {qs} != 1..4")


def unit_view(sample: SitsSample, unit: Unit) -> SitsSample:
    out = sample
    if unit.quarter is not None:
        out = out.quarter_view(unit.quarter)
    if unit.date_range is not None:
        out = out.date_range_view(*unit.date_range)
    return out


def materialize(units: Sequence[Unit], samples: Sequence[SitsSample]) -> list[SitsSample]:
    by_id = {s.aoi_id: s for s in samples}
    missing = [u.aoi_id for u in units if u.aoi_id not in by_id]
    if missing:
        raise PlanningError(f"plan references unknown AoIs {sorted(set(missing))}")
    return [unit_view(by_id[u.aoi_id], u) for u in units]


def default_months_per_sample(n_train_dates: int) -> int:
    """Training subsample length: half of the dates a training unit holds (12 of 24, 6 of 12)."""
    return max(1, n_train_dates // 2)


def class_distribution(samples: Sequence[SitsSample], n_classes: int) -> np.ndarray:
    """Fraction of non-ignored pixels in each class, pooled over ``samples``."""
    counts = np.zeros(n_classes, dtype=np.int64)
    for s in samples:
        keep = ~s.ignore
        counts += np.bincount(s.labels[keep].ravel().astype(np.int64), minlength=n_classes)[:n_classes]
    total = counts.sum()
    if total == 0:
        raise MetricError("no valid pixels")
    return counts / total
