"""Rasters, polygons, samples, fold plans, augmentation and the synthetic world."""

from .augment import augment, dihedral, subsample_months
from .folds import (
    DYNAMICEARTHNET_SUBSETS,
    MUDS_SUBSETS,
    NO_SHIFT_FOLDS,
    SPATIAL_FOLDS,
    Fold,
    FoldPlan,
    Unit,
    balance_subsets,
    check_plan,
    class_distribution,
    default_months_per_sample,
    make_plan,
    materialize,
    plan_no_shift,
    plan_spatial,
    plan_temporal,
    unit_view,
)
from .polygons import Polygon, polygons_from_json, rasterize_polygons
from .raster import dumps_raster, load_raster, loads_raster, save_raster
from .sample import SitsSample, dataset_hash, load_dataset, load_sample, month_days, save_sample
from .synth import SyntheticWorldConfig, changed_fraction, count_flips, synth_generate

__all__ = [
    "augment", "dihedral", "subsample_months", "DYNAMICEARTHNET_SUBSETS", "MUDS_SUBSETS",
    "NO_SHIFT_FOLDS", "SPATIAL_FOLDS", "Fold", "FoldPlan", "Unit", "balance_subsets", "check_plan",
    "class_distribution", "default_months_per_sample", "make_plan", "materialize", "plan_no_shift",
    "plan_spatial", "plan_temporal", "unit_view", "Polygon", "polygons_from_json", "rasterize_polygons",
    "dumps_raster", "load_raster", "loads_raster", "save_raster", "SitsSample", "dataset_hash",
    "load_dataset", "load_sample", "month_days", "save_sample", "SyntheticWorldConfig",
    "changed_fraction", "count_flips", "synth_generate",
]
