"""Publishable datasets: the k-anonymous flagship and the baseline modes."""

from .baselines import (CloakedDataset, CloakMode, DensityGraph, DensityGraphMode, RotateMode,
                        SyntheticDataset, SyntheticMode, baseline_transform, cloak, density_graph,
                        rotate_pseudonyms, synthesize)
from .dataset import AnonymizedDataset, anonymize, assemble, read_dataset, write_dataset
from .intervals import DemoClass, class_of, interval_aggregate, mean_age_interval_width
from .kanon import (AnonWindow, KAnonConfig, LossReport, bucket_start_ts, kanon_windows, path_windows,
                    time_bucket, windows_as_paths)

__all__ = [
    "AnonWindow", "AnonymizedDataset", "CloakMode", "CloakedDataset", "DemoClass", "DensityGraph",
    "DensityGraphMode", "KAnonConfig", "LossReport", "RotateMode", "SyntheticDataset", "SyntheticMode",
    "anonymize", "assemble", "baseline_transform", "bucket_start_ts", "class_of", "cloak",
    "density_graph", "interval_aggregate", "kanon_windows", "mean_age_interval_width", "path_windows",
    "read_dataset", "rotate_pseudonyms", "synthesize", "time_bucket", "windows_as_paths", "write_dataset",
]
