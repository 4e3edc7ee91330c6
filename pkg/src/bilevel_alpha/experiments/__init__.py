from .large_scale import LargeScaleSpec, run_large_scale
from .noise_study import NoiseStudySpec, run_noise_study
from .phantom import generate_shepp_logan
from .region_scan import (
    PAPER_TABLE3,
    RegionScanSpec,
    compute_area_ratios,
    paper_regularizer,
    run_region_scan,
    run_table3,
)

__all__ = [
    "LargeScaleSpec",
    "NoiseStudySpec",
    "PAPER_TABLE3",
    "RegionScanSpec",
    "compute_area_ratios",
    "generate_shepp_logan",
    "paper_regularizer",
    "run_large_scale",
    "run_noise_study",
    "run_region_scan",
    "run_table3",
]
