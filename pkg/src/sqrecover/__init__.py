"""Toolkit for superquadric range-image scenes: synthetic dataset
generation with ground-truth instance masks, iterative parameter
recovery from segmented depth data, and evaluation metrics."""

from .core import (
    Aabb3,
    SceneBounds,
    Superquadric,
    aabb_iou,
    bounding_box,
    inside_outside,
    surface_z_extent,
    surface_z_profile,
)
from .fit import (
    EmptyCropError,
    FitConfig,
    FitResult,
    InstanceRecovery,
    TooFewPointsError,
    depth_to_points,
    fit_superquadric,
    initialize_fit,
    recover_scene,
)
from .formats import (
    RasterFormatError,
    read_mask_raster,
    read_range_raster,
    write_mask_raster,
    write_range_raster,
)
from .metrics import (
    ParamErrorReport,
    SegEvalReport,
    corrupt_mask,
    mask_iou,
    mask_map,
    param_mae,
    reconstruction_mae,
)
from .render import (
    InstanceMaskImage,
    RangeImage,
    Scene,
    instance_visible_fraction,
    render,
    render_bruteforce,
)
from .sample import (
    DatasetManifest,
    EmptySegmentError,
    InfeasibleSamplerError,
    SamplerConfig,
    SceneRecord,
    crop_instance,
    derive_scene_seed,
    generate_dataset,
    sample_scene,
)

__version__ = "0.1.0"
