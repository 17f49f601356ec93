"""Line-segment geometry toolkit.

Dense attraction-field codec (encode / sparse decode / verify), the
classical a-contrario detector, gradient-rectified pseudo-labeling with a
homographic-adaptation baseline, a synthetic ground-truth generator, and
the homography repeatability evaluation protocol.
"""

from .classic_lsd import LsdParams, RegionRect, lsd_detect, nfa_log10, region_grow
from .config import Config, config_from_text, config_to_text, load_config
from .evalkit import (
    EvalPair,
    MetricsReport,
    build_pairs,
    evaluate_detector,
    evaluate_pair,
    length_repeatability,
    localization_error,
    match_segments,
    repeatability,
)
from .geometry import (
    Homography,
    HomographySampleParams,
    LineSegment,
    Point2,
    apply_homography,
    orthogonal_distance,
    sample_homography,
    structural_distance,
    warp_segment,
)
from .hatfield import (
    DecodeParams,
    DetectionResult,
    HATField,
    Junction,
    JunctionMap,
    bind,
    decode_endpoints,
    deserialize_field,
    deserialize_junctions,
    encode,
    extract_junctions,
    serialize_field,
    serialize_junctions,
    sparse_decode,
    support_degree,
)
from .pseudolabel import (
    AdaptParams,
    FieldProvider,
    FileFieldProvider,
    GradientFieldProvider,
    GtFieldProvider,
    NoisyThetaProvider,
    generate_pseudo_labels,
    homographic_adaptation,
    rectify,
)
from .raster import GrayImage, LevelLineField, gradient, level_line_field, load_image, save_image, warp_image
from .synth import PRIMITIVE_KINDS, PrimitiveSpec, render_synthetic

__version__ = "0.1.0"
