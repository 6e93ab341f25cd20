"""Driver/passenger pose and seat-belt pipeline built around NADS-Net."""

__version__ = "0.1.0"

from .annotations import FrameAnnotation, PersonAnnotation, Seatbelt, dataset_stats
from .estimators import NADSNet, SkeletonParser, TargetRenderer
from .graph import ArchitectureConfig, HeadOutputs, build_graph, count_parameters, forward
from .metrics import MetricConfig, MetricReport, mpckh, segmentation_metrics, curve_distance
from .parsing import ParseConfig, parse_frame
from .targets import TargetConfig, render_targets
from .topology import DEFAULT_TOPOLOGY, SkeletonTopology

__all__ = [
    "ArchitectureConfig",
    "DEFAULT_TOPOLOGY",
    "FrameAnnotation",
    "HeadOutputs",
    "MetricConfig",
    "MetricReport",
    "NADSNet",
    "ParseConfig",
    "PersonAnnotation",
    "Seatbelt",
    "SkeletonParser",
    "SkeletonTopology",
    "TargetConfig",
    "TargetRenderer",
    "build_graph",
    "count_parameters",
    "curve_distance",
    "dataset_stats",
    "forward",
    "mpckh",
    "parse_frame",
    "render_targets",
    "segmentation_metrics",
]
