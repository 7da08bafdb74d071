"""Dense hierarchical image matching and match-guided variational optical flow."""

from .correspondence import Match, MatchParams, MatchSet, deep_matching, reciprocal_filter
from .descriptor import DescriptorParams, compute_descriptors
from .estimators import DeepFlow, DeepMatching, InvariantDeepMatching
from .evalio import (
    GroundTruthFlow,
    MetricReport,
    accuracy_at_T,
    coverage,
    epe,
    read_flo,
    read_matches,
    write_flo,
    write_matches,
)
from .flow import FlowParams, MatchTermField, energy, rasterize_matches, solve_flow
from .imageio import ImageFormatError, load_image
from .invariance import WarpCell, match_invariant
from .pyramid import CorrelationPyramid, build_pyramid, build_pyramid_approx
from .quantize import SphericalKMeans

__version__ = "0.1.0"
