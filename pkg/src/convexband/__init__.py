"""Two-sided smooth convex approximation bands and hypersurface sandwiching."""

from .errors import (
    BoundaryRayDetected,
    CertificateTampered,
    ConeContainsLine,
    ConvexBandError,
    InputError,
    LedgerViolation,
    LevelNotCrossed,
    LineDetected,
    NotDifferentiable,
    OutsideSampledHull,
    PointOutsideDomain,
    RankDeficientSupports,
    RayDetected,
    RefusalError,
    TubeTooTight,
    VerificationError,
)
from .expr import ConvexFn, Jet2, eval, jet2, midpoint_convexity_audit, subgradient
from .domains import (
    CompactRegion,
    ConvexBody,
    DomainSpec,
    ToleranceField,
    compact_exhaustion,
    minkowski_gauge,
)
from .smoothmax import (
    fold_smooth_max,
    gradient_midpoint_bound,
    smooth_max,
    smooth_max_values,
    theta,
)
from .recession import (
    AffineSeparator,
    ConeSpec,
    LineReport,
    RayReport,
    SeparatorReport,
    affine_separator,
    detect_graph_line,
    detect_graph_ray,
    inscribed_cone,
    separate_cone,
    tilt_separator,
)
from .rough import (
    BandAudit,
    SupportSample,
    audit_hull_above,
    audit_lower_band,
    gap_functional,
    gap_profile,
    hull_ceiling,
    lower_band,
    upper_band,
)
from .smooth import (
    Approximant,
    BallPatchNode,
    CornerFn,
    GlueSchedule,
    StageRecord,
    approx_below,
    c1_fine,
    c1_patch,
    corner_support,
    glue_above,
    strongly_convex_band_below,
)

__version__ = "0.1.0"

__all__ = [
    "AffineSeparator",
    "Approximant",
    "BallPatchNode",
    "BandAudit",
    "BoundaryRayDetected",
    "CertificateTampered",
    "CompactRegion",
    "ConeContainsLine",
    "ConeSpec",
    "ConvexBandError",
    "ConvexBody",
    "ConvexFn",
    "CornerFn",
    "DomainSpec",
    "GlueSchedule",
    "InputError",
    "Jet2",
    "LedgerViolation",
    "LevelNotCrossed",
    "LineDetected",
    "LineReport",
    "NotDifferentiable",
    "OutsideSampledHull",
    "PointOutsideDomain",
    "RankDeficientSupports",
    "RayDetected",
    "RayReport",
    "RefusalError",
    "SeparatorReport",
    "StageRecord",
    "SupportSample",
    "ToleranceField",
    "TubeTooTight",
    "VerificationError",
    "affine_separator",
    "approx_below",
    "audit_hull_above",
    "audit_lower_band",
    "c1_fine",
    "c1_patch",
    "compact_exhaustion",
    "corner_support",
    "detect_graph_line",
    "detect_graph_ray",
    "eval",
    "fold_smooth_max",
    "gap_functional",
    "gap_profile",
    "glue_above",
    "gradient_midpoint_bound",
    "hull_ceiling",
    "inscribed_cone",
    "jet2",
    "lower_band",
    "midpoint_convexity_audit",
    "minkowski_gauge",
    "separate_cone",
    "smooth_max",
    "smooth_max_values",
    "subgradient",
    "strongly_convex_band_below",
    "theta",
    "tilt_separator",
    "upper_band",
]
