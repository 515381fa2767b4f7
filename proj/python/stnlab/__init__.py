"""Python access to the stnlab C++ core."""

from ._stnlab import (
    Error,
    audit,
    compose,
    effective_pixel_scale,
    fit_similarity,
    identity_pose_spread,
    invert,
    overlap,
    param_count,
    spec_json,
    spec_names,
    synthesize,
)

__all__ = [
    "Error",
    "audit",
    "compose",
    "effective_pixel_scale",
    "fit_similarity",
    "identity_pose_spread",
    "invert",
    "overlap",
    "param_count",
    "spec_json",
    "spec_names",
    "synthesize",
]
