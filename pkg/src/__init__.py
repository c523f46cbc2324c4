"""
AnchorPose - single-shot multi-person 2D/3D pose estimation toolkit

Anchor priors, ground-truth matching, pose-aware losses with automatic
weighting, decoding and evaluation, exercised on synthetic scenes.
"""

__version__ = "1.0.0"
