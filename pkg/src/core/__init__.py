"""
Core Package

Numerical building blocks: geometry, anchors, losses, decoding, metrics and
synthetic data.
"""
