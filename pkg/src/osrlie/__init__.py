"""Unsupervised detection of human-made objects in airborne point clouds.

Three stages: one-sided regression ground filtering (:mod:`osrlie.osr`),
kernel-Hessian local features (:mod:`osrlie.lie`) and Gaussian-mixture
clustering (:mod:`osrlie.cluster`).
"""

from .cloud import AxisBounds, IndexSet, Label, PointCloud, bounds, select

__version__ = "0.1.0"

__all__ = ["AxisBounds", "IndexSet", "Label", "PointCloud", "bounds", "select", "__version__"]
