"""
Persistent-homology morphometry of binary tissue masks.

Two pipelines share one persistence core: slice-wise superlevel H1 of the
2D distance transform summarised as landscape L1 curves, and H2 of the alpha
complex of the CSF complement compared by bottleneck distance. Phantom
erosion, statistics and a command line tool sit on top.
"""

from .alpha_pipeline import alpha_filtration, delaunay3, h2_diagram, point_cloud
from .mask_io import VoxelMask, csf_complement, load_labels, load_mask, save_mask
from .ph_core import PersistenceDiagram, bottleneck, filter_by_persistence, reduce
from .slice_pipeline import edt2d, extract_slices, superlevel_h1
from .summaries import build_l1_curve, curve_auc, interpolate, landscape_l1

__version__ = "0.1.0"

__all__ = [
    "VoxelMask",
    "load_mask",
    "load_labels",
    "save_mask",
    "csf_complement",
    "PersistenceDiagram",
    "reduce",
    "bottleneck",
    "filter_by_persistence",
    "extract_slices",
    "edt2d",
    "superlevel_h1",
    "landscape_l1",
    "build_l1_curve",
    "interpolate",
    "curve_auc",
    "point_cloud",
    "delaunay3",
    "alpha_filtration",
    "h2_diagram",
]
