"""cosma: patch-based spectral autoencoder for deforming semi-regular meshes.

The pipeline: remesh irregular triangle meshes into semi-regular form, cut
them into regularly meshed padded patches, train a small spectral
convolutional autoencoder on the patches, and analyze the resulting
embeddings (reconstruction error, deformation-pattern localization,
latent interpolation).
"""

__version__ = "0.1.0"

from . import errors
from .mesh import TriMesh, load_mesh, normalize_to_unit_range, save_mesh, subdivide_midpoint
from .subdivision import (
    SemiRegularMesh,
    SubdivisionDecomposition,
    analyze_semiregular,
    check_subdivision_connectivity,
    subdivide_base,
)
from .decimate import decimate_to_base

__all__ = [
    "errors",
    "TriMesh",
    "load_mesh",
    "save_mesh",
    "subdivide_midpoint",
    "normalize_to_unit_range",
    "SemiRegularMesh",
    "SubdivisionDecomposition",
    "check_subdivision_connectivity",
    "analyze_semiregular",
    "subdivide_base",
    "decimate_to_base",
]
