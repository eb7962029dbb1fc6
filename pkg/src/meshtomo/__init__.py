"""Shape reconstruction from parallel-beam projections by deforming triangle meshes."""
from .geometry import (AIR, DetectorPose, MaterialTable, Mesh, ProjectionStack, ScanGeometry,
                       check_watertight, make_box, make_icosphere, make_tetrahedron, make_torus)
from .projector import backward, forward
from .raycast_oracle import add_noise, cast_forward

__version__ = "0.1.0"

__all__ = [
    "AIR", "DetectorPose", "MaterialTable", "Mesh", "ProjectionStack", "ScanGeometry",
    "add_noise", "backward", "cast_forward", "check_watertight", "forward", "make_box",
    "make_icosphere", "make_tetrahedron", "make_torus",
]
