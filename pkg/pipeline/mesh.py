# pipeline/mesh.py

"""
Isosurface extraction and surface-area measurement for the surface-area
selection metric. Surfaces come from scikit-image's Lewiner marching cubes run
on the mask padded with one background layer, so every surface is closed.
"""

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np
from skimage import measure

from pipeline.errors import DomainError
from pipeline.volgrid import BinaryMask

logger = logging.getLogger("ventriq.mesh")


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertices in mm as (x, y, z); triangles as vertex index triples."""
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise DomainError("Triangle indices out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def is_empty(self) -> bool:
        return len(self.triangles) == 0


def extract_isosurface(mask: BinaryMask, iso: float = 0.5, use_spacing: bool = True) -> TriangleMesh:
    """
    Marching-cubes surface of the mask seen as a 0/1 scalar field.

    With `use_spacing` vertices are in mm, otherwise in voxel units. The origin is
    the centre of voxel (0, 0, 0).
    """
    if not 0.0 < iso < 1.0:
        raise DomainError(f"Iso level must lie in (0, 1), got {iso}")
    if mask.is_empty():
        return TriangleMesh.empty()

    spacing = mask.spacing.zyx() if use_spacing else (1.0, 1.0, 1.0)
    field = np.pad(mask.voxels.astype(np.float64), 1, mode="constant", constant_values=0.0)
    verts, faces, _, _ = measure.marching_cubes(
        field, level=iso, spacing=spacing, method="lewiner", allow_degenerate=False)
    # Undo the padding offset, then reorder (z, y, x) -> (x, y, z); the axis swap
    # mirrors the orientation, so faces are flipped to keep outward normals.
    verts = (verts - np.asarray(spacing))[:, ::-1]
    faces = faces[:, ::-1]
    logger.debug(f"Extracted {len(faces)} triangles from {mask.count} voxels")
    return TriangleMesh(np.ascontiguousarray(verts), np.ascontiguousarray(faces))


def surface_area(mesh: TriangleMesh) -> float:
    """Sum of triangle areas."""
    if mesh.is_empty():
        return 0.0
    return float(measure.mesh_surface_area(mesh.vertices, mesh.triangles))


def _edge_counts(mesh: TriangleMesh) -> Counter:
    edges = np.sort(mesh.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return Counter(map(tuple, edges.tolist()))


def is_closed(mesh: TriangleMesh) -> bool:
    """Every edge shared by exactly two triangles."""
    return all(n == 2 for n in _edge_counts(mesh).values())


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F over the vertices referenced by triangles."""
    used = np.unique(mesh.triangles)
    return int(len(used) - len(_edge_counts(mesh)) + len(mesh.triangles))


def to_stl(mesh: TriangleMesh, name: str = "ventriq") -> str:
    """ASCII STL text, numbers formatted %.9e."""
    lines = [f"solid {name}"]
    for a, b, c in mesh.vertices[mesh.triangles]:
        normal = np.cross(b - a, c - a)
        norm = np.linalg.norm(normal)
        if norm > 0:
            normal = normal / norm
        lines.append("  facet normal %.9e %.9e %.9e" % tuple(normal))
        lines.append("    outer loop")
        for v in (a, b, c):
            lines.append("      vertex %.9e %.9e %.9e" % tuple(v))
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return "\n".join(lines) + "\n"
