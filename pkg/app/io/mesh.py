"""
Reference Geometry Loading

Reads evaluation references: triangle meshes from PLY or OBJ, and point
clouds from PLY files without faces.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from app.core.exceptions import EvalError, ExportError

logger = logging.getLogger(__name__)


@dataclass
class Reference:
    """Evaluation reference: triangles (T, 3, 3) or, failing that, points (N, 3)."""
    triangles: Optional[np.ndarray] = None
    points: Optional[np.ndarray] = None

    @property
    def is_mesh(self) -> bool:
        return self.triangles is not None


def _triangles(vertices: np.ndarray, faces) -> np.ndarray:
    tris = []
    skipped = 0
    for face in faces:
        if len(face) != 3:
            skipped += 1
            continue
        tris.append(face)
    if skipped:
        logger.warning(f"Skipped {skipped} non-triangular face(s)")
    if not tris:
        return np.zeros((0, 3, 3))
    idx = np.asarray(tris, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= vertices.shape[0]:
        raise EvalError("Face references a vertex that does not exist")
    return vertices[idx]


def _load_ply(path: Path) -> Reference:
    data = PlyData.read(str(path))
    vertex = data["vertex"]
    vertices = np.stack([np.asarray(vertex[a], dtype=np.float64) for a in ("x", "y", "z")], axis=1) \
        if vertex.count else np.zeros((0, 3))
    names = [el.name for el in data.elements]
    if "face" not in names or data["face"].count == 0:
        return Reference(points=vertices)
    face = data["face"]
    prop = "vertex_indices" if "vertex_indices" in [p.name for p in face.properties] else "vertex_index"
    return Reference(triangles=_triangles(vertices, face[prop]))


def _load_obj(path: Path) -> Reference:
    vertices = []
    faces = []
    with open(path, "r") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for token in parts[1:]:
                    i = int(token.split("/")[0])
                    # OBJ indices are 1-based; negative ones count from the end
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.append(idx)
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if not faces:
        return Reference(points=verts)
    return Reference(triangles=_triangles(verts, faces))


def load_reference(path: Union[str, Path]) -> Reference:
    """
    Load a reference mesh (PLY/OBJ) or point cloud (PLY without faces).

    Raises:
        EvalError: If the file is missing, unreadable or holds no geometry
    """
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        if suffix == ".ply":
            ref = _load_ply(path)
        elif suffix == ".obj":
            ref = _load_obj(path)
        else:
            raise EvalError(f"Unsupported reference format '{suffix}'")
    except (OSError, ValueError, KeyError, PlyParseError) as e:
        raise EvalError(f"Cannot read reference {path}: {e}") from e

    size = len(ref.triangles) if ref.is_mesh else len(ref.points)
    if size == 0:
        raise EvalError(f"Reference {path} is empty")
    logger.info(f"Loaded reference {path.name}: {size} {'triangles' if ref.is_mesh else 'points'}")
    return ref


def write_mesh_ply(vertices: np.ndarray, faces: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a triangle mesh as binary little-endian PLY."""
    path = Path(path)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    v = np.empty(vertices.shape[0], dtype=[("x", "f4"), ("y", "f4"), ("z", "f4")])
    v["x"], v["y"], v["z"] = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    f = np.empty(faces.shape[0], dtype=[("vertex_indices", "i4", (3,))])
    f["vertex_indices"] = faces
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        PlyData([PlyElement.describe(v, "vertex"), PlyElement.describe(f, "face")],
                byte_order="<").write(str(path))
    except OSError as e:
        raise ExportError(f"Cannot write {path}: {e}") from e
    return path
