"""Mesh (Wavefront OBJ subset) and camera-pose ingestion.

Pose document (JSON, a list in capture order)::

    [{"image_id": "img1", "position": [x, y, z], "view_dir": [dx, dy, dz]},
     {"image_id": "img2", "position": [x, y, z], "rotation": [r00, r01, ..., r22]}]

``rotation`` is the camera-to-world matrix, row-major; the optical axis is
camera +Z, so ``view_dir = R @ (0, 0, 1)``. Positions are meters.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import TriangleMesh, build_bvh

logger = logging.getLogger(__name__)

ROTATION_TOL = 1e-3


class SceneParseError(ValueError):
    """Rejected input; ``location`` names the line or record."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True, eq=False)
class CameraPose:
    image_id: str
    position: np.ndarray
    view_dir: np.ndarray
    image_path: str | None = None

    def __post_init__(self) -> None:
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        d = np.array(self.view_dir, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(d))
        if not np.isfinite(n) or n == 0.0:
            raise ValueError(f"camera {self.image_id!r}: zero-length view direction")
        # already-unit input is kept bit-exact so serialization round-trips
        if abs(n - 1.0) > 1e-12:
            d = d / n
        pos.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "view_dir", d)

    def to_record(self) -> dict:
        rec = {
            "image_id": self.image_id,
            "position": [float(x) for x in self.position],
            "view_dir": [float(x) for x in self.view_dir],
        }
        if self.image_path is not None:
            rec["image_path"] = self.image_path
        return rec


@dataclass(frozen=True, eq=False)
class ObjStats:
    ignored_directives: Counter = field(default_factory=Counter)
    dropped_degenerate: int = 0
    polygons: int = 0


@dataclass(frozen=True, eq=False)
class Scene:
    mesh: TriangleMesh
    cameras: tuple[CameraPose, ...]

    def __post_init__(self) -> None:
        if not self.cameras:
            raise ValueError("scene needs at least one camera")
        if self.mesh.n_triangles == 0:
            raise ValueError("scene mesh is empty")
        if self.mesh.bvh is None:
            object.__setattr__(self, "mesh", build_bvh(self.mesh))
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def camera(self, image_id: str) -> CameraPose:
        for cam in self.cameras:
            if cam.image_id == image_id:
                return cam
        raise KeyError(image_id)

    @property
    def image_ids(self) -> list[str]:
        return [c.image_id for c in self.cameras]

    def translated(self, offset) -> "Scene":
        off = np.asarray(offset, dtype=np.float64)
        cams = [CameraPose(c.image_id, c.position + off, c.view_dir, c.image_path) for c in self.cameras]
        return Scene(self.mesh.translated(off), cams)


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SceneParseError(f"not UTF-8/ASCII text ({exc.reason})", f"byte {exc.start}") from exc
    return data


def _obj_index(token: str, n_vertices: int, where: str) -> int:
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise SceneParseError(f"bad face index {token!r}", where) from None
    if idx == 0:
        raise SceneParseError("face index 0 is invalid (OBJ is 1-based)", where)
    resolved = idx - 1 if idx > 0 else n_vertices + idx
    if not 0 <= resolved < n_vertices:
        raise SceneParseError(f"face index {idx} out of range (have {n_vertices} vertices)", where)
    return resolved


def parse_mesh_obj_with_stats(data: bytes | str) -> tuple[TriangleMesh, ObjStats]:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    ignored: Counter = Counter()
    polygons = 0
    for lineno, raw in enumerate(_text(data).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}"
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) not in (3, 4, 6, 7):
                raise SceneParseError(f"vertex needs 3 coordinates, got {len(rest)}", where)
            try:
                xyz = tuple(float(x) for x in rest[:3])
            except ValueError:
                raise SceneParseError(f"non-numeric vertex {rest[:3]}", where) from None
            if not all(np.isfinite(xyz)):
                raise SceneParseError("non-finite vertex coordinate", where)
            vertices.append(xyz)
        elif tag == "f":
            if len(rest) < 3:
                raise SceneParseError(f"face needs at least 3 vertices, got {len(rest)}", where)
            idx = [_obj_index(tok, len(vertices), where) for tok in rest]
            polygons += 1
            for i in range(1, len(idx) - 1):
                faces.append((idx[0], idx[i], idx[i + 1]))
        else:
            ignored[tag] += 1
    if ignored:
        logger.info("ignored OBJ directives: %s", dict(ignored))
    mesh = TriangleMesh.from_arrays(np.array(vertices, dtype=np.float64).reshape(-1, 3), faces)
    if mesh.n_triangles == 0:
        raise SceneParseError("mesh has no non-degenerate faces", "end of input")
    return mesh, ObjStats(ignored, mesh.dropped_degenerate, polygons)


def parse_mesh_obj(data: bytes | str) -> TriangleMesh:
    """Parse ASCII OBJ text into a mesh; polygons are fan-triangulated from their first vertex."""
    return parse_mesh_obj_with_stats(data)[0]


def write_mesh_obj(mesh: TriangleMesh) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    return "\n".join(lines) + "\n"


def _vector(rec: dict, key: str, n: int, where: str) -> np.ndarray:
    value = rec[key]
    if not isinstance(value, list) or len(value) != n:
        raise SceneParseError(f"{key} must be a list of {n} numbers", where)
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise SceneParseError(f"{key} must contain only numbers", where)
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise SceneParseError(f"{key} must be finite", where)
    return arr


def parse_poses(data: bytes | str) -> list[CameraPose]:
    """Parse the canonical pose document into camera poses, in document order."""
    try:
        doc = json.loads(_text(data))
    except json.JSONDecodeError as exc:
        raise SceneParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    if isinstance(doc, dict) and "cameras" in doc:
        doc = doc["cameras"]
    if not isinstance(doc, list):
        raise SceneParseError("pose document must be a list of records", "document root")
    poses: list[CameraPose] = []
    seen: dict[str, int] = {}
    for i, rec in enumerate(doc):
        where = f"record {i}"
        if not isinstance(rec, dict):
            raise SceneParseError("record must be an object", where)
        image_id = rec.get("image_id")
        if not isinstance(image_id, str) or not image_id:
            raise SceneParseError("image_id must be a non-empty string", where)
        where = f"record {i} ({image_id})"
        if image_id in seen:
            raise SceneParseError(f"duplicate image_id {image_id!r} (first at record {seen[image_id]})", where)
        seen[image_id] = i
        if "position" not in rec:
            raise SceneParseError("missing position", where)
        position = _vector(rec, "position", 3, where)
        has_dir, has_rot = "view_dir" in rec, "rotation" in rec
        if has_dir == has_rot:
            raise SceneParseError("exactly one of view_dir or rotation is required", where)
        if has_dir:
            direction = _vector(rec, "view_dir", 3, where)
        else:
            rot = _vector(rec, "rotation", 9, where).reshape(3, 3)
            err = float(np.abs(rot.T @ rot - np.eye(3)).max())
            if err > ROTATION_TOL:
                raise SceneParseError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})", where)
            direction = rot @ np.array([0.0, 0.0, 1.0])
        if float(np.linalg.norm(direction)) == 0.0:
            raise SceneParseError("zero-length view direction", where)
        image_path = rec.get("image_path")
        if image_path is not None and not isinstance(image_path, str):
            raise SceneParseError("image_path must be a string", where)
        poses.append(CameraPose(image_id, position, direction, image_path))
    return poses


def serialize_poses(poses) -> str:
    return json.dumps([p.to_record() for p in poses], indent=1) + "\n"


def load_scene(mesh_path: str | Path, poses_path: str | Path) -> Scene:
    mesh = parse_mesh_obj(Path(mesh_path).read_bytes())
    poses = parse_poses(Path(poses_path).read_bytes())
    if not poses:
        raise SceneParseError("pose document has no cameras", str(poses_path))
    return Scene(mesh, poses)
