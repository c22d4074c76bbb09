"""Synthetic scenes, the scripted field-test fixture, and brute-force oracles.

Everything here is seeded and serializes floats with ``repr`` so generated
files are byte-identical across runs.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Hit, Ray, Triangle, TriangleMesh, scan_hits
from .scene import CameraPose, serialize_poses, write_mesh_obj
from .vqa import Annotation, MemberAnnotation, Vocabulary, serialize_annotations

Script = Mapping[int, Mapping[str, tuple[str, ...]]]


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """A deck box seen from below by cameras aimed at scripted targets.

    Camera 0 is the image of interest and looks straight up at the centre of
    the deck underside. Cameras ``1..n_near-1`` aim at points within
    ``near_spread`` of it, the next ``n_far`` at points at least ``far_min``
    away, and the last ``n_missed`` look down into empty space.
    """

    length: float = 25.4
    width: float = 9.8
    depth: float = 1.2
    cells: tuple[int, int] = (26, 10)
    n_near: int = 64
    n_far: int = 12
    n_missed: int = 1
    near_spread: float = 0.8
    far_min: float = 1.5
    standoff: tuple[float, float] = (2.0, 5.0)
    max_tilt_deg: float = 35.0
    seed: int = 0
    script: Script | None = field(default=None, compare=False)
    id_prefix: str = "img"

    @property
    def n_cameras(self) -> int:
        return self.n_near + self.n_far + self.n_missed

    def image_id(self, k: int) -> str:
        return f"{self.id_prefix}{k:03d}"


@dataclass(frozen=True)
class GeneratedScene:
    mesh_obj: str
    poses_json: str
    annotations_json: str
    interest_id: str
    targets: dict[str, tuple[float, float, float] | None]

    def write(self, directory: str | Path) -> dict[str, Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "mesh": out / "mesh.obj",
            "poses": out / "poses.json",
            "annotations": out / "annotations.json",
        }
        paths["mesh"].write_text(self.mesh_obj)
        paths["poses"].write_text(self.poses_json)
        paths["annotations"].write_text(self.annotations_json)
        return paths


def box_mesh(lo, hi, cells: tuple[int, int] = (1, 1)) -> TriangleMesh:
    """Closed axis-aligned box; the bottom and top faces are gridded ``cells``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []

    def grid(origin, du, dv, nu, nv):
        base = len(verts)
        for j in range(nv + 1):
            for i in range(nu + 1):
                verts.append(tuple(origin + du * (i / nu) + dv * (j / nv)))
        for j in range(nv):
            for i in range(nu):
                a = base + j * (nu + 1) + i
                b, c, d = a + 1, a + nu + 2, a + nu + 1
                faces.append((a, b, c))
                faces.append((a, c, d))

    ex, ey, ez = np.diag(hi - lo)
    nx, ny = cells
    grid(lo, ex, ey, nx, ny)  # underside z = lo
    grid(lo + ez, ex, ey, nx, ny)  # top
    grid(lo, ex, ez, 1, 1)  # y = lo
    grid(lo + ey, ex, ez, 1, 1)  # y = hi
    grid(lo, ey, ez, 1, 1)  # x = lo
    grid(lo + ex, ey, ez, 1, 1)  # x = hi
    return TriangleMesh.from_arrays(verts, faces)


def _tilted_up(rng: np.random.Generator, max_tilt_deg: float) -> np.ndarray:
    tilt = np.radians(rng.uniform(0.0, max_tilt_deg))
    az = rng.uniform(0.0, 2 * np.pi)
    d = np.array([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), np.cos(tilt)])
    return d / np.linalg.norm(d)


def _random_annotation(rng: np.random.Generator, image_id: str, vocab: Vocabulary) -> Annotation:
    n_members = int(rng.integers(0, 4))
    members = rng.choice(len(vocab.members), size=n_members, replace=False)
    out = []
    for mi in sorted(members):
        n_dmg = int(rng.integers(0, 3))
        dmg = rng.choice(len(vocab.damages), size=n_dmg, replace=False)
        out.append(MemberAnnotation(vocab.members[mi], tuple(vocab.damages[d] for d in sorted(dmg))))
    return Annotation(image_id, tuple(out))


def random_annotation(seed: int, image_id: str = "img", vocab: Vocabulary | None = None) -> Annotation:
    return _random_annotation(np.random.default_rng(seed), image_id, vocab or Vocabulary())


def gen_scene(spec: SyntheticSceneSpec, vocab: Vocabulary | None = None) -> GeneratedScene:
    """Generate mesh, pose and annotation documents for ``spec``."""
    vocab = vocab or Vocabulary()
    rng = np.random.default_rng(spec.seed)
    mesh = box_mesh((0.0, 0.0, 0.0), (spec.length, spec.width, spec.depth), spec.cells)
    centre = np.array([spec.length / 2, spec.width / 2, 0.0])
    margin = 0.05
    far_max = min(spec.length, spec.width) / 2 - margin

    poses: list[CameraPose] = []
    targets: dict[str, tuple[float, float, float] | None] = {}
    for k in range(spec.n_cameras):
        image_id = spec.image_id(k)
        if k >= spec.n_near + spec.n_far:
            pos = centre + np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), -rng.uniform(*spec.standoff)])
            direction = -_tilted_up(rng, spec.max_tilt_deg)
            poses.append(CameraPose(image_id, pos, direction))
            targets[image_id] = None
            continue
        if k == 0:
            target, direction = centre.copy(), np.array([0.0, 0.0, 1.0])
        else:
            if k < spec.n_near:
                r = spec.near_spread * np.sqrt(rng.uniform())
            else:
                r = rng.uniform(spec.far_min, far_max)
            az = rng.uniform(0.0, 2 * np.pi)
            target = centre + np.array([r * np.cos(az), r * np.sin(az), 0.0])
            direction = _tilted_up(rng, spec.max_tilt_deg)
        pos = target - rng.uniform(*spec.standoff) * direction
        poses.append(CameraPose(image_id, pos, direction))
        targets[image_id] = tuple(float(x) for x in target)

    annotations = []
    for k in range(spec.n_cameras):
        image_id = spec.image_id(k)
        if spec.script is not None:
            members = spec.script.get(k, {})
            annotations.append(
                Annotation(image_id, tuple(MemberAnnotation(m, tuple(ds)) for m, ds in members.items()))
            )
        else:
            annotations.append(_random_annotation(rng, image_id, vocab))
    for a in annotations:
        a.validate(vocab)

    return GeneratedScene(
        mesh_obj=write_mesh_obj(mesh),
        poses_json=serialize_poses(poses),
        annotations_json=serialize_annotations(annotations),
        interest_id=spec.image_id(0),
        targets=targets,
    )


def field_test_script(n_near: int = 64, n_far: int = 12, n_missed: int = 1) -> dict[int, dict[str, tuple[str, ...]]]:
    """Annotations for the field-test-shaped fixture.

    Among the 64 analysed images (0 = image of interest): the slab shows in 61
    with cracking or leaking in 58; the abutment shows in 22 with leaking in
    18; no drainage pipe or wheel guard. Out-of-ball images do show drainage
    pipes and wheel guards, which must not reach the counts.
    """
    if n_near != 64:
        raise ValueError("the field-test script is defined for 64 analysed images")
    script: dict[int, dict[str, tuple[str, ...]]] = {0: {"cross beam": ("corrosion",)}}
    slab_events = [("cracking",), ("leaking",), ("cracking", "leaking")]
    for i in range(1, 64):
        members: dict[str, tuple[str, ...]] = {}
        if i <= 61:
            members["slab"] = slab_events[i % 3] if i <= 58 else ()
        if 42 <= i <= 63:
            members["abutment"] = ("leaking",) if i <= 59 else ()
        if i % 4 == 0:
            members["cross beam"] = ("corrosion",)
        if i % 5 == 0:
            members["main girder"] = ("degradation of the anticorrosive",) if i % 10 else ()
        if i % 7 == 0:
            members["bearing"] = ("corrosion",)
        script[i] = members
    for j in range(n_far):
        k = n_near + j
        script[k] = {
            "drainage pipe": ("corrosion", "leaking") if j % 2 else ("fracture",),
            "wheel guard": ("leaking",) if j % 3 else (),
            "slab": ("cracking",),
        }
    for j in range(n_missed):
        script[n_near + n_far + j] = {"main girder": ()}
    return script


def field_test_spec(seed: int = 2024) -> SyntheticSceneSpec:
    return SyntheticSceneSpec(seed=seed, script=field_test_script())


def field_test_fixture(seed: int = 2024) -> GeneratedScene:
    return gen_scene(field_test_spec(seed))


# ---------------------------------------------------------------------------
# oracles


def naive_nearest_hit(mesh: TriangleMesh, ray: Ray) -> Hit | None:
    """Exhaustive scan over every triangle; no acceleration index involved."""
    idx, t, u, v = scan_hits(mesh, ray.origin[None], ray.direction[None])
    if idx[0] < 0:
        return None
    return Hit(float(t[0]), float(u[0]), float(v[0]), int(idx[0]))


def plane_barycentric_hit(ray: Ray, tri: Triangle) -> tuple[float, float, float] | None:
    """Ray/plane intersection followed by barycentric coordinates of the hit point.

    Returns ``(t, u, v)`` with ``u``, ``v`` the weights of vertices b and c,
    or ``None`` when the ray is parallel to the plane. Containment is left to
    the caller so it can apply its own boundary tolerance.
    """
    o, d = ray.origin, ray.direction
    e1, e2 = tri.b - tri.a, tri.c - tri.a
    normal = np.cross(e1, e2)
    denom = float(normal @ d)
    if denom == 0.0:
        return None
    t = float(normal @ (tri.a - o)) / denom
    w = o + t * d - tri.a
    d11, d12, d22 = e1 @ e1, e1 @ e2, e2 @ e2
    w1, w2 = w @ e1, w @ e2
    gram = d11 * d22 - d12 * d12
    u = (d22 * w1 - d12 * w2) / gram
    v = (d11 * w2 - d12 * w1) / gram
    return t, float(u), float(v)


def random_soup(n_triangles: int, seed: int, extent: float = 10.0, size: float = 0.05) -> TriangleMesh:
    """Triangle soup: ``n_triangles`` small random triangles in a cube of side ``extent``."""
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.0, extent, (n_triangles, 3))
    corners = [centres + rng.normal(0.0, size, (n_triangles, 3)) for _ in range(3)]
    verts = np.concatenate(corners)
    faces = np.stack([np.arange(n_triangles) + k * n_triangles for k in range(3)], axis=1)
    return TriangleMesh.from_arrays(verts, faces)


def random_rays(n: int, seed: int, extent: float = 10.0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    origins = rng.uniform(0.0, extent, (n, 3))
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return origins, dirs


def random_camera_scene(seed: int, n_cameras: int = 12, n_quads: int = 4, extent: float = 4.0):
    """Small random scene for neighbourhood properties: a few random quads plus cameras.

    Returns ``(mesh, poses)``; roughly half of the cameras aim at a mesh point.
    """
    rng = np.random.default_rng(seed)
    verts, faces = [], []
    for q in range(n_quads):
        c = rng.uniform(0.0, extent, 3)
        a, b = rng.normal(size=3), rng.normal(size=3)
        corners = [c + a + b, c + a - b, c - a - b, c - a + b]
        base = len(verts)
        verts.extend(corners)
        faces.extend([(base, base + 1, base + 2), (base, base + 2, base + 3)])
    mesh = TriangleMesh.from_arrays(verts, faces)
    v0, v1, v2 = mesh.corners
    poses = []
    for k in range(n_cameras):
        pos = rng.uniform(-1.0, extent + 1.0, 3)
        if rng.uniform() < 0.7:
            tri = int(rng.integers(mesh.n_triangles))
            w = rng.dirichlet(np.ones(3))
            aim = w[0] * v0[tri] + w[1] * v1[tri] + w[2] * v2[tri]
            d = aim - pos
        else:
            d = rng.normal(size=3)
        if np.linalg.norm(d) < 1e-6:
            d = np.array([0.0, 0.0, 1.0])
        poses.append(CameraPose(f"cam{k:02d}", pos, d / np.linalg.norm(d)))
    return mesh, poses


def dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"
