"""Shooting points and radius-ball selection of surrounding images."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import nearest_hits
from .scene import Scene

DEFAULT_RADIUS = 1.0  # m


class InterestImageError(ValueError):
    """The image of interest is unusable for selection."""


class UnknownInterestError(InterestImageError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


class InterestMissedError(InterestImageError):
    """The optical axis of the image of interest does not hit the mesh."""


@dataclass(frozen=True, eq=False)
class ShootingPoint:
    image_id: str
    point: np.ndarray
    t: float
    triangle_index: int

    def to_record(self) -> dict:
        return {
            "image_id": self.image_id,
            "point": [float(x) for x in self.point],
            "t": self.t,
            "triangle_index": self.triangle_index,
        }


@dataclass(frozen=True, eq=False)
class NeighborhoodSelection:
    interest: ShootingPoint
    surrounding: list[ShootingPoint]
    excluded: list[str]
    missed: list[str]
    radius: float

    @property
    def analysed_ids(self) -> list[str]:
        """Image of interest first, then surrounding images by distance."""
        return [self.interest.image_id] + [s.image_id for s in self.surrounding]

    def to_dict(self) -> dict:
        centre = self.interest.point
        return {
            "radius": self.radius,
            "interest": self.interest.to_record(),
            "surrounding": [
                dict(s.to_record(), distance=float(np.linalg.norm(s.point - centre)))
                for s in self.surrounding
            ],
            "excluded": list(self.excluded),
            "missed": list(self.missed),
            "counts": {
                "surrounding": len(self.surrounding),
                "excluded": len(self.excluded),
                "missed": len(self.missed),
            },
        }


def _chunks(n: int, parts: int) -> list[slice]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def shooting_points(scene: Scene, workers: int = 1) -> dict[str, ShootingPoint | None]:
    """Nearest mesh hit along each camera's optical axis, keyed and sorted by image_id.

    Cameras whose ray misses the mesh map to ``None``.
    """
    cams = scene.cameras
    origins = np.array([c.position for c in cams])
    dirs = np.array([c.view_dir for c in cams])
    idx = np.empty(len(cams), dtype=np.int64)
    ts = np.empty(len(cams))

    def run(sl: slice) -> None:
        i, t, _, _ = nearest_hits(scene.mesh, origins[sl], dirs[sl])
        idx[sl] = i
        ts[sl] = t

    slices = _chunks(len(cams), workers)
    if len(slices) <= 1:
        for sl in slices:
            run(sl)
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            list(pool.map(run, slices))

    out: dict[str, ShootingPoint | None] = {}
    for k in sorted(range(len(cams)), key=lambda k: cams[k].image_id):
        cam = cams[k]
        if idx[k] < 0:
            out[cam.image_id] = None
            continue
        t = float(ts[k])
        point = cam.position + t * cam.view_dir
        point.setflags(write=False)
        out[cam.image_id] = ShootingPoint(cam.image_id, point, t, int(idx[k]))
    return out


def select_surrounding(
    points: dict[str, ShootingPoint | None],
    interest_id: str,
    radius: float = DEFAULT_RADIUS,
) -> NeighborhoodSelection:
    """Split cameras into surrounding (within ``radius``, inclusive), excluded and missed."""
    if radius < 0 or not math.isfinite(radius):
        raise ValueError(f"radius must be a finite non-negative number, got {radius!r}")
    if interest_id not in points:
        raise UnknownInterestError(f"unknown image of interest {interest_id!r}")
    interest = points[interest_id]
    if interest is None:
        raise InterestMissedError(f"image of interest {interest_id!r} does not hit the mesh")

    near: list[tuple[float, str, ShootingPoint]] = []
    excluded: list[str] = []
    missed: list[str] = []
    for image_id, sp in points.items():
        if image_id == interest_id:
            continue
        if sp is None:
            missed.append(image_id)
            continue
        dist = float(np.linalg.norm(sp.point - interest.point))
        if dist <= radius:
            near.append((dist, image_id, sp))
        else:
            excluded.append(image_id)
    near.sort(key=lambda item: (item[0], item[1]))
    return NeighborhoodSelection(
        interest=interest,
        surrounding=[sp for _, _, sp in near],
        excluded=sorted(excluded),
        missed=sorted(missed),
        radius=float(radius),
    )


def shooting_document(points: dict[str, ShootingPoint | None]) -> dict:
    return {
        "shooting_points": [sp.to_record() for sp in points.values() if sp is not None],
        "missed": [k for k, sp in points.items() if sp is None],
    }
