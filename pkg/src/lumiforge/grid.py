"""Light-position lattice and light trajectories over it.

Axes: ``i`` runs camera-horizontal (image left to right), ``j`` is depth
(positive toward the camera) and ``k`` is vertical. The default grid is
centred on the subject's head.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

DEFAULT_EXTENT_CM = 160.0
DEFAULT_SPACING_CM = 5.0
DEFAULT_ORIGIN_CM = (-80.0, -80.0, 0.0)

TRAJECTORY_KINDS = ("horizontal", "vertical", "diagonal", "arc", "custom")

_AXES = {"i": 0, "j": 1, "k": 2}


class GridError(ValueError):
    pass


class GridIndex(NamedTuple):
    i: int
    j: int
    k: int


@dataclass(frozen=True)
class LightGrid:
    extent_cm: float
    spacing_cm: float
    n_per_axis: int
    origin_cm: tuple[float, float, float]

    @property
    def size(self) -> int:
        return self.n_per_axis ** 3

    @property
    def centroid_cm(self) -> np.ndarray:
        return np.asarray(self.origin_cm) + 0.5 * self.extent_cm

    def contains(self, idx: Sequence[int]) -> bool:
        return len(idx) == 3 and all(0 <= int(v) < self.n_per_axis for v in idx)

    def check(self, idx: Sequence[int]) -> GridIndex:
        if not self.contains(idx):
            raise GridError(
                f"grid index {tuple(idx)} outside [0, {self.n_per_axis - 1}]^3"
            )
        return GridIndex(*(int(v) for v in idx))

    def world_position(self, idx: Sequence[int]) -> np.ndarray:
        idx = self.check(idx)
        return np.asarray(self.origin_cm, dtype=np.float64) + np.asarray(idx, dtype=np.float64) * self.spacing_cm

    def positions(self) -> np.ndarray:
        """All lattice points as an ``(n**3, 3)`` array in i-major order."""
        n = self.n_per_axis
        ii, jj, kk = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1).astype(np.float64)
        return np.asarray(self.origin_cm, dtype=np.float64) + idx * self.spacing_cm

    def indices(self) -> Iterator[GridIndex]:
        n = self.n_per_axis
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    yield GridIndex(i, j, k)

    def flat_index(self, idx: Sequence[int]) -> int:
        i, j, k = self.check(idx)
        n = self.n_per_axis
        return (i * n + j) * n + k

    def snap(self, position_cm: Sequence[float]) -> GridIndex:
        """Nearest lattice index (round half away from zero); not bounds-checked."""
        rel = (np.asarray(position_cm, dtype=np.float64) - np.asarray(self.origin_cm)) / self.spacing_cm
        return GridIndex(*(_round_half_away(float(v)) for v in rel))

    def to_dict(self) -> dict:
        return {
            "extent_cm": float(self.extent_cm),
            "spacing_cm": float(self.spacing_cm),
            "origin_cm": [float(v) for v in self.origin_cm],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LightGrid":
        return build_grid(d["extent_cm"], d["spacing_cm"], tuple(d["origin_cm"]))


def _round_half_away(x: float) -> int:
    r = math.floor(abs(x) + 0.5)
    return int(r if x >= 0 else -r)


def build_grid(
    extent_cm: float = DEFAULT_EXTENT_CM,
    spacing_cm: float = DEFAULT_SPACING_CM,
    origin_cm: Sequence[float] = DEFAULT_ORIGIN_CM,
) -> LightGrid:
    if extent_cm <= 0 or spacing_cm <= 0:
        raise GridError("extent and spacing must be positive")
    if len(origin_cm) != 3:
        raise GridError("origin must be a 3-vector")
    ratio = extent_cm / spacing_cm
    cells = round(ratio)
    if cells < 1 or abs(ratio - cells) > 1e-9 * ratio:
        raise GridError(
            f"spacing {spacing_cm} cm does not divide extent {extent_cm} cm "
            f"(ratio {ratio:.6g} is not an integer)"
        )
    return LightGrid(float(extent_cm), float(spacing_cm), int(cells) + 1,
                     tuple(float(v) for v in origin_cm))


@dataclass(frozen=True)
class LightTrajectory:
    grid: LightGrid
    points: tuple[GridIndex, ...]
    kind: str = "custom"
    intensity: float = 1.0

    def __post_init__(self):
        if len(self.points) < 1:
            raise GridError("trajectory needs at least one point")
        if self.kind not in TRAJECTORY_KINDS:
            raise GridError(f"unknown trajectory kind {self.kind!r}")
        if not self.intensity > 0:
            raise GridError("intensity must be positive")
        object.__setattr__(self, "points", tuple(self.grid.check(p) for p in self.points))

    def __len__(self) -> int:
        return len(self.points)

    def world_positions(self) -> np.ndarray:
        return np.stack([self.grid.world_position(p) for p in self.points])

    def lights_at(self, t: int) -> list[tuple[np.ndarray, float]]:
        return [(self.grid.world_position(self.points[t]), self.intensity)]

    def resample(self, n_frames: int) -> "LightTrajectory":
        if n_frames == len(self.points):
            return self
        src = _resample_indices(len(self.points), n_frames)
        return LightTrajectory(self.grid, tuple(self.points[s] for s in src), self.kind, self.intensity)

    def reversed(self) -> "LightTrajectory":
        return LightTrajectory(self.grid, self.points[::-1], self.kind, self.intensity)

    def mirrored(self) -> "LightTrajectory":
        """Reflect across the vertical mid-plane (i -> n-1-i)."""
        n = self.grid.n_per_axis
        pts = tuple(GridIndex(n - 1 - p.i, p.j, p.k) for p in self.points)
        return LightTrajectory(self.grid, pts, self.kind, self.intensity)


@dataclass(frozen=True)
class MultiLightTrajectory:
    tracks: tuple[LightTrajectory, ...]
    intensities: tuple[float, ...]

    def __post_init__(self):
        if not self.tracks:
            raise GridError("need at least one track")
        if len(self.intensities) != len(self.tracks):
            raise GridError("one intensity per track required")
        if any(not v > 0 for v in self.intensities):
            raise GridError("intensities must be positive")
        n = len(self.tracks[0])
        grid = self.tracks[0].grid
        for tr in self.tracks[1:]:
            if len(tr) != n:
                raise GridError(f"track lengths differ ({len(tr)} vs {n})")
            if tr.grid != grid:
                raise GridError("tracks live on different grids")

    @property
    def grid(self) -> LightGrid:
        return self.tracks[0].grid

    @property
    def kind(self) -> str:
        return "multi"

    def __len__(self) -> int:
        return len(self.tracks[0])

    def lights_at(self, t: int) -> list[tuple[np.ndarray, float]]:
        return [
            (tr.grid.world_position(tr.points[t]), tr.intensity * w)
            for tr, w in zip(self.tracks, self.intensities)
        ]

    def resample(self, n_frames: int) -> "MultiLightTrajectory":
        return MultiLightTrajectory(tuple(t.resample(n_frames) for t in self.tracks), self.intensities)

    def mirrored(self) -> "MultiLightTrajectory":
        return MultiLightTrajectory(tuple(t.mirrored() for t in self.tracks), self.intensities)


Trajectory = LightTrajectory | MultiLightTrajectory


def _resample_indices(n_src: int, n_dst: int) -> list[int]:
    if n_dst < 1:
        raise GridError("n_frames must be >= 1")
    if n_dst == 1:
        return [0]
    den = n_dst - 1
    return [((n_src - 1) * 2 * t + den) // (2 * den) for t in range(n_dst)]


def _lerp_index(a: int, b: int, t: int, n: int) -> int:
    # exact rational interpolation, rounded half away from zero (values are >= 0)
    if n == 1:
        return a
    den = n - 1
    num = a * den + (b - a) * t
    return (2 * num + den) // (2 * den)


def _linear_kind(start: GridIndex, end: GridIndex) -> str:
    moved = [s != e for s, e in zip(start, end)]
    if not any(moved):
        return "custom"
    if moved == [True, False, False]:
        return "horizontal"
    if moved == [False, False, True]:
        return "vertical"
    return "diagonal"


def linear_trajectory(grid: LightGrid, start: Sequence[int], end: Sequence[int], n_frames: int) -> LightTrajectory:
    start, end = grid.check(start), grid.check(end)
    if n_frames < 1:
        raise GridError("n_frames must be >= 1")
    pts = tuple(
        GridIndex(*(_lerp_index(a, b, t, n_frames) for a, b in zip(start, end)))
        for t in range(n_frames)
    )
    return LightTrajectory(grid, pts, _linear_kind(start, end))


def arc_trajectory(
    grid: LightGrid,
    center: Sequence[int],
    radius_cm: float,
    plane: tuple[str, str] = ("i", "k"),
    angle_start: float = 0.0,
    angle_end: float = math.pi,
    n_frames: int = 16,
) -> LightTrajectory:
    center = grid.check(center)
    if radius_cm < 0:
        raise GridError("radius must be non-negative")
    if n_frames < 1:
        raise GridError("n_frames must be >= 1")
    try:
        a, b = (_AXES[ax] for ax in plane)
    except KeyError as exc:
        raise GridError(f"bad plane {plane!r}; use two of 'i', 'j', 'k'") from exc
    if a == b:
        raise GridError("arc plane axes must differ")
    c = grid.world_position(center)
    pts = []
    for t in range(n_frames):
        theta = angle_start if n_frames == 1 else angle_start + (angle_end - angle_start) * t / (n_frames - 1)
        p = c.copy()
        p[a] += radius_cm * math.cos(theta)
        p[b] += radius_cm * math.sin(theta)
        idx = grid.snap(p)
        if not grid.contains(idx):
            raise GridError(
                f"arc leaves the grid at frame {t}: snapped index {tuple(idx)}"
            )
        pts.append(idx)
    return LightTrajectory(grid, tuple(pts), "arc")


def static_trajectory(grid: LightGrid, point: Sequence[int], n_frames: int) -> LightTrajectory:
    return linear_trajectory(grid, point, point, n_frames)


def superpose(tracks: Sequence[LightTrajectory], intensities: Sequence[float]) -> MultiLightTrajectory:
    return MultiLightTrajectory(tuple(tracks), tuple(float(v) for v in intensities))


# -- JSON -------------------------------------------------------------------

def trajectory_to_dict(traj: Trajectory) -> dict:
    if isinstance(traj, MultiLightTrajectory):
        return {
            "grid": traj.grid.to_dict(),
            "kind": "multi",
            "tracks": [
                {"kind": t.kind, "points": [list(p) for p in t.points], "intensity": t.intensity}
                for t in traj.tracks
            ],
            "intensities": list(traj.intensities),
        }
    return {
        "grid": traj.grid.to_dict(),
        "kind": traj.kind,
        "points": [list(p) for p in traj.points],
        "intensities": [traj.intensity],
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    grid = LightGrid.from_dict(d["grid"])
    if d.get("kind") == "multi":
        tracks = tuple(
            LightTrajectory(grid, tuple(GridIndex(*p) for p in t["points"]),
                            t.get("kind", "custom"), float(t.get("intensity", 1.0)))
            for t in d["tracks"]
        )
        return MultiLightTrajectory(tracks, tuple(float(v) for v in d["intensities"]))
    intens = d.get("intensities") or [1.0]
    if len(intens) != 1:
        raise GridError("single-track trajectory takes exactly one intensity")
    return LightTrajectory(grid, tuple(GridIndex(*p) for p in d["points"]), d.get("kind", "custom"), float(intens[0]))


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trajectory_to_dict(traj), indent=1, sort_keys=True) + "\n")


def load_trajectory(path: str | Path) -> Trajectory:
    return trajectory_from_dict(json.loads(Path(path).read_text()))
