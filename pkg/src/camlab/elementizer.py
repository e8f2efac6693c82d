"""Convert per-view masks + depth into typed constraint elements.

Pipeline per element: fuse masked depth pixels from all views into one world
cloud, drop statistical outliers, rotate into a type-specific canonical frame,
voxelize (cell layout depends on the element type), pick one representative
per occupied cell via DBSCAN, trim or grow to the type's required point
count, then connect the points (consecutive along the axis for lines, convex
hull cycle for surfaces).

Every iteration order is fixed, so identical inputs give bit-identical
elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from camlab.errors import EmptyPointSet, IrreducibleCloud
from camlab.geom3d import (
    CameraModel,
    as_points,
    dbscan,
    fit_line,
    fit_plane,
    project,
    unit,
    unproject,
    voxelize,
)

__all__ = [
    "ElementKind",
    "ElementType",
    "POINT",
    "LINE",
    "SURFACE",
    "point_set",
    "ViewMask",
    "MaskBundle",
    "ConstraintElement",
    "ElementSet",
    "ExtractParams",
    "fuse_views",
    "filter_outliers",
    "cells_for_type",
    "element_from_cloud",
    "extract_element",
    "end_effector_element",
    "make_element_set",
    "annotate",
    "element_set_fingerprint",
]


class ElementKind(str, Enum):
    POINT = "point"
    POINT_SET = "point_set"
    LINE = "line"
    SURFACE = "surface"


@dataclass(frozen=True)
class ElementType:
    kind: ElementKind
    k: int = 1  # only meaningful for POINT_SET

    def __post_init__(self):
        if self.kind is ElementKind.POINT_SET and self.k < 1:
            raise ValueError("POINT_SET needs k >= 1")

    @property
    def target_points(self) -> int:
        """Representative count the pipeline aims for."""
        return {
            ElementKind.POINT: 1,
            ElementKind.POINT_SET: self.k,
            ElementKind.LINE: 2,
            ElementKind.SURFACE: 4,  # one per 2x2 cell
        }[self.kind]

    @property
    def min_points(self) -> int:
        return 3 if self.kind is ElementKind.SURFACE else self.target_points

    def short(self) -> str:
        if self.kind is ElementKind.POINT_SET:
            return f"point_set({self.k})"
        return self.kind.value


POINT = ElementType(ElementKind.POINT)
LINE = ElementType(ElementKind.LINE)
SURFACE = ElementType(ElementKind.SURFACE)


def point_set(k: int) -> ElementType:
    return ElementType(ElementKind.POINT_SET, k)


@dataclass(frozen=True)
class ViewMask:
    instance_mask: np.ndarray  # bool (h, w)
    part_mask: np.ndarray  # bool (h, w), subset of instance_mask

    def __post_init__(self):
        inst = np.asarray(self.instance_mask, dtype=bool)
        part = np.asarray(self.part_mask, dtype=bool)
        object.__setattr__(self, "instance_mask", inst)
        object.__setattr__(self, "part_mask", part)
        if inst.shape != part.shape:
            raise ValueError("instance and part masks must share a shape")
        if np.any(part & ~inst):
            raise ValueError("part mask must be a subset of the instance mask")


@dataclass(frozen=True)
class MaskBundle:
    views: tuple
    element_type: ElementType
    constraint: str
    entity: str
    part: str

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))


# annotation palette, cycled by element id
COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan", "orange", "purple")


@dataclass(frozen=True)
class ConstraintElement:
    eid: int
    etype: ElementType
    points: np.ndarray  # (k, 3) world, ordered
    connections: tuple  # ((i, j), ...) index pairs
    entity: str
    part: str
    constraint: str
    color: str = "red"

    def __post_init__(self):
        pts = as_points(self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "connections", tuple(tuple(c) for c in self.connections))
        if len(pts) < self.etype.min_points:
            raise ValueError(
                f"{self.etype.short()} element needs >= {self.etype.min_points} points, got {len(pts)}"
            )
        for i, j in self.connections:
            if not (0 <= i < len(pts) and 0 <= j < len(pts)):
                raise ValueError(f"connection ({i}, {j}) out of range")

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class ElementSet:
    elements: tuple
    subgoal_id: str

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        ids = [e.eid for e in self.elements]
        if ids != list(range(len(ids))):
            raise ValueError(f"element ids must be contiguous from 0, got {ids}")

    def __getitem__(self, eid: int) -> ConstraintElement:
        return self.elements[eid]

    def __len__(self) -> int:
        return len(self.elements)


def make_element_set(protos, subgoal_id: str) -> ElementSet:
    """Assign contiguous ids and palette colors to extracted elements."""
    out = []
    for i, proto in enumerate(protos):
        out.append(replace(proto, eid=i, color=COLORS[i % len(COLORS)]))
    return ElementSet(tuple(out), subgoal_id)


@dataclass(frozen=True)
class ExtractParams:
    outlier_k: int = 8
    outlier_std_ratio: float = 2.0
    dbscan_eps: float | None = None  # None -> eps_factor x the p90 nearest-neighbor gap
    eps_factor: float = 2.0  # tolerates pixel-aliasing gaps in thin masks
    dbscan_min_pts: int = 3
    max_cloud_points: int = 4000


# ---------------------------------------------------------------------------
# pipeline stages


def fuse_views(bundle: MaskBundle, depths, cams) -> np.ndarray:
    """Unproject the part mask of every view and concatenate, view order then
    raster order. Raises EmptyPointSet when no view contributes a point."""
    if len(bundle.views) == 0 or len(bundle.views) != len(depths) or len(depths) != len(cams):
        raise ValueError("need matching, nonempty views/depths/cams")
    clouds = []
    for view, depth, cam in zip(bundle.views, depths, cams):
        clouds.append(unproject(depth, view.part_mask, cam))
    cloud = np.concatenate(clouds, axis=0)
    if len(cloud) == 0:
        raise EmptyPointSet(f"no masked depth pixels for {bundle.entity}/{bundle.part}")
    return cloud


def _pairwise_dist(pts: np.ndarray) -> np.ndarray:
    sq = np.sum(pts * pts, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (pts @ pts.T)
    return np.sqrt(np.clip(d2, 0.0, None))


def filter_outliers(points, k: int = 8, std_ratio: float = 2.0) -> np.ndarray:
    """Statistical outlier removal: drop points whose mean distance to their k
    nearest neighbors exceeds mean + std_ratio * std of that statistic.
    Returns the input unchanged when n <= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = as_points(points)
    n = len(pts)
    if n <= k:
        return pts
    d = _pairwise_dist(pts)
    d_sorted = np.sort(d, axis=1)
    stat = d_sorted[:, 1 : k + 1].mean(axis=1)  # column 0 is self-distance
    thresh = stat.mean() + std_ratio * stat.std()
    return pts[stat <= thresh]


def cells_for_type(etype: ElementType) -> tuple:
    """Voxel cell counts per canonical axis for the given element type."""
    if etype.kind is ElementKind.POINT:
        return (1, 1, 1)
    if etype.kind is ElementKind.LINE:
        return (2, 1, 1)  # first axis = fitted line direction
    if etype.kind is ElementKind.SURFACE:
        return (2, 2, 1)  # third axis = fitted plane normal
    c = math.ceil(etype.k ** (1.0 / 3.0))
    # guard float cube roots of perfect cubes (8 ** (1/3) == 1.9999...)
    while (c - 1) ** 3 >= etype.k:
        c -= 1
    return (c, c, c)


def _least_aligned_axis(v: np.ndarray) -> np.ndarray:
    dots = np.abs(v)
    return np.eye(3)[int(np.argmin(dots))]


def _canonical_rotation(cloud: np.ndarray, etype: ElementType) -> np.ndarray:
    """Rotation R with rows = canonical axes so that cloud @ R.T puts the
    fitted direction on x (LINE) or the fitted normal on z (SURFACE)."""
    if etype.kind is ElementKind.LINE:
        u, _, _ = fit_line(cloud)
        a = _least_aligned_axis(u)
        v = unit(np.cross(u, a))
        w = np.cross(u, v)
        return np.vstack([u, v, w])
    if etype.kind is ElementKind.SURFACE:
        w, _, _ = fit_plane(cloud)
        a = _least_aligned_axis(w)
        u = unit(np.cross(a, w))
        v = np.cross(w, u)
        return np.vstack([u, v, w])
    return np.eye(3)


def _nn_scale(pts: np.ndarray) -> float:
    """90th-percentile nearest-neighbor distance.

    Clouds fused from several views mix pixel densities; a mean-based scale
    under-sizes eps for the sparsest view and fragments thin masks, so the
    robust upper quantile is used instead."""
    if len(pts) < 2:
        return 1e-3
    d = _pairwise_dist(pts)
    np.fill_diagonal(d, np.inf)
    return float(np.percentile(d.min(axis=1), 90))


def _representative(members: np.ndarray, params: ExtractParams) -> np.ndarray:
    """Centroid of the largest DBSCAN cluster (ties: lowest label); if every
    member is noise, fall back to the centroid of the whole cell."""
    eps = params.dbscan_eps
    if eps is None:
        eps = params.eps_factor * _nn_scale(members)
    lab = dbscan(members, eps=max(eps, 1e-9), min_pts=params.dbscan_min_pts)
    if lab.n_clusters == 0:
        return members.mean(axis=0)
    sizes = [(int(np.sum(lab.labels == c)), c) for c in range(lab.n_clusters)]
    best = max(sizes, key=lambda sc: (sc[0], -sc[1]))[1]
    return members[lab.labels == best].mean(axis=0)


def _split_bin(members: np.ndarray):
    """Split a cell's members at the midpoint of their widest axis; returns
    (low, high) halves or None when the members cannot be separated."""
    lo = members.min(axis=0)
    hi = members.max(axis=0)
    for axis in np.argsort(-(hi - lo)):
        mid = 0.5 * (lo[axis] + hi[axis])
        below = members[:, axis] <= mid
        if below.any() and (~below).any():
            return members[below], members[~below]
    return None


def _downselect(reps: np.ndarray, target: int) -> np.ndarray:
    """Keep the `target` representatives farthest from their mutual centroid
    (maximizing spread); ties broken by lower index; original order kept."""
    center = reps.mean(axis=0)
    d = np.linalg.norm(reps - center, axis=1)
    order = sorted(range(len(reps)), key=lambda i: (-d[i], i))
    keep = sorted(order[:target])
    return reps[keep]


def _convex_hull_2d(pts2: np.ndarray) -> list:
    """Andrew's monotone chain; returns hull vertex indices in ccw cycle order
    starting from the lexicographically smallest point."""
    order = sorted(range(len(pts2)), key=lambda i: (pts2[i, 0], pts2[i, 1], i))

    def cross(o, a, b):
        return (pts2[a, 0] - pts2[o, 0]) * (pts2[b, 1] - pts2[o, 1]) - (
            pts2[a, 1] - pts2[o, 1]
        ) * (pts2[b, 0] - pts2[o, 0])

    lower: list = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper: list = []
    for i in reversed(order):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    return lower[:-1] + upper[:-1]


def _order_and_connect(reps: np.ndarray, etype: ElementType):
    """Order points and build connection edges per element type."""
    if etype.kind is ElementKind.LINE:
        u, _, _ = fit_line(reps)
        proj = reps @ u
        order = sorted(range(len(reps)), key=lambda i: (proj[i], i))
        pts = reps[order]
        edges = tuple((i, i + 1) for i in range(len(pts) - 1))
        return pts, edges
    if etype.kind is ElementKind.SURFACE:
        w, centroid, _ = fit_plane(reps)
        a = _least_aligned_axis(w)
        u = unit(np.cross(a, w))
        v = np.cross(w, u)
        flat = (reps - centroid) @ np.vstack([u, v]).T
        hull = _convex_hull_2d(flat)
        interior = [i for i in range(len(reps)) if i not in hull]
        order = hull + interior
        pts = reps[order]
        h = len(hull)
        edges = tuple((i, (i + 1) % h) for i in range(h))
        return pts, edges
    return reps, ()


def element_from_cloud(
    cloud,
    etype: ElementType,
    entity: str = "",
    part: str = "",
    constraint: str = "",
    params: ExtractParams = ExtractParams(),
) -> ConstraintElement:
    """Turn an already-fused, already-filtered cloud into an element.

    Raises DegenerateGeometry (e.g. a surface cloud that is collinear) or
    IrreducibleCloud (cannot reach the type's required point count even
    after recursive cell splitting).
    """
    cloud = as_points(cloud)
    target = etype.target_points
    if len(cloud) < target:
        raise IrreducibleCloud(f"{entity}/{part}: {len(cloud)} points cannot yield {target}")

    rot = _canonical_rotation(cloud, etype)
    local = cloud @ rot.T
    grid = voxelize(local, cells_for_type(etype))
    bins = [grid.points[idx] for idx in grid.cells.values()]

    # grow: recursively split the most populated cell until enough bins exist
    while len(bins) < target:
        order = sorted(range(len(bins)), key=lambda i: (-len(bins[i]), i))
        for i in order:
            halves = _split_bin(bins[i])
            if halves is not None:
                bins[i : i + 1] = [halves[0], halves[1]]
                break
        else:
            raise IrreducibleCloud(f"{entity}/{part}: cloud collapsed below {target} separable cells")

    reps = np.vstack([_representative(b, params) for b in bins])
    if len(reps) > target:
        reps = _downselect(reps, target)
    reps = reps @ rot  # back to the world frame
    pts, edges = _order_and_connect(reps, etype)
    element = ConstraintElement(
        eid=-1,
        etype=etype,
        points=pts,
        connections=edges,
        entity=entity,
        part=part,
        constraint=constraint,
    )
    if etype.kind is ElementKind.SURFACE:
        fit_plane(element.points)  # raises DegenerateGeometry if collinear
    return element


def extract_element(bundle: MaskBundle, depths, cams, params: ExtractParams = ExtractParams()) -> ConstraintElement:
    """Run the full pipeline for one mask bundle.

    Raises EmptyPointSet (nothing visible), DegenerateGeometry, or
    IrreducibleCloud; see element_from_cloud.
    """
    cloud = fuse_views(bundle, depths, cams)
    if len(cloud) > params.max_cloud_points:
        idx = np.unique(np.linspace(0, len(cloud) - 1, params.max_cloud_points).astype(np.int64))
        cloud = cloud[idx]
    cloud = filter_outliers(cloud, params.outlier_k, params.outlier_std_ratio)
    return element_from_cloud(
        cloud, bundle.element_type, bundle.entity, bundle.part, bundle.constraint, params
    )


def end_effector_element(fk_points, entity: str = "end_effector") -> ConstraintElement:
    """Wrap forward-kinematics points verbatim: POINT for one point, else
    POINT_SET(k). Bypasses the mask pipeline entirely."""
    pts = np.asarray(fk_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyPointSet("end_effector_element needs at least one point")
    etype = POINT if len(pts) == 1 else point_set(len(pts))
    return ConstraintElement(
        eid=-1,
        etype=etype,
        points=pts,
        connections=(),
        entity=entity,
        part="fk",
        constraint="",
    )


# ---------------------------------------------------------------------------
# annotation (debug/log output only)


def annotate(element_set: ElementSet, cams):
    """Project every element into every view.

    Returns a list (one entry per view) of stamp dicts {eid, color, pixels};
    points behind a camera are dropped, so an element fully behind a view
    simply leaves no stamp there.
    """
    out = []
    for cam in cams:
        stamps = []
        for el in element_set.elements:
            px, front = project(el.points, cam)
            vis = px[front]
            if len(vis) == 0:
                continue
            stamps.append({"eid": el.eid, "color": el.color, "pixels": np.round(vis).astype(int)})
        out.append(stamps)
    return out


def write_annotation_ppm(path, depth_image, stamps, cam: CameraModel):
    """Dump a depth render with element stamps burned in as a debug PPM."""
    depth = np.asarray(depth_image, dtype=np.float64)
    finite = depth[depth > 0]
    top = finite.max() if len(finite) else 1.0
    gray = np.where(depth > 0, (200 * (1.0 - depth / (top * 1.2))).astype(np.uint8) + 40, 0)
    img = np.stack([gray] * 3, axis=-1).astype(np.uint8)
    palette = {
        "red": (255, 64, 64),
        "green": (64, 220, 64),
        "blue": (80, 80, 255),
        "yellow": (230, 230, 40),
        "magenta": (230, 60, 230),
        "cyan": (60, 220, 220),
        "orange": (255, 160, 40),
        "purple": (160, 60, 220),
    }
    for stamp in stamps:
        rgb = palette.get(stamp["color"], (255, 255, 255))
        for u, v in stamp["pixels"]:
            if 0 <= v < cam.height and 0 <= u < cam.width:
                img[max(v - 1, 0) : v + 2, max(u - 1, 0) : u + 2] = rgb
    with open(path, "wb") as fh:
        fh.write(f"P6 {cam.width} {cam.height} 255\n".encode())
        fh.write(img.tobytes())


def element_set_fingerprint(element_set: ElementSet) -> str:
    """Stable hex digest of the full element set (bit-exact points)."""
    import hashlib

    h = hashlib.sha256()
    h.update(element_set.subgoal_id.encode())
    for el in element_set.elements:
        h.update(f"{el.eid}|{el.etype.short()}|{el.entity}|{el.part}|{el.constraint}|{el.color}".encode())
        h.update(str(el.connections).encode())
        for p in el.points:
            h.update(" ".join(float(x).hex() for x in p).encode())
    return h.hexdigest()
