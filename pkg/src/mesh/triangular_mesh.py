import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from src.errors import InvalidGeometryError, InvalidCoefficientError

logger = logging.getLogger(__name__)

GEOMETRIC_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BoundarySegment:
    """A closed straight piece of the rectangle boundary carrying one label."""

    label: str
    start: tuple[float, float]
    end: tuple[float, float]
    dirichlet: bool = True

    def contains(self, points: np.ndarray, tol: float) -> np.ndarray:
        a = np.asarray(self.start, dtype=float)
        b = np.asarray(self.end, dtype=float)
        ab = b - a
        length = np.linalg.norm(ab)
        rel = points - a
        t = rel @ ab / length**2
        distance = np.abs(rel[:, 0] * ab[1] - rel[:, 1] * ab[0]) / length
        return (distance <= tol) & (t >= -tol / length) & (t <= 1.0 + tol / length)


@dataclass(frozen=True)
class TaggingScheme:
    """Boundary and subdomain labeling for a rectangle.

    Subdomains are vertical strips separated by ``interfaces`` (x coordinates);
    ``subdomain_labels`` names the strips from left to right.
    """

    segments: tuple[BoundarySegment, ...]
    interfaces: tuple[float, ...] = ()
    subdomain_labels: tuple[str, ...] = ("omega",)

    def __post_init__(self):
        if len(self.subdomain_labels) != len(self.interfaces) + 1:
            raise InvalidGeometryError("Need exactly one subdomain label per strip between interfaces")
        labels = [segment.label for segment in self.segments]
        if len(set(labels)) != len(labels):
            raise InvalidGeometryError(f"Boundary labels must be unique, got {labels}")

    @property
    def dirichlet_labels(self) -> tuple[str, ...]:
        return tuple(segment.label for segment in self.segments if segment.dirichlet)


def sides_scheme(extents: Sequence[float], dirichlet: bool = True) -> TaggingScheme:
    """Four-sided scheme labelling the edges bottom/right/top/left."""
    x0, x1, y0, y1 = extents
    return TaggingScheme(segments=(
        BoundarySegment("bottom", (x0, y0), (x1, y0), dirichlet),
        BoundarySegment("right", (x1, y0), (x1, y1), dirichlet),
        BoundarySegment("top", (x0, y1), (x1, y1), dirichlet),
        BoundarySegment("left", (x0, y0), (x0, y1), dirichlet),
    ))


@dataclass(frozen=True)
class RegionMask:
    """Set of triangle indices identifying a region of the mesh."""

    triangles: np.ndarray
    n_total: int

    def __post_init__(self):
        indices = np.unique(np.asarray(self.triangles, dtype=np.int64))
        if indices.size and (indices[0] < 0 or indices[-1] >= self.n_total):
            raise InvalidGeometryError("Region mask references triangles outside the mesh")
        object.__setattr__(self, "triangles", indices)

    def __len__(self) -> int:
        return int(self.triangles.size)

    @property
    def indicator(self) -> np.ndarray:
        flags = np.zeros(self.n_total, dtype=bool)
        flags[self.triangles] = True
        return flags

    def union(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(np.concatenate([self.triangles, other.triangles]), self.n_total)

    def intersection(self, other: "RegionMask") -> "RegionMask":
        return RegionMask(np.intersect1d(self.triangles, other.triangles), self.n_total)


@dataclass(frozen=True)
class TriangularMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    subdomain_labels: np.ndarray
    scheme: TaggingScheme
    h_K: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)

    def __post_init__(self):
        corners = self.vertices[self.triangles]
        e0 = corners[:, 1] - corners[:, 0]
        e1 = corners[:, 2] - corners[:, 0]
        signed = 0.5 * (e0[:, 0] * e1[:, 1] - e0[:, 1] * e1[:, 0])
        if np.any(signed <= 0.0):
            raise InvalidGeometryError("Triangles must have positive signed area")
        lengths = np.stack([
            np.linalg.norm(corners[:, 1] - corners[:, 0], axis=1),
            np.linalg.norm(corners[:, 2] - corners[:, 1], axis=1),
            np.linalg.norm(corners[:, 0] - corners[:, 2], axis=1),
        ], axis=1)
        object.__setattr__(self, "h_K", lengths.max(axis=1))
        object.__setattr__(self, "areas", signed)

    @property
    def h(self) -> float:
        return float(self.h_K.max())

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def region(self, *labels: str) -> RegionMask:
        """Triangles whose subdomain label is one of ``labels``."""
        unknown = set(labels) - set(self.scheme.subdomain_labels)
        if unknown:
            raise InvalidGeometryError(f"Unknown subdomain labels {sorted(unknown)}")
        return RegionMask(np.flatnonzero(np.isin(self.subdomain_labels, labels)), self.n_triangles)

    def region_where(self, predicate: Callable[[np.ndarray], np.ndarray]) -> RegionMask:
        """Triangles whose barycenter satisfies ``predicate`` (array of points -> bool array)."""
        return RegionMask(np.flatnonzero(predicate(self.barycenters)), self.n_triangles)

    def whole(self) -> RegionMask:
        return RegionMask(np.arange(self.n_triangles), self.n_triangles)

    def boundary_vertices(self, labels: Sequence[str]) -> np.ndarray:
        edges = self.boundary_edges[np.isin(self.boundary_labels, list(labels))]
        return np.unique(edges.ravel())


def _grid_aligned(n: int, lo: float, hi: float, coordinates: Sequence[float]) -> bool:
    spacing = (hi - lo) / n
    for value in coordinates:
        if value < lo - GEOMETRIC_TOLERANCE or value > hi + GEOMETRIC_TOLERANCE:
            continue
        steps = (value - lo) / spacing
        if abs(steps - round(steps)) > 1e-9:
            return False
    return True


def _breakpoints(scheme: TaggingScheme) -> tuple[list[float], list[float]]:
    xs = list(scheme.interfaces)
    ys = []
    for segment in scheme.segments:
        xs.extend([segment.start[0], segment.end[0]])
        ys.extend([segment.start[1], segment.end[1]])
    return xs, ys


def build_rect_mesh(extents: Sequence[float], nx: int, ny: int,
                    scheme: TaggingScheme | None = None) -> TriangularMesh:
    """
    Triangulate the rectangle (x0, x1) x (y0, y1) with nx * ny cells, each split along
    its lower-left to upper-right diagonal.

    Args:
        extents: (x0, x1, y0, y1).
        nx: Cell count along x.
        ny: Cell count along y.
        scheme: Boundary and subdomain labeling; defaults to four labelled sides.

    Returns:
        TriangularMesh: The tagged mesh with 2 * nx * ny triangles.
    """
    x0, x1, y0, y1 = (float(value) for value in extents)
    if not (x1 - x0 > 0.0 and y1 - y0 > 0.0) or not all(map(math.isfinite, (x0, x1, y0, y1))):
        raise InvalidGeometryError(f"Degenerate rectangle extents {tuple(extents)}")
    if nx < 1 or ny < 1:
        raise InvalidGeometryError(f"Cell counts must be positive, got nx={nx}, ny={ny}")
    scheme = scheme or sides_scheme((x0, x1, y0, y1))

    xs, ys = _breakpoints(scheme)
    if not _grid_aligned(nx, x0, x1, xs):
        raise InvalidGeometryError(f"nx={nx} does not put interfaces/segment ends {sorted(set(xs))} on grid lines")
    if not _grid_aligned(ny, y0, y1, ys):
        raise InvalidGeometryError(f"ny={ny} does not put segment ends {sorted(set(ys))} on grid lines")

    gx, gy = np.meshgrid(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    bottom = np.arange(nx)
    right = np.arange(ny) * (nx + 1) + nx
    top = ny * (nx + 1) + np.arange(nx)
    left = np.arange(ny) * (nx + 1)
    boundary_edges = np.concatenate([
        np.column_stack([bottom, bottom + 1]),
        np.column_stack([right, right + nx + 1]),
        np.column_stack([top + 1, top]),
        np.column_stack([left + nx + 1, left]),
    ])

    tol = GEOMETRIC_TOLERANCE * max(x1 - x0, y1 - y0, 1.0)
    midpoints = vertices[boundary_edges].mean(axis=1)
    boundary_labels = np.full(len(boundary_edges), "", dtype=object)
    for segment in scheme.segments:
        hits = segment.contains(midpoints, tol) & (boundary_labels == "")
        boundary_labels[hits] = segment.label
    if np.any(boundary_labels == ""):
        missing = midpoints[boundary_labels == ""][0]
        raise InvalidGeometryError(f"Boundary edge with midpoint {tuple(missing)} carries no tag")
    boundary_labels = boundary_labels.astype(str)

    barycenters = vertices[triangles].mean(axis=1)
    strip = np.searchsorted(np.asarray(scheme.interfaces, dtype=float), barycenters[:, 0])
    subdomain_labels = np.asarray(scheme.subdomain_labels)[strip]

    mesh = TriangularMesh(vertices, triangles, boundary_edges, boundary_labels, subdomain_labels, scheme)
    logger.info(f"Built {nx}x{ny} mesh on {(x0, x1, y0, y1)}: "
                f"{mesh.n_vertices} vertices, {mesh.n_triangles} triangles, h={mesh.h:.4g}")
    return mesh


def mesh_for_target_h(extents: Sequence[float], h: float, scheme: TaggingScheme | None = None,
                      max_refinement: int = 256) -> TriangularMesh:
    """Smallest aligned structured mesh whose longest triangle diameter is at most ``h``."""
    if h <= 0.0:
        raise InvalidGeometryError(f"Target mesh size must be positive, got {h}")
    x0, x1, y0, y1 = (float(value) for value in extents)
    scheme = scheme or sides_scheme((x0, x1, y0, y1))
    xs, ys = _breakpoints(scheme)

    nx = max(1, math.ceil((x1 - x0) * math.sqrt(2.0) / h))
    ny = max(1, math.ceil((y1 - y0) * math.sqrt(2.0) / h))
    for _ in range(max_refinement):
        if _grid_aligned(nx, x0, x1, xs):
            break
        nx += 1
    for _ in range(max_refinement):
        if _grid_aligned(ny, y0, y1, ys):
            break
        ny += 1
    return build_rect_mesh((x0, x1, y0, y1), nx, ny, scheme)


@dataclass(frozen=True)
class PecletField:
    values: np.ndarray

    @property
    def advection_dominated(self) -> bool:
        return bool(np.all(self.values > 1.0))

    def summary(self) -> dict:
        return {
            "min": float(self.values.min()),
            "median": float(np.median(self.values)),
            "max": float(self.values.max()),
            "advection_dominated": self.advection_dominated,
        }


def _evaluate(field_or_value, points: np.ndarray, width: int | None) -> np.ndarray:
    if callable(field_or_value):
        values = np.asarray(field_or_value(points), dtype=float)
    else:
        values = np.asarray(field_or_value, dtype=float)
    if width is None:
        return np.broadcast_to(values, (points.shape[0],))
    return np.broadcast_to(values, (points.shape[0], width))


def peclet_field(mesh: TriangularMesh, gamma, eta) -> PecletField:
    """
    Local Péclet numbers Pe_K = |eta| h_K / (2 gamma) at the triangle barycenters.

    Args:
        mesh: The triangulation.
        gamma: Diffusivity, a scalar or a callable mapping (k, 2) points to (k,) values.
        eta: Advection field, a 2-vector or a callable mapping (k, 2) points to (k, 2) values.
    """
    points = mesh.barycenters
    gamma_values = _evaluate(gamma, points, None)
    if np.any(~np.isfinite(gamma_values)) or np.any(gamma_values <= 0.0):
        raise InvalidCoefficientError("Diffusivity must be positive on every triangle")
    speed = np.linalg.norm(_evaluate(eta, points, 2), axis=1)
    return PecletField(speed * mesh.h_K / (2.0 * gamma_values))


def dump_mesh(mesh: TriangularMesh, path) -> None:
    """Write vertices, triangles and boundary tags, one record per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for index, (x, y) in enumerate(mesh.vertices):
            handle.write(f"vertex {index} {x!r} {y!r}\n")
        for index, (tri, label) in enumerate(zip(mesh.triangles, mesh.subdomain_labels)):
            handle.write(f"triangle {index} {tri[0]} {tri[1]} {tri[2]} {label}\n")
        for (a, b), label in zip(mesh.boundary_edges, mesh.boundary_labels):
            handle.write(f"edge {a} {b} {label}\n")
    logger.debug(f"Mesh dumped to {path}")
