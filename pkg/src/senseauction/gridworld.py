"""Meshed study area: demand densities, routing, order prospect, opportunity cost.

The world is a rows x cols mesh of square cells. Cell ids run row-major,
id = row * cols + col, with cell (0, 0) in the lower-left corner. Points are
continuous (x, y) coordinates in km; x grows with columns, y with rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GeometryError

_EPS = 1e-9


@dataclass(frozen=True)
class GridWorld:
    rows: int
    cols: int
    cell_size: float
    densities: np.ndarray        # normalized per-cell trip-demand mass
    centroids: np.ndarray        # (n_cells, 2) centroid coordinates in km
    max_centroid_dist: float     # largest centroid-to-centroid distance

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def extent(self) -> tuple[float, float]:
        return self.cols * self.cell_size, self.rows * self.cell_size

    def contains(self, point: tuple[float, float]) -> bool:
        x, y = point
        ex, ey = self.extent
        return -_EPS <= x <= ex + _EPS and -_EPS <= y <= ey + _EPS

    def cell_of(self, point: tuple[float, float]) -> int:
        """Primary cell of a point (boundary points snap toward the origin-side cell)."""
        if not self.contains(point):
            raise GeometryError(f"point {point} outside grid extent {self.extent}")
        col = min(self.cols - 1, max(0, int(math.floor(point[0] / self.cell_size))))
        row = min(self.rows - 1, max(0, int(math.floor(point[1] / self.cell_size))))
        return row * self.cols + col

    def cells_touching(self, point: tuple[float, float]) -> list[int]:
        """All cells whose closed boundary contains the point (1, 2, or 4 cells)."""
        if not self.contains(point):
            raise GeometryError(f"point {point} outside grid extent {self.extent}")
        cols = _axis_indices(point[0], self.cols, self.cell_size)
        rows = _axis_indices(point[1], self.rows, self.cell_size)
        return sorted(r * self.cols + c for r in rows for c in cols)


def _axis_indices(v: float, n: int, cell_size: float) -> list[int]:
    u = v / cell_size
    k = round(u)
    if abs(u - k) < _EPS and 0 < k < n:
        return [k - 1, k]
    return [min(n - 1, max(0, int(math.floor(u))))]


@dataclass(frozen=True)
class CellRoute:
    """Ordered, distinct cells traversed by a trip, plus its length in km."""
    cells: tuple[int, ...]
    length: float


@dataclass(frozen=True)
class ProspectModel:
    """Order-prospect field and the piecewise-linear opportunity-cost rule.

    Weights decay linearly with centroid distance, w = 1 - d/M; the cost is
    xi * (p_star - p) below the threshold p_star and zero above it.
    """
    xi: float
    p_star_frac: float
    prospects: np.ndarray    # prospect per cell
    p_min: float
    p_max: float

    @property
    def p_star(self) -> float:
        return self.p_star_frac * self.p_max


def build_grid(rows: int, cols: int, cell_size: float, densities) -> GridWorld:
    if rows < 1 or cols < 1:
        raise ConfigurationError("grid must have at least one row and column")
    if cell_size <= 0:
        raise ConfigurationError("cell_size must be positive")
    dens = np.asarray(densities, dtype=float).ravel()
    if dens.size != rows * cols:
        raise ConfigurationError(
            f"expected {rows * cols} densities, got {dens.size}")
    if not np.all(np.isfinite(dens)) or np.any(dens < 0):
        raise ConfigurationError("densities must be finite and non-negative")
    total = dens.sum()
    if total <= 0:
        raise ConfigurationError("total demand density must be positive")
    dens = dens / total

    xs = (np.arange(cols) + 0.5) * cell_size
    ys = (np.arange(rows) + 0.5) * cell_size
    gx, gy = np.meshgrid(xs, ys)
    centroids = np.column_stack([gx.ravel(), gy.ravel()])
    if rows * cols == 1:
        m = cell_size  # degenerate world: avoid division by zero in weights
    else:
        diffs = centroids[:, None, :] - centroids[None, :, :]
        m = float(np.sqrt((diffs ** 2).sum(axis=2)).max())
    return GridWorld(rows=rows, cols=cols, cell_size=float(cell_size),
                     densities=dens, centroids=centroids, max_centroid_dist=m)


def route(world: GridWorld, origin: tuple[float, float],
          dest: tuple[float, float]) -> CellRoute:
    """Supercover traversal of the straight segment from origin to dest.

    Every cell the segment touches is included, in order of first touch;
    corner crossings pull in all cells meeting at the corner.
    """
    for p in (origin, dest):
        if not world.contains(p):
            raise GeometryError(f"point {p} outside grid extent {world.extent}")
    x0, y0 = origin
    x1, y1 = dest
    h = math.hypot(x1 - x0, y1 - y0)
    if h < _EPS:
        return CellRoute(cells=(world.cell_of(origin),), length=0.0)

    ts = {0.0, 1.0}
    cs = world.cell_size
    for k in range(1, world.cols):
        t = _crossing_param(x0, x1, k * cs)
        if t is not None:
            ts.add(t)
    for k in range(1, world.rows):
        t = _crossing_param(y0, y1, k * cs)
        if t is not None:
            ts.add(t)
    ts = sorted(ts)

    at = lambda t: (x0 + t * (x1 - x0), y0 + t * (y1 - y0))
    ordered: list[int] = []
    seen: set[int] = set()

    def _add(cells):
        for c in cells:
            if c not in seen:
                seen.add(c)
                ordered.append(c)

    for i in range(len(ts) - 1):
        mid = 0.5 * (ts[i] + ts[i + 1])
        _add(world.cells_touching(at(mid)))
        if i + 1 < len(ts) - 1:  # interior crossing: corner cells count too
            _add(world.cells_touching(at(ts[i + 1])))
    return CellRoute(cells=tuple(ordered), length=h)


def _crossing_param(v0: float, v1: float, line: float) -> float | None:
    if abs(v1 - v0) < _EPS:
        return None
    t = (line - v0) / (v1 - v0)
    return t if _EPS < t < 1.0 - _EPS else None


def order_prospect(world: GridWorld, dest_cell: int) -> float:
    """Weighted demand mass around a destination cell, in [0, 1]."""
    if not 0 <= dest_cell < world.n_cells:
        raise ConfigurationError(f"invalid cell id {dest_cell}")
    d = np.linalg.norm(world.centroids - world.centroids[dest_cell], axis=1)
    w = 1.0 - d / world.max_centroid_dist
    return float(np.dot(w, world.densities))


def build_prospect_model(world: GridWorld, xi: float,
                         p_star_frac: float) -> ProspectModel:
    if xi < 0:
        raise ConfigurationError("xi must be non-negative")
    prospects = np.array([order_prospect(world, g) for g in range(world.n_cells)])
    return ProspectModel(xi=float(xi), p_star_frac=float(p_star_frac),
                         prospects=prospects,
                         p_min=float(prospects.min()), p_max=float(prospects.max()))


def opportunity_cost(model: ProspectModel, p: float) -> float:
    """Expected cost of cruising for the next order after a drop-off at prospect p."""
    if p >= model.p_star:
        return 0.0
    return model.xi * (model.p_star - p)


def load_world(source) -> tuple[GridWorld, ProspectModel]:
    """Build a world and prospect model from a JSON document or parsed dict.

    Schema: {rows, cols, cell_size_km, densities: [...], xi, p_star_frac}.
    Densities may be unnormalized.
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = source
    try:
        world = build_grid(int(doc["rows"]), int(doc["cols"]),
                           float(doc.get("cell_size_km", 1.0)), doc["densities"])
        model = build_prospect_model(world, float(doc.get("xi", 50.0)),
                                     float(doc.get("p_star_frac", 0.9)))
    except KeyError as exc:
        raise ConfigurationError(f"world document missing field {exc}") from exc
    return world, model
