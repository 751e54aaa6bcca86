"""Effective stress, square-neighbourhood averaging and surface quadrature."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.tri import Triangulation

from .fem import UnitStressField
from .geometry import TriMesh

DEFAULT_SUBGRID = 8


class EmptyRegionError(ValueError):
    """An averaging square or a highly stressed region has no measure."""


def effective_stress(sx, sy, txy):
    """Maximum in-plane principal stress."""
    sx, sy, txy = (np.asarray(a, dtype=float) for a in (sx, sy, txy))
    out = 0.5 * (sx + sy) + np.sqrt((0.5 * (sx - sy)) ** 2 + txy ** 2)
    return out if out.ndim else float(out)


def nodal_effective_stress(field: UnitStressField) -> np.ndarray:
    return effective_stress(field.sx, field.sy, field.txy)


class LinearField:
    """Piecewise-linear interpolant of nodal values with point location.

    Points outside the triangulation evaluate to NaN.
    """

    def __init__(self, mesh: TriMesh, values: np.ndarray):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        self._tri = Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)
        self._finder = self._tri.get_trifinder()

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t = np.asarray(self._finder(x, y))
        out = np.full(x.shape, np.nan)
        inside = t >= 0
        if not np.any(inside):
            return out
        tri = self.mesh.triangles[t[inside]]
        p = self.mesh.nodes[tri]
        px, py = x[inside], y[inside]
        x0, y0 = p[:, 0, 0], p[:, 0, 1]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        l1 = ((px - x0) * d2[:, 1] - (py - y0) * d2[:, 0]) / det
        l2 = (d1[:, 0] * (py - y0) - d1[:, 1] * (px - x0)) / det
        v = self.values[tri]
        out[inside] = (1 - l1 - l2) * v[:, 0] + l1 * v[:, 1] + l2 * v[:, 2]
        return out


def _subgrid_offsets(delta: float, subgrid: int) -> np.ndarray:
    c = (np.arange(subgrid) + 0.5) / subgrid - 0.5
    gx, gy = np.meshgrid(c * delta, c * delta, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _square_means(interp: LinearField, points: np.ndarray, delta: float,
                  subgrid: int, chunk: int = 4096) -> np.ndarray:
    off = _subgrid_offsets(delta, subgrid)
    out = np.empty(len(points))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        q = p[:, None, :] + off[None, :, :]
        v = interp(q[..., 0].ravel(), q[..., 1].ravel()).reshape(len(p), len(off))
        inside = np.isfinite(v)
        count = inside.sum(axis=1)
        if np.any(count == 0):
            bad = p[np.argmin(count)]
            raise EmptyRegionError(f"averaging square at {bad.tolist()} misses the domain")
        out[start:start + chunk] = np.where(inside, v, 0.0).sum(axis=1) / count
    return out


def averaged_effective_stress(field: UnitStressField, delta: float, x,
                              subgrid: int = DEFAULT_SUBGRID) -> float:
    """Mean effective stress over the square of side ``delta`` centred at ``x``.

    The square is intersected with the triangulated domain and sampled at the
    centres of a ``subgrid`` x ``subgrid`` lattice of cells.  ``delta = 0``
    returns the linear interpolant of the nodal effective stress.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    interp = LinearField(field.mesh, nodal_effective_stress(field))
    x = np.asarray(x, dtype=float).reshape(1, 2)
    if delta == 0:
        v = interp(x[:, 0], x[:, 1])[0]
        if not np.isfinite(v):
            raise EmptyRegionError(f"point {x[0].tolist()} lies outside the domain")
        return float(v)
    return float(_square_means(interp, x, delta, subgrid)[0])


@dataclass(frozen=True)
class AveragedStressProfile:
    """Averaged unit effective stress at every quadrature site (mesh node)."""

    values: np.ndarray
    delta: float
    subgrid: int = DEFAULT_SUBGRID


def averaged_profile(field: UnitStressField, delta: float,
                     subgrid: int = DEFAULT_SUBGRID) -> AveragedStressProfile:
    """Averaged effective stress at all mesh nodes."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    seff = nodal_effective_stress(field)
    if delta == 0:
        return AveragedStressProfile(seff.copy(), 0.0, subgrid)
    interp = LinearField(field.mesh, seff)
    vals = _square_means(interp, field.mesh.nodes, float(delta), subgrid)
    return AveragedStressProfile(vals, float(delta), subgrid)


@dataclass(frozen=True)
class SurfaceQuadrature:
    """Vertex weights for integrals over the specimen surface.

    ``lateral`` carries thickness times the trapezoid weights of the boundary
    polyline, ``face`` twice the one-third-area vertex weights of the
    triangulation.  Sites are mesh node indices.
    """

    sites: np.ndarray
    lateral: np.ndarray
    face: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return self.lateral + self.face

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def build_surface_quadrature(mesh: TriMesh, thickness: float) -> SurfaceQuadrature:
    n = mesh.n_nodes
    lengths = mesh.edge_lengths()
    lateral = np.zeros(n)
    np.add.at(lateral, mesh.boundary_edges[:, 0], 0.5 * lengths)
    np.add.at(lateral, mesh.boundary_edges[:, 1], 0.5 * lengths)
    face = np.zeros(n)
    area = mesh.triangle_areas()
    for k in range(3):
        np.add.at(face, mesh.triangles[:, k], area / 3.0)
    return SurfaceQuadrature(np.arange(n), thickness * lateral, 2.0 * face)


def highly_stressed_volume(pointwise, quad: SurfaceQuadrature, beta: float) -> float:
    """Surface measure of the sites whose unit effective stress exceeds ``beta``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    values = pointwise.values if isinstance(pointwise, AveragedStressProfile) else pointwise
    area = float(np.dot(quad.weights, np.asarray(values) > beta))
    if area <= 0:
        raise EmptyRegionError("empty highly stressed volume: beta exceeds the peak unit stress")
    return area


def export_profile_csv(path: str | Path, mesh: TriMesh, quad: SurfaceQuadrature,
                       pointwise: np.ndarray, averaged: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x_in", "y_in", "weight_in2", "sigma_eff_unit", "sigma_eff_delta_unit"])
        for row in zip(mesh.nodes[quad.sites, 0], mesh.nodes[quad.sites, 1], quad.weights,
                       pointwise, averaged):
            w.writerow([repr(float(v)) for v in row])
    return path
