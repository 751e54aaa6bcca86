"""Specimen geometries and quarter-domain triangulations.

The quarter domain sits in the first quadrant with the net section on the
y axis (x = 0) and the loaded end at x = half_length.  Boundary segments are
tagged

    LOADED_END  x = half_length, unit traction sigma_x = 1
    FREE_EDGE   free straight edge, y = w_max / 2
    NOTCH       notch (or hole) arc plus any straight notch flank, free
    SYMMETRY_Y  symmetry line y = 0
    SYMMETRY_X  symmetry line x = 0

All lengths are inches.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import triangle

LOADED_END, FREE_EDGE, NOTCH, SYMMETRY_Y, SYMMETRY_X = 1, 2, 3, 4, 5
TAG_NAMES = {LOADED_END: "loaded_end", FREE_EDGE: "free_edge", NOTCH: "notch",
             SYMMETRY_Y: "symmetry_y", SYMMETRY_X: "symmetry_x"}

KINDS = ("unnotched_dogbone", "edge_notched", "center_hole")

_MIN_ANGLE = 30.0


class GeometryError(ValueError):
    """Raised when specimen dimensions are inconsistent."""


@dataclass(frozen=True)
class SpecimenGeometry:
    kind: str
    w_max: float
    w_min: float
    notch_radius: float
    half_length: float
    thickness: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"kind must be one of {KINDS}, got {self.kind!r}")
        for name in ("w_max", "w_min", "notch_radius", "half_length", "thickness"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise GeometryError(f"{name} must be positive, got {v}")
        if self.w_min > self.w_max:
            raise GeometryError(f"w_min ({self.w_min}) must not exceed w_max ({self.w_max})")
        if self.half_length <= self.w_max / 2:
            raise GeometryError(
                f"half_length ({self.half_length}) must exceed w_max/2 ({self.w_max / 2})")
        if self.kind == "center_hole":
            if not math.isclose(self.w_max - self.w_min, 2 * self.notch_radius, rel_tol=1e-9):
                raise GeometryError("center_hole requires w_max - w_min = 2 * notch_radius")
        elif self.has_notch and self.notch_extent >= self.half_length:
            raise GeometryError(
                f"notch extends to x={self.notch_extent:.4g}, beyond half_length {self.half_length}")

    @property
    def notch_depth(self) -> float:
        return 0.5 * (self.w_max - self.w_min)

    @property
    def width_ratio(self) -> float:
        """W_min / W_max, the gross-to-net traction factor."""
        return self.w_min / self.w_max

    @property
    def has_notch(self) -> bool:
        return self.kind == "center_hole" or self.notch_depth > 0

    @property
    def notch_extent(self) -> float:
        """x coordinate where the notch meets the straight edge FREE_EDGE."""
        r, d = self.notch_radius, self.notch_depth
        if self.kind == "center_hole":
            return r
        if d <= r:
            return math.sqrt(max(r * r - (r - d) ** 2, 0.0))
        return r


PRESETS = {
    # Widths and lengths approximate the NACA sketches; only the radii and the
    # 0.09 in sheet thickness are documented values.
    "specimen1": dict(kind="unnotched_dogbone", w_max=2.25, w_min=1.5, notch_radius=12.0,
                      half_length=4.5, thickness=0.09),
    "specimen2": dict(kind="edge_notched", w_max=4.5, w_min=3.0, notch_radius=0.76,
                      half_length=6.0, thickness=0.09),
    "specimen3": dict(kind="edge_notched", w_max=2.25, w_min=1.5, notch_radius=0.03125,
                      half_length=4.5, thickness=0.09),
    "strip": dict(kind="unnotched_dogbone", w_max=1.0, w_min=1.0, notch_radius=1.0,
                  half_length=2.0, thickness=0.09),
    "plate_hole": dict(kind="center_hole", w_max=20.0, w_min=18.0, notch_radius=1.0,
                       half_length=20.0, thickness=0.09),
}

# Coarse (level 0) mesh controls per preset: notch-side edge length h,
# far-field cap and size growth rate away from the notch.
MESH_DEFAULTS = {
    "specimen1": dict(h=1.8, h_far=1.8, grading=0.25),
    "specimen2": dict(h=0.76, h_far=2.5, grading=0.5),
    "specimen3": dict(h=0.03125, h_far=0.6, grading=0.25),
    "strip": dict(h=0.5, h_far=0.5, grading=0.25),
    "plate_hole": dict(h=0.8, h_far=5.0, grading=0.25),
}

_CONFIG_KEYS = {
    "kind": "kind",
    "w_max_in": "w_max",
    "w_min_in": "w_min",
    "notch_radius_in": "notch_radius",
    "half_length_in": "half_length",
    "thickness_in": "thickness",
}


def build_geometry(config: dict) -> SpecimenGeometry:
    """Build a validated geometry from a key/value config record.

    Keys follow the JSON geometry file (``kind``, ``w_max_in``, ``w_min_in``,
    ``notch_radius_in``, ``half_length_in``, ``thickness_in``).  A ``preset``
    key selects one of :data:`PRESETS` as the starting point.  Otherwise
    missing dimensions are filled from the preset with the same kind and notch
    radius, if there is one.
    """
    values = {}
    for key, attr in _CONFIG_KEYS.items():
        if key in config:
            values[attr] = config[key]
        elif attr in config:
            values[attr] = config[attr]
    base = None
    if "preset" in config:
        if config["preset"] not in PRESETS:
            raise GeometryError(f"unknown preset {config['preset']!r}")
        base = PRESETS[config["preset"]]
    elif "kind" in values and "notch_radius" in values:
        for preset in PRESETS.values():
            if (preset["kind"] == values["kind"]
                    and math.isclose(preset["notch_radius"], float(values["notch_radius"]))):
                base = preset
                break
    merged = dict(base or {})
    merged.update(values)
    missing = [a for a in _CONFIG_KEYS.values() if a not in merged]
    if missing:
        raise GeometryError(f"geometry config is missing {', '.join(missing)}")
    kind = merged.pop("kind")
    return SpecimenGeometry(kind=kind, **{k: float(v) for k, v in merged.items()})


def preset_geometry(name: str) -> SpecimenGeometry:
    return build_geometry({"preset": name})


@dataclass(frozen=True)
class Arc:
    cx: float
    cy: float
    radius: float

    def project(self, p: np.ndarray) -> np.ndarray:
        c = np.array([self.cx, self.cy])
        v = p - c
        return c + self.radius * v / np.linalg.norm(v, axis=-1, keepdims=True)

    def distance(self, p: np.ndarray) -> np.ndarray:
        c = np.array([self.cx, self.cy])
        return np.abs(np.linalg.norm(p - c, axis=-1) - self.radius)


@dataclass(frozen=True)
class TriMesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    refinement_level: int = 0
    arcs: tuple = field(default=())

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edges_with_tag(self, tag: int) -> np.ndarray:
        return self.boundary_edges[self.edge_tags == tag]

    def nodes_with_tag(self, tag: int) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def validate(self) -> None:
        """Check the TriMesh invariants, raising ``ValueError`` on failure."""
        areas = self.triangle_areas()
        if np.any(areas <= 0):
            raise ValueError(f"{np.sum(areas <= 0)} triangles with non-positive area")
        if not set(np.unique(self.edge_tags)) <= set(TAG_NAMES):
            raise ValueError("unknown boundary edge tag")
        once = _edges_on_one_triangle(self.triangles)
        tagged = {tuple(sorted(e)) for e in self.boundary_edges.tolist()}
        if len(tagged) != len(self.boundary_edges):
            raise ValueError("boundary edge listed more than once")
        if tagged != once:
            raise ValueError("tagged edges do not match the triangulation boundary")
        degree = np.bincount(self.boundary_edges.ravel(), minlength=self.n_nodes)
        if np.any(degree[degree > 0] != 2):
            raise ValueError("boundary edges do not form closed chains")


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edges_on_one_triangle(triangles: np.ndarray) -> set:
    e = np.sort(triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return {tuple(x) for x in uniq[counts == 1].tolist()}


# ---------------------------------------------------------------- boundary


def _boundary_curves(geom: SpecimenGeometry):
    """Return the closed CCW boundary as a list of (tag, callable(t)->xy, is_arc)."""
    L, hw, hn, r = geom.half_length, geom.w_max / 2, geom.w_min / 2, geom.notch_radius

    def line(a, b):
        a, b = np.asarray(a, float), np.asarray(b, float)
        return lambda t: a + np.outer(t, b - a)

    def arc(c, t0, t1):
        c = np.asarray(c, float)
        return lambda t: c + r * np.column_stack([np.cos(t0 + (t1 - t0) * t),
                                                  np.sin(t0 + (t1 - t0) * t)])

    curves = []
    if geom.kind == "center_hole":
        curves.append((SYMMETRY_Y, line((r, 0), (L, 0)), False))
        curves.append((LOADED_END, line((L, 0), (L, hw)), False))
        curves.append((FREE_EDGE, line((L, hw), (0, hw)), False))
        curves.append((SYMMETRY_X, line((0, hw), (0, r)), False))
        curves.append((NOTCH, arc((0, 0), math.pi / 2, 0.0), True))
        return curves, Arc(0.0, 0.0, r)

    d = geom.notch_depth
    curves.append((SYMMETRY_Y, line((0, 0), (L, 0)), False))
    curves.append((LOADED_END, line((L, 0), (L, hw)), False))
    if d == 0:
        curves.append((FREE_EDGE, line((L, hw), (0, hw)), False))
        curves.append((SYMMETRY_X, line((0, hw), (0, 0)), False))
        return curves, None
    c = (0.0, hn + r)
    xe = geom.notch_extent
    curves.append((FREE_EDGE, line((L, hw), (xe, hw)), False))
    if d <= r:
        t_end = math.asin((d - r) / r)
    else:
        curves.append((NOTCH, line((r, hw), (r, hn + r)), False))
        t_end = 0.0
    curves.append((NOTCH, arc(c, t_end, -math.pi / 2), True))
    curves.append((SYMMETRY_X, line((0, hn), (0, 0)), False))
    return curves, Arc(c[0], c[1], r)


def _size_field(geom: SpecimenGeometry, arc: Arc | None, h: float, h_far: float,
                grading: float):
    if arc is None:
        return lambda p: np.full(len(p), h)
    fine = h / 4

    def size(p):
        return np.minimum(h_far, fine + grading * arc.distance(np.atleast_2d(p)))

    return size


def _discretize(curve, size, n_probe: int = 400) -> np.ndarray:
    """Points along a curve spaced according to the size field (endpoints included)."""
    t = np.linspace(0.0, 1.0, n_probe + 1)
    pts = curve(t)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = size(0.5 * (pts[1:] + pts[:-1]))
    cum = np.concatenate([[0.0], np.cumsum(seg / s)])
    n = max(1, int(math.ceil(cum[-1] - 1e-9)))
    targets = np.linspace(0.0, cum[-1], n + 1)
    return curve(np.interp(targets, cum, t))


def triangulate(geom: SpecimenGeometry, h: float, h_far: float | None = None,
                grading: float = 0.25) -> TriMesh:
    """Graded conforming triangulation of the quarter domain.

    Element edges on the notch arc are about ``h/4``; the size grows linearly
    with distance from the arc (slope ``grading``) up to ``h_far`` (default
    ``h``).  Domains without a notch are meshed uniformly at ``h``.
    """
    if not h > 0:
        raise GeometryError(f"target edge length must be positive, got {h}")
    if geom.has_notch and h > geom.notch_radius:
        raise GeometryError(
            f"h={h} exceeds the notch radius {geom.notch_radius}; the notch cannot be resolved")
    h_far = h if h_far is None else max(h_far, h)
    curves, arc = _boundary_curves(geom)
    size = _size_field(geom, arc, h, h_far, grading)

    verts, segs, marks = [], [], []
    for tag, curve, _ in curves:
        pts = _discretize(curve, size)
        start = len(verts)
        verts.extend(pts[:-1].tolist())
        for i in range(len(pts) - 1):
            segs.append((start + i, start + i + 1))
            marks.append(tag)
    segs[-1] = (segs[-1][0], 0)
    pslg = dict(vertices=np.array(verts), segments=np.array(segs),
                segment_markers=np.array(marks)[:, None])
    out = triangle.triangulate(pslg, f"pq{_MIN_ANGLE}YQ")
    for _ in range(6):
        tri_nodes = out["vertices"][out["triangles"]]
        target = math.sqrt(3) / 4 * size(tri_nodes.mean(axis=1)) ** 2
        area = signed_areas(out["vertices"], out["triangles"])
        if np.all(area <= 1.05 * target):
            break
        out = triangle.triangulate(
            dict(vertices=out["vertices"], triangles=out["triangles"],
                 segments=out["segments"], segment_markers=out["segment_markers"],
                 triangle_max_area=target), f"rpq{_MIN_ANGLE}YaQ")

    nodes = np.asarray(out["vertices"], dtype=float)
    tris = np.asarray(out["triangles"], dtype=np.int64)
    seg_tag = {tuple(sorted(s)): int(m) for s, m in
               zip(out["segments"].tolist(), np.ravel(out["segment_markers"]).tolist())}
    edges = _ordered_boundary(tris)
    tags = np.array([seg_tag[tuple(sorted(e))] for e in edges.tolist()], dtype=np.int64)
    mesh = TriMesh(nodes, tris, edges, tags, 0, () if arc is None else (arc,))
    mesh.validate()
    return mesh


def _ordered_boundary(triangles: np.ndarray) -> np.ndarray:
    """Boundary edges oriented as in their triangle (CCW domain traversal)."""
    e = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    return e[counts[inv] == 1]


def mesh_geometry(geom: SpecimenGeometry, level: int = 0, h: float | None = None,
                  h_far: float | None = None) -> TriMesh:
    """Coarse triangulation refined ``level`` times.

    ``h``/``h_far`` default to the preset controls when the geometry matches a
    preset, otherwise to a quarter of the net half-width.
    """
    ctl = _default_controls(geom)
    if h is None:
        h, h_far = ctl["h"], ctl["h_far"] if h_far is None else h_far
    mesh = triangulate(geom, h, h_far, ctl["grading"])
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def _default_controls(geom: SpecimenGeometry) -> dict:
    for name, preset in PRESETS.items():
        if SpecimenGeometry(**preset) == geom:
            return MESH_DEFAULTS[name]
    h = min(geom.w_min / 4, geom.notch_radius if geom.has_notch else np.inf)
    return dict(h=h, h_far=max(h, geom.w_min / 4), grading=0.25)


def refine(mesh: TriMesh) -> TriMesh:
    """Uniform 1-to-4 split through edge midpoints.

    Midpoints of boundary edges lying on a notch arc are projected back onto
    the arc.
    """
    tris = mesh.triangles
    n = mesh.n_nodes
    e = tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(e, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel().reshape(-1, 3)
    mids = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])

    bkey = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(k): i for i, k in enumerate(uniq.tolist())}
    bmid = np.array([lookup[tuple(k)] for k in bkey.tolist()], dtype=np.int64)

    nodes = np.vstack([mesh.nodes, mids])
    for arc in mesh.arcs:
        tol = 1e-9 * max(arc.radius, 1.0)
        ends = mesh.nodes[mesh.boundary_edges]
        on_arc = ((mesh.edge_tags == NOTCH)
                  & (arc.distance(ends[:, 0]) < tol) & (arc.distance(ends[:, 1]) < tol))
        idx = n + bmid[on_arc]
        nodes[idx] = arc.project(nodes[idx])

    m01, m12, m20 = (n + inv[:, 0], n + inv[:, 1], n + inv[:, 2])
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new_tris = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    p, q = mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]
    mid = n + bmid
    new_edges = np.concatenate([np.column_stack([p, mid]), np.column_stack([mid, q])])
    new_tags = np.concatenate([mesh.edge_tags, mesh.edge_tags])
    return TriMesh(nodes, new_tris, new_edges, new_tags, mesh.refinement_level + 1, mesh.arcs)


def surface_measure(mesh: TriMesh, thickness: float) -> float:
    """Lateral plus face measure: thickness * |C| + 2 * |D1|."""
    return float(thickness * mesh.edge_lengths().sum() + 2.0 * mesh.triangle_areas().sum())


def rectangle_mesh(a: float, b: float, nx: int = 1, ny: int = 1) -> TriMesh:
    """Structured mesh of [0, a] x [0, b] with quarter-domain tags."""
    xs = np.linspace(0.0, a, nx + 1)
    ys = np.linspace(0.0, b, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            p0, p1, p2, p3 = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            tris += [(p0, p1, p2), (p0, p2, p3)]
    tris = np.array(tris, dtype=np.int64)
    edges, tags = [], []
    for i in range(nx):
        edges.append((idx(i, 0), idx(i + 1, 0)))
        tags.append(SYMMETRY_Y)
    for j in range(ny):
        edges.append((idx(nx, j), idx(nx, j + 1)))
        tags.append(LOADED_END)
    for i in range(nx, 0, -1):
        edges.append((idx(i, ny), idx(i - 1, ny)))
        tags.append(FREE_EDGE)
    for j in range(ny, 0, -1):
        edges.append((idx(0, j), idx(0, j - 1)))
        tags.append(SYMMETRY_X)
    mesh = TriMesh(nodes, tris, np.array(edges, dtype=np.int64), np.array(tags, dtype=np.int64))
    mesh.validate()
    return mesh


def export_mesh_csv(mesh: TriMesh, directory: str | Path, prefix: str = "mesh") -> list[Path]:
    """Write node, triangle and boundary-edge CSV files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = [directory / f"{prefix}_{s}.csv" for s in ("nodes", "triangles", "edges")]
    with open(paths[0], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["node", "x_in", "y_in"])
        for i, (x, y) in enumerate(mesh.nodes.tolist()):
            w.writerow([i, repr(x), repr(y)])
    with open(paths[1], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["triangle", "n0", "n1", "n2"])
        for i, t in enumerate(mesh.triangles.tolist()):
            w.writerow([i, *t])
    with open(paths[2], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["n0", "n1", "tag"])
        for (p, q), t in zip(mesh.boundary_edges.tolist(), mesh.edge_tags.tolist()):
            w.writerow([p, q, TAG_NAMES[t]])
    return paths
