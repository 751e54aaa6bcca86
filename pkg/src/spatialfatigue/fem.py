"""Plane-stress linear elasticity with P1 triangles.

The quarter domain carries a unit traction sigma_x = 1 on the loaded end, is
traction free on the free edge and the notch, and has roller symmetry
conditions on the lines y = 0 (u_y = 0) and x = 0 (u_x = 0).
Every experiment's stress tensor is a scalar multiple of this unit solution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import LOADED_END, SYMMETRY_Y, SYMMETRY_X, SpecimenGeometry, TriMesh
from .sn import equivalent_stress


class SingularSystemError(RuntimeError):
    """The boundary conditions leave a rigid-body mode unconstrained."""


@dataclass(frozen=True)
class MaterialParams:
    """Isotropic elastic constants; E in ksi.

    The defaults are typical of 75S-T6 aluminium sheet.  Stresses for the
    traction-driven problem do not depend on E.
    """

    E: float = 10400.0
    nu: float = 0.33

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"E must be positive, got {self.E}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {self.nu}")

    @property
    def G(self) -> float:
        return self.E / (2 * (1 + self.nu))

    def constitutive_matrix(self) -> np.ndarray:
        E, nu = self.E, self.nu
        c = E / (1 - nu ** 2)
        return np.array([[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, self.G]])

    def coefficient_tensor(self) -> np.ndarray:
        """The 2x2 blocks c_kl of the elliptic system -div(c grad u) = 0.

        Returns an array ``c[k, l]`` of 2x2 matrices.
        """
        E, nu, G = self.E, self.nu, self.G
        a = E / (1 - nu ** 2)
        b = nu * E / (1 - nu ** 2)
        c = np.empty((2, 2, 2, 2))
        c[0, 0] = [[a, 0.0], [0.0, G]]
        c[0, 1] = [[0.0, b], [G, 0.0]]
        c[1, 0] = [[0.0, G], [b, 0.0]]
        c[1, 1] = [[G, 0.0], [0.0, a]]
        return c


@dataclass(frozen=True)
class UnitStressField:
    """Nodal (sigma_x, sigma_y, tau_xy) per unit traction on LOADED_END."""

    mesh: TriMesh
    sx: np.ndarray
    sy: np.ndarray
    txy: np.ndarray

    def __post_init__(self):
        for name in ("sx", "sy", "txy"):
            v = getattr(self, name)
            if v.shape != (self.mesh.n_nodes,):
                raise ValueError(f"{name} must have one value per node")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")

    def scaled(self, T: float) -> "UnitStressField":
        return UnitStressField(self.mesh, T * self.sx, T * self.sy, T * self.txy)


def shape_gradients(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Constant P1 shape-function gradients (n_tri, 3, 2) and element areas."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                  - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grad = np.stack([b, c], axis=2) / (2 * area)[:, None, None]
    return grad, area


def strain_matrices(grad: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices (n_tri, 3, 6), dof order (ux0, uy0, ux1, ...)."""
    n = len(grad)
    B = np.zeros((n, 3, 6))
    B[:, 0, 0::2] = grad[:, :, 0]
    B[:, 1, 1::2] = grad[:, :, 1]
    B[:, 2, 0::2] = grad[:, :, 1]
    B[:, 2, 1::2] = grad[:, :, 0]
    return B


def _element_dofs(mesh: TriMesh) -> np.ndarray:
    t = mesh.triangles
    return np.stack([2 * t, 2 * t + 1], axis=2).reshape(len(t), 6)


def _scatter(mesh: TriMesh, ke: np.ndarray) -> sp.csr_matrix:
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 6, axis=1).ravel()
    cols = np.tile(dofs, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble_stiffness(mesh: TriMesh, mat: MaterialParams) -> sp.csr_matrix:
    """Global stiffness from B^T D B (unit thickness)."""
    grad, area = shape_gradients(mesh)
    B = strain_matrices(grad)
    ke = np.einsum("eik,ij,ejl,e->ekl", B, mat.constitutive_matrix(), B, area)
    return _scatter(mesh, ke)


def assemble_stiffness_ctensor(mesh: TriMesh, mat: MaterialParams) -> sp.csr_matrix:
    """Global stiffness from the coefficient-tensor form of the same system.

    Entry ((a, k), (b, l)) of an element matrix is
    area * grad(phi_a)^T c_kl grad(phi_b).  Used to cross-check
    :func:`assemble_stiffness`.
    """
    grad, area = shape_gradients(mesh)
    c = mat.coefficient_tensor()
    ke = np.einsum("eai,klij,ebj,e->eakbl", grad, c, grad, area).reshape(-1, 6, 6)
    return _scatter(mesh, ke)


def traction_load(mesh: TriMesh, traction: float = 1.0) -> np.ndarray:
    """Consistent nodal load for sigma_x = traction on LOADED_END."""
    f = np.zeros(2 * mesh.n_nodes)
    edges = mesh.edges_with_tag(LOADED_END)
    p = mesh.nodes[edges]
    half = 0.5 * traction * np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    np.add.at(f, 2 * edges[:, 0], half)
    np.add.at(f, 2 * edges[:, 1], half)
    return f


def constrained_dofs(mesh: TriMesh) -> np.ndarray:
    b4 = mesh.nodes_with_tag(SYMMETRY_Y)
    b5 = mesh.nodes_with_tag(SYMMETRY_X)
    missing = []
    if len(b4) == 0:
        missing.append("y-translation (no SYMMETRY_Y symmetry edges)")
    if len(b5) == 0:
        missing.append("x-translation (no SYMMETRY_X symmetry edges)")
    if missing:
        raise SingularSystemError("unconstrained rigid-body mode: " + ", ".join(missing))
    return np.unique(np.concatenate([2 * b5, 2 * b4 + 1]))


@dataclass(frozen=True)
class Displacement:
    ux: np.ndarray
    uy: np.ndarray
    residual: float
    reactions: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.column_stack([self.ux, self.uy]).ravel()


def assemble_solve(mesh: TriMesh, mat: MaterialParams, traction: float = 1.0,
                   rtol: float = 1e-10) -> Displacement:
    """Galerkin displacement solution with symmetry rollers on SYMMETRY_Y/SYMMETRY_X.

    ``reactions`` holds the full nodal reaction vector K u - f (non-zero only
    at constrained dofs).
    """
    K = assemble_stiffness(mesh, mat)
    f = traction_load(mesh, traction)
    fixed = constrained_dofs(mesh)
    free = np.setdiff1d(np.arange(K.shape[0]), fixed)
    Kff = K[free][:, free].tocsc()
    u = np.zeros(K.shape[0])
    u[free] = spla.spsolve(Kff, f[free], permc_spec="COLAMD")
    if not np.all(np.isfinite(u)):
        raise SingularSystemError("linear solve produced non-finite displacements")
    r = K @ u - f
    scale = max(np.linalg.norm(f), np.finfo(float).tiny)
    residual = float(np.linalg.norm(r[free]) / scale)
    if residual > rtol:
        raise SingularSystemError(f"relative residual {residual:.3e} exceeds {rtol:.1e}")
    return Displacement(u[0::2].copy(), u[1::2].copy(), residual, r)


def element_stresses(mesh: TriMesh, u: Displacement, mat: MaterialParams) -> np.ndarray:
    grad, _ = shape_gradients(mesh)
    B = strain_matrices(grad)
    ue = u.as_vector()[_element_dofs(mesh)]
    return np.einsum("ij,ejk,ek->ei", mat.constitutive_matrix(), B, ue)


def recover_stress(mesh: TriMesh, u: Displacement, mat: MaterialParams) -> UnitStressField:
    """Element-constant stresses averaged to nodes with area weights."""
    se = element_stresses(mesh, u, mat)
    area = mesh.triangle_areas()
    acc = np.zeros((mesh.n_nodes, 3))
    wsum = np.zeros(mesh.n_nodes)
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], se * area[:, None])
        np.add.at(wsum, mesh.triangles[:, k], area)
    nodal = acc / wsum[:, None]
    return UnitStressField(mesh, nodal[:, 0], nodal[:, 1], nodal[:, 2])


def solve_unit_stress(mesh: TriMesh, mat: MaterialParams | None = None) -> UnitStressField:
    mat = mat or MaterialParams()
    return recover_stress(mesh, assemble_solve(mesh, mat), mat)


def experiment_traction(S_max, R, q, width_ratio):
    """Gross traction T = (W_min / W_max) * S_max * (1 - R)**q."""
    return width_ratio * equivalent_stress(S_max, R, q)


def scale_stress(field: UnitStressField, S_max: float, R: float, q: float,
                 geom: SpecimenGeometry) -> UnitStressField:
    """Stress field of one experiment, in ksi."""
    return field.scaled(float(experiment_traction(S_max, R, q, geom.width_ratio)))


def export_field_csv(field: UnitStressField, path: str | Path) -> Path:
    from .stress import effective_stress

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    seff = effective_stress(field.sx, field.sy, field.txy)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["x_in", "y_in", "sigma_x", "sigma_y", "tau_xy", "sigma_eff"])
        for row in zip(field.mesh.nodes[:, 0], field.mesh.nodes[:, 1],
                       field.sx, field.sy, field.txy, seff):
            w.writerow([repr(float(v)) for v in row])
    return path
