"""Backward-Euler objective assembly: energies, gradients, constant system matrix.

One frame of simulation minimizes
    g(x) = 1/(2 h^2) tr((x - y)^T M (x - y)) + E(x)
where E sums hyperelastic element energies, projection (native PD) energies,
collision penalties and anisotropic fiber terms.  The quasi-Newton system
matrix M/h^2 + L is constant and factored exactly once per scenario.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from qnsim.linalg import Factorization, factorize_spd, svd_rv_batch
from qnsim.materials import (
    FitInterval,
    MaterialModel,
    PDMaterial,
    estimate_stiffness,
    vl_energy_batch,
    vl_stress_batch,
)
from qnsim.mesh import SpringNetwork, TetMesh, lumped_masses, tet_diff_operators

DEFAULT_TIMESTEP = 1.0 / 30.0
DEFAULT_GRAVITY = (0.0, 0.0, -9.8)


class DynamicsError(Exception):
    pass


# ---------------------------------------------------------------------------
# element groups


class VLGroup:
    """Tets carrying a Valanis-Landel material."""

    def __init__(self, tets, G, vols, material: MaterialModel, k: float):
        self.verts = tets
        self.G = G
        self.vols = vols
        self.material = material
        self.w = vols * k

    def elem_gradient(self, X):
        F = np.einsum("eva,evc->eac", X, self.G)
        U, s, V = svd_rv_batch(F)
        stress = vl_stress_batch(self.material, s)
        P = np.einsum("eab,eb,ecb->eac", U, stress, V)
        return self.vols[:, None, None] * np.einsum("eac,evc->eva", P, self.G)

    def elem_energy(self, X):
        F = np.einsum("eva,evc->eac", X, self.G)
        _, s, _ = svd_rv_batch(F)
        return self.vols * vl_energy_batch(self.material, s)

    def energy(self, x):
        return float(self.elem_energy(x[self.verts]).sum())

    def add_gradient(self, x, out):
        g = self.elem_gradient(x[self.verts])
        np.add.at(out, self.verts.reshape(-1), g.reshape(-1, 3))

    def L_blocks(self):
        return self.w[:, None, None] * np.einsum("evc,euc->evu", self.G, self.G), self.verts


class ARAPGroup:
    """Tets with the native PD as-rigid-as-possible energy (w/2)||F - R(F)||^2."""

    def __init__(self, tets, G, vols, k: float):
        self.verts = tets
        self.G = G
        self.vols = vols
        self.w = vols * k

    def projections(self, x):
        F = np.einsum("eva,evc->eac", x[self.verts], self.G)
        U, _, V = svd_rv_batch(F)
        return np.einsum("eab,ecb->eac", U, V)

    def _residual(self, X):
        F = np.einsum("eva,evc->eac", X, self.G)
        U, _, V = svd_rv_batch(F)
        return F - np.einsum("eab,ecb->eac", U, V)

    def elem_gradient(self, X):
        D = self._residual(X)
        return self.w[:, None, None] * np.einsum("eac,evc->eva", D, self.G)

    def elem_energy(self, X):
        D = self._residual(X)
        return 0.5 * self.w * np.einsum("eac,eac->e", D, D)

    def energy(self, x):
        return float(self.elem_energy(x[self.verts]).sum())

    def add_gradient(self, x, out):
        g = self.elem_gradient(x[self.verts])
        np.add.at(out, self.verts.reshape(-1), g.reshape(-1, 3))

    def L_blocks(self):
        return self.w[:, None, None] * np.einsum("evc,euc->evu", self.G, self.G), self.verts


class SpringGroup:
    """Edge springs with the native PD energy (w/2)(||d|| - r)^2."""

    def __init__(self, edges, rest, k: float):
        self.verts = edges
        self.rest = rest
        self.w = np.full(edges.shape[0], float(k))

    def _dirs(self, X):
        d = X[:, 1] - X[:, 0]
        length = np.linalg.norm(d, axis=1)
        if np.any(length < 1e-14):
            raise DynamicsError("zero-length spring edge")
        return d, length

    def projections(self, x):
        d, length = self._dirs(x[self.verts])
        return self.rest[:, None] * d / length[:, None]

    def elem_gradient(self, X):
        d, length = self._dirs(X)
        resid = self.w[:, None] * (1.0 - self.rest / length)[:, None] * d
        out = np.empty_like(X)
        out[:, 0] = -resid
        out[:, 1] = resid
        return out

    def elem_energy(self, X):
        _, length = self._dirs(X)
        return 0.5 * self.w * (length - self.rest) ** 2

    def energy(self, x):
        return float(self.elem_energy(x[self.verts]).sum())

    def add_gradient(self, x, out):
        g = self.elem_gradient(x[self.verts])
        np.add.at(out, self.verts.reshape(-1), g.reshape(-1, 3))

    def L_blocks(self):
        block = np.array([[1.0, -1.0], [-1.0, 1.0]])
        return self.w[:, None, None] * block[None], self.verts


class AnisoGroup:
    """Directional reinforcement V * (kappa/2)(||F d|| - 1)^2 on selected tets."""

    def __init__(self, tets, G, vols, d, kappa):
        self.verts = tets
        self.G = G
        self.vols = vols
        d = np.asarray(d, dtype=np.float64)
        self.d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        self.kappa = np.asarray(kappa, dtype=np.float64) * np.ones(tets.shape[0])
        if np.any(self.kappa < 0):
            raise DynamicsError("anisotropic stiffness must be non-negative")
        self.w = self.vols * self.kappa

    def _fiber(self, X):
        F = np.einsum("eva,evc->eac", X, self.G)
        u = np.einsum("eac,ec->ea", F, np.broadcast_to(self.d, (X.shape[0], 3)))
        return u, np.linalg.norm(u, axis=1)

    def elem_energy(self, X):
        _, nu = self._fiber(X)
        return 0.5 * self.w * (nu - 1.0) ** 2

    def elem_gradient(self, X):
        u, nu = self._fiber(X)
        nu = np.maximum(nu, 1e-12)
        P = (self.w * (nu - 1.0) / nu)[:, None, None] * np.einsum(
            "ea,ec->eac", u, np.broadcast_to(self.d, (X.shape[0], 3))
        )
        return np.einsum("eac,evc->eva", P, self.G)

    def energy(self, x):
        return float(self.elem_energy(x[self.verts]).sum())

    def add_gradient(self, x, out):
        g = self.elem_gradient(x[self.verts])
        np.add.at(out, self.verts.reshape(-1), g.reshape(-1, 3))

    def L_blocks(self):
        return self.w[:, None, None] * np.einsum("evc,euc->evu", self.G, self.G), self.verts


# ---------------------------------------------------------------------------
# colliders


class HalfSpace:
    def __init__(self, point, normal):
        self.point = np.asarray(point, dtype=np.float64)
        n = np.asarray(normal, dtype=np.float64)
        self.normal = n / np.linalg.norm(n)

    def signed_distance(self, x):
        return (x - self.point) @ self.normal

    def project(self, x):
        sd = self.signed_distance(x)
        t = x - sd[:, None] * self.normal
        n = np.broadcast_to(self.normal, x.shape)
        return t, n


class SphereCollider:
    """Keeps vertices outside a solid sphere."""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def signed_distance(self, x):
        return np.linalg.norm(x - self.center, axis=1) - self.radius

    def project(self, x):
        r = x - self.center
        dist = np.linalg.norm(r, axis=1)
        safe = np.maximum(dist, 1e-12)
        n = r / safe[:, None]
        n[dist < 1e-12] = (0.0, 0.0, 1.0)
        t = self.center + self.radius * n
        return t, n


class TorusCollider:
    """Keeps vertices outside a solid torus with axis along z through center."""

    def __init__(self, center, major_radius, minor_radius):
        self.center = np.asarray(center, dtype=np.float64)
        self.R = float(major_radius)
        self.r = float(minor_radius)

    def _ring(self, x):
        local = x - self.center
        radial = np.linalg.norm(local[:, :2], axis=1)
        safe = np.maximum(radial, 1e-12)
        ring = np.zeros_like(local)
        ring[:, 0] = self.R * local[:, 0] / safe
        ring[:, 1] = self.R * local[:, 1] / safe
        # degenerate on-axis points get an arbitrary ring direction
        on_axis = radial < 1e-12
        ring[on_axis, 0] = self.R
        return local, ring

    def signed_distance(self, x):
        local, ring = self._ring(x)
        return np.linalg.norm(local - ring, axis=1) - self.r

    def project(self, x):
        local, ring = self._ring(x)
        q = local - ring
        dist = np.linalg.norm(q, axis=1)
        safe = np.maximum(dist, 1e-12)
        n = q / safe[:, None]
        n[dist < 1e-12] = (0.0, 0.0, 1.0)
        t = self.center + ring + self.r * n
        return t, n


@dataclass
class CollisionSet:
    """Active penalty constraints: vertex -> (surface point, outward normal)."""

    idx: np.ndarray
    t: np.ndarray
    n: np.ndarray

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=np.int64), np.empty((0, 3)), np.empty((0, 3)))

    @property
    def count(self):
        return self.idx.shape[0]


# ---------------------------------------------------------------------------
# system and state


@dataclass
class SimSystem:
    mesh: object
    masses: np.ndarray  # (n,)
    h: float
    gravity: np.ndarray
    groups: list
    pd_groups: list
    fixed: np.ndarray  # sorted vertex indices
    free: np.ndarray
    L: scipy.sparse.csr_matrix
    sysfact: Factorization
    colliders: list = field(default_factory=list)
    w_col: float = 0.0
    scale: float = 1.0
    rest_hessian_fact: object = None  # lazy, for the rest-pose L-BFGS init

    @property
    def n(self):
        return self.masses.shape[0]


@dataclass
class SimState:
    q_l: np.ndarray
    q_prev: np.ndarray
    y: np.ndarray | None = None
    collisions: CollisionSet = field(default_factory=CollisionSet.empty)

    def copy(self):
        return SimState(
            q_l=self.q_l.copy(),
            q_prev=self.q_prev.copy(),
            y=None if self.y is None else self.y.copy(),
            collisions=CollisionSet(
                self.collisions.idx.copy(), self.collisions.t.copy(), self.collisions.n.copy()
            ),
        )


def _tet_groups(mesh, materials, fit_interval):
    """Partition tets into VL / ARAP groups from a material assignment."""
    G, vols = tet_diff_operators(mesh)
    if isinstance(materials, (MaterialModel, PDMaterial)):
        assignment = [(np.arange(mesh.tets.shape[0]), materials)]
    else:
        assignment = [(np.asarray(idx, dtype=np.int64), mat) for idx, mat in materials]
    groups = []
    for idx, mat in assignment:
        if isinstance(mat, MaterialModel):
            k = mat.k_fit if mat.k_fit is not None else estimate_stiffness(mat, fit_interval)
            groups.append(VLGroup(mesh.tets[idx], G[idx], vols[idx], mat, k))
        elif isinstance(mat, PDMaterial) and mat.kind == "arap":
            groups.append(ARAPGroup(mesh.tets[idx], G[idx], vols[idx], mat.k))
        else:
            raise DynamicsError(f"material {mat!r} cannot be applied to tets")
    return groups, G, vols


def build_system(
    mesh,
    materials,
    h: float = DEFAULT_TIMESTEP,
    gravity=DEFAULT_GRAVITY,
    fixed=(),
    aniso=None,
    colliders=(),
    collision_weight: float | None = None,
    fit_interval: FitInterval = FitInterval(),
) -> SimSystem:
    """Assemble masses, the constant matrix M/h^2 + L and its factorization.

    `aniso` is a list of (element_index, direction, kappa) triples for tet
    meshes.  Fixed vertices are handled by DOF elimination: the factored
    matrix covers free vertices only.
    """
    n = mesh.n
    masses = lumped_masses(mesh)

    if isinstance(mesh, TetMesh):
        groups, G, vols = _tet_groups(mesh, materials, fit_interval)
        if aniso:
            idx = np.asarray([a[0] for a in aniso], dtype=np.int64)
            dirs = np.asarray([a[1] for a in aniso], dtype=np.float64)
            kappas = np.asarray([a[2] for a in aniso], dtype=np.float64)
            groups.append(AnisoGroup(mesh.tets[idx], G[idx], vols[idx], dirs, kappas))
    else:
        if not isinstance(materials, PDMaterial) or materials.kind != "mass_spring":
            raise DynamicsError("spring networks require a mass_spring material")
        if aniso:
            raise DynamicsError("anisotropy applies to tet meshes only")
        groups = [SpringGroup(mesh.edges, mesh.rest_lengths, materials.k)]

    pd_groups = [g for g in groups if isinstance(g, (ARAPGroup, SpringGroup))]

    rows, cols, vals = [], [], []
    max_w = 0.0
    for g in groups:
        blocks, verts = g.L_blocks()
        a = verts.shape[1]
        rows.append(np.repeat(verts, a, axis=1).reshape(-1))
        cols.append(np.tile(verts, (1, a)).reshape(-1))
        vals.append(blocks.reshape(-1))
        if g.w.size:
            max_w = max(max_w, float(g.w.max()))
    if rows:
        L = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        ).tocsr()
    else:
        L = scipy.sparse.csr_matrix((n, n))

    fixed = np.asarray(sorted(set(int(i) for i in fixed)), dtype=np.int64)
    if fixed.size and (fixed.min() < 0 or fixed.max() >= n):
        raise DynamicsError("fixed vertex index out of range")
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    if free.size == 0:
        raise DynamicsError("all vertices fixed; nothing to simulate")

    A = (L + scipy.sparse.diags(masses / h**2)).toarray()
    sysfact = factorize_spd(A[np.ix_(free, free)])

    bbox = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    scale = float(np.linalg.norm(bbox)) or 1.0
    w_col = collision_weight if collision_weight is not None else 10.0 * max_w

    return SimSystem(
        mesh=mesh,
        masses=masses,
        h=float(h),
        gravity=np.asarray(gravity, dtype=np.float64),
        groups=groups,
        pd_groups=pd_groups,
        fixed=fixed,
        free=free,
        L=L,
        sysfact=sysfact,
        colliders=list(colliders),
        w_col=float(w_col),
        scale=scale,
    )


def inertia_target(state: SimState, system: SimSystem, fixed_targets=None) -> np.ndarray:
    """y = 2 q_l - q_{l-1} + h^2 M^{-1} f_ext; fixed rows pinned to their targets."""
    h = system.h
    y = 2.0 * state.q_l - state.q_prev + h * h * system.gravity[None, :]
    if system.fixed.size:
        y[system.fixed] = state.q_l[system.fixed] if fixed_targets is None else fixed_targets
    return y


def collision_energy(system: SimSystem, cons: CollisionSet, x) -> float:
    if cons.count == 0:
        return 0.0
    depth = np.einsum("kc,kc->k", x[cons.idx] - cons.t, cons.n)
    return float(system.w_col * np.dot(depth, depth))


def add_collision_gradient(system: SimSystem, cons: CollisionSet, x, out):
    if cons.count == 0:
        return
    depth = np.einsum("kc,kc->k", x[cons.idx] - cons.t, cons.n)
    np.add.at(out, cons.idx, 2.0 * system.w_col * depth[:, None] * cons.n)


def objective(system: SimSystem, state: SimState, x) -> float:
    """g(x): inertia + elastic + collision + anisotropy."""
    diff = x - state.y
    g = 0.5 / system.h**2 * float(np.einsum("vc,v,vc->", diff, system.masses, diff))
    for grp in system.groups:
        g += grp.energy(x)
    g += collision_energy(system, state.collisions, x)
    return g


def gradient(system: SimSystem, state: SimState, x) -> np.ndarray:
    """Analytic gradient of the objective; rows of fixed vertices zeroed."""
    out = (system.masses[:, None] / system.h**2) * (x - state.y)
    for grp in system.groups:
        grp.add_gradient(x, out)
    add_collision_gradient(system, state.collisions, x, out)
    if system.fixed.size:
        out[system.fixed] = 0.0
    return out


def project_constraints(system: SimSystem, x):
    """Stacked projection variables p(x) of the native PD element groups."""
    return [grp.projections(x) for grp in system.pd_groups]


def update_collisions(system: SimSystem, state: SimState, x) -> CollisionSet:
    """Rebuild the active constraint set at the start of an iteration.

    A vertex is constrained when it penetrates a collider, unless its relative
    velocity (x - q_l)/h along the outward normal indicates separation.  The
    separation test only applies to vertices that started the frame outside
    the collider: its purpose is to avoid an unrealistic glue force on
    vertices leaving the surface, and the penalty term on a vertex that is
    still inside only ever pushes outward.  Dropping such a vertex mid-solve
    would let it ratchet deeper on alternating iterations instead.  Collision
    terms never touch the factored system matrix.
    """
    if not system.colliders:
        return CollisionSet.empty()
    all_idx, all_t, all_n = [], [], []
    for collider in system.colliders:
        sd = collider.signed_distance(x)
        pen = np.nonzero(sd < 0)[0]
        if pen.size == 0:
            continue
        t, nrm = collider.project(x[pen])
        vn = np.einsum("kc,kc->k", (x[pen] - state.q_l[pen]) / system.h, nrm)
        sd_start = collider.signed_distance(state.q_l[pen])
        keep = (vn < 0.0) | (sd_start < 0.0)
        if np.any(keep):
            all_idx.append(pen[keep])
            all_t.append(t[keep])
            all_n.append(nrm[keep])
    if not all_idx:
        return CollisionSet.empty()
    return CollisionSet(np.concatenate(all_idx), np.concatenate(all_t), np.concatenate(all_n))
