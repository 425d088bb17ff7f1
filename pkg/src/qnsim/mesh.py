"""Discretizations and rest-state quantities: masses, volumes, difference operators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VOLUME_EPS = 1e-14


class MeshError(Exception):
    """Raised for unreadable mesh files or degenerate geometry."""


@dataclass
class TetMesh:
    """Tetrahedral discretization with rest positions in meters."""

    vertices: np.ndarray  # (n, 3)
    tets: np.ndarray  # (m, 4) int
    density: float = 1000.0  # kg/m^3
    fixed: set = field(default_factory=set)

    @property
    def n(self) -> int:
        return self.vertices.shape[0]


@dataclass
class SpringNetwork:
    """Edge-spring discretization built from a triangle mesh."""

    vertices: np.ndarray  # (n, 3)
    edges: np.ndarray  # (m, 2) int
    rest_lengths: np.ndarray  # (m,)
    faces: np.ndarray  # (f, 3) int, kept for mass lumping and export
    density: float = 1.0  # kg/m^2 (areal)
    fixed: set = field(default_factory=set)

    @property
    def n(self) -> int:
        return self.vertices.shape[0]


def _signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    v = vertices[tets]
    e = v[:, 1:] - v[:, :1]
    return np.linalg.det(e) / 6.0


def load_tet_mesh(node_file, ele_file, density: float) -> TetMesh:
    """Load a TetGen .node/.ele pair; indices are normalized to 0-based and
    inverted tets reoriented to positive volume."""
    vertices, base = _parse_node(node_file)
    tets = _parse_ele(ele_file, base, vertices.shape[0])
    if vertices.shape[0] < 4:
        raise MeshError(f"{node_file}: tet mesh needs at least 4 vertices")

    vols = _signed_volumes(vertices, tets)
    inverted = vols < 0
    if np.any(inverted):
        tets[inverted] = tets[inverted][:, [0, 1, 3, 2]]
        vols = np.abs(vols)
    bad = np.nonzero(vols < VOLUME_EPS)[0]
    if bad.size:
        raise MeshError(f"{ele_file}: tet {bad[0]} has zero volume")
    return TetMesh(vertices=vertices, tets=tets, density=float(density))


def _read_data_lines(path):
    try:
        with open(path) as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise MeshError(f"cannot read {path}: {exc}") from exc
    lines = []
    for lineno, line in enumerate(raw, start=1):
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            lines.append((lineno, stripped))
    if not lines:
        raise MeshError(f"{path}: file contains no data")
    return lines


def _parse_node(path):
    lines = _read_data_lines(path)
    lineno, header = lines[0]
    try:
        count = int(header.split()[0])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}:{lineno}: bad .node header {header!r}") from exc
    rows = lines[1 : 1 + count]
    if len(rows) < count:
        raise MeshError(f"{path}: expected {count} vertex rows, found {len(rows)}")
    verts = np.empty((count, 3))
    first_idx = None
    for k, (lineno, text) in enumerate(rows):
        parts = text.split()
        try:
            idx = int(parts[0])
            verts[k] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path}:{lineno}: bad vertex row {text!r}") from exc
        if first_idx is None:
            first_idx = idx
    base = 0 if first_idx == 0 else 1
    return verts, base


def _parse_ele(path, base, n_verts):
    lines = _read_data_lines(path)
    lineno, header = lines[0]
    try:
        count = int(header.split()[0])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{path}:{lineno}: bad .ele header {header!r}") from exc
    rows = lines[1 : 1 + count]
    if len(rows) < count:
        raise MeshError(f"{path}: expected {count} element rows, found {len(rows)}")
    tets = np.empty((count, 4), dtype=np.int64)
    for k, (lineno, text) in enumerate(rows):
        parts = text.split()
        try:
            tets[k] = [int(p) for p in parts[1:5]]
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path}:{lineno}: bad element row {text!r}") from exc
    tets -= base
    if tets.min() < 0 or tets.max() >= n_verts:
        raise MeshError(f"{path}: element index out of range [0, {n_verts})")
    return tets


def load_obj_springs(path, density: float = 1.0) -> SpringNetwork:
    """Load an OBJ triangle mesh as a spring network (unique triangle edges)."""
    lines = _read_data_lines(path)
    verts = []
    faces = []
    for lineno, text in lines:
        parts = text.split()
        if parts[0] == "v":
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}:{lineno}: bad vertex record {text!r}") from exc
        elif parts[0] == "f":
            try:
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}:{lineno}: bad face record {text!r}") from exc
            faces.append(idx)
        # all other records ignored
    if not verts or not faces:
        raise MeshError(f"{path}: no triangles found")
    vertices = np.asarray(verts)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.min() < 0 or faces.max() >= vertices.shape[0]:
        raise MeshError(f"{path}: face index out of range")

    edge_set = set()
    for tri in faces:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[0], tri[2])):
            edge_set.add((min(a, b), max(a, b)))
    edges = np.asarray(sorted(edge_set), dtype=np.int64)
    rest = np.linalg.norm(vertices[edges[:, 1]] - vertices[edges[:, 0]], axis=1)
    if np.any(rest <= 0):
        raise MeshError(f"{path}: zero-length edge in mesh")
    return SpringNetwork(
        vertices=vertices, edges=edges, rest_lengths=rest, faces=faces, density=float(density)
    )


def tet_volumes(mesh: TetMesh) -> np.ndarray:
    return _signed_volumes(mesh.vertices, mesh.tets)


def lumped_masses(mesh) -> np.ndarray:
    """Diagonal (lumped) vertex masses; raises on isolated (massless) vertices."""
    masses = np.zeros(mesh.n)
    if isinstance(mesh, TetMesh):
        vols = tet_volumes(mesh)
        share = mesh.density * vols / 4.0
        for corner in range(4):
            np.add.at(masses, mesh.tets[:, corner], share)
    else:
        v = mesh.vertices[mesh.faces]
        areas = 0.5 * np.linalg.norm(
            np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1
        )
        share = mesh.density * areas / 3.0
        for corner in range(3):
            np.add.at(masses, mesh.faces[:, corner], share)
    zero = np.nonzero(masses <= 0)[0]
    if zero.size:
        raise MeshError(f"vertex {zero[0]} has zero mass (isolated vertex?)")
    return masses


def tet_diff_operators(mesh: TetMesh):
    """Per-tet linear maps from stacked vertex positions to the deformation gradient.

    Returns (G, volumes) where G has shape (m, 4, 3): for element positions
    X (4,3), the deformation gradient is F = X^T G.  Constant vectors are in
    the nullspace (rows of G sum to zero).
    """
    v = mesh.vertices[mesh.tets]
    Dm = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)  # (m, 3, 3), edge columns
    vols = np.linalg.det(Dm) / 6.0
    if np.any(vols < VOLUME_EPS):
        raise MeshError("degenerate rest tet in diff-operator construction")
    Dm_inv = np.linalg.inv(Dm)
    G = np.empty((mesh.tets.shape[0], 4, 3))
    G[:, 1:, :] = Dm_inv
    G[:, 0, :] = -Dm_inv.sum(axis=1)
    return G, vols


def build_diff_operators(mesh, stiffness: float = 1.0):
    """Differential operators and PD weights w_i.

    Tets: w_i = V_i * k; springs: w_i = k (G subtracts the two endpoints)."""
    if isinstance(mesh, TetMesh):
        G, vols = tet_diff_operators(mesh)
        return G, vols * stiffness
    m = mesh.edges.shape[0]
    return None, np.full(m, float(stiffness))


def deformation_gradients(x: np.ndarray, tets: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Batched F = X^T G for every element; x is the global (n,3) state."""
    X = x[tets]  # (m, 4, 3)
    return np.einsum("eva,evc->eac", X, G)


def surface_triangles(mesh: TetMesh) -> np.ndarray:
    """Boundary faces of a tet mesh (faces referenced by exactly one tet)."""
    # local faces oriented outward for a positively oriented tet
    local = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]
    count = {}
    rep = {}
    for tet in mesh.tets:
        for a, b, c in local:
            tri = (tet[a], tet[b], tet[c])
            key = tuple(sorted(tri))
            count[key] = count.get(key, 0) + 1
            rep[key] = tri
    tris = [rep[k] for k, c in count.items() if c == 1]
    return np.asarray(sorted(tris), dtype=np.int64)
