"""Procedural desk-scale test meshes and writers for the bundled asset files."""

from __future__ import annotations

import os

import numpy as np

# six-tet split of a hexahedral cell around the main diagonal v000-v111
_CUBE_TETS = [
    (0, 1, 3, 7),
    (0, 3, 2, 7),
    (0, 2, 6, 7),
    (0, 6, 4, 7),
    (0, 4, 5, 7),
    (0, 5, 1, 7),
]


def _grid_tets(nx, ny, nz, spacing, origin=(0.0, 0.0, 0.0), cell_mask=None):
    """Tetrahedralize a structured grid; cell_mask(cx, cy, cz) selects cells."""
    sx, sy, sz = spacing
    ox, oy, oz = origin

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    used = np.zeros((nx + 1) * (ny + 1) * (nz + 1), dtype=bool)
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if cell_mask is not None and not cell_mask(i, j, k):
                    continue
                corners = [
                    vid(i + di, j + dj, k + dk)
                    for di in (0, 1)
                    for dj in (0, 1)
                    for dk in (0, 1)
                ]
                # corners index order: bits (di, dj, dk) -> di*4 + dj*2 + dk
                for tet in _CUBE_TETS:
                    ids = [corners[c] for c in tet]
                    tets.append(ids)
                    for v in ids:
                        used[v] = True
    remap = -np.ones(used.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.sum())
    verts = []
    for i in range(nx + 1):
        for j in range(ny + 1):
            for k in range(nz + 1):
                if used[vid(i, j, k)]:
                    verts.append((ox + i * sx, oy + j * sy, oz + k * sz))
    tets = remap[np.asarray(tets, dtype=np.int64)]
    vertices = np.asarray(verts)

    # restore positive orientation where the cell split produced inverted tets
    v = vertices[tets]
    vols = np.linalg.det(np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)) / 6.0
    inverted = vols < 0
    tets[inverted] = tets[inverted][:, [0, 1, 3, 2]]
    return vertices, tets


def bar_mesh(nx=12, ny=4, nz=4, size=(1.5, 0.5, 0.5)):
    """Axis-aligned bar starting at the origin, long axis along +x."""
    spacing = (size[0] / nx, size[1] / ny, size[2] / nz)
    return _grid_tets(nx, ny, nz, spacing)


def sphere_mesh(radius=0.25, cells=8):
    """Blocky sphere: grid cells whose center lies inside the radius."""
    s = 2.0 * radius / cells
    center = cells / 2.0

    def inside(i, j, k):
        d = np.array([i + 0.5 - center, j + 0.5 - center, k + 0.5 - center]) * s
        return np.linalg.norm(d) <= radius

    verts, tets = _grid_tets(
        cells, cells, cells, (s, s, s), origin=(-radius, -radius, -radius), cell_mask=inside
    )
    return verts, tets


def cloth_grid(nx=20, ny=20, size=1.0):
    """Flat triangle grid in the xy-plane (z = 0)."""
    xs = np.linspace(0.0, size, nx)
    ys = np.linspace(0.0, size, ny)
    verts = np.array([(x, y, 0.0) for x in xs for y in ys])
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces.append((a, b, a + 1))
            faces.append((b, b + 1, a + 1))
    return verts, np.asarray(faces, dtype=np.int64)


def write_node_ele(prefix, vertices, tets):
    """Write TetGen-style .node/.ele files (1-based indices)."""
    with open(prefix + ".node", "w") as fh:
        fh.write(f"{len(vertices)} 3 0 0\n")
        for i, (x, y, z) in enumerate(vertices, start=1):
            fh.write(f"{i} {x:.12g} {y:.12g} {z:.12g}\n")
    with open(prefix + ".ele", "w") as fh:
        fh.write(f"{len(tets)} 4 0\n")
        for i, t in enumerate(tets, start=1):
            fh.write(f"{i} {t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1}\n")


def write_obj(path, vertices, faces):
    with open(path, "w") as fh:
        for x, y, z in vertices:
            fh.write(f"v {x:.12g} {y:.12g} {z:.12g}\n")
        for a, b, c in faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def generate_all(directory):
    """Write the bundled desk-scale assets into `directory`."""
    os.makedirs(directory, exist_ok=True)
    v, t = bar_mesh()
    write_node_ele(os.path.join(directory, "bar"), v, t)
    v, t = bar_mesh(nx=6, ny=2, nz=2, size=(0.6, 0.2, 0.2))
    write_node_ele(os.path.join(directory, "bar_small"), v, t)
    v, t = sphere_mesh()
    write_node_ele(os.path.join(directory, "sphere"), v, t)
    v, f = cloth_grid()
    write_obj(os.path.join(directory, "cloth20.obj"), v, f)
