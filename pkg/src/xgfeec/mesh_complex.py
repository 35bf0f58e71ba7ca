"""Conforming 2D triangulations with globally oriented edges.

Every edge E = {i, j} (i < j) carries a unit normal nu_E. On interior edges
nu_E is the counterclockwise rotation of the unit vector from vertex i to
vertex j; on boundary edges it is the outward normal of the domain. The cell
that nu_E points out of is T_E^+ and gets incidence sign +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# local face f of a cell is the edge opposite local vertex f
LOCAL_FACES = ((1, 2), (0, 2), (0, 1))


@dataclass(frozen=True)
class MeshSizes:
    h_T: np.ndarray
    h_E: np.ndarray
    shape_ratio: float


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Immutable triangulation plus derived incidence data.

    Attributes
    ----------
    vertices : (N, 2) float array
    cells : (M, 3) int array, vertex indices increasing in each row
    faces : (F, 2) int array, vertex indices increasing in each row
    normals : (F, 2) unit normals nu_E
    tangents : (F, 2) unit tangents, the counterclockwise rotation of nu_E.
        Face forms are oriented along this direction.
    face_cells : (F, 2) int array, [T_E^+, T_E^-] with -1 for a missing cell
    cell_faces : (M, 3) global face of each local face
    cell_signs : (M, 3) incidence sign s_T^E of each local face
    boundary : (F,) bool
    """

    vertices: np.ndarray
    cells: np.ndarray
    faces: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    tangents: np.ndarray = field(init=False)
    face_cells: np.ndarray = field(init=False)
    cell_faces: np.ndarray = field(init=False)
    cell_signs: np.ndarray = field(init=False)
    boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        cells = np.sort(np.asarray(self.cells, dtype=np.int64), axis=1)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (N, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (M, 3)")
        if cells.min() < 0 or cells.max() >= len(vertices):
            raise ValueError("cell vertex index out of range")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cells", cells)
        self._build_topology()
        vertices.setflags(write=False)
        cells.setflags(write=False)

    def _build_topology(self):
        cells, X = self.cells, self.vertices
        p = X[cells]
        area2 = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                 - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        if np.any(np.abs(area2) <= 1e-14 * max(1.0, np.ptp(X) ** 2)):
            raise ValueError("degenerate cell")

        edges = np.concatenate([cells[:, list(lf)] for lf in LOCAL_FACES])
        faces, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(3, -1).T  # (M, 3)
        nf = len(faces)
        counts = np.bincount(inverse.ravel(), minlength=nf)
        if counts.max() > 2:
            raise ValueError("non-manifold edge")

        t = X[faces[:, 1]] - X[faces[:, 0]]
        t /= np.linalg.norm(t, axis=1)[:, None]
        normals = np.stack([-t[:, 1], t[:, 0]], axis=1)
        mid = 0.5 * (X[faces[:, 0]] + X[faces[:, 1]])

        # outward test: the opposite vertex must lie on the far side of nu
        opposite = X[cells]  # local face f is opposite local vertex f
        outward = np.einsum("mfk,mfk->mf", normals[inverse],
                            mid[inverse] - opposite) > 0

        boundary = counts == 1
        # boundary normals point out of their single cell
        flip = np.zeros(nf, dtype=bool)
        m_idx, f_idx = np.nonzero(boundary[inverse] & ~outward)
        flip[inverse[m_idx, f_idx]] = True
        normals[flip] *= -1
        outward[boundary[inverse]] = True

        signs = np.where(outward, 1, -1)
        face_cells = -np.ones((nf, 2), dtype=np.int64)
        for m, f in zip(*np.nonzero(signs == 1)):
            face_cells[inverse[m, f], 0] = m
        for m, f in zip(*np.nonzero(signs == -1)):
            face_cells[inverse[m, f], 1] = m
        if np.any(face_cells[:, 0] < 0):
            raise ValueError("inconsistent orientation: face without T^+")
        if np.any((face_cells[:, 1] >= 0) == boundary):
            raise ValueError("inconsistent orientation on interior face")

        tangents = np.stack([-normals[:, 1], normals[:, 0]], axis=1)
        for name, val in (("faces", faces), ("normals", normals),
                          ("tangents", tangents), ("face_cells", face_cells),
                          ("cell_faces", inverse), ("cell_signs", signs),
                          ("boundary", boundary)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    def cell_points(self, cell: int) -> np.ndarray:
        return self.vertices[self.cells[cell]]

    def face_points(self, face: int) -> np.ndarray:
        """Endpoints of a face ordered along its tangent."""
        a, b = self.vertices[self.faces[face]]
        if np.dot(b - a, self.tangents[face]) < 0:
            a, b = b, a
        return np.array([a, b])

    def face_lengths(self) -> np.ndarray:
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.linalg.norm(d, axis=1)

    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def sizes(self) -> MeshSizes:
        h_E = self.face_lengths()
        edge_len = h_E[self.cell_faces]
        h_T = edge_len.max(axis=1)
        area = self.cell_areas()
        a, b, c = edge_len.T
        inradius = 2 * area / (a + b + c)
        circumradius = a * b * c / (4 * area)
        return MeshSizes(h_T=h_T, h_E=h_E,
                         shape_ratio=float(np.max(circumradius / inradius)))

    def vertex_on_boundary(self) -> np.ndarray:
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.faces[self.boundary].ravel()] = True
        return flag


def build_structured_mesh(divisions: int) -> SimplicialMesh:
    """Unit square cut into divisions**2 squares, each split along the
    diagonal of positive slope."""
    n = int(divisions)
    if n < 1:
        raise ValueError("divisions must be >= 1")
    g = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(g, g, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    idx = lambda i, j: j * (n + 1) + i  # noqa: E731
    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return SimplicialMesh(vertices, np.array(cells))


def uniform_refine(mesh: SimplicialMesh) -> SimplicialMesh:
    """Split every triangle into four through its edge midpoints."""
    X = mesh.vertices
    mids = 0.5 * (X[mesh.faces[:, 0]] + X[mesh.faces[:, 1]])
    vertices = np.vstack([X, mids])
    m = mesh.n_vertices + mesh.cell_faces  # midpoint index of each local face
    v = mesh.cells
    # local face 0 is opposite vertex 0, i.e. the edge (v1, v2)
    cells = np.concatenate([
        np.column_stack([v[:, 0], m[:, 2], m[:, 1]]),
        np.column_stack([v[:, 1], m[:, 2], m[:, 0]]),
        np.column_stack([v[:, 2], m[:, 1], m[:, 0]]),
        np.column_stack([m[:, 0], m[:, 1], m[:, 2]]),
    ])
    return SimplicialMesh(vertices, cells)


def face_incidence(mesh: SimplicialMesh, cell: int) -> list[tuple[int, int]]:
    """(face index, sign s_T^E) for the three local faces of a cell."""
    if not 0 <= cell < mesh.n_cells:
        raise IndexError(f"cell {cell} out of range [0, {mesh.n_cells})")
    return [(int(f), int(s)) for f, s in zip(mesh.cell_faces[cell], mesh.cell_signs[cell])]


def write_mesh(mesh: SimplicialMesh, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_vertices}\n")
        fh.write(f"cells {mesh.n_cells}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for i, j, k in mesh.cells:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path) -> SimplicialMesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if lines[0][0] != "vertices" or lines[1][0] != "cells":
        raise ValueError("expected 'vertices N' and 'cells M' header lines")
    nv, nc = int(lines[0][1]), int(lines[1][1])
    body = lines[2:]
    if len(body) != nv + nc:
        raise ValueError(f"expected {nv + nc} data lines, found {len(body)}")
    vertices = np.array([[float(a) for a in ln] for ln in body[:nv]])
    cells = np.array([[int(a) for a in ln] for ln in body[nv:]])
    return SimplicialMesh(vertices, cells)
