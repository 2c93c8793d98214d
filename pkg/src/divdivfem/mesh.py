"""Triangle meshes with globally oriented edges.

Every edge stores the vertex pair (lo, hi) with lo < hi, the unit tangent
t pointing from lo to hi and the unit normal n obtained by rotating t a
quarter turn clockwise, so that t = R90 @ n.  Degrees of freedom attached
to edges are always expressed in this global frame, which makes them
single-valued across the two cells sharing an interior edge.
"""

from __future__ import annotations

import numpy as np

# counterclockwise quarter turn; maps the edge normal to the edge tangent
ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


class TriMesh:
    """Immutable triangulation of a planar domain.

    Attributes
    ----------
    vertices : (V, 2) float array
    cells : (T, 3) int array, counterclockwise vertex triples
    edges : (E, 2) int array, each row (lo, hi) with lo < hi
    cell_edges : (T, 3) int array; entry [t, i] is the global index of the
        local edge (cells[t, i], cells[t, (i+1) % 3])
    cell_edge_signs : (T, 3) int array; +1 when the outward normal of cell
        t on local edge i equals the global edge normal, -1 otherwise
    edge_cells : (E, 2) int array of incident cells, -1 padding
    edge_tangent, edge_normal : (E, 2) float arrays, global unit frames
    boundary_edge, boundary_vertex : bool masks
    """

    def __init__(self, vertices, cells):
        vertices = np.asarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=int)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must be a (V, 2) array")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must be a (T, 3) array")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise ValueError("cell indices out of range")

        # enforce counterclockwise orientation
        cells = cells.copy()
        areas = _signed_areas(vertices, cells)
        flip = areas < 0
        cells[flip] = cells[flip][:, [0, 2, 1]]
        areas = np.abs(areas)
        if np.any(areas <= 1e-14 * np.max(areas, initial=1.0)):
            raise ValueError("degenerate cell (zero area)")

        self.vertices = vertices
        self.cells = cells
        self.areas = areas

        # global edge enumeration: sorted vertex pairs, lexicographic order
        local = np.stack(
            [cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]], axis=1
        )  # (T, 3, 2) in traversal order
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        self.edges = edges
        self.cell_edges = inverse.reshape(-1, 3)
        # outward normal of a CCW cell aligns with the global edge normal
        # exactly when the traversal goes from the lower to the higher index
        self.cell_edge_signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)

        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            raise ValueError("non-manifold edge (more than two incident cells)")
        self.boundary_edge = counts == 1

        edge_cells = -np.ones((len(edges), 2), dtype=int)
        edge_cell_signs = np.zeros((len(edges), 2), dtype=int)
        for t in range(len(cells)):
            for i, e in enumerate(self.cell_edges[t]):
                slot = 1 if edge_cells[e, 0] >= 0 else 0
                edge_cells[e, slot] = t
                edge_cell_signs[e, slot] = self.cell_edge_signs[t, i]
        self.edge_cells = edge_cells
        self.edge_cell_signs = edge_cell_signs

        vec = vertices[edges[:, 1]] - vertices[edges[:, 0]]
        self.edge_lengths = np.linalg.norm(vec, axis=1)
        self.edge_tangent = vec / self.edge_lengths[:, None]
        # clockwise quarter turn of the tangent
        self.edge_normal = np.stack(
            [self.edge_tangent[:, 1], -self.edge_tangent[:, 0]], axis=1
        )

        self.boundary_vertex = np.zeros(len(vertices), dtype=bool)
        self.boundary_vertex[edges[self.boundary_edge].ravel()] = True

        self.centroids = vertices[cells].mean(axis=1)
        self.cell_diameters = self.edge_lengths[self.cell_edges].max(axis=1)

        self.validate()
        for arr in (
            self.vertices, self.cells, self.edges, self.cell_edges,
            self.cell_edge_signs, self.edge_cells, self.edge_cell_signs,
            self.edge_lengths,
            self.edge_tangent, self.edge_normal, self.boundary_edge,
            self.boundary_vertex, self.centroids, self.cell_diameters,
            self.areas,
        ):
            arr.setflags(write=False)

    # -- basic counts ------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.nonzero(~self.boundary_edge)[0]

    @property
    def h_max(self) -> float:
        return float(self.cell_diameters.max())

    def cell_coords(self, t: int) -> np.ndarray:
        return self.vertices[self.cells[t]]

    def edge_orientation_signs(self, t: int) -> np.ndarray:
        """Signs relating cell t's outward normals to the global edge normals."""
        if not 0 <= t < self.n_cells:
            raise IndexError(f"cell index {t} out of range")
        return self.cell_edge_signs[t]

    def min_angle(self) -> float:
        """Smallest interior angle over all cells, in degrees."""
        v = self.vertices[self.cells]
        angles = []
        for i in range(3):
            a = v[:, (i + 1) % 3] - v[:, i]
            b = v[:, (i + 2) % 3] - v[:, i]
            cosang = np.sum(a * b, axis=1) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))

    def validate(self) -> None:
        """Check mesh invariants; raises on violation."""
        if self.n_edges + 1 != self.n_vertices + self.n_cells:
            raise ValueError(
                "edge/vertex/cell counts violate Euler's relation "
                f"(E={self.n_edges}, V={self.n_vertices}, T={self.n_cells}); "
                "only simply connected domains are supported"
            )
        counts = np.bincount(self.cell_edges.ravel(), minlength=self.n_edges)
        if not np.all((counts == 1) | (counts == 2)):
            raise ValueError("each edge must bound one or two cells")
        if np.any(counts[self.boundary_edge] != 1):
            raise ValueError("boundary flags inconsistent with incidence")
        # the two cells of an interior edge see opposite orientations
        sign_sum = np.zeros(self.n_edges)
        np.add.at(sign_sum, self.cell_edges.ravel(), self.cell_edge_signs.ravel())
        if np.any(sign_sum[~self.boundary_edge] != 0):
            raise ValueError("inconsistent edge orientation between cells")


def cross2(u, v):
    """z component of the cross product of planar vectors."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _signed_areas(vertices, cells):
    a = vertices[cells[:, 0]]
    b = vertices[cells[:, 1]]
    c = vertices[cells[:, 2]]
    return 0.5 * cross2(b - a, c - a)


def structured_unit_square(n: int) -> TriMesh:
    """Uniform n-by-n grid of the unit square, each square split along the
    diagonal of positive slope."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    xs = np.linspace(0.0, 1.0, n + 1)
    vertices = np.array([(x, y) for y in xs for x in xs])
    cells = []
    for iy in range(n):
        for ix in range(n):
            v00 = iy * (n + 1) + ix
            v10 = v00 + 1
            v01 = v00 + n + 1
            v11 = v01 + 1
            cells.append((v00, v10, v11))
            cells.append((v00, v11, v01))
    return TriMesh(vertices, np.array(cells))


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four congruent children at edge midpoints."""
    mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    nv = mesh.n_vertices
    cells = []
    for t in range(mesh.n_cells):
        a, b, c = mesh.cells[t]
        mab, mbc, mca = nv + mesh.cell_edges[t]
        cells.extend([(a, mab, mca), (b, mbc, mab), (c, mca, mbc), (mab, mbc, mca)])
    return TriMesh(vertices, np.array(cells))


def write_mesh(mesh: TriMesh, path) -> None:
    """Plain-text export: vertex lines "x y", a blank line, cell lines "i j k"."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write("\n")
        for i, j, k in mesh.cells:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path) -> TriMesh:
    """Read the plain-text format written by :func:`write_mesh`."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    head, _, tail = text.partition("\n\n")
    vertices = [tuple(map(float, line.split())) for line in head.splitlines() if line.strip()]
    cells = [tuple(map(int, line.split())) for line in tail.splitlines() if line.strip()]
    if not vertices or not cells:
        raise ValueError(f"mesh file {path} must contain vertices, a blank line, cells")
    return TriMesh(np.array(vertices), np.array(cells))


def load_mesh(spec: str) -> TriMesh:
    """Resolve a mesh selector: "square:n" or a path to a mesh file."""
    if spec.startswith("square:"):
        return structured_unit_square(int(spec.split(":", 1)[1]))
    return read_mesh(spec)
