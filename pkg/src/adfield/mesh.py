"""Structured triangulations of the unit square, dof maps and quadrature.

Node numbering is row-major: node ``j*(n+1) + i`` sits at ``(i/n, j/n)``.
Each grid cell is split along its lower-left to upper-right diagonal, and
both triangles are stored counterclockwise.  P2 midpoint dofs are numbered
after the corner nodes, in the order of ``Mesh.edges``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Mesh:
    n: int
    nodes: np.ndarray  # (nv, 2)
    elements: np.ndarray  # (ne, 3) counterclockwise corner indices
    edges: np.ndarray  # (nedge, 2) sorted node pairs
    element_edges: np.ndarray  # (ne, 3) edges (0,1), (1,2), (2,0) of each element
    boundary_edges: np.ndarray  # (nb,) edge indices
    boundary_sides: np.ndarray  # (nb,) index into SIDES

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    @property
    def edge_midpoints(self) -> np.ndarray:
        return self.nodes[self.edges].mean(axis=1)

    def midpoint_index(self, edge: int) -> int:
        return self.num_nodes + int(edge)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def side_edges(self, side: str) -> np.ndarray:
        if side not in SIDES:
            raise InvalidArgumentError(f"unknown side tag {side!r}")
        return self.boundary_edges[self.boundary_sides == SIDES.index(side)]

    def locate(self, points) -> np.ndarray:
        """Index of the element containing each point (ties go to the lower index)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n
        i = np.clip(np.floor(pts[:, 0] * n).astype(int), 0, n - 1)
        j = np.clip(np.floor(pts[:, 1] * n).astype(int), 0, n - 1)
        fx = pts[:, 0] * n - i
        fy = pts[:, 1] * n - j
        upper = fy > fx
        return 2 * (j * n + i) + upper.astype(int)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"nodes {self.num_nodes} elements {self.num_elements}\n")
            for x, y in self.nodes:
                fh.write(f"{x!r} {y!r}\n")
            for a, b, c in self.elements:
                fh.write(f"{a} {b} {c}\n")


def build_unit_square_mesh(n: int) -> Mesh:
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"need at least one subdivision per side, got {n}")
    n = int(n)
    ticks = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    a = j * (n + 1) + i
    b = a + 1
    c = a + n + 2
    d = a + n + 1
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = np.column_stack([a, b, c])
    elements[1::2] = np.column_stack([a, c, d])

    local = elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    element_edges = inverse.reshape(-1, 3)

    # an edge is on the boundary iff it belongs to exactly one element
    counts = np.bincount(element_edges.ravel(), minlength=len(edges))
    boundary_edges = np.flatnonzero(counts == 1)
    p = nodes[edges[boundary_edges]]
    sides = np.full(len(boundary_edges), -1)
    sides[np.all(np.isclose(p[:, :, 0], 0.0), axis=1)] = 0
    sides[np.all(np.isclose(p[:, :, 0], 1.0), axis=1)] = 1
    sides[np.all(np.isclose(p[:, :, 1], 0.0), axis=1)] = 2
    sides[np.all(np.isclose(p[:, :, 1], 1.0), axis=1)] = 3
    assert np.all(sides >= 0)

    return Mesh(n, nodes, elements, edges, element_edges, boundary_edges, sides)


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle (0,0), (1,0), (0,1); weights sum to 1/2."""
    degree: int
    points: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.weights)


def _orbit(a):
    return [(a, a), (1.0 - 2.0 * a, a), (a, 1.0 - 2.0 * a)]


_A4 = 0.4459484909159648863183292538830519883991
_B4 = 0.09157621350977074345957146340220150785433
_W4A = 0.1116907948390057328475035042165614021851
_W4B = 0.05497587182766093381916316245010526448153

_RULES = {
    1: (np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])),
    2: (np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]),
        np.full(3, 1.0 / 6.0)),
    4: (np.array(_orbit(_A4) + _orbit(_B4)),
        np.array([_W4A] * 3 + [_W4B] * 3)),
}


def quadrature(degree: int) -> QuadratureRule:
    """Positive-weight rule exact for polynomials up to ``degree``.

    Degree 3 is served by the six point degree-4 rule, which keeps all
    weights positive.
    """
    if degree not in (1, 2, 3, 4):
        raise InvalidArgumentError(f"unsupported quadrature degree {degree}")
    key = 4 if degree == 3 else degree
    pts, w = _RULES[key]
    return QuadratureRule(degree, pts.copy(), w.copy())


# 1D Gauss-Legendre on [0, 1], used for edge integrals
def edge_quadrature(npts: int = 3):
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


SPACE_KINDS = ("P1", "P2", "P0", "P1-vector", "P2-vector")


@dataclass(frozen=True)
class DofMap:
    kind: str
    num_dofs: int
    cell_dofs: np.ndarray  # (ne, nloc)
    dof_coords: np.ndarray  # (num_dofs, 2)
    dirichlet_dofs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dirichlet_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def is_vector(self) -> bool:
        return self.kind.endswith("-vector")

    @property
    def scalar_kind(self) -> str:
        return self.kind.split("-")[0]

    @property
    def components(self) -> int:
        return 2 if self.is_vector else 1

    def side_dofs(self, mesh: Mesh, side: str, component: int | None = None) -> np.ndarray:
        """Dofs lying on one side of the square (all components unless one is given)."""
        if self.scalar_kind == "P0":
            raise InvalidArgumentError("P0 has no boundary dofs")
        edges = mesh.side_edges(side)
        scalar = set(mesh.edges[edges].ravel().tolist())
        if self.scalar_kind == "P2":
            scalar.update(mesh.midpoint_index(e) for e in edges)
        scalar = np.array(sorted(scalar), dtype=np.int64)
        if not self.is_vector:
            return scalar
        comps = (0, 1) if component is None else (component,)
        return np.sort(np.concatenate([2 * scalar + c for c in comps]))

    def with_dirichlet(self, dofs, values) -> "DofMap":
        dofs = np.asarray(dofs, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
        if np.any(dofs < 0) or np.any(dofs >= self.num_dofs):
            raise InvalidArgumentError("Dirichlet dof out of range")
        table = dict(zip(dofs.tolist(), values.tolist()))
        keys = np.array(sorted(table), dtype=np.int64)
        vals = np.array([table[k] for k in keys.tolist()], dtype=float)
        return DofMap(self.kind, self.num_dofs, self.cell_dofs, self.dof_coords, keys, vals)


def build_dofmap(mesh: Mesh, kind: str) -> DofMap:
    if kind not in SPACE_KINDS:
        raise InvalidArgumentError(f"unknown space kind {kind!r}")
    scalar = kind.split("-")[0]
    if scalar == "P0":
        cells = np.arange(mesh.num_elements).reshape(-1, 1)
        coords = mesh.nodes[mesh.elements].mean(axis=1)
    elif scalar == "P1":
        cells = mesh.elements.copy()
        coords = mesh.nodes
    else:
        cells = np.hstack([mesh.elements, mesh.num_nodes + mesh.element_edges])
        coords = np.vstack([mesh.nodes, mesh.edge_midpoints])
    if kind.endswith("-vector"):
        cells = np.stack([2 * cells, 2 * cells + 1], axis=2).reshape(len(cells), -1)
        coords = np.repeat(coords, 2, axis=0)
    return DofMap(kind, len(coords), cells, coords)
