"""Per-subdomain P1 discontinuous Galerkin spaces and Oswald interpolation.

Coefficients are nodal values at the three vertices of each triangle, so a
function may be two-valued on shared vertices.  Oswald interpolation averages
those values into the continuous subspace with zero boundary trace.
"""

import csv

import numpy as np
import scipy.sparse as sp

from .errors import DataError


class DGSpace:
    """Piecewise-linear discontinuous space on a mesh, 3 Lagrange nodes per triangle.

    Degrees of freedom are numbered 3*t + local, so the per-subdomain blocks
    inherit the mesh's subdomain-contiguous triangle ordering.
    """

    order = 1

    def __init__(self, mesh):
        self.mesh = mesh
        self.ndof = 3 * mesh.n_triangles
        self.tri_dofs = np.arange(self.ndof, dtype=np.int64).reshape(-1, 3)
        self.dof_vertex = mesh.triangles.ravel()
        self.node_coords = mesh.vertices[self.dof_vertex]
        self.subdomain_offsets = 3 * mesh.sub_tri_offsets
        ax, bx, ay, by = mesh.domain
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        self.boundary_vertex = (x == ax) | (x == bx) | (y == ay) | (y == by)
        self._oswald = None

    @property
    def n_subdomains(self):
        return self.mesh.n_subdomains

    def subdomain_dofs(self, sub):
        lo, hi = self.subdomain_offsets[sub], self.subdomain_offsets[sub + 1]
        return np.arange(lo, hi)

    def zeros(self):
        return DGFunction(self, np.zeros(self.ndof))

    def interpolate(self, g, pull=0.0):
        """Nodal interpolation of a pointwise-evaluable scalar field.

        With pull > 0 the evaluation points are moved by that relative amount
        from each vertex toward the owning triangle's centroid, which yields
        one-sided values for data that jump across element edges.
        """
        pts = self.node_coords
        if pull:
            cent = np.repeat(self.mesh.tri_centroid, 3, axis=0)
            pts = pts + pull * (cent - pts)
        vals = np.array([float(g(px, py)) for px, py in pts])
        if not np.all(np.isfinite(vals)):
            bad = pts[~np.isfinite(vals)][0]
            raise DataError(f"field evaluated non-finite at node ({bad[0]}, {bad[1]})")
        return DGFunction(self, vals)

    def oswald_matrix(self):
        """Sparse averaging operator onto the conforming zero-trace subspace.

        At each interior vertex the value is the arithmetic mean of the nodal
        values of all triangles meeting there; boundary vertices map to zero.
        """
        if self._oswald is None:
            nv = len(self.mesh.vertices)
            counts = np.bincount(self.dof_vertex, minlength=nv)
            order = np.argsort(self.dof_vertex, kind="stable")
            starts = np.concatenate([[0], np.cumsum(counts)])
            rows, cols, vals = [], [], []
            for v in range(nv):
                if self.boundary_vertex[v] or counts[v] == 0:
                    continue
                dofs = order[starts[v]:starts[v + 1]]
                rows.append(np.repeat(dofs, len(dofs)))
                cols.append(np.tile(dofs, len(dofs)))
                vals.append(np.full(len(dofs) ** 2, 1.0 / len(dofs)))
            self._oswald = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.ndof, self.ndof))
        return self._oswald


class DGFunction:
    """Coefficient vector in a DGSpace (nodal values per triangle)."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.ndof,):
            raise DataError(f"coefficient length {coeffs.shape} does not match dim {space.ndof}")
        self.space = space
        self.coeffs = coeffs

    def copy(self):
        return DGFunction(self.space, self.coeffs.copy())

    def restrict(self, sub):
        """Coefficient block on one subdomain."""
        return self.coeffs[self.space.subdomain_dofs(sub)]

    def __add__(self, other):
        return DGFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return DGFunction(self.space, self.coeffs - other.coeffs)

    def __rmul__(self, a):
        return DGFunction(self.space, float(a) * self.coeffs)

    def export_csv(self, path):
        """Write (triangle, x, y, value) rows for plotting."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["triangle", "x", "y", "value"])
            for d in range(self.space.ndof):
                x, y = self.space.node_coords[d]
                writer.writerow([d // 3, repr(x), repr(y), repr(self.coeffs[d])])


def interpolate(space, g, pull=0.0):
    return space.interpolate(g, pull=pull)


def oswald_interpolate(q):
    """Conforming part of a DG function: vertex averaging, zero boundary trace."""
    return DGFunction(q.space, q.space.oswald_matrix() @ q.coeffs)


def nonconforming_part(q):
    """q minus its Oswald interpolant; adding the conforming part reconstructs q."""
    return DGFunction(q.space, q.coeffs - q.space.oswald_matrix() @ q.coeffs)


def dg_prolongation(coarse, fine):
    """Exact embedding of a coarse DG space into the DG space on a nested refinement.

    Every fine triangle must lie inside exactly one coarse triangle (as produced
    by Mesh.refined); each fine nodal value is the coarse P1 value at that node.
    """
    cmesh, fmesh = coarse.mesh, fine.mesh
    ratio = fmesh.nx // cmesh.nx
    snap = 2 * ratio  # barycentric coordinates of nested nodes are multiples of 1/(2*ratio)
    rows, cols, vals = [], [], []
    cverts = cmesh.vertices
    for tf in range(fmesh.n_triangles):
        cx, cy = fmesh.tri_centroid[tf]
        tc = cmesh.locate_triangle(cx, cy)
        a, b, c = cmesh.triangles[tc]
        T = np.column_stack([cverts[b] - cverts[a], cverts[c] - cverts[a]])
        Tinv = np.linalg.inv(T)
        for loc in range(3):
            node = fmesh.vertices[fmesh.triangles[tf, loc]]
            l12 = Tinv @ (node - cverts[a])
            lam = np.array([1.0 - l12[0] - l12[1], l12[0], l12[1]])
            lam = np.round(lam * snap) / snap
            fdof = 3 * tf + loc
            for k in range(3):
                if lam[k] != 0.0:
                    rows.append(fdof)
                    cols.append(3 * tc + k)
                    vals.append(lam[k])
    return sp.csr_matrix((vals, (rows, cols)), shape=(fine.ndof, coarse.ndof))
