"""Structured criss-cross triangulations nested in a coarse rectangular partition.

The fine grid is a uniform nx-by-ny grid of rectangles, each split into two
triangles along the lower-left to upper-right diagonal.  The coarse grid is an
NX-by-NY partition of the same rectangle into subdomains; fine cells never
straddle a subdomain boundary.  Triangles are stored grouped by subdomain so
that per-subdomain degree-of-freedom blocks are contiguous.
"""

import json

import numpy as np

from .errors import ConfigurationError

# face kinds
INNER = 0      # interior face inside a single subdomain
COUPLING = 1   # interior face on the interface between two subdomains
BOUNDARY = 2   # face on the domain boundary

# 2-point Gauss rule on the unit interval
_GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


class Mesh:
    """Nested pair of partitions of an axis-aligned rectangle.

    Attributes
    ----------
    domain : tuple (ax, bx, ay, by)
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise vertex indices
    tri_subdomain : (nt,) int array, owning subdomain per triangle
    tri_area : (nt,) float array
    sub_tri_offsets : (ns+1,) int array, triangle ranges per subdomain
    subdomain_rects : list of (ax, bx, ay, by) per subdomain
    face_vertices, face_tminus, face_tplus, face_kind, face_normal,
    face_h, face_coarse, face_quad : per-face connectivity and geometry;
        normals point away from the lower-indexed adjacent triangle,
        face_tplus is -1 on boundary faces, face_quad holds the two Gauss
        points of each face
    coarse_face_subs : (ncf, 2) int array, adjacent subdomains per coarse
        face (-1 outside the domain)
    coarse_face_fine : list of int arrays, fine faces per coarse face

    Instances are immutable by convention once constructed.
    """

    def __init__(self, domain, fine_cells, coarse_cells):
        ax, bx, ay, by = (float(v) for v in domain)
        if not (bx > ax and by > ay):
            raise ConfigurationError(
                f"degenerate domain [{ax},{bx}]x[{ay},{by}]: sides must have positive length")
        nx, ny = (int(v) for v in fine_cells)
        NX, NY = (int(v) for v in coarse_cells)
        for value, name in ((nx, "nx"), (ny, "ny"), (NX, "NX"), (NY, "NY")):
            if value < 1:
                raise ConfigurationError(f"cell count {name}={value} must be >= 1")
        if nx % NX:
            raise ConfigurationError(f"fine count nx={nx} not divisible by coarse count NX={NX}")
        if ny % NY:
            raise ConfigurationError(f"fine count ny={ny} not divisible by coarse count NY={NY}")

        self.domain = (ax, bx, ay, by)
        self.nx, self.ny, self.NX, self.NY = nx, ny, NX, NY
        self.mx, self.my = nx // NX, ny // NY
        self.dx, self.dy = (bx - ax) / nx, (by - ay) / ny

        xs = np.linspace(ax, bx, nx + 1)
        ys = np.linspace(ay, by, ny + 1)
        X, Y = np.meshgrid(xs, ys)
        self.vertices = np.column_stack([X.ravel(), Y.ravel()])

        self._build_triangles(xs, ys)
        self._build_faces()

    # ------------------------------------------------------------------ build

    def _build_triangles(self, xs, ys):
        nx, NX, NY, mx, my = self.nx, self.NX, self.NY, self.mx, self.my

        def vid(i, j):
            return j * (nx + 1) + i

        tris, subs, rects = [], [], []
        for J in range(NY):
            for I in range(NX):
                s = J * NX + I
                rects.append((xs[I * mx], xs[(I + 1) * mx], ys[J * my], ys[(J + 1) * my]))
                for jj in range(my):
                    for ii in range(mx):
                        i, j = I * mx + ii, J * my + jj
                        ll, lr = vid(i, j), vid(i + 1, j)
                        ur, ul = vid(i + 1, j + 1), vid(i, j + 1)
                        tris.append((ll, lr, ur))   # below the diagonal
                        tris.append((ll, ur, ul))   # above the diagonal
                        subs.extend((s, s))
        self.triangles = np.asarray(tris, dtype=np.int64)
        self.tri_subdomain = np.asarray(subs, dtype=np.int64)
        self.subdomain_rects = rects
        self.sub_tri_offsets = np.arange(NX * NY + 1, dtype=np.int64) * (2 * mx * my)

        v = self.vertices[self.triangles]
        self.tri_area = 0.5 * np.abs(
            (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
            - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1]))
        self.tri_centroid = v.mean(axis=1)

    def _build_faces(self):
        edge_map = {}
        for t, (a, b, c) in enumerate(self.triangles):
            for va, vb in ((a, b), (b, c), (c, a)):
                key = (va, vb) if va < vb else (vb, va)
                edge_map.setdefault(key, []).append(t)

        coarse_subs, coarse_key = [], {}
        NX, NY = self.NX, self.NY
        for J in range(NY):          # interior vertical coarse faces
            for I in range(NX - 1):
                sa, sb = J * NX + I, J * NX + I + 1
                coarse_key[(sa, sb)] = len(coarse_subs)
                coarse_subs.append((sa, sb))
        for J in range(NY - 1):      # interior horizontal coarse faces
            for I in range(NX):
                sa, sb = J * NX + I, (J + 1) * NX + I
                coarse_key[(sa, sb)] = len(coarse_subs)
                coarse_subs.append((sa, sb))
        ax, bx, ay, by = self.domain
        for J in range(NY):          # boundary coarse faces, one per touching side
            for I in range(NX):
                s = J * NX + I
                for side, on in (("L", I == 0), ("R", I == NX - 1),
                                 ("B", J == 0), ("T", J == NY - 1)):
                    if on:
                        coarse_key[(s, side)] = len(coarse_subs)
                        coarse_subs.append((s, -1))
        coarse_fine = [[] for _ in coarse_subs]

        fv, tmin, tplus, kinds, coarse_ids = [], [], [], [], []
        for (va, vb), tris in edge_map.items():
            f = len(fv)
            fv.append((va, vb))
            tm = min(tris)
            tmin.append(tm)
            if len(tris) == 2:
                tplus.append(max(tris))
                sm, sp = self.tri_subdomain[tm], self.tri_subdomain[max(tris)]
                if sm == sp:
                    kinds.append(INNER)
                    coarse_ids.append(-1)
                else:
                    kinds.append(COUPLING)
                    cid = coarse_key[(min(sm, sp), max(sm, sp))]
                    coarse_ids.append(cid)
                    coarse_fine[cid].append(f)
            else:
                tplus.append(-1)
                kinds.append(BOUNDARY)
                mid = 0.5 * (self.vertices[va] + self.vertices[vb])
                if mid[0] == ax:
                    side = "L"
                elif mid[0] == bx:
                    side = "R"
                elif mid[1] == ay:
                    side = "B"
                else:
                    side = "T"
                cid = coarse_key[(self.tri_subdomain[tm], side)]
                coarse_ids.append(cid)
                coarse_fine[cid].append(f)

        self.face_vertices = np.asarray(fv, dtype=np.int64)
        self.face_tminus = np.asarray(tmin, dtype=np.int64)
        self.face_tplus = np.asarray(tplus, dtype=np.int64)
        self.face_kind = np.asarray(kinds, dtype=np.int64)
        self.face_coarse = np.asarray(coarse_ids, dtype=np.int64)
        self.coarse_face_subs = np.asarray(coarse_subs, dtype=np.int64)
        self.coarse_face_fine = [np.asarray(ff, dtype=np.int64) for ff in coarse_fine]

        p0 = self.vertices[self.face_vertices[:, 0]]
        p1 = self.vertices[self.face_vertices[:, 1]]
        edge = p1 - p0
        self.face_h = np.hypot(edge[:, 0], edge[:, 1])
        if np.any(self.face_h <= 0.0):
            raise ConfigurationError("zero-length face produced; check domain and cell counts")
        normal = np.column_stack([edge[:, 1], -edge[:, 0]]) / self.face_h[:, None]
        # orient away from the t- triangle
        mid = 0.5 * (p0 + p1)
        flip = np.einsum("fd,fd->f", normal, mid - self.tri_centroid[self.face_tminus]) < 0.0
        normal[flip] *= -1.0
        self.face_normal = normal
        self.face_quad = p0[:, None, :] + np.array(_GAUSS2)[None, :, None] * edge[:, None, :]

    # ------------------------------------------------------------ convenience

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_subdomains(self):
        return self.NX * self.NY

    @property
    def n_faces(self):
        return len(self.face_vertices)

    @property
    def interior_faces(self):
        """Indices of all interior fine faces (within-subdomain and coupling)."""
        return np.nonzero(self.face_kind != BOUNDARY)[0]

    @property
    def boundary_faces(self):
        return np.nonzero(self.face_kind == BOUNDARY)[0]

    @property
    def coupling_faces(self):
        return np.nonzero(self.face_kind == COUPLING)[0]

    def face_measure(self, face):
        """Euclidean length of a face segment (equals the stored diameter)."""
        va, vb = self.face_vertices[face]
        d = self.vertices[vb] - self.vertices[va]
        return float(np.hypot(d[0], d[1]))

    def subdomain_triangles(self, sub):
        lo, hi = self.sub_tri_offsets[sub], self.sub_tri_offsets[sub + 1]
        return np.arange(lo, hi)

    def locate_triangle(self, x, y):
        """Index of the triangle containing (x, y); ties resolve to the lower triangle."""
        ax, _, ay, _ = self.domain
        i = min(max(int((x - ax) / self.dx), 0), self.nx - 1)
        j = min(max(int((y - ay) / self.dy), 0), self.ny - 1)
        xl, yl = x - (ax + i * self.dx), y - (ay + j * self.dy)
        upper = yl * self.dx > xl * self.dy
        sub = (j // self.my) * self.NX + (i // self.mx)
        cell = int(self.sub_tri_offsets[sub]) // 2 \
            + (j % self.my) * self.mx + (i % self.mx)
        return 2 * cell + int(upper)

    def refined(self, factor=2):
        """Uniformly refined mesh with identical coarse partition; fine triangles nest."""
        return Mesh(self.domain, (self.nx * factor, self.ny * factor), (self.NX, self.NY))

    # ---------------------------------------------------------------- export

    def to_json_dict(self):
        return {
            "domain": list(self.domain),
            "fine_cells": [self.nx, self.ny],
            "coarse_cells": [self.NX, self.NY],
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "triangle_subdomain": self.tri_subdomain.tolist(),
            "faces": [
                {
                    "vertices": self.face_vertices[f].tolist(),
                    "kind": int(self.face_kind[f]),
                    "t_minus": int(self.face_tminus[f]),
                    "t_plus": int(self.face_tplus[f]),
                    "normal": self.face_normal[f].tolist(),
                    "h": float(self.face_h[f]),
                    "coarse_face": int(self.face_coarse[f]),
                }
                for f in range(self.n_faces)
            ],
        }

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)


def build_mesh(domain, fine_cells, coarse_cells):
    """Build the nested coarse/fine partition of a rectangle.

    Parameters
    ----------
    domain : (ax, bx, ay, by) rectangle bounds
    fine_cells : (nx, ny) fine grid cells, each split into two triangles
    coarse_cells : (NX, NY) subdomains; must divide the fine counts
    """
    return Mesh(domain, fine_cells, coarse_cells)
