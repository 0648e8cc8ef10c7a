"""Parameter-separable SWIPDG operators: volume, coupling and penalty blocks.

Every operator is assembled once per affine component; evaluation at a
parameter is a scalar combination.  Coefficients are piecewise constant per
triangle, which makes all face averages and the local L2 projection of fluxes
exact for P1 functions.
"""

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataError, ParameterError
from .grid import BOUNDARY, _GAUSS2


class ParameterSpec:
    """Affine coefficient functions theta_xi over an admissible interval."""

    def __init__(self, thetas, interval):
        self.thetas = tuple(thetas)
        lo, hi = float(interval[0]), float(interval[1])
        if not lo <= hi:
            raise ConfigurationError(f"empty parameter interval [{lo}, {hi}]")
        self.interval = (lo, hi)

    @property
    def n_components(self):
        return len(self.thetas)

    def contains(self, mu):
        lo, hi = self.interval
        return lo <= mu <= hi

    def require(self, mu):
        if not self.contains(mu):
            raise ParameterError(f"parameter {mu} outside admissible interval {self.interval}")

    def theta_values(self, mu):
        self.require(mu)
        return np.array([float(th(mu)) for th in self.thetas])


def two_component_channel(interval=(0.1, 1.0)):
    """theta_1 = 1, theta_2 = 1 - mu: the background-plus-channel family."""
    return ParameterSpec((lambda mu: 1.0, lambda mu: 1.0 - mu), interval)


def nonparametric(interval=(0.0, 1.0)):
    return ParameterSpec((lambda mu: 1.0,), interval)


class CoefficientField:
    """Piecewise-constant diffusion tensor and affine scalar components.

    kappa has shape (nt, 2, 2), symmetric positive definite per triangle;
    lambdas is one nonnegative (nt,) array per affine component, the first
    strictly positive.
    """

    def __init__(self, kappa, lambdas):
        kappa = np.asarray(kappa, dtype=float)
        self.kappa = kappa
        self.lambdas = [np.asarray(l, dtype=float) for l in lambdas]
        asym = np.abs(kappa - kappa.transpose(0, 2, 1)).max()
        if asym > 1e-14 * max(np.abs(kappa).max(), 1.0):
            raise DataError(f"diffusion tensor not symmetric (deviation {asym:.2e})")
        tr = kappa[:, 0, 0] + kappa[:, 1, 1]
        det = kappa[:, 0, 0] * kappa[:, 1, 1] - kappa[:, 0, 1] * kappa[:, 1, 0]
        disc = np.sqrt(np.maximum((0.5 * tr) ** 2 - det, 0.0))
        self.kappa_min_eig = 0.5 * tr - disc
        if np.any(self.kappa_min_eig <= 0.0):
            raise DataError("diffusion tensor not positive definite on some triangle")
        if np.any(self.lambdas[0] <= 0.0):
            raise DataError("first scalar component must be strictly positive")
        for l in self.lambdas[1:]:
            if np.any(l < 0.0):
                raise DataError("scalar components must be nonnegative")

    @property
    def n_components(self):
        return len(self.lambdas)

    @classmethod
    def constant(cls, mesh, kappa=None, lambdas=None):
        nt = mesh.n_triangles
        if kappa is None:
            kappa = np.eye(2)
        kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (nt, 2, 2)).copy()
        if lambdas is None:
            lambdas = [1.0]
        lam = [np.full(nt, float(l)) if np.ndim(l) == 0 else np.asarray(l, float)
               for l in lambdas]
        return cls(kappa, lam)

    def lambda_of(self, theta):
        """Scalar field at given coefficient values, one value per triangle."""
        return sum(t * l for t, l in zip(theta, self.lambdas))

    def refine_to(self, fine_mesh, coarse_mesh):
        """Inherit the piecewise-constant data onto a nested refinement."""
        parent = np.array([coarse_mesh.locate_triangle(cx, cy)
                           for cx, cy in fine_mesh.tri_centroid])
        return CoefficientField(self.kappa[parent], [l[parent] for l in self.lambdas])


def triangle_gradients(mesh):
    """Constant gradients of the three P1 basis functions, shape (nt, 3, 2)."""
    v = mesh.vertices[mesh.triangles]
    e = v[:, [2, 0, 1], :] - v[:, [1, 2, 0], :]  # edge opposite node i
    grads = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    grads /= (2.0 * mesh.tri_area)[:, None, None]
    return grads


def swipdg_weights(mesh, field, face):
    """Diffusion-adaptive face weights (w-, w+, sigma_eps).

    On boundary faces the one-sided convention (1, 0, delta-) applies.
    """
    n = mesh.face_normal[face]
    tm = mesh.face_tminus[face]
    dm = float(n @ field.kappa[tm] @ n)
    if mesh.face_kind[face] == BOUNDARY:
        return 1.0, 0.0, dm
    tp = mesh.face_tplus[face]
    dp = float(n @ field.kappa[tp] @ n)
    den = dm + dp
    if den <= 0.0:
        raise DataError(f"degenerate diffusion on face {face}: delta- + delta+ = {den}")
    return dp / den, dm / den, dm * dp / den


class AffineForm:
    """Sum_xi theta_xi(mu) * A_xi with separate volume, coupling and penalty parts."""

    def __init__(self, params, volume, coupling, penalty, sigma):
        self.params = params
        self.volume = volume
        self.coupling = coupling
        self.penalty = penalty
        self.sigma = sigma
        self.components = [(v + c + p).tocsr()
                           for v, c, p in zip(volume, coupling, penalty)]
        self._cache = {}

    @property
    def n_components(self):
        return len(self.components)

    def evaluate_at(self, mu):
        """Sparse operator at a parameter; raises ParameterError outside the interval."""
        key = float(mu)
        if key not in self._cache:
            theta = self.params.theta_values(mu)
            acc = theta[0] * self.components[0]
            for t, A in zip(theta[1:], self.components[1:]):
                if t != 0.0:
                    acc = acc + t * A
            self._cache[key] = acc.tocsr()
        return self._cache[key]


def evaluate_at(form, mu):
    return form.evaluate_at(mu)


def _face_data(mesh, space, field, faces, boundary):
    """Per-face dof maps, jump integrals, trace quadrature and flux coefficients."""
    grads = triangle_gradients(mesh)
    tm = mesh.face_tminus[faces]
    n = mesh.face_normal[faces]
    h = mesh.face_h[faces]
    v0, v1 = mesh.face_vertices[faces, 0], mesh.face_vertices[faces, 1]
    nf = len(faces)
    size = 3 if boundary else 6
    rng = np.arange(nf)

    def local_index(tri, v):
        return (mesh.triangles[tri] == v[:, None]).argmax(axis=1)

    lm0, lm1 = local_index(tm, v0), local_index(tm, v1)
    jump_int = np.zeros((nf, size))
    jump_int[rng, lm0] = 0.5 * h
    jump_int[rng, lm1] = 0.5 * h
    trace = np.zeros((nf, 2, size))
    for a, s in enumerate(_GAUSS2):
        trace[rng, a, lm0] = 1.0 - s
        trace[rng, a, lm1] = s
    # (kappa grad phi_i) . n, one column per local basis function of t-
    flux_m = np.einsum("fid,fd->fi", np.einsum("fde,fie->fid", field.kappa[tm], grads[tm]), n)
    dm = np.einsum("fd,fde,fe->f", n, field.kappa[tm], n)
    dofmap = space.tri_dofs[tm]

    if boundary:
        return dict(tm=tm, tp=None, h=h, jump_int=jump_int, trace=trace,
                    flux=(flux_m, None), deltas=(dm, None), weights=(np.ones(nf), None),
                    sigma_eps=dm, dofmap=dofmap)

    tp = mesh.face_tplus[faces]
    lp0, lp1 = local_index(tp, v0), local_index(tp, v1)
    jump_int[rng, 3 + lp0] = -0.5 * h
    jump_int[rng, 3 + lp1] = -0.5 * h
    for a, s in enumerate(_GAUSS2):
        trace[rng, a, 3 + lp0] = -(1.0 - s)
        trace[rng, a, 3 + lp1] = -s
    flux_p = np.einsum("fid,fd->fi", np.einsum("fde,fie->fid", field.kappa[tp], grads[tp]), n)
    dp = np.einsum("fd,fde,fe->f", n, field.kappa[tp], n)
    den = dm + dp
    if np.any(den <= 0.0):
        bad = faces[np.nonzero(den <= 0.0)[0][0]]
        raise DataError(f"degenerate diffusion on face {bad}")
    weights = (dp / den, dm / den)
    sigma_eps = dm * dp / den
    dofmap = np.hstack([dofmap, space.tri_dofs[tp]])
    return dict(tm=tm, tp=tp, h=h, jump_int=jump_int, trace=trace,
                flux=(flux_m, flux_p), deltas=(dm, dp), weights=weights,
                sigma_eps=sigma_eps, dofmap=dofmap)


def _scatter(blocks, dofmap, ndof):
    size = dofmap.shape[1]
    rows = np.repeat(dofmap, size, axis=1).ravel()
    cols = np.tile(dofmap, (1, size)).ravel()
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(ndof, ndof))


def assemble_affine_operator(mesh, space, field, params, sigma=8.0):
    """Assemble all affine components of the SWIPDG bilinear form.

    For each component: the broken diffusion stiffness over all triangles, the
    symmetrized coupling terms -int_e {lambda kappa grad p}.n [q] over every
    interior and boundary face, and the penalty sigma/h_e {lambda}_e
    sigma_eps^e int_e [p][q].  Jumps and averages degenerate to the one-sided
    trace on boundary faces, which enforces the homogeneous Dirichlet condition.
    """
    if sigma < 1.0:
        raise ConfigurationError(f"penalty factor sigma={sigma} must be >= 1")
    if params.n_components != field.n_components:
        raise ConfigurationError("parameter and coefficient component counts differ")
    ndof = space.ndof
    grads = triangle_gradients(mesh)
    flux = np.einsum("tde,tie->tid", field.kappa, grads)
    base = np.einsum("tid,tjd->tij", grads, flux) * mesh.tri_area[:, None, None]
    volume = [_scatter(base * lam[:, None, None], space.tri_dofs, ndof)
              for lam in field.lambdas]

    coupling = [sp.csr_matrix((ndof, ndof)) for _ in field.lambdas]
    penalty = [sp.csr_matrix((ndof, ndof)) for _ in field.lambdas]
    for faces, is_bnd in ((mesh.interior_faces, False), (mesh.boundary_faces, True)):
        if len(faces) == 0:
            continue
        data = _face_data(mesh, space, field, faces, is_bnd)
        tm, tp = data["tm"], data["tp"]
        wm, wp = data["weights"]
        h = data["h"]
        quad_w = 0.5 * h  # both Gauss weights equal |e|/2
        jump_gram = np.einsum("fai,faj->fij", data["trace"], data["trace"]) \
            * quad_w[:, None, None]
        for xi, lam in enumerate(field.lambdas):
            lam_m = lam[tm]
            if is_bnd:
                avg_flux = lam_m[:, None] * data["flux"][0]
                lam_avg = lam_m
            else:
                lam_p = lam[tp]
                avg_flux = np.hstack([
                    (wm * lam_m)[:, None] * data["flux"][0],
                    (wp * lam_p)[:, None] * data["flux"][1]])
                lam_avg = wm * lam_m + wp * lam_p
            cf = -np.einsum("fi,fj->fij", data["jump_int"], avg_flux)
            coupling[xi] = coupling[xi] + _scatter(cf + cf.transpose(0, 2, 1),
                                                   data["dofmap"], ndof)
            coef = sigma / h * lam_avg * data["sigma_eps"]
            penalty[xi] = penalty[xi] + _scatter(coef[:, None, None] * jump_gram,
                                                 data["dofmap"], ndof)
    return AffineForm(params, volume, coupling, penalty, sigma)


_P1_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_P1_MASS_INV = np.array([[3.0, -1.0, -1.0], [-1.0, 3.0, -1.0], [-1.0, -1.0, 3.0]]) * 3.0


def assemble_mass_and_rhs(mesh, space, f=None):
    """Block-diagonal P1 mass matrix and the load vector int f phi_i.

    f may be None (zero load), a DGFunction (exact: M times its coefficients),
    or a callable evaluated with the edge-midpoint rule, which is exact for
    integrands of polynomial degree two.
    """
    blocks = mesh.tri_area[:, None, None] * _P1_MASS
    mass = _scatter(blocks, space.tri_dofs, space.ndof)
    if f is None:
        return mass, np.zeros(space.ndof)
    if hasattr(f, "coeffs"):
        return mass, mass @ f.coeffs
    v = mesh.vertices[mesh.triangles]
    mids = 0.5 * (v + v[:, [1, 2, 0], :])
    fv = np.array([[float(f(px, py)) for px, py in tri_mids] for tri_mids in mids])
    basis_at_mids = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    rhs_local = (mesh.tri_area[:, None] / 3.0) * (fv @ basis_at_mids)
    return mass, rhs_local.ravel()


def block_mass_inverse(mesh, space):
    """Exact inverse of the block-diagonal P1 mass matrix."""
    blocks = _P1_MASS_INV / mesh.tri_area[:, None, None]
    return _scatter(blocks, space.tri_dofs, space.ndof)


def export_coo(matrix, path):
    """Write a sparse matrix as 'row col value' lines."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")
