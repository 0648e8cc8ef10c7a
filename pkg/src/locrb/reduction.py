"""Localized reduced bases, block Galerkin projection and online estimation.

Each subdomain carries its own basis, orthonormal in the broken H1 product of
that subdomain; the reduced operators inherit the block sparsity of the coarse
grid.  All quantities needed by the error estimator are projected once, so the
online phase never touches truth-dimensional objects.
"""

import json

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, DataError, NumericalError
from .estimator import compose_breakdown
from .forms import _P1_MASS, _scatter, triangle_gradients
from .space import DGFunction
from .truth import Trajectory, _coeffs


def _inner(product, u, v):
    if product is None:
        return float(u @ v)
    return float(u @ (product @ v))


def gram_schmidt(vectors, product=None, discard_tol=1e-10):
    """Orthonormalize vectors in the given inner product.

    One full re-orthogonalization pass is always applied; vectors whose
    post-projection norm falls below discard_tol times their original norm are
    dropped.  Returns the orthonormal vectors as rows.
    """
    basis = []
    dim = None
    for v in vectors:
        v = np.array(v, dtype=float)
        dim = v.size
        orig = np.sqrt(max(_inner(product, v, v), 0.0))
        if orig == 0.0:
            continue
        for _ in range(2):
            for b in basis:
                v = v - _inner(product, b, v) * b
        nrm = np.sqrt(max(_inner(product, v, v), 0.0))
        if nrm < discard_tol * orig:
            continue
        basis.append(v / nrm)
    if not basis:
        return np.zeros((0, dim if dim else 0))
    return np.array(basis)


class LocalBasis:
    """Orthonormal coefficient blocks spanning the local space on one subdomain."""

    def __init__(self, subdomain, vectors, product):
        self.subdomain = subdomain
        self.vectors = np.asarray(vectors, dtype=float)
        self.product = product

    @property
    def size(self):
        return self.vectors.shape[0]

    def gram(self):
        return self.vectors @ (self.product @ self.vectors.T)

    def append(self, vec):
        self.vectors = np.vstack([self.vectors, np.asarray(vec, dtype=float)])

    def projection_error(self, samples):
        """samples minus their H1(T)-orthogonal projection onto the basis."""
        samples = np.atleast_2d(samples)
        if self.size == 0:
            return samples.copy()
        coeffs = samples @ (self.product @ self.vectors.T)
        return samples - coeffs @ self.vectors


def local_h1_products(space):
    """Broken H1 product (stiffness plus mass) restricted to each subdomain."""
    mesh = space.mesh
    grads = triangle_gradients(mesh)
    blocks = np.einsum("tid,tjd->tij", grads, grads) * mesh.tri_area[:, None, None]
    blocks = blocks + mesh.tri_area[:, None, None] * _P1_MASS
    H = _scatter(blocks, space.tri_dofs, space.ndof).tocsr()
    products = []
    for T in range(space.n_subdomains):
        lo, hi = space.subdomain_offsets[T], space.subdomain_offsets[T + 1]
        products.append(H[lo:hi, lo:hi].tocsr())
    return products


def initialize_bases(space, f=None, products=None):
    """Initial bases per subdomain: normalized constant, then the source restriction."""
    if products is None:
        products = local_h1_products(space)
    f_coeffs = _coeffs(f) if f is not None else None
    bases = []
    for T in range(space.n_subdomains):
        lo, hi = space.subdomain_offsets[T], space.subdomain_offsets[T + 1]
        vecs = [np.ones(hi - lo)]
        if f_coeffs is not None:
            vecs.append(f_coeffs[lo:hi])
        bases.append(LocalBasis(T, gram_schmidt(vecs, products[T]), products[T]))
    return bases


class ReducedModel:
    """Block-projected operators plus precomputed estimator Gramians.

    Holds sparse truth-level handles only to support incremental extension;
    every online evaluation uses the dense reduced quantities.
    """

    def __init__(self, estimator, bases, mu_tilde):
        self.est = estimator
        self.space = estimator.space
        self.params = estimator.params
        self.bases = bases
        self.mu_tilde = float(mu_tilde)
        self.sharp_constants = estimator.sharp_constants
        self.C_P = estimator.C_P
        self.ceps_profile = estimator.ceps_profile
        if any(b.size == 0 for b in bases):
            raise ConfigurationError("every subdomain needs a nonempty basis")

        nxi = estimator.form.n_components
        self.n_components = nxi
        X = {"mass": estimator.mass, "ncM": estimator.nc_mass_matrix(),
             "osw": estimator.oswald_l2_matrix()}
        for xi, A in enumerate(estimator.form.components):
            X[f"op{xi}"] = A
        for xi, M in enumerate(estimator.nc_energy_matrices()):
            X[f"ncE{xi}"] = M
        for xi, P in enumerate(estimator.form.penalty):
            X[f"pen{xi}"] = P
        riesz = estimator.riesz_matrices()
        elem = estimator.element_matrices(mu_tilde)
        flux = estimator.flux_matrices(mu_tilde)
        for a in range(nxi):
            for b in range(nxi):
                X[f"riesz{a}_{b}"] = riesz[a][b]
                X[f"elem{a}_{b}"] = elem[a][b]
                X[f"flux{a}_{b}"] = flux[a][b]
        self._X = X
        self._Y = {"f": estimator.rhs,
                   "w0": estimator.oswald.T @ (estimator.mass @ estimator.p0),
                   "m0": estimator.mass @ estimator.p0}
        self.s0 = float(estimator.p0 @ (estimator.mass @ estimator.p0))
        self._lift = None
        self._rebuild()

    # ------------------------------------------------------------ bookkeeping

    @property
    def sizes(self):
        return [b.size for b in self.bases]

    @property
    def dim(self):
        return sum(self.sizes)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sizes)])

    def lift_matrix(self):
        """Sparse block-diagonal basis matrix, one column per reduced function."""
        if self._lift is None:
            rows, cols, vals = [], [], []
            offsets = self.offsets
            for T, basis in enumerate(self.bases):
                dofs = self.space.subdomain_dofs(T)
                for j in range(basis.size):
                    rows.append(dofs)
                    cols.append(np.full(len(dofs), offsets[T] + j))
                    vals.append(basis.vectors[j])
            self._lift = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.space.ndof, self.dim))
        return self._lift

    def _rebuild(self):
        L = self.lift_matrix()
        self._G = {name: (L.T @ (Xm @ L)).toarray()
                   for name, Xm in self._X.items()}
        self._g = {name: L.T @ y for name, y in self._Y.items()}
        self._refresh_initial()

    def _refresh_initial(self):
        self.p0_red = np.linalg.solve(self._G["mass"], self._g["m0"])

    # --------------------------------------------------------------- algebra

    @property
    def mass_red(self):
        return self._G["mass"]

    @property
    def f_red(self):
        return self._g["f"]

    def op_red(self, xi):
        return self._G[f"op{xi}"]

    def evaluate_operator(self, mu):
        theta = self.params.theta_values(mu)
        return sum(t * self.op_red(xi) for xi, t in enumerate(theta))

    def c_eps(self, mu_hat):
        theta = self.params.theta_values(mu_hat)
        profile = sum(t * u for t, u in zip(theta, self.ceps_profile))
        return float(np.min(profile))

    # -------------------------------------------------------------- extension

    def extend(self, new_vectors):
        """Append one local vector per listed subdomain; update projections in place.

        new_vectors maps subdomain index to an H1(T)-orthonormal coefficient
        block (orthogonal to the current basis there); only the rows and
        columns touching the new vectors are recomputed.
        """
        for T in sorted(new_vectors):
            vec = new_vectors[T]
            if vec is None:
                continue
            k = int(self.offsets[T] + self.bases[T].size)
            self.bases[T].append(vec)
            self._lift = None
            L = self.lift_matrix()
            v_glob = np.zeros(self.space.ndof)
            v_glob[self.space.subdomain_dofs(T)] = vec
            for name, Xm in self._X.items():
                G = self._G[name]
                G = np.insert(G, k, 0.0, axis=0)
                G = np.insert(G, k, 0.0, axis=1)
                G[:, k] = L.T @ (Xm @ v_glob)
                G[k, :] = L.T @ (Xm.T @ v_glob)
                self._G[name] = G
            for name, y in self._Y.items():
                self._g[name] = np.insert(self._g[name], k, float(v_glob @ y))
        self._refresh_initial()


def project_model(estimator, bases, mu_tilde):
    """Galerkin-project all truth quantities onto the local bases."""
    return ReducedModel(estimator, bases, mu_tilde)


def solve_reduced(model, mu, dt, n_steps):
    """Dense implicit-Euler marching of the reduced system."""
    system = model.mass_red + dt * model.evaluate_operator(mu)
    try:
        factor = sla.cho_factor(system)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular reduced system at mu={mu}: {exc}")
    p = model.p0_red.copy()
    snapshots = [p.copy()]
    for _ in range(n_steps):
        b = dt * model.f_red + model.mass_red @ p
        p = sla.cho_solve(factor, b)
        p += sla.cho_solve(factor, b - system @ p)  # one refinement sweep
        snapshots.append(p.copy())
    return Trajectory(np.array(snapshots), dt)


def lift(model, coeffs):
    """Expand reduced coefficients into the truth DG space."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (model.dim,):
        raise DataError(f"reduced coefficient length {coeffs.shape} does not match {model.dim}")
    return DGFunction(model.space, model.lift_matrix() @ coeffs)


def lift_trajectory(model, traj):
    lifted = (model.lift_matrix() @ traj.snapshots.T).T
    return Trajectory(lifted, traj.dt, model.space)


def online_estimate(model, traj, mu, mu_hat, mu_bar, mu_tilde, mode="surrogate"):
    """Estimator breakdown from reduced quantities only.

    Matches the direct surrogate evaluation of the lifted trajectory; the
    oracle indicator needs truth-dimensional solves and is rejected here.
    """
    if mode == "oracle":
        raise ConfigurationError("oracle indicator is not online-evaluable")
    if mode != "surrogate":
        raise ConfigurationError(f"unknown estimator mode '{mode}'")
    if float(mu_tilde) != model.mu_tilde:
        raise ConfigurationError(
            f"online weights were precomputed at mu_tilde={model.mu_tilde}, got {mu_tilde}")
    theta = model.params.theta_values(mu)
    nxi = model.n_components
    G = model._G
    snaps = traj.snapshots

    ncE = sum(t * G[f"ncE{xi}"] for xi, t in enumerate(theta))
    pen = sum(t * G[f"pen{xi}"] for xi, t in enumerate(theta))
    pairs = [(a, b, theta[a] * theta[b]) for a in range(nxi) for b in range(nxi)]
    riesz = sum(w * G[f"riesz{a}_{b}"] for a, b, w in pairs)
    surr = sum(w * (G[f"elem{a}_{b}"] + G[f"flux{a}_{b}"]) for a, b, w in pairs)

    nc_energy_sq = np.einsum("nd,nd->n", snaps, snaps @ ncE.T)
    diff = np.diff(snaps, axis=0)
    nc_l2_diff_sq = np.einsum("nd,nd->n", diff, diff @ G["ncM"].T)
    rt_sq = np.einsum("nd,nd->n", diff, diff @ riesz.T)
    ell_sq = np.einsum("nd,nd->n", snaps, snaps @ (surr + pen).T)
    c0 = snaps[0]
    ec0_sq = model.s0 - 2.0 * float(model._g["w0"] @ c0) + float(c0 @ (G["osw"] @ c0))

    return compose_breakdown(
        model.params, mu, mu_hat, mu_bar, mu_tilde, "surrogate", traj.dt,
        ec0_sq, nc_energy_sq, nc_l2_diff_sq, rt_sq, ell_sq,
        model.C_P, model.c_eps(mu_hat), model.sharp_constants)


# ----------------------------------------------------------- persistence

def save_model(model, path):
    """Single-file bundle: one JSON header line, then row-major basis blocks."""
    header = {
        "format": "locrb-reduced-bases",
        "version": 1,
        "mu_tilde": model.mu_tilde,
        "subdomain_basis_sizes": model.sizes,
        "block_shapes": [[b.size, b.vectors.shape[1]] for b in model.bases],
        "dtype": "float64",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for basis in model.bases:
            fh.write(np.ascontiguousarray(basis.vectors, dtype=np.float64).tobytes())


def load_bases(path):
    """(header, list of row-major basis blocks) from a saved bundle."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        blocks = []
        for m, n in header["block_shapes"]:
            raw = fh.read(8 * m * n)
            blocks.append(np.frombuffer(raw, dtype=np.float64).reshape(m, n).copy())
    return header, blocks


def load_model(path, estimator, products=None):
    """Re-project a saved basis bundle against a freshly built truth problem."""
    header, blocks = load_bases(path)
    if products is None:
        products = local_h1_products(estimator.space)
    bases = [LocalBasis(T, vecs, products[T]) for T, vecs in enumerate(blocks)]
    return ReducedModel(estimator, bases, header["mu_tilde"])
