"""Norms, constants and all terms of the fully discrete a posteriori estimate.

The total bound combines the initial conforming error, nonconformity terms of
the trajectory, an elliptic indicator for the reconstruction error, and the
time-stepping residual, in the energy norm anchored at a fixed parameter.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ParameterIncompatibleError
from .forms import _face_data, _scatter, _P1_MASS, block_mass_inverse
from .truth import _coeffs, elliptic_reconstruction

SQRT5 = math.sqrt(5.0)


class NormEvaluator:
    """Parametric energy seminorm and DG norm from assembled affine parts."""

    def __init__(self, form):
        self.form = form
        self.params = form.params
        self._cache = {}

    def matrices_at(self, mu):
        key = float(mu)
        if key not in self._cache:
            theta = self.params.theta_values(mu)
            V = sum(t * m for t, m in zip(theta, self.form.volume))
            P = sum(t * m for t, m in zip(theta, self.form.penalty))
            self._cache[key] = (V.tocsr(), P.tocsr())
        return self._cache[key]

    def seminorm_sq(self, q, mu):
        V, _ = self.matrices_at(mu)
        c = _coeffs(q)
        return float(c @ (V @ c))

    def penalty_sq(self, q, mu):
        _, P = self.matrices_at(mu)
        c = _coeffs(q)
        return float(c @ (P @ c))

    def dg_norm_sq(self, q, mu):
        return self.seminorm_sq(q, mu) + self.penalty_sq(q, mu)

    def dg_inner(self, q, r, mu):
        V, P = self.matrices_at(mu)
        return float(_coeffs(q) @ ((V + P) @ _coeffs(r)))

    def energy_and_dg_norm(self, q, mu):
        semi = max(self.seminorm_sq(q, mu), 0.0)
        dg = semi + max(self.penalty_sq(q, mu), 0.0)
        return math.sqrt(semi), math.sqrt(dg)


def energy_and_dg_norm(norms, q, mu):
    """(energy seminorm, DG norm) of q at mu."""
    return norms.energy_and_dg_norm(q, mu)


def min_theta_constants(params, mu, mu_bar):
    """Extremal coefficient ratios (alpha, gamma) between two parameters.

    Components vanishing at both parameters are skipped; a positive
    coefficient over a vanishing one makes the bound unusable.
    """
    tv = params.theta_values(mu)
    tb = params.theta_values(mu_bar)
    ratios = []
    for a, b in zip(tv, tb):
        if b == 0.0:
            if a == 0.0:
                continue
            raise ParameterIncompatibleError(
                f"theta ratio {a}/0 between mu={mu} and anchor {mu_bar}")
        ratios.append(a / b)
    if not ratios:
        return 1.0, 1.0
    return min(ratios), max(ratios)


def poincare_and_ceps(mu_hat, field, params, domain, sharp=False):
    """(C_P, c_eps, C_HQb) at the anchor parameter.

    c_eps is the minimum over triangles of the smallest eigenvalue of the
    scaled diffusion tensor; C_P is the strip-width Friedrichs constant
    (shortest domain side over pi); C_HQb combines them, literally as
    C_P / c_eps, or C_P / sqrt(c_eps) when sharp.
    """
    theta = params.theta_values(mu_hat)
    lam = field.lambda_of(theta)
    c_eps = float(np.min(lam * field.kappa_min_eig))
    ax, bx, ay, by = domain
    c_p = min(bx - ax, by - ay) / math.pi
    c_hqb = c_p / math.sqrt(c_eps) if sharp else c_p / c_eps
    return c_p, c_eps, c_hqb


@dataclass
class EstimatorBreakdown:
    """All terms and constants of the total estimate for one parameter."""

    mu: float
    mu_hat: float
    mu_bar: float
    mu_tilde: float
    mode: str
    alpha_mu_bar: float
    alpha_mu_hat: float
    gamma_mu_bar: float
    c_eps_hat: float
    C_P_omega: float
    C_HQb_hat: float
    C_HQb_hat_sharp: float
    constant_C: float
    sharp_constants: bool
    initial_error: float
    nonconformity_norm: float
    nonconformity_dt_norm_raw: float
    nonconformity_dt_norm: float
    eta_ell: float
    time_residual_norm: float
    total: float

    def recompute_total(self):
        """Reassemble the total from the stored terms and constants."""
        if self.alpha_mu_bar <= 0.0 or self.alpha_mu_hat <= 0.0:
            return math.inf
        chq = self.C_HQb_hat_sharp if self.sharp_constants else self.C_HQb_hat
        braces = (self.initial_error
                  + self.constant_C * self.nonconformity_norm
                  + 2.0 / self.alpha_mu_hat * self.nonconformity_dt_norm
                  + (self.constant_C + 1.0) * self.eta_ell
                  + 2.0 / self.alpha_mu_hat * chq * self.time_residual_norm)
        return self.alpha_mu_bar ** -0.5 * braces

    def to_dict(self):
        return asdict(self)

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def compose_breakdown(params, mu, mu_hat, mu_bar, mu_tilde, mode, dt,
                      ec0_sq, nc_energy_sq, nc_l2_diff_sq, rt_sq, ell_sq,
                      c_p, c_eps, sharp=False):
    """Combine per-snapshot quadratic terms into the total estimate.

    nc_energy_sq and ell_sq cover snapshots 0..n_t; the time quadrature of the
    nonconformity term starts at the first step, differences and residual
    terms carry one value per step.
    """
    alpha_bar, gamma_bar = min_theta_constants(params, mu, mu_bar)
    alpha_hat, _ = min_theta_constants(params, mu, mu_hat)
    chq_lit = c_p / c_eps
    chq_sharp = c_p / math.sqrt(c_eps)
    chq = chq_sharp if sharp else chq_lit

    clip = lambda a: np.maximum(np.asarray(a, dtype=float), 0.0)
    nc_energy_sq = clip(nc_energy_sq)
    nc_norm = 2.0 * math.sqrt(dt / 3.0 * nc_energy_sq[1:].sum())
    nc_dt_raw = math.sqrt(clip(nc_l2_diff_sq).sum() / dt)
    nc_dt = chq * nc_dt_raw
    rt_norm = math.sqrt(dt / 3.0 * clip(rt_sq).sum())
    eta_ell = math.sqrt(4.0 * dt / 3.0 * clip(ell_sq).sum())
    ec0 = math.sqrt(max(ec0_sq, 0.0))

    result = EstimatorBreakdown(
        mu=float(mu), mu_hat=float(mu_hat), mu_bar=float(mu_bar), mu_tilde=float(mu_tilde),
        mode=mode, alpha_mu_bar=alpha_bar, alpha_mu_hat=alpha_hat, gamma_mu_bar=gamma_bar,
        c_eps_hat=c_eps, C_P_omega=c_p, C_HQb_hat=chq_lit, C_HQb_hat_sharp=chq_sharp,
        constant_C=SQRT5, sharp_constants=sharp, initial_error=ec0,
        nonconformity_norm=nc_norm, nonconformity_dt_norm_raw=nc_dt_raw,
        nonconformity_dt_norm=nc_dt, eta_ell=eta_ell, time_residual_norm=rt_norm,
        total=0.0)
    result.total = result.recompute_total()
    return result


class ErrorEstimator:
    """Direct (high-dimensional) evaluation of every estimator term.

    Bundles the truth discretization; the reduced model mirrors these
    computations from precomputed low-dimensional quantities.
    """

    def __init__(self, space, field, params, form, mass, rhs, p0,
                 reference=None, sharp_constants=False):
        self.space = space
        self.mesh = space.mesh
        self.field = field
        self.params = params
        self.form = form
        self.mass = mass
        self.rhs = np.asarray(rhs, dtype=float)
        self.p0 = _coeffs(p0)
        self.reference = reference
        self.sharp_constants = sharp_constants
        self.mass_inv = block_mass_inverse(self.mesh, space)
        self.oswald = space.oswald_matrix()
        self.nonconf = (sp.identity(space.ndof, format="csr") - self.oswald).tocsr()
        self.norms = NormEvaluator(form)
        ax, bx, ay, by = self.mesh.domain
        self.C_P = min(bx - ax, by - ay) / math.pi
        self.ceps_profile = [lam * field.kappa_min_eig for lam in field.lambdas]
        v = self.mesh.vertices[self.mesh.triangles]
        edges = v[:, [1, 2, 0], :] - v
        self.tri_diameter = np.sqrt((edges ** 2).sum(-1)).max(axis=1)
        self._ref_norms = None
        self._flux_ops = None
        self._flux_weights = {}
        self._elem_weights = {}
        self._riesz_mats = None
        self._elem_mats = {}
        self._flux_mats = {}

    # ------------------------------------------------------------- constants

    def c_eps(self, mu_hat):
        theta = self.params.theta_values(mu_hat)
        profile = sum(t * u for t, u in zip(theta, self.ceps_profile))
        return float(np.min(profile))

    def local_ceps(self, mu_tilde):
        theta = self.params.theta_values(mu_tilde)
        return sum(t * u for t, u in zip(theta, self.ceps_profile))

    # ------------------------------------------------- surrogate ingredients

    def element_weight_matrix(self, mu_tilde):
        """Block mass matrix scaled by h_t^2 / c_t at the fixed parameter."""
        key = float(mu_tilde)
        if key not in self._elem_weights:
            w = self.tri_diameter ** 2 / self.local_ceps(mu_tilde)
            blocks = (w * self.mesh.tri_area)[:, None, None] * _P1_MASS
            self._elem_weights[key] = _scatter(blocks, self.space.tri_dofs, self.space.ndof)
        return self._elem_weights[key]

    def flux_operators(self):
        """Per-component normal-flux jump operators over interior faces."""
        if self._flux_ops is None:
            faces = self.mesh.interior_faces
            ops = []
            if len(faces):
                data = _face_data(self.mesh, self.space, self.field, faces, False)
                tm, tp = data["tm"], data["tp"]
                fm, fp = data["flux"]
                nf = len(faces)
                rows = np.repeat(np.arange(nf), 6)
                cols = data["dofmap"].ravel()
                for lam in self.field.lambdas:
                    vals = np.hstack([lam[tm][:, None] * fm,
                                      -lam[tp][:, None] * fp]).ravel()
                    ops.append(sp.csr_matrix((vals, (rows, cols)),
                                             shape=(nf, self.space.ndof)))
            else:
                ops = [sp.csr_matrix((0, self.space.ndof)) for _ in self.field.lambdas]
            self._interior_faces = faces
            self._flux_ops = ops
        return self._flux_ops

    def flux_weights(self, mu_tilde):
        """Per-face weight h_e^2 / c_e at the fixed parameter (interior faces)."""
        key = float(mu_tilde)
        if key not in self._flux_weights:
            self.flux_operators()
            faces = self._interior_faces
            local = self.local_ceps(mu_tilde)
            c_face = np.minimum(local[self.mesh.face_tminus[faces]],
                                local[self.mesh.face_tplus[faces]])
            self._flux_weights[key] = self.mesh.face_h[faces] ** 2 / c_face
        return self._flux_weights[key]

    def surrogate_node_sq(self, coeffs, mu, mu_tilde):
        """Squared residual-type indicator plus penalty jumps for one snapshot."""
        theta = self.params.theta_values(mu)
        g = self.mass_inv @ (self.form.evaluate_at(mu) @ coeffs)
        elem = float(g @ (self.element_weight_matrix(mu_tilde) @ g))
        jumps = sum(t * (L @ coeffs) for t, L in zip(theta, self.flux_operators()))
        flux = float(self.flux_weights(mu_tilde) @ (jumps ** 2))
        pen = self.norms.penalty_sq(coeffs, mu)
        return elem + flux + max(pen, 0.0)

    # ---------------------------------------------------- oracle ingredients

    def reference_norms(self):
        if self.reference is None:
            raise ConfigurationError("oracle mode needs a conforming reference space")
        if self._ref_norms is None:
            self._ref_norms = NormEvaluator(self.reference.form)
        return self._ref_norms

    def oracle_node(self, coeffs, mu):
        """DG norm of the reconstruction error E(q) - q for one snapshot."""
        rec = elliptic_reconstruction(
            coeffs, mu, self.rhs, self.reference,
            operator=self.form.evaluate_at(mu), mass_inv=self.mass_inv)
        eps = rec.coeffs - self.reference.transfer @ coeffs
        return math.sqrt(max(self.reference_norms().dg_norm_sq(eps, mu), 0.0))

    def elliptic_indicator(self, q, mu, mu_tilde, mode):
        """Per-snapshot elliptic term: exact reconstruction error or its surrogate."""
        coeffs = _coeffs(q)
        if mode == "oracle":
            return self.oracle_node(coeffs, mu)
        if mode == "surrogate":
            return math.sqrt(max(self.surrogate_node_sq(coeffs, mu, mu_tilde), 0.0))
        raise ConfigurationError(f"unknown elliptic indicator mode '{mode}'")

    # ----------------------------------------------------------- total bound

    def total_estimate(self, traj, mu, mu_hat, mu_bar, mu_tilde, mode="surrogate"):
        """Full breakdown of the estimate for a DG trajectory."""
        if mode not in ("oracle", "surrogate"):
            raise ConfigurationError(f"unknown estimator mode '{mode}'")
        snaps = traj.snapshots
        if snaps.shape[1] != self.space.ndof:
            raise ConfigurationError("trajectory does not live in the truth space")
        V, Pen = self.norms.matrices_at(mu)
        S = V + Pen
        nonconf = (self.nonconf @ snaps.T).T
        nc_energy_sq = np.einsum("nd,nd->n", nonconf, (S @ nonconf.T).T)
        d_diff = np.diff(nonconf, axis=0)
        nc_l2_diff_sq = np.einsum("nd,nd->n", d_diff, (self.mass @ d_diff.T).T)
        op_mu = self.form.evaluate_at(mu)
        s_diff = np.diff(snaps, axis=0)
        reps = (self.mass_inv @ (op_mu @ s_diff.T)).T
        rt_sq = np.einsum("nd,nd->n", reps, (self.mass @ reps.T).T)
        if mode == "surrogate":
            ell_sq = np.array([self.surrogate_node_sq(c, mu, mu_tilde) for c in snaps])
        else:
            ell_sq = np.array([self.oracle_node(c, mu) ** 2 for c in snaps])
        e0 = self.p0 - self.oswald @ snaps[0]
        ec0_sq = float(e0 @ (self.mass @ e0))
        return compose_breakdown(
            self.params, mu, mu_hat, mu_bar, mu_tilde, mode, traj.dt,
            ec0_sq, nc_energy_sq, nc_l2_diff_sq, rt_sq, ell_sq,
            self.C_P, self.c_eps(mu_hat), self.sharp_constants)

    # -------------------------------------- matrices for the online estimator

    def nc_energy_matrices(self):
        D = self.nonconf
        return [(D.T @ ((V + P) @ D)).tocsr()
                for V, P in zip(self.form.volume, self.form.penalty)]

    def nc_mass_matrix(self):
        D = self.nonconf
        return (D.T @ (self.mass @ D)).tocsr()

    def oswald_l2_matrix(self):
        O = self.oswald
        return (O.T @ (self.mass @ O)).tocsr()

    def riesz_matrices(self):
        if self._riesz_mats is None:
            comps = self.form.components
            self._riesz_mats = [[(A.T @ (self.mass_inv @ B)).tocsr() for B in comps]
                                for A in comps]
        return self._riesz_mats

    def element_matrices(self, mu_tilde):
        key = float(mu_tilde)
        if key not in self._elem_mats:
            W = self.element_weight_matrix(mu_tilde)
            mid = (self.mass_inv @ (W @ self.mass_inv)).tocsr()
            comps = self.form.components
            self._elem_mats[key] = [[(A.T @ (mid @ B)).tocsr() for B in comps]
                                    for A in comps]
        return self._elem_mats[key]

    def flux_matrices(self, mu_tilde):
        key = float(mu_tilde)
        if key not in self._flux_mats:
            ops = self.flux_operators()
            w = sp.diags(self.flux_weights(mu_tilde))
            self._flux_mats[key] = [[(A.T @ (w @ B)).tocsr() for B in ops]
                                    for A in ops]
        return self._flux_mats[key]


def spacetime_dg_error(traj_fine, traj_coarse, transfer, norms_fine, mu_bar):
    """L2-in-time DG-norm distance between nested piecewise-linear trajectories.

    traj_fine lives on the (possibly refined) space of norms_fine with a time
    grid that refines traj_coarse's; traj_coarse is prolonged with transfer.
    """
    nf, nc = traj_fine.n_steps, traj_coarse.n_steps
    if nf % nc:
        raise ConfigurationError(f"time grids not nested: {nf} vs {nc} steps")
    ratio = nf // nc
    coarse = (transfer @ traj_coarse.snapshots.T).T
    X = sum(norms_fine.matrices_at(mu_bar))
    total = 0.0
    prev = traj_fine.snapshots[0] - coarse[0]
    prev_x = X @ prev
    for j in range(1, nf + 1):
        n, r = divmod(j, ratio)
        if r == 0:
            interp = coarse[n]
        else:
            s = r / ratio
            interp = (1.0 - s) * coarse[n] + s * coarse[n + 1]
        cur = traj_fine.snapshots[j] - interp
        cur_x = X @ cur
        total += traj_fine.dt / 3.0 * (prev @ prev_x + prev @ cur_x + cur @ cur_x)
        prev, prev_x = cur, cur_x
    return math.sqrt(max(total, 0.0))
