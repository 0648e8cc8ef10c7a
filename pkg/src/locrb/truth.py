"""Implicit-Euler truth solves, Riesz representatives and elliptic reconstruction."""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .forms import assemble_affine_operator, assemble_mass_and_rhs, block_mass_inverse
from .space import DGFunction, DGSpace, dg_prolongation


class Trajectory:
    """Piecewise-linear-in-time sequence of spatial coefficient vectors.

    snapshots has shape (n_steps + 1, dim); space is the hosting DGSpace or
    None for reduced (or surrogate) coefficient trajectories.
    """

    def __init__(self, snapshots, dt, space=None):
        self.snapshots = np.asarray(snapshots, dtype=float)
        self.dt = float(dt)
        self.space = space

    @property
    def n_steps(self):
        return len(self.snapshots) - 1

    @property
    def t_end(self):
        return self.dt * self.n_steps

    def snapshot(self, n):
        if self.space is None:
            return self.snapshots[n]
        return DGFunction(self.space, self.snapshots[n])

    def at_time(self, t):
        """Linear-in-time interpolation of the coefficients."""
        if t <= 0.0:
            return self.snapshots[0].copy()
        n = min(int(np.ceil(t / self.dt - 1e-12)), self.n_steps)
        s = t / self.dt - (n - 1)
        return (1.0 - s) * self.snapshots[n - 1] + s * self.snapshots[n]

    def export_csv(self, directory):
        """One CSV per snapshot plus an index file (step, time, file)."""
        import csv
        import os

        paths = []
        index_path = os.path.join(directory, "index.csv")
        with open(index_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "time", "file"])
            for n in range(self.n_steps + 1):
                name = f"snapshot_{n:04d}.csv"
                writer.writerow([n, repr(n * self.dt), name])
                path = os.path.join(directory, name)
                if self.space is not None:
                    DGFunction(self.space, self.snapshots[n]).export_csv(path)
                else:
                    np.savetxt(path, self.snapshots[n])
                paths.append(path)
        return [index_path] + paths


def _coeffs(q):
    return q.coeffs if hasattr(q, "coeffs") else np.asarray(q, dtype=float)


def solve_parabolic(operator, mass, rhs, p0, dt, n_steps, rtol=1e-12):
    """March the fully discrete system (M + dt B) p^n = dt f + M p^{n-1}.

    The system matrix is factorized once; every step's relative residual is
    checked against rtol and a NumericalError names the failing step.
    """
    space = p0.space if hasattr(p0, "space") else None
    p = _coeffs(p0).copy()
    system = (mass + dt * operator).tocsc()
    try:
        lu = spla.splu(system)
    except RuntimeError as exc:
        raise NumericalError(f"factorization of the time-step system failed: {exc}")
    norm_a = np.abs(system).sum(axis=0).max()  # 1-norm, for the backward error
    snapshots = [p.copy()]
    for n in range(1, n_steps + 1):
        b = dt * rhs + mass @ p
        p = lu.solve(b)
        for _ in range(3):  # iterative refinement for high-contrast data
            res = np.linalg.norm(system @ p - b)
            scale = norm_a * np.linalg.norm(p) + np.linalg.norm(b)
            if res <= rtol * scale or scale == 0.0:
                break
            p += lu.solve(b - system @ p)
        else:
            raise NumericalError(
                f"time step {n}: relative residual {res / scale:.2e} exceeds {rtol:.0e}")
        snapshots.append(p.copy())
    return Trajectory(np.array(snapshots), dt, space)


def riesz_representative(q, operator, mass):
    """L2 Riesz representative of the functional b(q, .): mass^-1 (operator q)."""
    coeffs = _coeffs(q)
    rep = spla.spsolve(mass.tocsc(), operator @ coeffs)
    if hasattr(q, "space"):
        return DGFunction(q.space, rep)
    return rep


class ConformingSpace:
    """Conforming P1 zero-trace subspace hosting elliptic reconstructions.

    Lives on the truth mesh or on a nested refinement of it; carries the
    prolongation into its DG space, the transfer from the truth DG space, and
    the conforming stiffness per affine component.
    """

    def __init__(self, space, field, params, sigma, refine=1, form=None):
        self.coarse_space = space
        self.params = params
        self.refine = int(refine)
        if self.refine == 1:
            self.mesh, self.space, self.field = space.mesh, space, field
            self.form = form if form is not None else assemble_affine_operator(
                self.mesh, self.space, self.field, params, sigma)
            self.transfer = sp.identity(space.ndof, format="csr")
        else:
            self.mesh = space.mesh.refined(self.refine)
            self.space = DGSpace(self.mesh)
            self.field = field.refine_to(self.mesh, space.mesh)
            self.form = assemble_affine_operator(
                self.mesh, self.space, self.field, params, sigma)
            self.transfer = dg_prolongation(space, self.space)
        self.mass, _ = assemble_mass_and_rhs(self.mesh, self.space)
        self.mass_inv = block_mass_inverse(self.mesh, self.space)

        interior = np.nonzero(~self.space.boundary_vertex)[0]
        conf_id = -np.ones(len(self.mesh.vertices), dtype=np.int64)
        conf_id[interior] = np.arange(len(interior))
        self.n_conforming = len(interior)
        dv = self.space.dof_vertex
        keep = conf_id[dv] >= 0
        self.prolong = sp.csr_matrix(
            (np.ones(keep.sum()), (np.nonzero(keep)[0], conf_id[dv[keep]])),
            shape=(self.space.ndof, self.n_conforming))
        # face terms vanish on conforming zero-trace pairs: volume part suffices
        self.stiffness = [(self.prolong.T @ V @ self.prolong).tocsc()
                          for V in self.form.volume]
        self._lu = {}

    def solve(self, mu, rhs_conf):
        key = float(mu)
        if key not in self._lu:
            theta = self.params.theta_values(mu)
            K = theta[0] * self.stiffness[0]
            for t, Kxi in zip(theta[1:], self.stiffness[1:]):
                if t != 0.0:
                    K = K + t * Kxi
            try:
                self._lu[key] = spla.splu(K.tocsc())
            except RuntimeError as exc:
                raise ConfigurationError(f"singular conforming system at mu={mu}: {exc}")
        return self._lu[key].solve(rhs_conf)


def build_reference(space, field, params, sigma, refine=1, form=None):
    """Conforming reference space for reconstruction, on the same or a refined mesh."""
    return ConformingSpace(space, field, params, sigma, refine=refine, form=form)


def elliptic_reconstruction(q, mu, f_vec, reference, operator=None, mass_inv=None):
    """Conforming Galerkin solution whose datum is B(q) - proj(f) + f.

    q is a truth DG function, f_vec the assembled load vector; f enters through
    its DG representative, which is exact whenever f is representable in the
    truth space (the projection terms then cancel identically).  Returns a
    conforming function expressed in the reference DG space.
    """
    coarse = reference.coarse_space
    if operator is None:
        if reference.refine != 1:
            raise ConfigurationError(
                "refined reconstruction needs the truth operator at mu; pass operator=")
        operator = reference.form.evaluate_at(mu)
    if mass_inv is None:
        mass_inv = block_mass_inverse(coarse.mesh, coarse) if reference.refine != 1 \
            else reference.mass_inv
    riesz = mass_inv @ (operator @ _coeffs(q))
    f_proj = mass_inv @ f_vec
    datum = reference.transfer @ (riesz - f_proj)
    f_ref = reference.transfer @ f_proj
    rhs_conf = reference.prolong.T @ (reference.mass @ datum + reference.mass @ f_ref)
    x = reference.solve(mu, rhs_conf)
    return DGFunction(reference.space, reference.prolong @ x)


def time_residual(traj, operator, mass, rhs, t):
    """Closed-form Riesz lift of the time-stepping residual at time t.

    For t in the n-th step interval the residual of the piecewise-linear
    trajectory equals (n dt - t)/dt times the Riesz representative of
    b(p^{n-1} - p^n, .); it vanishes at the supporting points.
    """
    if not 0.0 < t <= traj.t_end * (1.0 + 1e-12):
        raise ValueError(f"time {t} outside (0, {traj.t_end}]")
    n = min(int(np.ceil(t / traj.dt - 1e-12)), traj.n_steps)
    prefactor = (n * traj.dt - t) / traj.dt
    diff = traj.snapshots[n - 1] - traj.snapshots[n]
    rep = spla.spsolve(mass.tocsc(), operator @ diff)
    rep *= prefactor
    if traj.space is not None:
        return DGFunction(traj.space, rep)
    return rep


def refine_setup(space, field, params, sigma, factor=2):
    """Refined truth setup (mesh, space, field, form, mass, transfer) for oracles."""
    mesh_f = space.mesh.refined(factor)
    space_f = DGSpace(mesh_f)
    field_f = field.refine_to(mesh_f, space.mesh)
    form_f = assemble_affine_operator(mesh_f, space_f, field_f, params, sigma)
    mass_f, _ = assemble_mass_and_rhs(mesh_f, space_f)
    transfer = dg_prolongation(space, space_f)
    return mesh_f, space_f, field_f, form_f, mass_f, transfer
