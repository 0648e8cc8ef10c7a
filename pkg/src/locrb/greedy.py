"""Estimator-driven POD-Greedy extension of the localized bases.

Each iteration sweeps the training set with the online estimator, truth-solves
the worst parameter and appends the dominant POD mode of the local projection
error on every subdomain.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .reduction import online_estimate, solve_reduced
from .truth import solve_parabolic


def pod_dominant_mode(snapshots, product):
    """Product-orthonormal direction carrying the most snapshot energy.

    Solved through the snapshot Gram eigenproblem; the sign is fixed by making
    the largest-magnitude coefficient positive.  Returns None when all
    snapshots vanish.
    """
    S = np.atleast_2d(np.asarray(snapshots, dtype=float))
    G = S @ (product @ S.T) if product is not None else S @ S.T
    if not np.any(G):
        return None
    evals, evecs = np.linalg.eigh(G)
    if evals[-1] <= 0.0:
        return None
    mode = evecs[:, -1] @ S
    nrm = np.sqrt(max(float(mode @ (product @ mode)) if product is not None
                      else float(mode @ mode), 0.0))
    if nrm == 0.0:
        return None
    mode /= nrm
    if mode[np.argmax(np.abs(mode))] < 0.0:
        mode = -mode
    return mode


@dataclass
class GreedyRecord:
    iteration: int
    mu_star: float
    eta_train_max: float
    eta_test_max: float
    dim: int


@dataclass
class GreedyState:
    """Everything the greedy loop needs, plus its per-iteration log."""

    estimator: object
    model: object
    train: list
    test: list
    mu_hat: float
    mu_bar: float
    mu_tilde: float
    dt: float
    n_steps: int
    tolerance: float = 0.0
    max_iterations: int = 10
    log: list = field(default_factory=list)
    final: GreedyRecord = None

    @property
    def iterations(self):
        return len(self.log)

    def stopped(self):
        if self.iterations >= self.max_iterations:
            return True
        if self.log and self.log[-1].eta_train_max <= self.tolerance:
            return True
        return False


def _estimate(state, mu):
    traj = solve_reduced(state.model, mu, state.dt, state.n_steps)
    bd = online_estimate(state.model, traj, mu, state.mu_hat, state.mu_bar, state.mu_tilde)
    return bd.total


def evaluate_state(state, iteration):
    """Sweep training and test sets; ties in the argmax go to the smaller parameter."""
    train_vals = [(_estimate(state, mu), mu) for mu in state.train]
    best = max(train_vals, key=lambda pair: (pair[0], -pair[1]))
    test_vals = [_estimate(state, mu) for mu in state.test] if state.test else [0.0]
    return GreedyRecord(iteration=iteration, mu_star=best[1], eta_train_max=best[0],
                        eta_test_max=max(test_vals), dim=state.model.dim)


def greedy_step(state, record=None):
    """One iteration: select, truth-solve, extend every local basis by one POD mode."""
    if record is None:
        record = evaluate_state(state, state.iterations)
    est = state.estimator
    operator = est.form.evaluate_at(record.mu_star)
    traj = solve_parabolic(operator, est.mass, est.rhs, est.p0, state.dt, state.n_steps)
    updates = {}
    for T, basis in enumerate(state.model.bases):
        dofs = est.space.subdomain_dofs(T)
        samples = traj.snapshots[:, dofs]
        errors = basis.projection_error(samples)
        mode = pod_dominant_mode(errors, basis.product)
        if mode is None:
            continue
        cand = mode
        for _ in range(2):
            cand = basis.projection_error(cand[None, :])[0]
        nrm = np.sqrt(max(float(cand @ (basis.product @ cand)), 0.0))
        if nrm < 1e-10:  # mode has unit norm: same discard rule as gram_schmidt
            continue
        updates[T] = cand / nrm
    state.model.extend(updates)
    state.log.append(record)
    return state


def run_greedy(state):
    """Iterate until the tolerance or the iteration cap is reached.

    The stopping evaluation (including the one that may fire before any
    extension) is kept in state.final; the log holds one record per completed
    iteration, written before that iteration's extension.
    """
    while True:
        record = evaluate_state(state, state.iterations)
        if record.eta_train_max <= state.tolerance or state.iterations >= state.max_iterations:
            state.final = record
            return state
        greedy_step(state, record)


def decay_rows(state):
    """Per-iteration rows (iteration, mu_star, train max, test max, dim)."""
    rows = list(state.log)
    if state.final is not None:
        rows.append(state.final)
    return rows


def write_decay_csv(state, path, config_lines=()):
    """Decay report with the configuration echoed into the header."""
    with open(path, "w", newline="") as fh:
        for line in config_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "mu_star", "eta_train_max", "eta_test_max", "dim_Qred"])
        for rec in decay_rows(state):
            writer.writerow([rec.iteration, repr(rec.mu_star),
                             repr(rec.eta_train_max), repr(rec.eta_test_max), rec.dim])
