import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from locrb.errors import ConfigurationError, DataError
from locrb.estimator import NormEvaluator, spacetime_dg_error
from locrb.reduction import (LocalBasis, ReducedModel, gram_schmidt, initialize_bases,
                             lift, lift_trajectory, load_bases, load_model,
                             local_h1_products, online_estimate, project_model,
                             save_model, solve_reduced)
from locrb.space import DGFunction
from locrb.truth import Trajectory, solve_parabolic
from tests.conftest import make_setup


@pytest.fixture(scope="module")
def setup():
    return make_setup(seed=31)


@pytest.fixture(scope="module")
def model(setup):
    est = setup.estimator()
    bases = initialize_bases(setup.space, setup.f)
    return project_model(est, bases, 0.1)


def full_local_bases(setup):
    products = local_h1_products(setup.space)
    bases = []
    for T in range(setup.space.n_subdomains):
        lo, hi = setup.space.subdomain_offsets[T], setup.space.subdomain_offsets[T + 1]
        vecs = np.vstack([np.ones(hi - lo), np.eye(hi - lo)[:-1]])
        bases.append(LocalBasis(T, gram_schmidt(vecs, products[T]), products[T]))
    return bases


def test_gram_schmidt_examples():
    out = gram_schmidt([np.ones(3), np.ones(3)])
    assert out.shape == (1, 3)
    assert np.allclose(out[0], 1.0 / np.sqrt(3.0))
    e1 = np.array([1.0, 0.0])
    out = gram_schmidt([e1, np.array([1.0, 1.0])])
    assert np.allclose(out, np.eye(2), atol=1e-15)
    assert gram_schmidt([]).shape == (0, 0)
    assert gram_schmidt([np.zeros(4)]).shape == (0, 4)


def test_gram_schmidt_orthonormality(setup):
    products = local_h1_products(setup.space)
    H = products[0]
    rng = np.random.default_rng(1)
    n = H.shape[0]
    out = gram_schmidt(rng.standard_normal((20, n)), H)
    gram = out @ (H @ out.T)
    assert np.abs(gram - np.eye(len(out))).max() <= 1e-10


def test_initialize_bases_examples(setup):
    space = setup.space
    ones = space.interpolate(lambda x, y: 1.0)
    bases = initialize_bases(space, ones)
    assert all(b.size == 1 for b in bases)
    bases = initialize_bases(space, space.zeros())
    assert all(b.size == 1 for b in bases)
    linear = space.interpolate(lambda x, y: x)
    bases = initialize_bases(space, linear)
    for b in bases:
        assert b.size == 2
        # first vector is the normalized constant, second orthogonal to it
        assert np.ptp(b.vectors[0]) <= 1e-14 * abs(b.vectors[0][0])
        gram = b.gram()
        assert abs(gram[0, 1]) <= 1e-10


def test_constant_present_in_every_basis(model):
    for b in model.bases:
        assert np.ptp(b.vectors[0]) <= 1e-13 * abs(b.vectors[0][0])


def test_project_model_congruence(setup, model):
    L = model.lift_matrix()
    rng = np.random.default_rng(2)
    for xi, A in enumerate(setup.form.components):
        direct = (L.T @ (A @ L)).toarray()
        assert np.abs(model.op_red(xi) - direct).max() <= 1e-12 * max(np.abs(direct).max(), 1.0)
    red = model.evaluate_operator(0.5)
    assert np.abs(red - red.T).max() <= 1e-12 * np.abs(red).max()
    assert rng is not None


def test_block_sparsity_three_subdomains():
    setup = make_setup(fine=(6, 2), coarse=(3, 1), seed=32)
    est = setup.estimator()
    bases = initialize_bases(setup.space, setup.f)
    model = project_model(est, bases, 0.1)
    sizes = model.sizes
    offsets = model.offsets
    # mass is block diagonal; the operator couples only coarse neighbors
    mass = model.mass_red
    op = model.evaluate_operator(0.5)
    b02 = np.s_[offsets[0]:offsets[1], offsets[2]:offsets[3]]
    assert np.abs(mass[b02]).max() == 0.0
    assert np.abs(op[b02]).max() == 0.0
    b01 = np.s_[offsets[0]:offsets[1], offsets[1]:offsets[2]]
    assert np.abs(op[b01]).max() > 0.0
    assert mass.shape == (sum(sizes), sum(sizes))


def test_reduced_block_shapes():
    setup = make_setup(seed=33)
    est = setup.estimator()
    products = local_h1_products(setup.space)
    rng = np.random.default_rng(3)
    n0 = setup.space.subdomain_offsets[1] - setup.space.subdomain_offsets[0]
    n1 = setup.space.subdomain_offsets[2] - setup.space.subdomain_offsets[1]
    bases = [LocalBasis(0, gram_schmidt(np.vstack([np.ones(n0),
                                                   rng.standard_normal((1, n0))]),
                                        products[0]), products[0]),
             LocalBasis(1, gram_schmidt(np.vstack([np.ones(n1),
                                                   rng.standard_normal((2, n1))]),
                                        products[1]), products[1])]
    model = project_model(est, bases, 0.1)
    assert model.sizes == [2, 3]
    assert model.mass_red.shape == (5, 5)
    coupling = model.op_red(0)[0:2, 2:5]
    assert coupling.shape == (2, 3)
    assert np.abs(coupling).max() > 0.0


def test_solve_reduced_zero(model):
    traj = solve_reduced(model, 0.5, 0.01, 5)
    # p0 = 0 and f != 0: nonzero; with zero data everything stays zero
    setup_zero = make_setup(seed=34, f=lambda x, y: 0.0)
    est = setup_zero.estimator()
    m0 = project_model(est, initialize_bases(setup_zero.space, setup_zero.f), 0.1)
    traj0 = solve_reduced(m0, 0.5, 0.01, 5)
    assert np.all(traj0.snapshots == 0.0)
    assert traj.snapshots.shape == (6, model.dim)


def test_full_basis_exactness(setup):
    est = setup.estimator()
    model = project_model(est, full_local_bases(setup), 0.1)
    mu, dt, n = 0.35, 0.005, 10
    traj_red = solve_reduced(model, mu, dt, n)
    lifted = lift_trajectory(model, traj_red)
    truth = solve_parabolic(setup.form.evaluate_at(mu), setup.mass, setup.rhs,
                            setup.p0, dt, n)
    for k in range(1, n + 1):
        num = np.linalg.norm(lifted.snapshots[k] - truth.snapshots[k])
        den = np.linalg.norm(truth.snapshots[k])
        assert num <= 1e-10 * den


def test_one_dimensional_steady_state_basis(setup):
    # single subdomain spanned by the steady state: trajectory approaches it
    one_sub = make_setup(fine=(4, 4), coarse=(1, 1), seed=35)
    mu = 0.6
    steady = spla.spsolve(one_sub.form.evaluate_at(mu).tocsc(), one_sub.rhs)
    products = local_h1_products(one_sub.space)
    basis = LocalBasis(0, gram_schmidt([steady], products[0]), products[0])
    est = one_sub.estimator()
    model = project_model(est, [basis], 0.1)
    traj = solve_reduced(model, mu, 0.05, 60)
    lifted = lift(model, traj.snapshots[-1])
    assert np.linalg.norm(lifted.coeffs - steady) <= 1e-8 * np.linalg.norm(steady)


def test_lift_examples(model):
    e0 = np.zeros(model.dim)
    e0[0] = 1.0
    lifted = lift(model, e0)
    dofs0 = model.space.subdomain_dofs(0)
    assert np.allclose(lifted.coeffs[dofs0], model.bases[0].vectors[0])
    outside = np.setdiff1d(np.arange(model.space.ndof), dofs0)
    assert np.all(lifted.coeffs[outside] == 0.0)
    rng = np.random.default_rng(4)
    c, d = rng.standard_normal(model.dim), rng.standard_normal(model.dim)
    combo = lift(model, 2.0 * c - 3.0 * d).coeffs
    direct = 2.0 * lift(model, c).coeffs - 3.0 * lift(model, d).coeffs
    assert np.abs(combo - direct).max() <= 1e-13 * max(np.abs(direct).max(), 1.0)
    with pytest.raises(DataError):
        lift(model, np.zeros(model.dim + 1))


def test_online_matches_direct(setup, model):
    est = setup.estimator()
    dt, n = 0.005, 10
    for mu in (0.15, 0.5, 0.95):
        traj = solve_reduced(model, mu, dt, n)
        bd_on = online_estimate(model, traj, mu, 0.1, 0.1, 0.1)
        bd_dir = est.total_estimate(lift_trajectory(model, traj), mu, 0.1, 0.1, 0.1,
                                    mode="surrogate")
        for key in ("initial_error", "nonconformity_norm", "nonconformity_dt_norm",
                    "eta_ell", "time_residual_norm", "total"):
            a, b = getattr(bd_on, key), getattr(bd_dir, key)
            assert a == pytest.approx(b, rel=1e-8, abs=1e-13)


def test_online_anchor_handling(model):
    traj = solve_reduced(model, 0.5, 0.01, 5)
    bd = online_estimate(model, traj, 0.5, 0.5, 0.5, 0.1)
    assert bd.alpha_mu_bar == 1.0 and bd.alpha_mu_hat == 1.0
    with pytest.raises(ConfigurationError):
        online_estimate(model, traj, 0.5, 0.1, 0.1, 0.2)
    with pytest.raises(ConfigurationError):
        online_estimate(model, traj, 0.5, 0.1, 0.1, 0.1, mode="oracle")


def test_extension_matches_rebuild(setup):
    est = setup.estimator()
    bases = initialize_bases(setup.space, setup.f)
    model = project_model(est, bases, 0.1)
    rng = np.random.default_rng(5)
    updates = {}
    for T, basis in enumerate(model.bases):
        raw = rng.standard_normal(basis.vectors.shape[1])
        ortho = basis.projection_error(raw[None, :])[0]
        ortho /= np.sqrt(ortho @ (basis.product @ ortho))
        updates[T] = ortho
    model.extend(updates)

    fresh_bases = initialize_bases(setup.space, setup.f)
    for T, basis in enumerate(fresh_bases):
        basis.append(updates[T])
    rebuilt = project_model(est, fresh_bases, 0.1)
    assert model.sizes == rebuilt.sizes
    for name, G in model._G.items():
        dev = np.abs(G - rebuilt._G[name]).max()
        assert dev <= 1e-12 * max(np.abs(G).max(), 1.0), name
    for name, g in model._g.items():
        assert np.abs(g - rebuilt._g[name]).max() <= 1e-12 * max(np.abs(g).max(), 1.0)
    assert np.abs(model.p0_red - rebuilt.p0_red).max() <= 1e-12


def test_monotone_accuracy_over_greedy_steps(setup):
    from locrb.greedy import GreedyState, greedy_step
    est = setup.estimator()
    model = project_model(est, initialize_bases(setup.space, setup.f), 0.1)
    mu_star, dt, n = 0.5, 0.005, 10
    state = GreedyState(estimator=est, model=model, train=[mu_star], test=[],
                        mu_hat=0.1, mu_bar=0.1, mu_tilde=0.1, dt=dt, n_steps=n,
                        max_iterations=3)
    truth = solve_parabolic(setup.form.evaluate_at(mu_star), setup.mass, setup.rhs,
                            setup.p0, dt, n)
    norms = NormEvaluator(setup.form)
    eye = sp.identity(setup.space.ndof, format="csr")
    errors = []
    for _ in range(3):
        traj = solve_reduced(state.model, mu_star, dt, n)
        lifted = lift_trajectory(state.model, traj)
        errors.append(spacetime_dg_error(truth, lifted, eye, norms, 0.1))
        greedy_step(state)
    assert all(b <= 1.02 * a for a, b in zip(errors, errors[1:]))


def test_save_and_load_roundtrip(tmp_path, setup, model):
    path = tmp_path / "model.bin"
    save_model(model, path)
    header, blocks = load_bases(path)
    assert header["subdomain_basis_sizes"] == model.sizes
    for blk, basis in zip(blocks, model.bases):
        assert np.array_equal(blk, basis.vectors)
    est = setup.estimator()
    reloaded = load_model(path, est)
    traj = solve_reduced(model, 0.5, 0.01, 5)
    a = online_estimate(model, traj, 0.5, 0.1, 0.1, 0.1).total
    b = online_estimate(reloaded, traj, 0.5, 0.1, 0.1, 0.1).total
    assert a == pytest.approx(b, rel=1e-12)


def test_empty_basis_rejected(setup):
    est = setup.estimator()
    products = local_h1_products(setup.space)
    bases = [LocalBasis(T, np.zeros((0, p.shape[0])), p)
             for T, p in enumerate(products)]
    with pytest.raises(ConfigurationError):
        ReducedModel(est, bases, 0.1)
