import numpy as np
import pytest

from locrb.estimator import ErrorEstimator
from locrb.forms import (CoefficientField, ParameterSpec, assemble_affine_operator,
                         assemble_mass_and_rhs, two_component_channel)
from locrb.grid import build_mesh
from locrb.space import DGSpace
from locrb.truth import build_reference


class Setup:
    """Bundle of an assembled truth problem for the tests."""

    def __init__(self, mesh, space, field, params, form, mass, rhs, f, p0):
        self.mesh = mesh
        self.space = space
        self.field = field
        self.params = params
        self.form = form
        self.mass = mass
        self.rhs = rhs
        self.f = f
        self.p0 = p0

    def estimator(self, reference=False, refine=1, sharp=False):
        ref = None
        if reference:
            ref = build_reference(self.space, self.field, self.params, self.form.sigma,
                                  refine=refine, form=self.form if refine == 1 else None)
        return ErrorEstimator(self.space, self.field, self.params, self.form,
                              self.mass, self.rhs, self.p0, reference=ref,
                              sharp_constants=sharp)


def make_setup(domain=(0.0, 1.0, 0.0, 1.0), fine=(4, 4), coarse=(2, 1), seed=0,
               sigma=8.0, contrast=10.0, channel=True, f=None, params=None):
    """Mild random two-component problem on a small mesh."""
    mesh = build_mesh(domain, fine, coarse)
    space = DGSpace(mesh)
    rng = np.random.default_rng(seed)
    nt = mesh.n_triangles
    half = 0.5 * np.log10(contrast)
    kappa = (10.0 ** rng.uniform(-half, half, nt))[:, None, None] * np.eye(2)
    if params is None:
        if channel:
            params = two_component_channel((0.1, 1.0))
            lambdas = [np.ones(nt), rng.uniform(0.0, 2.0, nt)]
        else:
            params = ParameterSpec((lambda mu: 1.0,), (0.0, 1.0))
            lambdas = [np.ones(nt)]
    else:
        lambdas = [np.ones(nt)] + [rng.uniform(0.0, 2.0, nt)
                                   for _ in range(params.n_components - 1)]
    field = CoefficientField(kappa, lambdas)
    form = assemble_affine_operator(mesh, space, field, params, sigma=sigma)
    if f is None:
        f = space.interpolate(lambda x, y: np.sin(3.0 * x) + y)
    elif callable(f):
        f = space.interpolate(f)
    mass, rhs = assemble_mass_and_rhs(mesh, space, f)
    return Setup(mesh, space, field, params, form, mass, rhs, f, space.zeros())


@pytest.fixture(scope="session")
def small():
    return make_setup()


@pytest.fixture(scope="session")
def medium():
    return make_setup(fine=(8, 8), coarse=(2, 2), seed=5)
