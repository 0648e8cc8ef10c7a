"""Configuration-driven experiment runner.

Builds the synthetic channel problem (heterogeneous log-uniform diffusion, a
parameter-toggled high-conductivity channel, one source and two sinks), then
runs truth solves, certification sweeps or the greedy loop and writes all
reports as CSV/JSON files.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .errors import ConfigurationError, LocrbError, NumericalError, ParameterError
from .estimator import ErrorEstimator, NormEvaluator, spacetime_dg_error
from .forms import (CoefficientField, ParameterSpec, assemble_affine_operator,
                    assemble_mass_and_rhs, two_component_channel)
from .greedy import GreedyState, run_greedy, write_decay_csv
from .grid import build_mesh
from .reduction import initialize_bases, lift_trajectory, online_estimate, project_model, \
    solve_reduced
from .space import DGSpace
from .truth import build_reference, solve_parabolic


@dataclass
class ProblemConfig:
    """Flat key-value experiment configuration; unknown keys are rejected."""

    domain: tuple = (0.0, 5.0, 0.0, 1.0)
    fine_cells: tuple = (64, 16)
    coarse_cells: tuple = (4, 1)
    t_end: float = 0.05
    n_steps: int = 10
    parameter_range: tuple = (0.1, 1.0)
    penalty: float = 8.0
    field_background: float = 1.0
    contrast: float = 1.0e6
    field_block: int = 4                # field granularity in fine cells
    channel_x: tuple = (0.05, 0.95)     # fractions of the domain width
    channel_y: tuple = (0.4, 0.6)       # fractions of the domain height
    channel_contrast: float = 1.0e6
    channel_taper: float = 10.0
    source_center: tuple = (0.5, 0.5)
    source_radius: float = 0.2
    source_strength: float = 1.0
    sink_centers: tuple = ((3.75, 0.25), (3.75, 0.75))
    sink_radius: float = 0.2
    sink_strength: float = -0.5
    estimator_mode: str = "surrogate"   # surrogate | oracle | both
    mu_hat: float = 0.1
    mu_bar: float = 0.1
    mu_tilde: float = 0.1
    sharp_constants: bool = False
    reconstruction_refine: int = 1
    solve_mu: float = 1.0
    certify_mus: tuple = (0.25, 0.55, 0.85)
    n_train: int = 10
    n_test: int = 10
    greedy_tolerance: float = 0.0
    max_iterations: int = 8
    seed: int = 0
    output: str = "out"
    write_trajectories: bool = False

    def validate(self):
        lo, hi = self.parameter_range
        if not lo <= hi:
            raise ConfigurationError(f"empty parameter range [{lo}, {hi}]")
        for name in ("mu_hat", "mu_bar", "mu_tilde", "solve_mu"):
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ConfigurationError(f"{name}={value} outside parameter range [{lo}, {hi}]")
        if self.contrast < 1.0:
            raise ConfigurationError(f"contrast={self.contrast} must be >= 1")
        if not 1.0 <= self.channel_taper <= self.channel_contrast:
            raise ConfigurationError(
                "need 1 <= channel_taper <= channel_contrast, got "
                f"{self.channel_taper} and {self.channel_contrast}")
        if self.field_block < 1:
            raise ConfigurationError("field_block must be positive")
        if self.n_steps < 1 or self.t_end <= 0.0:
            raise ConfigurationError("need n_steps >= 1 and t_end > 0")
        if self.estimator_mode not in ("surrogate", "oracle", "both"):
            raise ConfigurationError(f"unknown estimator mode '{self.estimator_mode}'")
        if self.reconstruction_refine not in (1, 2):
            raise ConfigurationError("reconstruction_refine must be 1 or 2")
        for name in ("n_train", "n_test", "max_iterations"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        return self


_TUPLE_KEYS = {"domain", "fine_cells", "coarse_cells", "parameter_range", "channel_x",
               "channel_y", "source_center", "sink_centers", "certify_mus"}


def _to_jsonable(value):
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def _from_jsonable(name, value):
    if name in _TUPLE_KEYS:
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def config_to_text(config):
    """Normalized 'key = value' text, one line per key, JSON-encoded values."""
    lines = []
    for f in fields(ProblemConfig):
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {json.dumps(_to_jsonable(value))}")
    return "\n".join(lines) + "\n"


def parse_config_text(text):
    known = {f.name for f in fields(ProblemConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got '{raw}'")
        key, _, rhs = line.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigurationError(f"line {lineno}: unknown configuration key '{key}'")
        try:
            value = json.loads(rhs.strip())
        except json.JSONDecodeError:
            value = rhs.strip()
        values[key] = _from_jsonable(key, value)
    return ProblemConfig(**values).validate()


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


class Problem:
    """Assembled truth problem: mesh, spaces, data fields, operators."""

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


def _disc_indicator(centers, radius, strengths):
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    strengths = np.broadcast_to(np.asarray(strengths, dtype=float), (len(centers),))

    def f(x, y):
        value = 0.0
        for (cx, cy), s in zip(centers, strengths):
            if (x - cx) ** 2 + (y - cy) ** 2 <= radius ** 2:
                value += s
        return value

    return f


def synthetic_log_uniform_field(config, mesh):
    """Seeded piecewise-constant scalar diffusion with prescribed max contrast.

    Values are log-uniform per block of field_block x field_block structured
    cells (independent of the subdomain partition), ranging from the
    background value up to background times contrast.
    """
    rng = np.random.default_rng(config.seed)
    nx, ny = config.fine_cells
    block = config.field_block
    nbx, nby = -(-nx // block), -(-ny // block)
    exponents = rng.uniform(0.0, np.log10(config.contrast), (nbx, nby))
    ax, bx, ay, by = config.domain
    cent = mesh.tri_centroid
    ci = np.clip(((cent[:, 0] - ax) / ((bx - ax) / nx)).astype(int), 0, nx - 1) // block
    cj = np.clip(((cent[:, 1] - ay) / ((by - ay) / ny)).astype(int), 0, ny - 1) // block
    return config.field_background * 10.0 ** exponents[ci, cj]


def build_problem(config):
    """Synthetic heterogeneous problem of the configured family.

    kappa is a seeded blockwise log-uniform field with the configured maximum
    contrast above the background value.  The channel component is supported
    on a horizontal band and tapers log-linearly from channel_contrast - 1 at
    its left end down to channel_taper - 1, so the conductive stretch of the
    channel grows as mu decreases and mu = 1 removes it entirely.  The
    source/sink field is interpolated into the DG space; p0 = 0.
    """
    config.validate()
    mesh = build_mesh(config.domain, config.fine_cells, config.coarse_cells)
    space = DGSpace(mesh)
    kappa_scalar = synthetic_log_uniform_field(config, mesh)
    kappa = kappa_scalar[:, None, None] * np.eye(2)[None, :, :]

    ax, bx, ay, by = config.domain
    x0 = ax + config.channel_x[0] * (bx - ax)
    x1 = ax + config.channel_x[1] * (bx - ax)
    y0 = ay + config.channel_y[0] * (by - ay)
    y1 = ay + config.channel_y[1] * (by - ay)
    cent = mesh.tri_centroid
    in_channel = (cent[:, 0] >= x0) & (cent[:, 0] <= x1) \
        & (cent[:, 1] >= y0) & (cent[:, 1] <= y1)
    along = np.clip((cent[:, 0] - x0) / max(x1 - x0, 1e-300), 0.0, 1.0)
    log_peak = np.log10(config.channel_contrast)
    log_taper = np.log10(config.channel_taper)
    lam_channel = np.where(
        in_channel, 10.0 ** ((1.0 - along) * log_peak + along * log_taper) - 1.0, 0.0)
    field = CoefficientField(kappa, [np.ones(mesh.n_triangles), lam_channel])
    params = two_component_channel(config.parameter_range)

    centers = [config.source_center] + list(config.sink_centers)
    radius = config.source_radius
    strengths = [config.source_strength] + [config.sink_strength] * len(config.sink_centers)
    if config.sink_radius != config.source_radius:
        source = _disc_indicator([config.source_center], config.source_radius,
                                 [config.source_strength])
        sinks = _disc_indicator(config.sink_centers, config.sink_radius,
                                [config.sink_strength] * len(config.sink_centers))
        f_call = lambda x, y: source(x, y) + sinks(x, y)
    else:
        f_call = _disc_indicator(centers, radius, strengths)
    f = space.interpolate(f_call)
    form = assemble_affine_operator(mesh, space, field, params, sigma=config.penalty)
    mass, rhs = assemble_mass_and_rhs(mesh, space, f)
    p0 = space.zeros()
    return Problem(mesh, space, field, params, form, mass, rhs, f, p0)


def make_estimator(problem, config):
    reference = None
    if config.estimator_mode in ("oracle", "both"):
        reference = build_reference(problem.space, problem.field, problem.params,
                                    config.penalty, refine=config.reconstruction_refine,
                                    form=problem.form if config.reconstruction_refine == 1
                                    else None)
    return ErrorEstimator(problem.space, problem.field, problem.params, problem.form,
                          problem.mass, problem.rhs, problem.p0, reference=reference,
                          sharp_constants=config.sharp_constants)


def training_parameters(config):
    """Cell-midpoint uniform grid; avoids the interval ends where coefficient
    ratios against a differing anchor can degenerate to zero."""
    lo, hi = config.parameter_range
    n = config.n_train
    return [lo + (i + 0.5) * (hi - lo) / n for i in range(n)]


def test_parameters(config):
    rng = np.random.default_rng(config.seed + 1)
    lo, hi = config.parameter_range
    return sorted(rng.uniform(lo, hi, config.n_test).tolist())


class _Reporter:
    """Tracks written files so a failed run leaves no partial outputs."""

    def __init__(self, outdir):
        self.outdir = outdir
        self.written = []
        os.makedirs(outdir, exist_ok=True)

    def path(self, name):
        p = os.path.join(self.outdir, name)
        self.written.append(p)
        return p

    def cleanup(self):
        for p in self.written:
            if os.path.isfile(p):
                os.remove(p)


def _certify(problem, config, estimator, model, reporter):
    results = {}
    dt = config.t_end / config.n_steps
    for mu in config.certify_mus:
        traj_red = solve_reduced(model, mu, dt, config.n_steps)
        lifted = lift_trajectory(model, traj_red)
        entry = {}
        if config.estimator_mode in ("surrogate", "both"):
            bd = estimator.total_estimate(lifted, mu, config.mu_hat, config.mu_bar,
                                          config.mu_tilde, mode="surrogate")
            entry["surrogate"] = bd.to_dict()
        if config.estimator_mode in ("oracle", "both"):
            bd = estimator.total_estimate(lifted, mu, config.mu_hat, config.mu_bar,
                                          config.mu_tilde, mode="oracle")
            entry["oracle"] = bd.to_dict()
        if "surrogate" in entry and "oracle" in entry and entry["oracle"]["total"] > 0:
            entry["ratio_surrogate_over_oracle"] = \
                entry["surrogate"]["total"] / entry["oracle"]["total"]
        path = reporter.path(f"breakdown_mu_{mu:g}.json")
        with open(path, "w") as fh:
            json.dump(entry, fh, indent=2, sort_keys=True)
        results[mu] = entry
    return results


def run_experiment(config, mode="full", outdir=None):
    """Execute one pipeline (truth-only | certify | greedy | full) and write reports."""
    config.validate()
    outdir = outdir or config.output
    reporter = _Reporter(outdir)
    started = time.time()
    timings = {}
    try:
        t0 = time.time()
        problem = build_problem(config)
        timings["build"] = time.time() - t0
        dt = config.t_end / config.n_steps

        if mode == "truth-only":
            t0 = time.time()
            operator = problem.form.evaluate_at(config.solve_mu)
            traj = solve_parabolic(operator, problem.mass, problem.rhs, problem.p0,
                                   dt, config.n_steps)
            timings["solve"] = time.time() - t0
            reporter.written.extend(traj.export_csv(outdir))
        else:
            estimator = make_estimator(problem, config)
            bases = initialize_bases(problem.space, problem.f)
            model = project_model(estimator, bases, config.mu_tilde)
            if mode in ("greedy", "full"):
                t0 = time.time()
                state = GreedyState(
                    estimator=estimator, model=model,
                    train=training_parameters(config), test=test_parameters(config),
                    mu_hat=config.mu_hat, mu_bar=config.mu_bar, mu_tilde=config.mu_tilde,
                    dt=dt, n_steps=config.n_steps, tolerance=config.greedy_tolerance,
                    max_iterations=config.max_iterations)
                run_greedy(state)
                timings["greedy"] = time.time() - t0
                write_decay_csv(state, reporter.path("greedy_decay.csv"),
                                config_lines=config_to_text(config).splitlines())
                model = state.model
            if mode in ("certify", "full"):
                t0 = time.time()
                _certify(problem, config, estimator, model, reporter)
                timings["certify"] = time.time() - t0
            if config.write_trajectories:
                traj_red = solve_reduced(model, config.solve_mu, dt, config.n_steps)
                lifted = lift_trajectory(model, traj_red)
                reporter.written.extend(lifted.export_csv(outdir))

        text = config_to_text(config)
        manifest = {
            "config": text,
            "config_sha256": hashlib.sha256(text.encode()).hexdigest(),
            "mode": mode,
            "versions": {"locrb": __version__, "numpy": np.__version__,
                         "python": sys.version.split()[0]},
            "wall_time_seconds": time.time() - started,
            "timings": timings,
            "outputs": sorted(os.path.relpath(p, outdir) for p in reporter.written),
        }
        with open(os.path.join(outdir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest
    except Exception:
        reporter.cleanup()
        raise


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="locrb",
        description="Certified localized reduced basis experiments for parabolic diffusion")
    parser.add_argument("verb", choices=["solve", "certify", "greedy", "full"])
    parser.add_argument("--config", help="path to a key = value configuration file")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides the config)")
    parser.add_argument("--estimator", choices=["oracle", "surrogate", "both"],
                        help="estimator mode (overrides the config)")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else ProblemConfig()
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.estimator is not None:
            config = replace(config, estimator_mode=args.estimator)
        outdir = args.out or config.output
        mode = {"solve": "truth-only"}.get(args.verb, args.verb)
        run_experiment(config, mode=mode, outdir=outdir)
    except (ConfigurationError, ParameterError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, LocrbError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
