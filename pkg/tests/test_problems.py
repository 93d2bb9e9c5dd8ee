import math

import numpy as np
import pytest

from ddsplit.errors import ConfigError, InversionFailure, NotApplicable
from ddsplit.mesh import build_grid
from ddsplit.problems import (
    ProblemSpec,
    RunConfig,
    barenblatt,
    default_problem,
    initial_state,
    plateau_width,
    relative_l1_error,
    run,
    verify_barenblatt,
    with_scheme,
)
from ddsplit.schemes import SchemeSpec

KINDS = ["pme", "toy", "biofilm", "richards"]


# --------------------------------------------------------------------------
# Barenblatt


def test_barenblatt_origin():
    assert barenblatt(0.0, 0.0, 6.0, 1, 1.0) == 1.0
    assert barenblatt(np.zeros(2), 0.0, 6.0, 2, 1.0) == 1.0


@pytest.mark.parametrize("d, nu", [(1, 1 / 7), (2, 1 / 6)])
def test_barenblatt_decay_exponent(d, nu):
    x = np.zeros(d) if d > 1 else 0.0
    assert barenblatt(x, 1.0, 6.0, d, 1.0) == pytest.approx(2.0 ** (-nu), rel=1e-14)


def test_barenblatt_support_radius_2d():
    r = math.sqrt(28.8)
    assert r == pytest.approx(5.3666, abs=1e-4)
    assert barenblatt(np.array([r * (1 - 1e-6), 0.0]), 0.0, 6.0, 2, 1.0) > 0.0
    assert barenblatt(np.array([0.0, r * (1 + 1e-9)]), 0.0, 6.0, 2, 1.0) == 0.0


def test_barenblatt_solves_pme():
    # u_t = (u**m)_xx at an interior support point, by centred differences
    m, x, t, h = 6.0, 1.0, 0.5, 1e-4
    f = lambda x_, t_: barenblatt(x_, t_, m, 1, 1.0)
    ut = (f(x, t + h) - f(x, t - h)) / (2 * h)
    g = lambda x_: f(x_, t) ** m
    lap = (g(x + h) - 2 * g(x) + g(x - h)) / h**2
    assert ut == pytest.approx(lap, rel=1e-5)


def test_barenblatt_rejects():
    with pytest.raises(ValueError):
        barenblatt(0.0, 0.0, 1.0, 1, 1.0)
    with pytest.raises(ValueError):
        barenblatt(0.0, -1.0, 6.0, 1, 1.0)


# --------------------------------------------------------------------------
# problem and run configuration


def test_defaults():
    p = default_problem("pme", 1)
    assert (p.m, p.gamma, p.T_final) == (6.0, 1.0, 1.0)
    assert default_problem("pme", 2).T_final == 0.1
    t = default_problem("toy", 1)
    assert (t.gamma, t.clamp_to) == (1.5, 1.0)
    assert t.model.adv.reaction == "linear" and t.model.adv.c == 0.5
    b = default_problem("biofilm", 1)
    assert b.gamma == 0.5 and b.model.adv.reaction == "fisher"
    r = default_problem("richards", 2)
    assert r.lam == 0.8 and r.C == 0.5 and r.gamma == 0.5
    assert r.model.adv.direction == (0.0, 1.0)
    assert default_problem("richards", 1).model.adv.direction == (1.0,)
    assert not default_problem("richards", 1, gravity_on=False).model.has_advection


@pytest.mark.parametrize(
    "kw",
    [dict(kind="x"), dict(dim=3), dict(gamma=0.0), dict(T_final=0.0), dict(kind="toy", clamp_to=1.5)],
)
def test_problem_spec_rejects(kw):
    with pytest.raises(ConfigError):
        ProblemSpec(**kw)


def test_run_config_checks():
    with pytest.raises(ConfigError):
        RunConfig(tau=0.0, h=0.1)
    rc = RunConfig(tau=0.1, h=0.1)
    assert rc.n_steps(1.0) == 10
    with pytest.raises(ConfigError):
        RunConfig(tau=10**-1.5, h=0.1).n_steps(1.0)
    with pytest.raises(ConfigError):
        RunConfig(tau=0.1, h=0.3).grid(1)


def test_with_scheme():
    rc = with_scheme(RunConfig(0.1, 0.1), kind="l", eps_stop=1e-8)
    assert rc.scheme.kind == "l" and rc.scheme.eps_stop == 1e-8


# --------------------------------------------------------------------------
# initial data


def test_initial_pme_peak():
    g = build_grid(1, -10.0, 10.0, 201)
    _, u0 = initial_state(default_problem("pme", 1), g)
    assert u0.max() == pytest.approx(1.0, abs=1e-12)
    assert np.argmax(u0) == 100


def test_initial_toy_clamped():
    prob = default_problem("toy", 1)
    g = build_grid(1, -10.0, 10.0, 200)
    s0, u0 = initial_state(prob, g)
    raw = barenblatt(g.centers, 0.0, 6.0, 1, 1.5)
    assert np.any(raw > 1.0)
    np.testing.assert_array_equal(u0[raw >= 1.0], 1.0)
    np.testing.assert_allclose(s0[raw >= 1.0], math.sqrt(2.0), rtol=1e-14)


@pytest.mark.parametrize("kind", KINDS)
def test_initial_inverse_consistency(kind):
    prob = default_problem(kind, 1)
    g = build_grid(1, -10.0, 10.0, 200)
    s0, u0 = initial_state(prob, g)
    np.testing.assert_allclose(prob.model.b(s0), u0, atol=1e-10)


def test_initial_exceeding_range():
    prob = default_problem("biofilm", 1, gamma=5.0)
    g = build_grid(1, -10.0, 10.0, 200)
    with pytest.raises(InversionFailure):
        initial_state(prob, g)


# --------------------------------------------------------------------------
# runs


def test_pme_run_matches_barenblatt():
    rep = run(default_problem("pme", 1), RunConfig(0.1, 0.1, SchemeSpec("m", M=0.01)))
    assert rep.converged and len(rep.steps) == 10
    assert relative_l1_error(rep) <= 0.02


def test_zero_data_stays_zero():
    prob = default_problem("pme", 1, clamp_to=0.0)
    rep = run(prob, RunConfig(0.1, 0.5))
    assert all(r.iterations == 1 for r in rep.steps)
    assert not rep.u.any()


@pytest.mark.parametrize("dim, h", [(1, 0.1), (2, 0.5)])
def test_pme_mass_conservation(dim, h):
    prob = default_problem("pme", dim, T_final=1.0)
    rep = run(prob, RunConfig(0.1, h))
    m = np.asarray(rep.mass_history)
    assert np.max(np.abs(m - m[0])) <= 1e-10 * m[0]


def test_verify_barenblatt():
    prob = default_problem("pme", 1)
    rep = run(prob, RunConfig(0.1, 0.1))
    errs = verify_barenblatt(rep)
    assert len(errs) == 11
    assert errs[0] == (0.0, 0.0)
    with pytest.raises(NotApplicable):
        verify_barenblatt(run(default_problem("toy", 1, T_final=0.1), RunConfig(0.1, 0.1)))
    with pytest.raises(ValueError):
        verify_barenblatt(run(prob, RunConfig(0.1, 0.1, store_history=False)))


def test_barenblatt_error_decreases_from_coarse_mesh():
    prob = default_problem("pme", 1)
    sch = SchemeSpec("m", eps_stop=1e-8)
    e = [verify_barenblatt(run(prob, RunConfig(0.01, h, sch)))[-1][0] for h in (0.1, 0.05)]
    assert e[1] < e[0]


def test_pme_2d_symmetry():
    prob = default_problem("pme", 2)
    rep = run(prob, RunConfig(0.05, 0.5))
    n = rep.grid.n
    U = rep.u.reshape(n, n)
    np.testing.assert_allclose(U, U.T, atol=1e-12)
    np.testing.assert_allclose(U, U[::-1, :], atol=1e-12)


def test_on_step_callback():
    seen = []
    run(default_problem("pme", 1, T_final=0.3), RunConfig(0.1, 0.1), on_step=lambda n, t, s, u, w, r: seen.append((n, t)))
    assert [n for n, _ in seen] == [1, 2, 3]
    assert seen[-1][1] == pytest.approx(0.3)


def test_divergent_run_stops():
    sch = SchemeSpec("newton", divergence_threshold=1.0001, max_iters=50)
    rep = run(default_problem("toy", 1), RunConfig(0.1, 0.1, sch))
    assert rep.diverged and not rep.converged
    assert len(rep.steps) == 1


# --------------------------------------------------------------------------
# invariants


@pytest.mark.parametrize("scheme", ["m", "madaptive", "newton"])
@pytest.mark.parametrize("kind", KINDS)
def test_bounds_preserved(kind, scheme):
    prob = default_problem(kind, 1)
    rep = run(prob, RunConfig(0.1, 0.1, SchemeSpec(scheme, eps_stop=1e-8)))
    assert rep.converged
    u = np.asarray(rep.u_history)
    assert u.min() >= -1e-8
    assert u.max() <= prob.phi_spec.omega + 1e-8


def test_richards_gravity_breaks_symmetry():
    tol = 1e-10
    on = run(default_problem("richards", 1), RunConfig(0.1, 0.1, SchemeSpec("m", eps_stop=tol)))
    off = run(default_problem("richards", 1, gravity_on=False), RunConfig(0.1, 0.1, SchemeSpec("m", eps_stop=tol)))
    assert np.max(np.abs(on.u - on.u[::-1])) > 10 * tol
    assert np.max(np.abs(off.u - off.u[::-1])) <= 1e-8


def test_toy_plateau_recorded():
    rep = run(default_problem("toy", 1), RunConfig(0.1, 0.1))
    widths = [plateau_width(u, rep.grid) for u in rep.u_history]
    print("toy plateau widths:", widths)
    assert len(widths) == 11 and widths[0] > 0
