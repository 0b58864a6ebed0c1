"""Property tests for the structural invariants of environments, walks, kernels and chains."""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import cycle_matrix_power
import tdrw.analysis as an
from tdrw.environments import (
    HalfspaceParams,
    PoissonShiftParams,
    TableEdge,
    ZigzagParams,
    constant_env,
    halfspace_csrw,
    halfspace_discrete,
    poisson_shift_1d,
    random_cycle_env,
    zigzag_1d,
)
from tdrw.graph import (
    ConductanceSchedule,
    Cycle,
    Environment,
    HalfSpace,
    Line,
    ball,
    conductance,
    transition_prob,
    transition_row,
    verify_ellipticity,
    volume,
)
from tdrw.kernel import PropagationConfig, discrete_kernel, duality_discrepancy, kernel
from tdrw.walkers import simulate_batch, simulate_csrw, simulate_discrete, simulate_vsrw

eps_open = st.floats(0.01, 0.99)
eps_signed = st.floats(-0.95, 0.95)
laziness = st.floats(0.0, 0.9)
seeds = st.integers(0, 2**32 - 1)
gaps = st.lists(st.floats(0.05, 3.0), min_size=1, max_size=6)


def breakpoints(g):
    return tuple(np.concatenate([[0.0], np.cumsum(g)]))


@st.composite
def environments(draw):
    kind = draw(st.sampled_from(["zigzag", "poisson", "hs-dt", "hs-csrw", "constant", "cycle"]))
    eps = draw(eps_open)
    if kind == "zigzag":
        return zigzag_1d(ZigzagParams.from_laziness(eps, draw(laziness), draw(laziness)))
    if kind == "poisson":
        return poisson_shift_1d(PoissonShiftParams(draw(eps_signed), draw(st.floats(1.1, 5)), breakpoints(draw(gaps))))
    if kind == "hs-dt":
        g = draw(st.floats(0.05, 0.9))
        return halfspace_discrete(HalfspaceParams.from_laziness(eps, g, draw(st.floats(0.0, 0.99)) * g))
    if kind == "hs-csrw":
        return halfspace_csrw(HalfspaceParams(eps, breakpoints=breakpoints(draw(gaps))))
    if kind == "constant":
        return constant_env(draw(st.sampled_from(["line", "halfspace"])), draw(st.floats(0.2, 5)),
                            draw(st.floats(0, 3)))
    return random_cycle_env(draw(st.integers(3, 12)), draw(st.integers(1, 4)), 5.0, draw(seeds))


def vertex(env, draw):
    if isinstance(env.geometry, HalfSpace):
        return [draw(st.integers(-5, 5)), draw(st.integers(-5, 5)), draw(st.integers(0, 5))]
    if isinstance(env.geometry, Cycle):
        return [draw(st.integers(0, env.geometry.n - 1))]
    return [draw(st.integers(-20, 20))]


# graph-core and environments


@given(environments(), st.floats(0, 12), st.data())
def test_rows_stochastic_and_symmetric(env, t, data):
    x = vertex(env, data.draw)
    if env.discrete:
        t = math.floor(t)
    row = transition_row(env, t, x)
    assert abs(sum(row.values()) - 1) <= 1e-12
    for y in row:
        if tuple(y) != tuple(env.geometry.normalize(np.reshape(x, (-1, 1)))[:, 0]):
            assert conductance(env, t, x, y) == conductance(env, t, y, x)


@given(gaps, st.one_of(st.floats(-0.95, -0.01), st.floats(0.01, 0.95)), st.integers(-20, 20))
def test_schedule_right_continuous(g, eps, i):
    bp = breakpoints(g)
    env = poisson_shift_1d(PoissonShiftParams(eps, 2.0, bp))
    for a, b in zip(bp, bp[1:]):
        assert conductance(env, a, [i], [i + 1]) == conductance(env, (a + b) / 2, [i], [i + 1])
        assert conductance(env, b, [i], [i + 1]) != conductance(env, (a + b) / 2, [i], [i + 1])


@given(st.integers(0, 60), st.integers(-50, 50))
def test_line_volumes(r, x):
    assert volume(Line(), [x], r) == 2 * r + 1
    assert volume(Line(), [x], r + 1) > volume(Line(), [x], r)


@given(st.integers(0, 12), st.integers(0, 6))
def test_halfspace_volumes_increase(r, k):
    assert volume(HalfSpace(), [0, 0, k], r + 1) > volume(HalfSpace(), [0, 0, k], r)


@given(environments(), st.data())
def test_generated_environments_elliptic(env, data):
    x = vertex(env, data.draw)
    rep = verify_ellipticity(env, [0.0, 1.0, 2.5, 4.0], ball(env, x, 3))
    assert rep.passed


@given(eps_open, st.floats(0, 4), st.floats(0, 4), st.integers(0, 50), st.integers(-30, 30))
def test_zigzag_alternates(eps, b, bp, t, i):
    env = zigzag_1d(ZigzagParams(eps, b, bp))
    assert conductance(env, t, [i], [i + 1]) != conductance(env, t + 1, [i], [i + 1])


@given(eps_signed, st.integers(0, 20), st.integers(-30, 30))
def test_poisson_shift_period_three(eps, k, i):
    env = poisson_shift_1d(PoissonShiftParams(eps, 2.0, tuple(float(j) for j in range(30))))
    assert np.array_equal(env.weights_at(k + 3.5, [i]), env.weights_at(k + 0.5, [i]))


@given(eps_open, st.floats(0.05, 0.9), st.floats(0, 0.99), st.integers(0, 40), st.integers(-9, 9), st.integers(-9, 9))
def test_halfspace_floor_no_horizontal(eps, g, frac, t, i, j):
    env = halfspace_discrete(HalfspaceParams.from_laziness(eps, g, frac * g))
    for y in ([i + 1, j, 0], [i - 1, j, 0], [i, j + 1, 0], [i, j - 1, 0]):
        assert transition_prob(env, t, [i, j, 0], y) == 0.0


# walks


@given(environments(), seeds, st.data())
def test_trajectories_adjacent_and_reproducible(env, seed, data):
    x = vertex(env, data.draw)
    if env.discrete:
        a = simulate_discrete(env, x, 0, 60, seed)
        b = simulate_discrete(env, x, 0, 60, seed)
    else:
        sim = data.draw(st.sampled_from([simulate_csrw, simulate_vsrw]))
        a, b = sim(env, x, 0, 15.0, seed), sim(env, x, 0, 15.0, seed)
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.times, b.times)
    v = a.vertices
    for p, q in zip(v, v[1:]):
        assert env.geometry.distance(p.reshape(-1, 1), q.reshape(-1, 1))[0] <= 1
    assert env.geometry.contains(v.T).all()


@pytest.mark.parametrize("eps", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("gamma", [0.1, 0.4])
@pytest.mark.parametrize("gamma_prime", [0.2, 0.6])
def test_speed_formula_matches_monte_carlo(eps, gamma, gamma_prime):
    env = zigzag_1d(ZigzagParams.from_laziness(eps, gamma, gamma_prime))
    n, steps = 60, 5000
    trajs = simulate_batch("discrete", env, [0], n, 99, steps=steps)
    v = np.array([tr.vertices[-1, 0] / steps for tr in trajs])
    beta = an.ballistic_speed_1d(eps, gamma, gamma_prime).beta
    assert abs(v.mean() - beta) <= 3 * v.std(ddof=1) / math.sqrt(n)


# kernels


@given(environments(), st.integers(1, 25), st.integers(2, 15), st.data())
def test_kernel_conservation(env, T, radius, data):
    x = vertex(env, data.draw)
    if isinstance(env.geometry, HalfSpace):
        radius = min(radius, 6)
    dyn = "discrete" if env.discrete else data.draw(st.sampled_from(["csrw", "vsrw"]))
    cfg = PropagationConfig(radius, 1e-12, (T / 3, T / 2))
    for snap in kernel(dyn, env, x, T, cfg):
        assert abs(snap.total() + snap.truncation_loss - 1) <= 1e-10
        assert snap.mass.min() >= 0


@given(st.integers(3, 15), st.integers(0, 40), seeds, st.data())
def test_cycle_kernel_matches_matrix_power(n, t, seed, data):
    rng = np.random.default_rng(seed)
    w, loops = rng.uniform(0.3, 3, n), rng.uniform(0, 2, n)
    sched = ConductanceSchedule(edge=TableEdge(w[None, :]), loop=lambda s, c: loops[c[0]], breakpoints=())
    env = Environment(Cycle(n), sched, c1=1 / 3.4, max_edge=3.0, max_loop=2.0)
    x0 = data.draw(st.integers(0, n - 1))
    snap = discrete_kernel(env, [x0], 0, t, PropagationConfig(radius=n))[-1]
    assert np.abs(snap.mass - cycle_matrix_power(w, loops, t, x0)).max() <= 1e-12


@given(st.integers(3, 12), st.integers(1, 5), st.floats(0.5, 8.0), seeds)
def test_vsrw_duality_random_schedules(n, segments, T, seed):
    env = random_cycle_env(n, segments, T, seed)
    assert duality_discrepancy(env, T, PropagationConfig(radius=n)) <= 1e-9


@given(st.integers(1, 40), st.lists(st.integers(1, 30), min_size=2, max_size=4, unique=True),
       st.sampled_from(["discrete", "csrw", "vsrw"]))
def test_truncation_monotone(T, radii, dyn):
    env = zigzag_1d(ZigzagParams.from_laziness(0.5, 0.25, 0.5)) if dyn == "discrete" else constant_env()
    losses = [kernel(dyn, env, [0], T, PropagationConfig(radius=r))[-1].truncation_loss for r in sorted(radii)]
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


# chains and analysis


@given(st.floats(0, 0.99), st.floats(0, 0.99))
def test_two_state_residual(g, gp):
    if g == 0 and gp == 0:
        return
    ch = an.two_state_chain(g, gp)
    assert ch.residual() <= 1e-12 and abs(ch.pi.sum() - 1) <= 1e-12
    assert np.allclose(ch.pi, np.array([gp, g]) / (g + gp), atol=1e-14)


@given(eps_signed, st.floats(1.01, 20))
def test_three_state_residual_and_positivity(eps, c):
    ch = an.three_state_chain(eps, c)
    assert ch.residual() <= 1e-12
    assert np.all(ch.pi > 0)


@given(st.one_of(st.floats(-0.95, -0.62), st.floats(-0.58, -0.02), st.floats(0.02, 0.95)), st.floats(0.1, 10))
def test_speed_sign_invariant_under_rescaling(eps, M):
    c = 2.0
    env = poisson_shift_1d(PoissonShiftParams(eps, c, (0.0, 1.0)))
    scaled = Environment(
        env.geometry,
        ConductanceSchedule(edge=lambda s, x, a: M * env.schedule.edge(s, x, a), breakpoints=env.schedule.breakpoints),
        c1=min(env.c1 * M, 1 / (env.max_edge * M), 1.0),
    )
    # generator of the relative position s = x - k mod 3, built from the jump
    # law of the rescaled environment on segment 0
    G = np.zeros((3, 3))
    drift = np.zeros(3)
    for s in range(3):
        row = transition_row(scaled, 0.5, [s])
        right, left = row[(s + 1,)], row[(s - 1,)]
        G[s, (s + 1) % 3] += right
        G[s, (s - 1) % 3] += left + (c - 1)
        drift[s] = right - left
    G -= np.diag(G.sum(axis=1))
    w, v = np.linalg.eig(G.T)
    pi = np.real(v[:, np.argmin(np.abs(w))])
    pi /= pi.sum()
    assert np.sign(pi @ drift) == an.csrw_speed_sign(eps, c).sign


@given(st.integers(2, 8), st.floats(1.0, 2.5), st.floats(0.0, 1.5), st.integers(0, 1))
def test_poincare_monotone(r, outer, extra, t):
    env = zigzag_1d(ZigzagParams(0.5))
    a = an.poincare_constant(env, t, [0], r, outer=outer).constants["C2"]
    b = an.poincare_constant(env, t, [0], r, outer=outer + extra).constants["C2"]
    assert b <= a * (1 + 1e-9)
