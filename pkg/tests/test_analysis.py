import json
import math

import numpy as np
import pytest

from oracles import halfspace_ball_count, path_segment_gap, poisson_shift_generator_speed, zigzag_speed_exact
import tdrw.analysis as an
from tdrw.environments import HalfspaceParams, ZigzagParams, constant_env, halfspace_discrete, zigzag_1d
from tdrw.graph import DomainError, HalfSpace, Line, ball, volume, verify_ellipticity
from tdrw.kernel import PropagationConfig, kernel, ondiagonal_series
from tdrw.rng import make_rng

GAUSS_TIMES = (100, 200, 400, 800, 1600, 2000)


def gaussian(env, dyn, radius, tol=1e-12):
    snaps = kernel(dyn, env, [0], GAUSS_TIMES[-1], PropagationConfig(radius, tol, GAUSS_TIMES))
    series = [(s.time, s.at([0]), s.error_bound) for s in snaps]
    return an.gaussian_bound_report(series, snaps, lambda r: volume(Line(), [0], r))


# finite chains


def test_two_state_chain():
    ch = an.two_state_chain(0.25, 0.5)
    assert np.allclose(ch.pi, [2 / 3, 1 / 3], atol=1e-14)
    assert np.allclose(ch.q, [[0.75, 0.25], [0.5, 0.5]])
    assert np.allclose(an.two_state_chain(0.3, 0.3).pi, [0.5, 0.5])
    with pytest.raises(DomainError):
        an.two_state_chain(0.0, 0.0)


def test_stationary():
    assert np.allclose(an.stationary(an.two_state_chain(0.25, 0.5)), [2 / 3, 1 / 3], atol=1e-14)
    q = np.array([[0.2, 0.5, 0.3], [0.5, 0.1, 0.4], [0.3, 0.4, 0.3]])
    assert np.allclose(an.stationary(an.FiniteChain(("a", "b", "c"), q)), 1 / 3, atol=1e-14)
    with pytest.raises(DomainError):
        an.stationary(an.FiniteChain(("a", "b"), [[1.0, 0.0], [0.5, 0.5]]))
    with pytest.raises(DomainError):
        an.FiniteChain(("a", "b"), [[0.7, 0.7], [0.5, 0.5]])


def test_three_state_chain():
    ch = an.three_state_chain(0.5, 2.0)
    assert ch.residual() <= 1e-12
    assert ch.q[0, 1] + ch.q[0, 2] == 1.0
    assert np.all(np.diag(ch.q) == 0)
    assert an.three_state_chain(0.0, 2.0).q[0, 1] == 0.25
    with pytest.raises(DomainError):
        an.three_state_chain(0.5, 1.0)


def test_displayed_vector_is_only_reported():
    shown = an.displayed_three_state_vector(0.0, 2.0)
    assert np.allclose(shown, [-26, 26, 26])
    ch = an.three_state_chain(0.0, 2.0)
    assert ch.meta["displayed_residual"] > 1
    assert np.all(ch.pi > 0)


# speeds


@pytest.mark.parametrize("eps,g,gp", [(0.5, 0.25, 0.5), (0.3, 0.5, 0.1), (0.9, 0.2, 0.2)])
def test_ballistic_speed(eps, g, gp):
    rep = an.ballistic_speed_1d(eps, g, gp)
    assert rep.beta == pytest.approx(float(zigzag_speed_exact(eps, g, gp)), abs=1e-15)
    assert rep.decomposition.sum() == pytest.approx(rep.beta, abs=1e-15)
    assert an.ballistic_speed_1d(eps, gp, g).beta == pytest.approx(-rep.beta, abs=1e-15)


def test_ballistic_speed_examples():
    assert an.ballistic_speed_1d(0.5, 0.25, 0.5).beta == pytest.approx(1 / 6, abs=1e-15)
    assert an.ballistic_speed_1d(0.5, 0.0, 0.0).beta == 0.5


def test_csrw_speed_zero_and_positive():
    assert an.csrw_speed_sign(0.0, 2.0).beta == 0.0
    assert an.csrw_speed_sign(0.5, 2.0).sign == 1


@pytest.mark.parametrize("eps,c", [(0.5, 2.0), (-0.3, 2.0), (-0.7, 2.0), (0.2, 3.0), (-0.5, 1.5)])
def test_csrw_speed_matches_generator_oracle(eps, c):
    assert an.csrw_speed_sign(eps, c).beta == pytest.approx(poisson_shift_generator_speed(eps, c), abs=1e-14)


def test_csrw_speed_sign_pattern():
    # computed signs: positive between -3/(2c+1) and 0, negative below
    rep = an.csrw_speed_sign(-0.3, 2.0)
    assert rep.sign == 1
    assert rep.beta == pytest.approx(0.00177, abs=1e-5)
    assert an.csrw_speed_sign(-0.7, 2.0).sign == -1
    for c in (1.5, 2.0, 3.0, 5.0):
        e0 = -3 / (2 * c + 1)
        assert an.csrw_speed_sign(e0 + 1e-3, c).sign == 1
        assert an.csrw_speed_sign(e0 - 1e-3, c).sign == -1


def test_halfspace_speed():
    assert an.halfspace_speed(0.5, 0, 0).beta == pytest.approx(-0.5 / 3)
    rep = an.halfspace_speed(0.45, 2, 6 / 7)
    assert np.allclose(rep.pi, [1 / 3, 2 / 3])
    assert rep.beta == pytest.approx(-0.45 / 9, abs=1e-15)
    with pytest.raises(DomainError):
        an.halfspace_speed(0.5, 1, 2)


def test_halfspace_csrw_drift_negative():
    for eps in (0.1, 0.5, 0.9):
        for c in (1.5, 2.0, 4.0):
            rep = an.halfspace_csrw_speed(eps, c)
            assert rep.beta < 0
            assert rep.extra["stationarity_residual"] <= 1e-12


# tail fits


def test_tail_fit_all_ones():
    rep = an.geometric_tail_fit(np.ones(2000, dtype=int))
    assert rep.passed and rep.constants["slope"] == -math.inf


def test_tail_fit_geometric_sample():
    d = make_rng(4).geometric(0.3, size=20_000)
    rep = an.geometric_tail_fit(d)
    assert rep.passed
    assert abs(rep.constants["rate"] + math.log(0.7)) <= 0.1 * -math.log(0.7)


def test_tail_fit_needs_data():
    with pytest.raises(an.InsufficientDataError):
        an.geometric_tail_fit(np.ones(999))


def test_tail_fit_flat_tail_violates():
    # half the excursions last one step, half last 1000: the survival curve is flat
    d = np.r_[np.ones(1000, dtype=int), np.full(1000, 1000)]
    rep = an.geometric_tail_fit(d)
    assert rep.verdict == an.VIOLATED
    out = json.loads(rep.to_json())
    assert set(out) >= {"kind", "constants", "verdict", "evidence"}
    assert out["kind"] == "tail" and out["verdict"] == an.VIOLATED


# Gaussian reports


def test_gaussian_constant_lazy_passes():
    up, lo = gaussian(constant_env("line", 1.0, 2.0), "discrete", 700)
    assert up.verdict == lo.verdict == an.PASS
    assert up.constants["C4"] / up.constants["c6"] <= 20


def test_gaussian_zigzag_lower_violated():
    up, lo = gaussian(zigzag_1d(ZigzagParams.from_laziness(0.5, 0.25, 0.5)), "discrete", 2100)
    assert lo.verdict == an.VIOLATED
    assert lo.constants["diag_min"] < lo.constants["reference_min"] / 10


def test_gaussian_vsrw_zigzag_passes():
    up, lo = gaussian(zigzag_1d(ZigzagParams.from_laziness(0.5, 0.25, 0.5)), "vsrw", 700)
    assert up.verdict == lo.verdict == an.PASS


def test_gaussian_inconclusive_on_noisy_kernel():
    # the box holds early times but loses most of the mass by t = 2000
    up, lo = gaussian(constant_env("line", 1.0, 2.0), "discrete", 60)
    assert up.verdict == lo.verdict == an.INCONCLUSIVE


def test_gaussian_verdict_stable_under_tolerance():
    env = zigzag_1d(ZigzagParams(0.5))
    a = gaussian(env, "vsrw", 500, 1e-12)
    b = gaussian(env, "vsrw", 500, 5e-13)
    assert [r.verdict for r in a] == [r.verdict for r in b]


def test_gaussian_evidence_reproduces_flag():
    up, lo = gaussian(constant_env("line", 1.0, 2.0), "discrete", 700)
    for rep, cmp in ((up, lambda v, b: v <= b), (lo, lambda v, b: v >= b)):
        ok = all(cmp(v, b) for _, _, v, b in rep.evidence)
        assert ok == (rep.verdict == an.PASS)


# geometry constants


def test_poincare_constant_env_scaling():
    env = constant_env()
    c = [an.poincare_constant(env, 0, [0], r).constants["C2"] for r in (4, 8, 16)]
    assert max(c) / c[0] <= 2 and min(c) / c[0] >= 0.5
    # at outer = 1 the optimum is the inverse path gap of B(0, r)
    r = 6
    lam = an.poincare_constant(env, 0, [0], r, outer=1.0).constants["lambda_max"]
    assert lam == pytest.approx(1 / (2 * path_segment_gap(2 * r + 1)), rel=1e-9)


def test_poincare_zigzag_parities():
    eps = 0.5
    env = zigzag_1d(ZigzagParams(eps))
    for r in (4, 8):
        a = an.poincare_constant(env, 0, [0], r).constants["C2"]
        b = an.poincare_constant(env, 1, [0], r).constants["C2"]
        assert max(a, b) / min(a, b) <= (1 + eps) / (1 - eps)


def test_poincare_monotone_in_domain():
    env = zigzag_1d(ZigzagParams(0.5))
    vals = [an.poincare_constant(env, 0, [0], 5, outer=o).constants["C2"] for o in (1.0, 1.5, 2.0, 3.0)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def test_poincare_disconnected_ball():
    # floor vertices have no horizontal edges; isolated ones outside B(x0, r) are harmless
    env = halfspace_discrete(HalfspaceParams(0.5))
    rep = an.poincare_constant(env, 0, [0, 0, 0], 2)
    assert rep.passed and rep.extra["disconnected_directions"] > 0
    assert math.isfinite(rep.constants["C2"])
    # an isolated floor vertex inside the inner ball makes the inequality fail
    rep = an.poincare_constant(env, 0, [0, 0, 0], 2, outer=1.0)
    assert rep.verdict == an.VIOLATED and rep.constants["C2"] == math.inf


def test_poincare_errors():
    with pytest.raises(DomainError):
        an.poincare_constant(constant_env(), 0, [0], 0)
    with pytest.raises(an.ResourceError):
        an.poincare_constant(constant_env(HalfSpace()), 0, [0, 0, 0], 10)


def test_volume_doubling():
    rep = an.volume_doubling_constant(Line(), [0], 40)
    for _, r, ratio, _ in rep.evidence:
        assert ratio == pytest.approx((4 * r + 1) / (2 * r + 1))
    assert rep.constants["C1"] <= 2
    assert an.volume_doubling_constant(Line(), [0], 2).constants["C1"] == pytest.approx(5 / 3)
    hs = an.volume_doubling_constant(HalfSpace(), [0, 0, 0], 32)
    assert hs.constants["C1"] <= 8
    assert hs.evidence[3][3] == halfspace_ball_count(8)


def test_ellipticity_report():
    env = zigzag_1d(ZigzagParams(0.5))
    box = ball(env, [0], 4)
    assert an.ellipticity_report(verify_ellipticity(env, [0, 1], box, 0.5)).passed
    assert not an.ellipticity_report(verify_ellipticity(env, [0, 1], box, 0.9)).passed


# recurrence


def test_recurrence_series_exponent():
    series = ondiagonal_series(constant_env(), [0], [500, 1000, 1500, 2000], PropagationConfig(radius=400))
    rep = an.recurrence_diagnostic(series=series)
    assert abs(rep.exponent - 0.5) <= 0.05
    assert rep.verdict == "recurrent"


def test_recurrence_counts():
    rng = make_rng(1)
    grow = np.cumsum(rng.poisson(2.0, size=(50, 3)), axis=1)
    rep = an.recurrence_diagnostic(grow, [1e3, 1e4, 1e5])
    assert rep.verdict == "growing" and rep.extra["mean_growing"]
    flat = np.repeat(rng.poisson(2.0, size=(50, 1)), 3, axis=1)
    rep = an.recurrence_diagnostic(flat, [1e3, 1e4, 1e5])
    assert rep.verdict == "bounded" and not rep.extra["mean_growing"]
    zero = np.zeros((20, 2))
    assert an.recurrence_diagnostic(zero, [1, 2]).verdict == "bounded"
    json.dumps(rep.to_dict())


def test_zigzag_returns_stop_growing():
    from tdrw.walkers import return_counts, simulate_batch

    env = zigzag_1d(ZigzagParams.from_laziness(0.5, 0.25, 0.5))
    trajs = simulate_batch("discrete", env, [0], 100, 31, steps=20_000)
    counts = np.array([return_counts(tr, [2000, 20_000]) for tr in trajs])
    rep = an.recurrence_diagnostic(counts, [2000, 20_000])
    assert rep.verdict == "bounded"
    assert rep.extra["mean_growth_z"] < 3
