"""Finite-chain speed formulas, heat-kernel bound reports and diagnostics.

Every report serializes to ``{kind, constants, verdict, evidence}`` where the
evidence rows ``(t, d, value, bound)`` are enough to recompute the verdict.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, stats

from .graph import DomainError, Environment, Geometry, ball, volume

PASS, VIOLATED, INCONCLUSIVE = "pass", "violated", "inconclusive"


class InsufficientDataError(DomainError):
    pass


class ResourceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Finite chains


@dataclass
class FiniteChain:
    labels: tuple[str, ...]
    q: np.ndarray
    pi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (len(self.labels),) * 2:
            raise DomainError("transition matrix does not match the labels")
        if np.any(self.q < -1e-15) or np.abs(self.q.sum(axis=1) - 1).max() > 1e-12:
            raise DomainError("rows of q must be probability vectors")

    def residual(self) -> float:
        return float(np.abs(self.pi @ self.q - self.pi).max())


def stationary(chain: FiniteChain) -> np.ndarray:
    """Solve pi q = pi, sum(pi) = 1; raises on reducible chains."""
    q = chain.q
    n = len(q)
    reach = (q > 0).astype(int) + np.eye(n, dtype=int)
    for _ in range(int(math.ceil(math.log2(max(n, 2)))) + 1):
        reach = ((reach @ reach) > 0).astype(int)
    if not reach.all():
        raise DomainError("chain is reducible")
    a = np.vstack([q.T - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    # one refinement step keeps the residual at rounding level
    pi = pi + np.linalg.lstsq(a, rhs - a @ pi, rcond=None)[0]
    return pi


def _with_pi(chain: FiniteChain) -> FiniteChain:
    chain.pi = stationary(chain)
    return chain


def two_state_chain(gamma: float, gamma_prime: float) -> FiniteChain:
    if not (0 <= gamma < 1 and 0 <= gamma_prime < 1):
        raise DomainError("gamma, gamma' must lie in [0, 1)")
    if gamma == 0 and gamma_prime == 0:
        raise DomainError("degenerate chain: both flip rates vanish (non-lazy walk)")
    q = [[1 - gamma, gamma], [gamma_prime, 1 - gamma_prime]]
    chain = FiniteChain(("A+", "A-"), q, np.array([gamma_prime, gamma]) / (gamma + gamma_prime))
    # closed form: stays exact when a flip rate is zero or tiny, where the
    # linear solve is absorbed or ill-conditioned
    if chain.residual() > 1e-12:
        raise ArithmeticError(f"pi q - pi = {chain.residual()}")
    return chain


def three_state_chain(eps: float, c: float) -> FiniteChain:
    """Embedded state chain of the Poisson-shift environment.

    ``meta['displayed']`` holds the closed-form vector quoted alongside
    this chain in the literature; it is reported, not trusted, because its
    first entry is negative at eps = 0.
    """
    if c <= 1:
        raise DomainError("c must exceed 1")
    if not -1 < eps < 1:
        raise DomainError("eps must lie in (-1, 1)")
    a = (1 - eps) / (2 * c)
    b = 1 / ((2 - eps) * c)
    d = (1 + eps) / ((2 + eps) * c)
    q = [[0.0, a, 1 - a], [1 - b, 0.0, b], [d, 1 - d, 0.0]]
    chain = _with_pi(FiniteChain(("A1", "A2", "A3"), q))
    shown = displayed_three_state_vector(eps, c)
    chain.meta["displayed"] = shown
    chain.meta["displayed_residual"] = float(np.abs(shown @ chain.q - shown).max())
    chain.meta["displayed_normalized"] = shown / shown.sum()
    return chain


def displayed_three_state_vector(eps: float, c: float) -> np.ndarray:
    e, c2 = eps, c * c
    return np.array([
        2 * ((-4 * c2 + 2 * c - 1) + (c - 1) * e + c2 * e * e),
        (2 - e) * ((4 * c2 - 2 * c + 1) + (2 * c2 - 2 * c) * e - e * e),
        (2 + e) * ((4 * c2 - 2 * c + 1) + (-2 * c2 + 3 * c - 1) * e - c * e * e),
    ])


@dataclass
class SpeedReport:
    beta: float
    drift: np.ndarray
    pi: np.ndarray | None
    source: str = "formula"
    closed_form: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def decomposition(self) -> np.ndarray:
        return self.drift * self.pi

    @property
    def sign(self) -> int:
        return int(np.sign(self.beta))

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "source": self.source,
            "closed_form": self.closed_form,
            "drift": np.asarray(self.drift).tolist(),
            "pi": None if self.pi is None else np.asarray(self.pi).tolist(),
            **_jsonable(self.extra),
        }


def ballistic_speed_1d(eps: float, gamma: float, gamma_prime: float) -> SpeedReport:
    """Speed of the zigzag walk: sum_s Delta(s) pi(s) and its closed form."""
    if gamma == 0 and gamma_prime == 0:
        return SpeedReport(eps, np.array([eps]), np.array([1.0]), closed_form=eps,
                           extra={"note": "non-lazy walk never leaves its starting state"})
    chain = two_state_chain(gamma, gamma_prime)
    drift = np.array([eps * (1 - gamma), -eps * (1 - gamma_prime)])
    beta = float(drift @ chain.pi)
    closed = eps * (gamma_prime - gamma) / (gamma_prime + gamma)
    if abs(beta - closed) > 1e-14:
        raise ArithmeticError(f"drift decomposition {beta} disagrees with {closed}")
    return SpeedReport(beta, drift, chain.pi, closed_form=closed)


def csrw_speed_sign(eps: float, c: float) -> SpeedReport:
    """Speed of the Poisson-shift CSRW: state changes at rate c, drift Delta per change."""
    chain = three_state_chain(eps, c)
    drift = np.array([-eps / c, eps / ((2 - eps) * c), eps / ((2 + eps) * c)])
    per_change = float(chain.pi @ drift)
    return SpeedReport(c * per_change, drift, chain.pi, extra={
        "per_state_change": per_change,
        "stationarity_residual": chain.residual(),
        "displayed_vector": chain.meta["displayed"],
    })


def halfspace_speed(eps: float, b: float, b_prime: float) -> SpeedReport:
    """Vertical drift per step of the half-space walk away from the floor."""
    if b == 0 and b_prime == 0:
        return SpeedReport(-eps / 3, np.array([-eps / 3]), np.array([1.0]), closed_form=-eps / 3,
                           extra={"note": "non-lazy walk stays in state A- above the floor"})
    g, gp = b / (b + 6), b_prime / (b_prime + 6)
    if not gp < g:
        raise DomainError("construction needs gamma' < gamma")
    chain = two_state_chain(g, gp)
    drift = np.array([2 * eps / (6 + b), -2 * eps / (6 + b_prime)])
    beta = float(drift @ chain.pi)
    if eps > 0 and not beta < 0:
        raise ArithmeticError(f"half-space drift {beta} is not negative")
    return SpeedReport(beta, drift, chain.pi, closed_form=beta)


def halfspace_csrw_speed(eps: float, c: float) -> SpeedReport:
    """Drift per state change of the half-space CSRW away from the floor."""
    if c <= 1 or not 0 <= eps < 1:
        raise DomainError("need c > 1 and eps in [0, 1)")
    flip_p = (c - 1) / c + 1 / ((3 + eps) * c)
    flip_m = (c - 1) / c + 1 / ((3 - eps) * c)
    chain = _with_pi(FiniteChain(("A+", "A-"), [[1 - flip_p, flip_p], [flip_m, 1 - flip_m]]))
    drift = np.array([2 * eps / ((6 + 2 * eps) * c), -2 * eps / ((6 - 2 * eps) * c)])
    return SpeedReport(float(drift @ chain.pi), drift, chain.pi,
                       extra={"stationarity_residual": chain.residual()})


# ---------------------------------------------------------------------------
# Reports


@dataclass
class FitReport:
    kind: str
    constants: dict
    verdict: str
    evidence: list = field(default_factory=list)  # rows (t, d, value, bound)
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "constants": _jsonable(self.constants),
            "verdict": self.verdict,
            "evidence": [[float(v) for v in row] for row in self.evidence],
            **_jsonable(self.extra),
        }

    def to_json(self, path=None) -> str:
        s = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s)
        return s


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def geometric_tail_fit(durations, burn_in: int = 5, min_count: int = 5) -> FitReport:
    """Least-squares fit of log P(D > k) against k.

    Only levels with at least ``min_count`` exceedances enter the fit.  A tail
    that vanishes within two levels is reported as slope -inf (faster than
    any geometric law).
    """
    d = np.asarray(durations, dtype=np.int64)
    if len(d) < 1000:
        raise InsufficientDataError(f"need at least 1000 excursions, got {len(d)}")
    d = d[burn_in:]
    n = len(d)
    ks = np.arange(0, int(d.max()) + 1)
    exceed = n - np.searchsorted(np.sort(d), ks, side="right")
    keep = exceed >= min_count
    ks, surv = ks[keep], exceed[keep] / n
    evidence = [(int(k), 0, float(s), 0.0) for k, s in zip(ks, surv)]
    if len(ks) < 3:
        return FitReport("tail", {"slope": -math.inf, "rate": math.inf, "t_stat": -math.inf},
                         PASS, evidence, {"n": n})
    fit = stats.linregress(ks, np.log(surv))
    t_stat = fit.slope / fit.stderr if fit.stderr > 0 else (-math.inf if fit.slope < 0 else math.inf)
    verdict = PASS if t_stat < -3 else VIOLATED
    consts = {"slope": fit.slope, "intercept": fit.intercept, "rate": -fit.slope,
              "t_stat": t_stat, "mean_duration": float(d.mean())}
    evidence = [(k, 0, s, math.exp(fit.intercept + fit.slope * k)) for k, _, s, _ in evidence]
    return FitReport("tail", consts, verdict, evidence, {"n": n})


def _r2(x, y) -> float:
    if len(x) < 3 or np.ptp(x) == 0:
        return float("nan")
    return float(stats.linregress(x, y).rvalue ** 2)


def gaussian_bound_report(
    series: Sequence[tuple],
    snapshots: Sequence,
    volume_fn: Callable[[float], float],
    x0=None,
    noise_factor: float = 100.0,
    band: float = 10.0,
) -> tuple[FitReport, FitReport]:
    """Upper and lower Gaussian reports for p(0, x0; t, y) nu(B(x0, sqrt t)).

    Evidence rows are (t, d, value, fitted envelope) with value =
    p * nu(B(x0, floor(sqrt t))) over vertices with t >= d whose mass is at
    least ``noise_factor`` times the kernel error bound.  With ``s`` the
    fitted decay of ln(value) in d^2/t, the upper envelope uses C5 = s/2 and
    the smallest admissible C4, the lower one c7 = 2s and the largest c6.
    The on-diagonal product is compared with the range it takes over the
    first window (t <= 2 t_min): falling more than ``band``-fold below it
    violates the lower bound, rising more than ``band``-fold above it
    violates the upper bound.
    """
    series = [(float(t), float(p), float(e)) for t, p, e in series]
    if x0 is None:
        x0 = snapshots[0].center
    rows = []
    diag = []
    worst_noise = 0.0
    for t, p, err in series:
        if t <= 0:
            continue
        nu = volume_fn(math.floor(math.sqrt(t)))
        diag.append((t, p * nu, p, err))
        if err > 0.01 * p:
            worst_noise = max(worst_noise, err / max(p, 1e-300))
    for snap in snapshots:
        t = snap.time
        if t <= 0:
            continue
        nu = volume_fn(math.floor(math.sqrt(t)))
        d = snap.distances().ravel()
        m = snap.mass.ravel()
        ok = (d <= t) & (m > 0) & (m >= noise_factor * snap.error_bound)
        for dd, mm in zip(d[ok], m[ok]):
            rows.append((t, float(dd), float(mm * nu), float(mm)))
    if not rows or not diag:
        raise InsufficientDataError("no usable kernel values")
    rows = np.array(rows)
    z = rows[:, 1] ** 2 / rows[:, 0]
    lv = np.log(rows[:, 2])
    if np.ptp(z) > 0:
        fit = stats.linregress(z, lv)
        s = max(-fit.slope, 0.0)
        r2_norm = float(fit.rvalue ** 2)
    else:
        s, r2_norm = 0.0, float("nan")
    r2_raw = _r2(z, np.log(rows[:, 3]))
    C5, c7 = s / 2, 2 * s
    C4 = float(np.exp(np.max(lv + C5 * z)))
    c6 = float(np.exp(np.min(lv + c7 * z)))
    diag = np.array(diag)
    t_min = diag[:, 0].min()
    ref = diag[diag[:, 0] <= 2 * t_min, 1]
    lo_ref, hi_ref = ref.min(), ref.max()
    prod = diag[:, 1]
    common = {"C4": C4, "C5": C5, "c6": c6, "c7": c7, "slope": s,
              "r2_normalized": r2_norm, "r2_raw": r2_raw,
              "diag_min": float(prod.min()), "diag_max": float(prod.max()),
              "diag_ratio": float(prod.max() / prod.min()) if prod.min() > 0 else math.inf,
              "reference_min": float(lo_ref), "reference_max": float(hi_ref)}
    inconclusive = worst_noise > 0
    ev_u = [(t, 0.0, v, band * hi_ref) for t, v, _, _ in diag]
    ev_l = [(t, 0.0, v, lo_ref / band) for t, v, _, _ in diag]
    up = INCONCLUSIVE if inconclusive else (VIOLATED if prod.max() > band * hi_ref else PASS)
    lo = INCONCLUSIVE if inconclusive else (VIOLATED if prod.min() < lo_ref / band else PASS)
    extra = {"evidence_rows_offdiag": int(len(rows)), "band": band}
    return (
        FitReport("gaussian-upper", dict(common), up, ev_u, extra),
        FitReport("gaussian-lower", dict(common), lo, ev_l, extra),
    )


def offdiagonal_r2(snapshots, x0=None, noise_factor: float = 100.0, normalize: Callable | None = None) -> float:
    """R^2 of ln p against d^2/t pooled over snapshots, t >= d, above noise."""
    zs, ys = [], []
    for snap in snapshots:
        d = snap.distances().ravel()
        m = snap.mass.ravel()
        ok = (d <= snap.time) & (m > 0) & (m >= noise_factor * snap.error_bound)
        zs.append(d[ok] ** 2 / snap.time)
        scale = 1.0 if normalize is None else normalize(snap.time)
        ys.append(np.log(m[ok] * scale))
    return _r2(np.concatenate(zs), np.concatenate(ys))


# ---------------------------------------------------------------------------
# Geometry constants

_MAX_BALL = 4000


def poincare_constant(env: Environment, t: float, x0, r: int, outer: float = 2.0) -> FitReport:
    """Optimal C2 in sum_{B_r}|f - f_B|^2 <= C2 r^2 sum_{B_{outer r}} (f(x)-f(y))^2 mu(x,y).

    The Dirichlet sum runs over ordered pairs.  Solved as a dense generalized
    eigenproblem on functions orthogonal to constants.
    """
    if r < 1:
        raise DomainError("radius must be at least 1")
    geom = env.geometry
    big = ball(geom, x0, int(math.floor(outer * r))).members
    n = len(big)
    if n > _MAX_BALL:
        raise ResourceError(f"ball of {n} vertices exceeds the {_MAX_BALL} cap")
    index = {tuple(v): i for i, v in enumerate(big)}
    seg = env.segment_index(t)
    w = env.local_weights(seg, big.T)
    L = np.zeros((n, n))
    for idx, step in enumerate(geom.steps):
        nb = np.asarray(geom.normalize((big + step).T)).T
        for i, y in enumerate(nb):
            j = index.get(tuple(y))
            if j is None or j == i or w[idx, i] == 0:
                continue
            L[i, j] -= w[idx, i]
            L[i, i] += w[idx, i]
    E = 2 * L  # ordered pairs count each edge twice
    inner = geom.distance(big.T, np.asarray(x0).reshape(-1, 1)) <= r
    k = int(inner.sum())
    V = np.zeros((n, n))
    ii = np.flatnonzero(inner)
    V[np.ix_(ii, ii)] = np.eye(k) - 1.0 / k
    Q = linalg.null_space(np.ones((1, n)))
    A, B = Q.T @ V @ Q, Q.T @ E @ Q
    s, U = linalg.eigh(B)
    keep = s > 1e-10 * s.max()
    extra = {"ball_size": n, "inner_size": k, "disconnected_directions": int((~keep).sum())}
    # the ball's graph can be disconnected (the discrete half-space floor has
    # no horizontal edges); zero-energy directions with variance make C2 infinite
    if (~keep).any() and np.abs(A @ U[:, ~keep]).max() > 1e-10:
        return FitReport("poincare", {"C2": math.inf, "lambda_max": math.inf}, VIOLATED,
                         [(float(t), float(r), math.inf, math.nan)], extra)
    Uk = U[:, keep]
    lam = float(linalg.eigh(Uk.T @ A @ Uk, np.diag(s[keep]), eigvals_only=True)[-1])
    return FitReport("poincare", {"C2": lam / r**2, "lambda_max": lam}, PASS,
                     [(float(t), float(r), lam / r**2, math.nan)], extra)


def volume_doubling_constant(geometry: Geometry, x0, r_max: int) -> FitReport:
    if r_max < 2:
        raise DomainError("r_max must be at least 2")
    rows = []
    for r in range(1, r_max // 2 + 1):
        v1, v2 = volume(geometry, x0, r), volume(geometry, x0, 2 * r)
        rows.append((0.0, float(r), v2 / v1, float(v2)))
    C1 = max(row[2] for row in rows)
    return FitReport("doubling", {"C1": C1}, PASS, rows)


def ellipticity_report(rep) -> FitReport:
    return FitReport("ellipticity", {"min_weight": rep.min_weight, "max_weight": rep.max_weight},
                     PASS if rep.passed else VIOLATED, [], {"violation": rep.violation})


# ---------------------------------------------------------------------------
# Recurrence


@dataclass
class RecurrenceReport:
    mode: str
    verdict: str
    horizons: list
    medians: list | None = None
    means: list | None = None
    mean_se: list | None = None
    exponent: float | None = None
    exponent_r2: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable({k: getattr(self, k) for k in
                          ("mode", "verdict", "horizons", "medians", "means", "mean_se",
                           "exponent", "exponent_r2", "extra")})


def recurrence_diagnostic(
    counts=None, horizons: Sequence[float] | None = None, series=None, growth: float = 1.5
) -> RecurrenceReport:
    """Return-count growth from trajectories, or decay exponent from a kernel series.

    ``counts`` is an (n_walks, n_horizons) array of returns to the start.
    The median verdict is "growing" when the median at the last horizon is
    positive and at least ``growth`` times the median at the first one.
    Because medians of slowly growing counts can sit at zero, the report also
    gives the mean increment between the first and last horizon with its
    standard error (``mean_growth_z``).

    ``series`` is a list of (t, p) or (t, p, err); the exponent alpha in
    p ~ t^-alpha is fitted on the positive entries.
    """
    if series is not None:
        arr = np.array([(float(s[0]), float(s[1])) for s in series])
        arr = arr[(arr[:, 0] > 0) & (arr[:, 1] > 0)]
        if len(arr) < 2:
            raise InsufficientDataError("need two positive kernel values")
        fit = stats.linregress(np.log(arr[:, 0]), np.log(arr[:, 1]))
        alpha = -fit.slope
        verdict = "recurrent" if alpha <= 1 else "transient"
        return RecurrenceReport("series", verdict, arr[:, 0].tolist(), exponent=float(alpha),
                                exponent_r2=float(fit.rvalue ** 2))
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2 or counts.shape[1] < 2:
        raise DomainError("counts must be (walks, horizons) with at least two horizons")
    med = np.median(counts, axis=0)
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(len(counts))
    inc = counts[:, -1] - counts[:, 0]
    inc_se = inc.std(ddof=1) / math.sqrt(len(inc))
    z = float(inc.mean() / inc_se) if inc_se > 0 else (math.inf if inc.mean() > 0 else 0.0)
    median_growing = bool(med[-1] > 0 and med[-1] >= growth * med[0])
    verdict = "growing" if median_growing else "bounded"
    return RecurrenceReport(
        "trajectories", verdict, list(horizons) if horizons is not None else list(range(counts.shape[1])),
        medians=med.tolist(), means=mean.tolist(), mean_se=se.tolist(),
        extra={"median_growth": median_growing, "mean_increment": float(inc.mean()),
               "mean_increment_se": float(inc_se), "mean_growth_z": z,
               "mean_growing": bool(z > 3)},
    )
