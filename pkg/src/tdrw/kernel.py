"""Heat kernels by time-ordered propagation on a finite box.

Mass that steps out of the box is absorbed and booked as
``truncation_loss``, so every reported mass is a lower bound on the true
kernel and ``mass.sum() + truncation_loss == 1`` up to rounding.

Continuous-time kernels are uniformized segment by segment:
``exp(a (P - I)) = sum_k Pois(a; k) P^k``.  The series is cut at the
smallest K whose Poisson tail is below the per-piece budget and the tail
weight is folded into the last retained term, which keeps the scheme
stochastic; ``series_error`` accumulates twice the folded tail, an L1 bound.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .graph import Cycle, DomainError, Environment, Geometry, HalfSpace
from .environments import reversed_environment

_MAX_POISSON_MEAN = 32.0


@dataclass(frozen=True)
class PropagationConfig:
    radius: int = 200
    tolerance: float = 1e-12
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if self.radius < 1:
            raise DomainError("box radius must be at least 1")
        if not 0 < self.tolerance <= 1e-6:
            raise DomainError("series tolerance must lie in (0, 1e-6]")
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))


class _Box:
    """Dense rectangular window of the geometry around a center."""

    def __init__(self, geometry: Geometry, center, radius: int):
        self.geometry = geometry
        self.center = tuple(int(v) for v in np.ravel(center))
        self.radius = radius
        if isinstance(geometry, Cycle):
            lo = [0]
            hi = [geometry.n - 1]
            self.periodic = True
        else:
            lo = [c - radius for c in self.center]
            hi = [c + radius for c in self.center]
            if isinstance(geometry, HalfSpace):
                lo[2] = max(lo[2], 0)
            self.periodic = False
        self.origin = np.array(lo, dtype=np.int64)
        self.shape = tuple(h - l + 1 for l, h in zip(lo, hi))
        grids = np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)], indexing="ij")
        self.coords = np.stack(grids).astype(np.int64)

    def index(self, y) -> tuple | None:
        y = np.asarray(self.geometry.normalize(np.asarray(y, dtype=np.int64).reshape(-1)))
        idx = y - self.origin
        if np.any(idx < 0) or np.any(idx >= self.shape):
            return None
        return tuple(int(i) for i in idx)

    def delta(self, x) -> np.ndarray:
        m = np.zeros(self.shape)
        idx = self.index(x)
        if idx is None:
            raise DomainError(f"start {x} outside the box")
        m[idx] = 1.0
        return m

    def exit_distance(self) -> float:
        if self.periodic:
            return math.inf
        d = []
        for a, c in enumerate(self.center):
            d.append(self.origin[a] + self.shape[a] - 1 - c)
            if not (isinstance(self.geometry, HalfSpace) and a == 2 and self.origin[a] == 0):
                d.append(c - self.origin[a])
        return float(min(d))


class _Stencil:
    """One-step operator of a segment, acting on row vectors of mass."""

    def __init__(self, env: Environment, box: _Box, seg, kind: str):
        w = env.local_weights(seg, box.coords)
        self.box = box
        if kind == "vsrw":
            out = w[:-1].sum(axis=0)
            self.rate = float(out.max())
            p = np.empty_like(w)
            p[:-1] = w[:-1] / self.rate
            p[-1] = 1.0 - out / self.rate
        else:
            self.rate = 1.0
            p = w / w.sum(axis=0)
        self.p = p

    def apply(self, m: np.ndarray) -> tuple[np.ndarray, float]:
        p = self.p
        new = m * p[-1]
        lost = 0.0
        for idx in range(len(p) - 1):
            axis, sign = divmod(idx, 2)
            flow = m * p[idx]
            step = 1 if sign == 0 else -1
            if self.box.periodic:
                new += np.roll(flow, step, axis=axis)
                continue
            src = [slice(None)] * m.ndim
            dst = [slice(None)] * m.ndim
            edge = [slice(None)] * m.ndim
            if step == 1:
                src[axis], dst[axis], edge[axis] = slice(None, -1), slice(1, None), -1
            else:
                src[axis], dst[axis], edge[axis] = slice(1, None), slice(None, -1), 0
            new[tuple(dst)] += flow[tuple(src)]
            lost += float(flow[tuple(edge)].sum())
        return new, lost


@dataclass
class KernelSnapshot:
    """Masses p(t0, x0; t, y) over a box, with loss bookkeeping."""

    time: float
    center: tuple
    radius: int
    geometry: Geometry
    origin: np.ndarray
    mass: np.ndarray
    truncation_loss: float
    series_error: float = 0.0
    loss_bound: float = 0.0
    dynamics: str = "discrete"

    @property
    def error_bound(self) -> float:
        return self.truncation_loss + self.series_error

    def coords(self) -> np.ndarray:
        grids = np.meshgrid(
            *[o + np.arange(s) for o, s in zip(self.origin, self.mass.shape)], indexing="ij"
        )
        return np.stack(grids)

    def at(self, y) -> float:
        box_idx = np.asarray(self.geometry.normalize(np.ravel(y))) - self.origin
        if np.any(box_idx < 0) or np.any(box_idx >= self.mass.shape):
            return 0.0
        return float(self.mass[tuple(box_idx)])

    def total(self) -> float:
        return float(self.mass.sum())

    def distances(self) -> np.ndarray:
        c = np.asarray(self.center).reshape((-1,) + (1,) * self.mass.ndim)
        return self.geometry.distance(self.coords(), c)

    def mean(self) -> np.ndarray:
        x = self.coords().reshape(len(self.origin), -1)
        return x @ self.mass.ravel() / self.total()

    def variance(self) -> np.ndarray:
        x = self.coords().reshape(len(self.origin), -1).astype(float)
        m = self.mass.ravel() / self.total()
        mu = x @ m
        return ((x - mu[:, None]) ** 2) @ m

    def summary(self) -> dict:
        return {
            "time": self.time,
            "dynamics": self.dynamics,
            "total_mass": self.total(),
            "truncation_loss": self.truncation_loss,
            "series_error": self.series_error,
            "loss_bound": self.loss_bound,
            "mean": self.mean().tolist(),
            "variance": self.variance().tolist(),
        }

    def to_csv(self, path, min_mass: float = 0.0):
        """One row per box vertex: coordinates then mass (round-trip floats)."""
        x = self.coords().reshape(len(self.origin), -1)
        m = self.mass.ravel()
        cols = ["x"] if len(self.origin) == 1 else ["x", "y", "z"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*cols, "mass"])
            for i in np.flatnonzero(m >= min_mass):
                w.writerow([*(int(v) for v in x[:, i]), repr(float(m[i]))])

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _snapshot(box, t, m, loss, serr, bound, dynamics) -> KernelSnapshot:
    if m.min() < -1e-15:
        raise FloatingPointError(f"negative mass {m.min()} at t={t}")
    return KernelSnapshot(
        time=float(t), center=box.center, radius=box.radius, geometry=box.geometry,
        origin=box.origin.copy(), mass=np.clip(m, 0.0, None), truncation_loss=loss,
        series_error=serr, loss_bound=max(loss, bound), dynamics=dynamics,
    )


def _wanted(cfg: PropagationConfig, t0: float, T: float) -> list[float]:
    ts = sorted({t for t in cfg.snapshot_times if t0 <= t <= T} | {float(T)})
    return ts


def discrete_kernel(env: Environment, x0, t0: int, T: int, cfg: PropagationConfig) -> list[KernelSnapshot]:
    """Forward iteration of the discrete-time walk from ``(t0, x0)`` to time ``T``."""
    t0, T = int(t0), int(T)
    if T < t0:
        raise DomainError("final time precedes the start")
    box = _Box(env.geometry, x0, cfg.radius)
    m = box.delta(x0)
    wanted = set(int(t) for t in _wanted(cfg, t0, T))
    loss = 0.0
    out = []
    for t in range(t0, T + 1):
        if t in wanted:
            out.append(_snapshot(box, t, m, loss, 0.0, 0.0, "discrete"))
        if t == T:
            break
        m, lost = _Stencil(env, box, env.segment_index(t), "discrete").apply(m)
        loss += lost
    return out


def _continuous(kind, env: Environment, x0, T: float, cfg: PropagationConfig, t0: float = 0.0):
    if T < t0:
        raise DomainError("final time precedes the start")
    box = _Box(env.geometry, x0, cfg.radius)
    m = box.delta(x0)
    wanted = _wanted(cfg, t0, T)
    cuts = sorted(set(env.schedule.breakpoints_in(t0, T)) | {t for t in wanted if t0 < t < T})
    edges = [float(t0), *cuts, float(T)]
    pieces = []
    for a, b in zip(edges, edges[1:]):
        if b > a:
            pieces.append((a, b))
    jump_rate = 1.0 if kind == "csrw" else env.rate_bound
    sub = []
    for a, b in pieces:
        n = max(1, math.ceil((b - a) * jump_rate / _MAX_POISSON_MEAN))
        for i in range(n):
            sub.append((a + (b - a) * i / n, a + (b - a) * (i + 1) / n if i + 1 < n else b))
    budget = cfg.tolerance / max(len(sub), 1)
    loss = serr = 0.0
    out = []
    wi = 0
    stencil, stencil_seg = None, None
    R = box.exit_distance()

    def analytic(t):
        if math.isinf(R):
            return 0.0
        return float(stats.poisson.sf(R, jump_rate * (t - t0)))

    while wi < len(wanted) and wanted[wi] <= t0:
        out.append(_snapshot(box, t0, m, loss, serr, 0.0, kind))
        wi += 1
    for a, b in sub:
        seg = env.segment_index(a)
        if stencil is None or seg != stencil_seg:
            stencil, stencil_seg = _Stencil(env, box, seg, kind), seg
        mean = stencil.rate * (b - a)
        m, lost, tail = _uniformize(stencil, m, mean, budget)
        loss += lost
        serr += 2 * tail
        while wi < len(wanted) and wanted[wi] <= b + 1e-12 * max(1.0, b):
            out.append(_snapshot(box, wanted[wi], m, loss, serr, analytic(wanted[wi]), kind))
            wi += 1
    return out


def _poisson_weights(mean: float, tol: float) -> tuple[np.ndarray, float]:
    K = int(stats.poisson.isf(tol, mean)) + 1 if mean > 0 else 0
    while stats.poisson.sf(K, mean) >= tol:
        K += 1
    w = stats.poisson.pmf(np.arange(K + 1), mean)
    w[-1] += max(0.0, 1.0 - w.sum())
    return w, float(stats.poisson.sf(K, mean))


def _uniformize(stencil: _Stencil, m: np.ndarray, mean: float, tol: float):
    w, tail = _poisson_weights(mean, tol)
    result = w[0] * m
    v = m
    lost_cum = 0.0
    loss = 0.0
    for k in range(1, len(w)):
        v, lost = stencil.apply(v)
        lost_cum += lost
        result += w[k] * v
        loss += w[k] * lost_cum
    return result, loss, tail


def csrw_kernel(env: Environment, x0, T: float, cfg: PropagationConfig, t0: float = 0.0) -> list[KernelSnapshot]:
    """Constant speed walk kernel (probabilities, not densities w.r.t. mu^(t))."""
    return _continuous("csrw", env, x0, float(T), cfg, float(t0))


def vsrw_kernel(env: Environment, x0, T: float, cfg: PropagationConfig, t0: float = 0.0) -> list[KernelSnapshot]:
    """Variable speed walk kernel; uniformization rate is the per-segment box maximum of mu^(t)(x)."""
    return _continuous("vsrw", env, x0, float(T), cfg, float(t0))


def kernel(dynamics: str, env: Environment, x0, T, cfg: PropagationConfig, t0=0) -> list[KernelSnapshot]:
    if dynamics == "discrete":
        return discrete_kernel(env, x0, int(t0), int(T), cfg)
    if dynamics == "csrw":
        return csrw_kernel(env, x0, T, cfg, t0)
    if dynamics == "vsrw":
        return vsrw_kernel(env, x0, T, cfg, t0)
    raise DomainError(f"unknown dynamics {dynamics!r}")


def csrw_density(snapshot: KernelSnapshot, env: Environment) -> np.ndarray:
    """Divide CSRW probabilities by mu^(t)(y) to get the kernel density."""
    coords = snapshot.coords()
    w = env.local_weights(env.segment_index(snapshot.time), coords)
    return snapshot.mass / w.sum(axis=0)


def duality_check_vsrw(env: Environment, x, y, T: float, cfg: PropagationConfig) -> float:
    """|p(0, x; T, y) - p*(0, y; T, x)| with p* the kernel of the reversed schedule."""
    if not isinstance(env.geometry, Cycle):
        raise DomainError("duality checks run on finite cycles")
    fwd = vsrw_kernel(env, x, T, cfg)[-1].at(y)
    rev = vsrw_kernel(reversed_environment(env, T), y, T, cfg)[-1].at(x)
    return abs(fwd - rev)


def vsrw_propagator(env: Environment, T: float, cfg: PropagationConfig) -> np.ndarray:
    """Matrix of p(0, x; T, y) on a cycle, rows indexed by the start x."""
    if not isinstance(env.geometry, Cycle):
        raise DomainError("propagator matrices need a finite cycle")
    n = env.geometry.n
    return np.array([vsrw_kernel(env, [x], T, cfg)[-1].mass for x in range(n)])


def duality_discrepancy(env: Environment, T: float, cfg: PropagationConfig) -> float:
    """max over (x, y) of |p(0, x; T, y) - p*(0, y; T, x)| on a cycle."""
    fwd = vsrw_propagator(env, T, cfg)
    rev = vsrw_propagator(reversed_environment(env, T), T, cfg)
    return float(np.abs(fwd - rev.T).max())


def ondiagonal_series(
    env: Environment, x0, times: Sequence[float], cfg: PropagationConfig, dynamics: str = "discrete"
) -> list[tuple[float, float, float]]:
    """(t, p(0, x0; t, x0), error bound) for increasing ``times``."""
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DomainError("times must be increasing")
    cfg2 = PropagationConfig(cfg.radius, cfg.tolerance, tuple(times))
    snaps = kernel(dynamics, env, x0, times[-1], cfg2)
    by_t = {s.time: s for s in snaps}
    return [(t, by_t[t].at(x0), by_t[t].error_bound) for t in times]
