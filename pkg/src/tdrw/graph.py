"""Time-dependent weighted graphs on implicit lattice geometries.

A graph is never materialized: a :class:`Geometry` answers adjacency and
distance questions from coordinates, and a :class:`ConductanceSchedule`
evaluates edge weights vectorially for a segment of constancy.  Coordinates
are integer arrays of shape ``(dim, ...)``.

Edge weights are stored by *positive* direction only: ``edge(seg, x, axis)``
is the weight of ``{x, x + e_axis}``.  The weight seen from ``x`` in direction
``-e_axis`` is the positive-direction weight evaluated at ``x - e_axis``, so
symmetry holds by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class UnsupportedOperationError(TypeError):
    """Operation not defined for this environment family."""


# ---------------------------------------------------------------------------
# Geometries


class Geometry:
    """Base class for vertex geometries.

    Subclasses define ``name``, ``dim``, ``degree`` and the coordinate rules.
    """

    name: str = ""
    dim: int = 1
    degree: int = 2
    bounded: bool = False  # True when some lattice moves leave the geometry

    @property
    def steps(self) -> np.ndarray:
        """Unit moves ordered ``+e0, -e0, +e1, -e1, ...``; shape ``(2*dim, dim)``."""
        out = np.zeros((2 * self.dim, self.dim), dtype=np.int64)
        for a in range(self.dim):
            out[2 * a, a] = 1
            out[2 * a + 1, a] = -1
        return out

    def normalize(self, coords):
        return coords

    def contains(self, coords) -> np.ndarray:
        coords = np.asarray(coords)
        return np.ones(coords.shape[1:], dtype=bool)

    def distance(self, x, y):
        raise NotImplementedError

    def ball_members(self, x0, r: int) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        return {"name": self.name}

    def __eq__(self, other):
        return type(self) is type(other) and self.descriptor() == other.descriptor()

    def __hash__(self):
        return hash(tuple(sorted(self.descriptor().items())))

    def __repr__(self):
        return f"{type(self).__name__}({self.descriptor()})"


class Line(Geometry):
    """The integer line Z."""

    name = "line"
    dim = 1
    degree = 2

    def distance(self, x, y):
        return np.abs(np.asarray(x)[0] - np.asarray(y)[0])

    def ball_members(self, x0, r):
        c = int(np.asarray(x0).reshape(-1)[0])
        return np.arange(c - r, c + r + 1, dtype=np.int64)[:, None]


class HalfSpace(Geometry):
    """Z^2 x Z_{>=0} with nearest-neighbour edges; third coordinate is height."""

    name = "halfspace"
    dim = 3
    degree = 6
    bounded = True

    def contains(self, coords):
        return np.asarray(coords)[2] >= 0

    def distance(self, x, y):
        return np.abs(np.asarray(x) - np.asarray(y)).sum(axis=0)

    def ball_members(self, x0, r):
        i0, j0, k0 = (int(v) for v in np.asarray(x0).reshape(-1))
        rng = np.arange(-r, r + 1)
        di, dj, dk = np.meshgrid(rng, rng, rng, indexing="ij")
        keep = (np.abs(di) + np.abs(dj) + np.abs(dk) <= r) & (k0 + dk >= 0)
        pts = np.stack([i0 + di[keep], j0 + dj[keep], k0 + dk[keep]], axis=1)
        return pts.astype(np.int64)


class Cycle(Geometry):
    """The n-cycle Z/nZ, vertices labelled 0..n-1."""

    name = "cycle"
    dim = 1
    degree = 2

    def __init__(self, n: int):
        if n < 3:
            raise DomainError(f"cycle needs n >= 3, got {n}")
        self.n = int(n)

    def normalize(self, coords):
        return np.mod(coords, self.n)

    def distance(self, x, y):
        d = np.abs(np.asarray(x)[0] - np.asarray(y)[0]) % self.n
        return np.minimum(d, self.n - d)

    def ball_members(self, x0, r):
        c = int(np.asarray(x0).reshape(-1)[0])
        if 2 * r + 1 >= self.n:
            return np.arange(self.n, dtype=np.int64)[:, None]
        return np.mod(np.arange(c - r, c + r + 1), self.n).astype(np.int64)[:, None]

    def descriptor(self):
        return {"name": self.name, "n": self.n}


def geometry_from_descriptor(desc) -> Geometry:
    if isinstance(desc, str):
        desc = {"name": desc}
    name = desc["name"]
    if name == "line":
        return Line()
    if name == "halfspace":
        return HalfSpace()
    if name == "cycle":
        return Cycle(desc["n"])
    raise DomainError(f"unknown geometry {name!r}")


# ---------------------------------------------------------------------------
# Schedules and environments

EdgeRule = Callable[[Any, np.ndarray, int], np.ndarray]
LoopRule = Callable[[Any, np.ndarray], np.ndarray]


def _zero_loop(seg, coords):
    return np.zeros(np.shape(coords)[1:])


@dataclass(frozen=True, eq=False)
class ConductanceSchedule:
    """Piecewise-constant, right-continuous conductances.

    ``breakpoints`` are the times tau_0 < tau_1 < ...; segment ``k`` is
    ``[tau_k, tau_{k+1})``.  ``None`` selects the integer clock (segment
    ``floor(t)``), used by discrete-time environments.  An empty tuple means
    time-independent (a single segment 0).
    """

    edge: EdgeRule
    loop: LoopRule = _zero_loop
    breakpoints: tuple[float, ...] | None = ()

    def __post_init__(self):
        if self.breakpoints is not None:
            bp = tuple(float(b) for b in self.breakpoints)
            if any(b < 0 for b in bp):
                raise DomainError("breakpoints must be nonnegative")
            if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
                raise DomainError("breakpoints must be strictly increasing")
            object.__setattr__(self, "breakpoints", bp)
            object.__setattr__(self, "_bp", np.asarray(bp, dtype=float))

    @property
    def integer_clock(self) -> bool:
        return self.breakpoints is None

    @property
    def static(self) -> bool:
        return self.breakpoints is not None and len(self.breakpoints) <= 1

    def segment_index(self, t):
        """Segment containing ``t`` (vectorized).  The value at a breakpoint is the new segment."""
        if self.breakpoints is None:
            return np.floor(t).astype(np.int64) if np.ndim(t) else int(math.floor(t))
        if len(self.breakpoints) == 0:
            return np.zeros(np.shape(t), dtype=np.int64) if np.ndim(t) else 0
        k = np.searchsorted(self._bp, t, side="right") - 1
        k = np.maximum(k, 0)
        return k if np.ndim(t) else int(k)

    def segment_end(self, k: int) -> float:
        if self.breakpoints is None:
            return float(k + 1)
        if k + 1 < len(self.breakpoints):
            return self.breakpoints[k + 1]
        return math.inf

    def segments(self, t0: float, t1: float) -> Iterator[tuple[float, float, int]]:
        """Yield ``(a, b, k)`` covering ``[t0, t1)`` by segments of constancy."""
        t = float(t0)
        while t < t1:
            k = self.segment_index(t)
            b = min(self.segment_end(k), t1)
            yield t, b, k
            t = b

    def breakpoints_in(self, t0: float, t1: float) -> list[float]:
        """Breakpoints strictly inside ``(t0, t1)``."""
        return [a for a, _, _ in self.segments(t0, t1)][1:]


@dataclass(frozen=True, eq=False)
class Environment:
    """A time-dependent weighted graph with a declared ellipticity constant.

    ``max_edge`` and ``max_loop`` bound the weights over all times; they set
    thinning rates and uniformization rates.
    """

    geometry: Geometry
    schedule: ConductanceSchedule
    c1: float
    preset: str = "custom"
    params: dict = field(default_factory=dict)
    max_edge: float | None = None
    max_loop: float = 0.0

    def __post_init__(self):
        if not 0 < self.c1 <= 1:
            raise DomainError(f"ellipticity constant must lie in (0, 1], got {self.c1}")
        if self.max_edge is None:
            object.__setattr__(self, "max_edge", 1.0 / self.c1)

    @property
    def dim(self) -> int:
        return self.geometry.dim

    @property
    def discrete(self) -> bool:
        return self.schedule.integer_clock

    @property
    def rate_bound(self) -> float:
        """Uniform upper bound on mu^(t)(x) over all t and x."""
        return self.geometry.degree * self.max_edge + self.max_loop

    def segment_index(self, t):
        return self.schedule.segment_index(t)

    def local_weights(self, seg, coords) -> np.ndarray:
        """Weights around each vertex: shape ``(2*dim + 1, ...)``.

        Rows follow :attr:`Geometry.steps`, the last row is the loop weight.
        Edges leaving the geometry get weight 0.
        """
        geom = self.geometry
        coords = np.asarray(coords, dtype=np.int64)
        shape = coords.shape[1:]
        out = np.empty((2 * geom.dim + 1,) + shape)
        here = geom.normalize(coords)
        for a in range(geom.dim):
            out[2 * a] = self.schedule.edge(seg, here, a)
            lower = coords.copy()
            lower[a] -= 1
            down = self.schedule.edge(seg, geom.normalize(lower), a)
            out[2 * a + 1] = np.where(geom.contains(lower), down, 0.0) if geom.bounded else down
        out[-1] = self.schedule.loop(seg, here)
        return out

    def weights_at(self, t: float, x) -> np.ndarray:
        """Local weights at a single vertex and time (``(2*dim + 1,)``)."""
        if t < 0:
            raise DomainError(f"time must be nonnegative, got {t}")
        x = np.asarray(x, dtype=np.int64).reshape(self.dim, 1)
        if not self.geometry.contains(x).all():
            raise DomainError(f"vertex {tuple(x[:, 0])} outside the geometry")
        return self.local_weights(self.segment_index(t), x)[:, 0]

    def descriptor(self) -> dict:
        """JSON-ready description; see :mod:`tdrw.environments` for the inverse."""
        bp = self.schedule.breakpoints
        return {
            "preset": self.preset,
            "geometry": self.geometry.descriptor(),
            "c1": self.c1,
            "params": dict(self.params),
            "breakpoints": [] if bp is None else list(bp),
        }


# ---------------------------------------------------------------------------
# Derived quantities


def _as_vertex(env: Environment, x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64).reshape(env.dim)


def _step_index(env: Environment, x, y) -> int | None:
    """Index into local_weights rows for the move x -> y, or None if not adjacent."""
    x = _as_vertex(env, x)
    y = _as_vertex(env, y)
    geom = env.geometry
    if np.array_equal(geom.normalize(x), geom.normalize(y)):
        return 2 * env.dim
    for idx, s in enumerate(geom.steps):
        if np.array_equal(geom.normalize(x + s), geom.normalize(y)):
            return idx
    return None


def conductance(env: Environment, t: float, x, y) -> float:
    """mu^(t)(x, y); 0 for non-adjacent pairs."""
    idx = _step_index(env, x, y)
    if t < 0:
        raise DomainError(f"time must be nonnegative, got {t}")
    if idx is None:
        return 0.0
    return float(env.weights_at(t, x)[idx])


def mu_total(env: Environment, t: float, x) -> float:
    """mu^(t)(x): sum of incident edge and loop weights."""
    return math.fsum(env.weights_at(t, x))


def transition_prob(env: Environment, t: float, x, y) -> float:
    """P^(t)(x, y) = mu^(t)(x, y) / mu^(t)(x)."""
    idx = _step_index(env, x, y)
    w = env.weights_at(t, x)
    if idx is None:
        return 0.0
    return float(w[idx] / math.fsum(w))


def transition_row(env: Environment, t: float, x) -> dict[tuple, float]:
    """All nonzero P^(t)(x, .) keyed by target vertex."""
    x = _as_vertex(env, x)
    w = env.weights_at(t, x)
    total = math.fsum(w)
    out: dict[tuple, float] = {}
    moves = list(env.geometry.steps) + [np.zeros(env.dim, dtype=np.int64)]
    for wi, s in zip(w, moves):
        if wi > 0:
            y = tuple(int(v) for v in env.geometry.normalize(x + s))
            out[y] = out.get(y, 0.0) + float(wi) / total
    return out


def transition_matrix(env: Environment, t: float) -> np.ndarray:
    """Dense P^(t) on a cycle geometry."""
    geom = env.geometry
    if not isinstance(geom, Cycle):
        raise UnsupportedOperationError("dense transition matrices need a finite geometry")
    n = geom.n
    P = np.zeros((n, n))
    for x in range(n):
        for y, p in transition_row(env, t, [x]).items():
            P[x, y[0]] += p
    return P


def generator_matrix(env: Environment, t: float) -> np.ndarray:
    """Dense VSRW generator L^V at time t on a cycle (rows sum to zero)."""
    geom = env.geometry
    if not isinstance(geom, Cycle):
        raise UnsupportedOperationError("dense generators need a finite geometry")
    n = geom.n
    Q = np.zeros((n, n))
    seg = env.segment_index(t)
    coords = np.arange(n)[None, :]
    w = env.local_weights(seg, coords)
    for x in range(n):
        for idx, s in enumerate(geom.steps):
            y = (x + s[0]) % n
            Q[x, y] += w[idx, x]
    Q -= np.diag(Q.sum(axis=1))
    return Q


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: int
    members: np.ndarray  # (N, dim)

    @property
    def volume(self) -> int:
        return len(self.members)


def ball(env_or_geometry, x0, r: int) -> Ball:
    """Graph-distance ball; its counting-measure volume is ``Ball.volume``."""
    if r < 0:
        raise DomainError(f"radius must be nonnegative, got {r}")
    geom = env_or_geometry.geometry if isinstance(env_or_geometry, Environment) else env_or_geometry
    x0 = tuple(int(v) for v in np.asarray(x0).reshape(-1))
    return Ball(center=x0, radius=int(r), members=geom.ball_members(x0, int(r)))


def volume(geometry: Geometry, x0, r) -> int:
    return ball(geometry, x0, int(math.floor(r))).volume


@dataclass
class EllipticityReport:
    min_weight: float
    max_weight: float
    passed: bool
    violation: tuple | None = None  # (t, x, y, weight) of the first offender


def verify_ellipticity(
    env: Environment, sample_times: Sequence[float], box: Ball, c1: float | None = None
) -> EllipticityReport:
    """Check every present edge touching ``box`` against ``[c1, 1/c1]``.

    Zero weights denote absent edges and are skipped; loops are exempt.
    """
    c1 = env.c1 if c1 is None else c1
    coords = box.members.T
    steps = env.geometry.steps
    lo, hi = math.inf, -math.inf
    violation = None
    for t in sample_times:
        if t < 0:
            raise DomainError(f"time must be nonnegative, got {t}")
        w = env.local_weights(env.segment_index(t), coords)[:-1]
        present = w > 0
        if not present.any():
            continue
        lo = min(lo, float(w[present].min()))
        hi = max(hi, float(w[present].max()))
        bad = present & ((w < c1 * (1 - 1e-12)) | (w > (1 + 1e-12) / c1))
        if violation is None and bad.any():
            d, m = np.argwhere(bad)[0]
            x = tuple(int(v) for v in coords[:, m])
            y = tuple(int(v) for v in env.geometry.normalize(coords[:, m] + steps[d]))
            violation = (float(t), x, y, float(w[d, m]))
    return EllipticityReport(lo, hi, violation is None, violation)
