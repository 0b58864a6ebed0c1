"""Conductance schedules: the periodic counterexamples and simple baselines.

Every constructor returns an immutable :class:`~tdrw.graph.Environment`.
Rules are small frozen dataclasses so that environments built from equal
parameters compare equal rule-wise (batched simulation relies on this) and
pickle cleanly for worker processes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import (
    ConductanceSchedule,
    Cycle,
    DomainError,
    Environment,
    Geometry,
    HalfSpace,
    Line,
    geometry_from_descriptor,
)
from .rng import make_rng

PRESETS = ("zigzag1d", "poisson1d", "halfspace-dt", "halfspace-csrw", "constant", "random-cycle")


def _check_eps(eps, lo=0.0, hi=1.0):
    if not lo < eps < hi:
        raise DomainError(f"epsilon must lie in ({lo}, {hi}), got {eps}")


def _check_breakpoints(bp):
    bp = tuple(float(b) for b in bp)
    if not bp:
        raise DomainError("breakpoints must be nonempty")
    if bp[0] != 0.0:
        raise DomainError(f"first breakpoint must be 0, got {bp[0]}")
    if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
        raise DomainError("breakpoints must be strictly increasing")
    return bp


# ---------------------------------------------------------------------------
# Zigzag on Z (discrete time)


@dataclass(frozen=True)
class ZigzagParams:
    eps: float
    b: float = 0.0
    b_prime: float = 0.0

    def __post_init__(self):
        _check_eps(self.eps)
        if self.b < 0 or self.b_prime < 0:
            raise DomainError("loop weights must be nonnegative")

    @property
    def gamma(self) -> float:
        return self.b / (self.b + 2)

    @property
    def gamma_prime(self) -> float:
        return self.b_prime / (self.b_prime + 2)

    @classmethod
    def from_laziness(cls, eps, gamma, gamma_prime):
        for g in (gamma, gamma_prime):
            if not 0 <= g < 1:
                raise DomainError(f"laziness must lie in [0, 1), got {g}")
        return cls(eps, 2 * gamma / (1 - gamma), 2 * gamma_prime / (1 - gamma_prime))


@dataclass(frozen=True)
class ZigzagEdge:
    eps: float

    def __call__(self, seg, coords, axis):
        even = (seg + coords[0]) % 2 == 0
        return np.where(even, 1 + self.eps, 1 - self.eps)


@dataclass(frozen=True)
class ZigzagLoop:
    b: float
    b_prime: float

    def __call__(self, seg, coords):
        even = (seg + coords[0]) % 2 == 0
        return np.where(even, self.b, self.b_prime)


def zigzag_1d(params: ZigzagParams) -> Environment:
    """Alternating conductances on Z.

    When ``t + i`` is even the weights around ``i`` are (left, loop, right) =
    (1-eps, b, 1+eps); when odd, (1+eps, b', 1-eps).
    """
    sched = ConductanceSchedule(
        edge=ZigzagEdge(params.eps),
        loop=ZigzagLoop(params.b, params.b_prime),
        breakpoints=None,
    )
    return Environment(
        Line(), sched, c1=1 - params.eps, preset="zigzag1d",
        params={"eps": params.eps, "b": params.b, "b_prime": params.b_prime},
        max_edge=1 + params.eps, max_loop=max(params.b, params.b_prime),
    )


# ---------------------------------------------------------------------------
# Shifting three-periodic pattern on Z (continuous time)


@dataclass(frozen=True)
class PoissonShiftParams:
    eps: float
    c: float
    breakpoints: tuple[float, ...]

    def __post_init__(self):
        _check_eps(self.eps, -1.0, 1.0)
        if not self.c > 1:
            raise DomainError(f"c must exceed 1, got {self.c}")
        object.__setattr__(self, "breakpoints", _check_breakpoints(self.breakpoints))

    @property
    def intensity(self) -> float:
        return self.c - 1


@dataclass(frozen=True)
class PoissonShiftEdge:
    eps: float

    def __call__(self, seg, coords, axis):
        r = (coords[0] - seg) % 3
        return np.choose(r, (1 - self.eps, 1.0, 1 + self.eps))


def poisson_shift_1d(params: PoissonShiftParams) -> Environment:
    """On segment k the edge {i, i+1} weighs 1-eps, 1, 1+eps for i = k, k+1, k+2 mod 3."""
    sched = ConductanceSchedule(edge=PoissonShiftEdge(params.eps), breakpoints=params.breakpoints)
    return Environment(
        Line(), sched, c1=1 - abs(params.eps), preset="poisson1d",
        params={"eps": params.eps, "c": params.c}, max_edge=1 + abs(params.eps),
    )


def poisson_times(intensity: float, horizon: float, seed) -> np.ndarray:
    """Arrival times of a Poisson process on ``[0, horizon]``, with tau_0 = 0 prepended.

    Draws from the environment stream of ``seed``, independent of any walk
    stream with the same master seed.
    """
    if intensity <= 0 or horizon <= 0:
        raise DomainError("intensity and horizon must be positive")
    rng = make_rng(seed, stream="env")
    chunk = max(16, int(intensity * horizon * 1.1) + 16)
    times = [np.zeros(1)]
    last = 0.0
    while last <= horizon:
        arr = last + np.cumsum(rng.exponential(1.0 / intensity, size=chunk))
        times.append(arr)
        last = arr[-1]
    out = np.concatenate(times)
    return out[out <= horizon]


# ---------------------------------------------------------------------------
# Half-space Z^2 x Z_{>=0}


@dataclass(frozen=True)
class HalfspaceParams:
    """Parameters for both half-space constructions.

    The discrete variant uses the loop weights; the CSRW variant uses
    ``breakpoints`` and ignores loops.
    """

    eps: float
    b: float = 0.0
    b_prime: float = 0.0
    f: float = 0.0
    f_prime: float = 0.0
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        # eps = 0 is allowed here: it gives the time-independent simple walk
        if not 0 <= self.eps < 1:
            raise DomainError(f"epsilon must lie in [0, 1), got {self.eps}")
        if min(self.b, self.b_prime, self.f, self.f_prime) < 0:
            raise DomainError("loop weights must be nonnegative")

    @property
    def gamma(self) -> float:
        return self.b / (self.b + 6)

    @property
    def gamma_prime(self) -> float:
        return self.b_prime / (self.b_prime + 6)

    @classmethod
    def from_laziness(cls, eps, gamma, gamma_prime, breakpoints=()):
        """Solve the four loop weights from the two laziness levels."""
        for g in (gamma, gamma_prime):
            if not 0 <= g < 1:
                raise DomainError(f"laziness must lie in [0, 1), got {g}")
        return cls(
            eps,
            b=6 * gamma / (1 - gamma),
            b_prime=6 * gamma_prime / (1 - gamma_prime),
            f=(1 + eps) * gamma / (1 - gamma),
            f_prime=(1 - eps) * gamma_prime / (1 - gamma_prime),
            breakpoints=tuple(breakpoints),
        )

    def validate_discrete(self):
        eps = self.eps
        g, gp = self.gamma, self.gamma_prime
        lazy = (self.b, self.b_prime, self.f, self.f_prime) != (0, 0, 0, 0)
        if not math.isclose(self.f / (self.f + 1 + eps), g, rel_tol=1e-12, abs_tol=1e-15):
            raise DomainError(f"f={self.f} does not match interior laziness {g}")
        if not math.isclose(self.f_prime / (self.f_prime + 1 - eps), gp, rel_tol=1e-12, abs_tol=1e-15):
            raise DomainError(f"f'={self.f_prime} does not match interior laziness {gp}")
        if lazy and not gp < g:
            raise DomainError(f"construction requires gamma' < gamma, got {gp} >= {g}")


@dataclass(frozen=True)
class HalfspaceDiscreteEdge:
    eps: float

    def __call__(self, seg, coords, axis):
        i, j, k = coords
        if axis == 2:
            odd = (seg + i + j + k) % 2 == 1
            return np.where(odd, 1 + self.eps, 1 - self.eps)
        return np.where(k > 0, 1.0, 0.0)


@dataclass(frozen=True)
class HalfspaceDiscreteLoop:
    b: float
    b_prime: float
    f: float
    f_prime: float

    def __call__(self, seg, coords):
        i, j, k = coords
        odd = (seg + i + j + k) % 2 == 1
        return np.where(k > 0, np.where(odd, self.b, self.b_prime),
                        np.where(odd, self.f, self.f_prime))


def halfspace_discrete(params: HalfspaceParams) -> Environment:
    """Half-space walk whose vertical drift points down in the persistent state.

    For k > 0 and ``t+i+j+k`` odd: (up, down, loop) = (1+eps, 1-eps, b), else
    (1-eps, 1+eps, b'); horizontal weights 1.  The floor has no horizontal
    edges and loop f or f'.  Every vertical edge {x, x+e3} weighs 1+eps
    exactly when ``t+i+j+k`` is odd at its lower end, which is also what the
    floor vertex sees looking up.
    """
    params.validate_discrete()
    sched = ConductanceSchedule(
        edge=HalfspaceDiscreteEdge(params.eps),
        loop=HalfspaceDiscreteLoop(params.b, params.b_prime, params.f, params.f_prime),
        breakpoints=None,
    )
    return Environment(
        HalfSpace(), sched, c1=1 - params.eps, preset="halfspace-dt",
        params={"eps": params.eps, "b": params.b, "b_prime": params.b_prime,
                "f": params.f, "f_prime": params.f_prime},
        max_edge=1 + params.eps,
        max_loop=max(params.b, params.b_prime, params.f, params.f_prime),
    )


@dataclass(frozen=True)
class HalfspaceCsrwEdge:
    eps: float

    def __call__(self, seg, coords, axis):
        k = coords[2]
        odd = (seg + k) % 2 == 1
        if axis == 2:
            return np.where(odd, 1 + self.eps, 1 - self.eps)
        return np.where(odd, 1 + self.eps / 2, 1 - self.eps / 2)


def halfspace_csrw(params: HalfspaceParams) -> Environment:
    """Loopless half-space schedule switching at the given breakpoints.

    On segment n, a vertex at height k > 0 with n+k odd has (up, down,
    horizontal) = (1+eps, 1-eps, 1+eps/2), otherwise (1-eps, 1+eps, 1-eps/2).
    Floor horizontals are 1+eps/2 for odd n and 1-eps/2 for even n.
    """
    bp = _check_breakpoints(params.breakpoints)
    sched = ConductanceSchedule(edge=HalfspaceCsrwEdge(params.eps), breakpoints=bp)
    return Environment(
        HalfSpace(), sched, c1=1 - params.eps, preset="halfspace-csrw",
        params={"eps": params.eps}, max_edge=1 + params.eps,
    )


# ---------------------------------------------------------------------------
# Baselines


@dataclass(frozen=True)
class ConstantEdge:
    w: float

    def __call__(self, seg, coords, axis):
        return np.full(np.shape(coords)[1:], self.w)


@dataclass(frozen=True)
class ConstantLoop:
    w: float

    def __call__(self, seg, coords):
        return np.full(np.shape(coords)[1:], self.w)


def constant_env(geometry: Geometry | str = "line", weight: float = 1.0, loop: float = 0.0) -> Environment:
    """Time-independent environment with every edge weighing ``weight``."""
    if weight <= 0:
        raise DomainError(f"weight must be positive, got {weight}")
    if loop < 0:
        raise DomainError("loop weight must be nonnegative")
    if not isinstance(geometry, Geometry):
        geometry = geometry_from_descriptor(geometry)
    sched = ConductanceSchedule(edge=ConstantEdge(weight), loop=ConstantLoop(loop), breakpoints=())
    return Environment(
        geometry, sched, c1=min(weight, 1 / weight), preset="constant",
        params={"weight": weight, "loop": loop}, max_edge=weight, max_loop=loop,
    )


@dataclass(frozen=True, eq=False)
class TableEdge:
    """Edge weights looked up from a (segments, n) table on a cycle."""

    table: np.ndarray

    def __call__(self, seg, coords, axis):
        seg = np.minimum(seg, self.table.shape[0] - 1)
        return self.table[seg, coords[0]]


def random_cycle_env(n: int, segments: int, horizon: float, seed, c1: float = 0.5) -> Environment:
    """Random elliptic piecewise-constant schedule on the n-cycle.

    ``segments - 1`` breakpoints are uniform on ``(0, horizon)``; each segment
    draws every edge weight uniformly from ``[c1, 1/c1]``.
    """
    if segments < 1:
        raise DomainError("need at least one segment")
    rng = make_rng(seed, stream="env")
    cuts = np.sort(rng.uniform(0, horizon, size=segments - 1))
    table = rng.uniform(c1, 1 / c1, size=(segments, n))
    sched = ConductanceSchedule(edge=TableEdge(table), breakpoints=(0.0, *cuts))
    return Environment(
        Cycle(n), sched, c1=c1, preset="random-cycle",
        params={"n": n, "segments": segments, "horizon": horizon, "seed": seed},
        max_edge=float(table.max()),
    )


# ---------------------------------------------------------------------------
# Time reversal


@dataclass(frozen=True, eq=False)
class _Reversed:
    base: object
    last: int

    def __call__(self, seg, *args):
        return self.base(np.maximum(self.last - seg, 0), *args)


def reversed_environment(env: Environment, T: float) -> Environment:
    """Schedule u -> mu^((T-u)-) on [0, T], made right-continuous.

    The segments meeting [0, T) are mirrored: original segment k, living on
    ``[a, b)``, becomes ``[T-b, T-a)``.  Past T the reversed schedule keeps the
    value of the original at time 0.
    """
    if T <= 0:
        raise DomainError("horizon must be positive")
    sched = env.schedule
    if sched.static:
        return env
    segs = list(sched.segments(0.0, T))
    last = segs[-1][2]
    # reversed segment m <-> original segment (last - m)
    bps = [0.0] + [T - a for a, _, _ in reversed(segs[1:])]
    rev = ConductanceSchedule(
        edge=_Reversed(sched.edge, last), loop=_Reversed(sched.loop, last), breakpoints=tuple(bps)
    )
    return Environment(
        env.geometry, rev, c1=env.c1, preset="reversed",
        params={"base": env.descriptor(), "T": T},
        max_edge=env.max_edge, max_loop=env.max_loop,
    )


# ---------------------------------------------------------------------------
# Descriptors


def environment_from_descriptor(desc: dict) -> Environment:
    """Inverse of :meth:`Environment.descriptor` for the named presets."""
    preset = desc["preset"]
    p = dict(desc.get("params", {}))
    bp = tuple(desc.get("breakpoints", ()))
    if preset == "zigzag1d":
        return zigzag_1d(ZigzagParams(p["eps"], p.get("b", 0.0), p.get("b_prime", 0.0)))
    if preset == "poisson1d":
        return poisson_shift_1d(PoissonShiftParams(p["eps"], p["c"], bp))
    if preset == "halfspace-dt":
        return halfspace_discrete(HalfspaceParams(
            p["eps"], p.get("b", 0.0), p.get("b_prime", 0.0), p.get("f", 0.0), p.get("f_prime", 0.0)))
    if preset == "halfspace-csrw":
        return halfspace_csrw(HalfspaceParams(p["eps"], breakpoints=bp))
    if preset == "constant":
        geom = geometry_from_descriptor(desc.get("geometry", "line"))
        return constant_env(geom, p.get("weight", 1.0), p.get("loop", 0.0))
    if preset == "random-cycle":
        seed = p["seed"]
        seed = tuple(seed) if isinstance(seed, list) else seed
        return random_cycle_env(p["n"], p["segments"], p["horizon"], seed, desc.get("c1", 0.5))
    if preset == "reversed":
        return reversed_environment(environment_from_descriptor(p["base"]), p["T"])
    raise DomainError(f"unknown preset {preset!r}")
