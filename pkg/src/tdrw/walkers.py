"""Sampling the three dynamics and extracting state traces and excursions.

Walkers in a batch advance in lockstep with numpy, but each one consumes
only its own random stream (``child_seed(master, index)``), so a trajectory
is identical whether simulated alone or inside any batch.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .graph import DomainError, Environment, UnsupportedOperationError
from .rng import child_seed, make_rng, normalize_seed

DYNAMICS = ("discrete", "csrw", "vsrw")
_CHUNK = 4096
_BLOCK_CELLS = 25_000_000


@dataclass
class Trajectory:
    """A time-stamped vertex path; ``end`` is the time the simulation stopped."""

    dynamics: str
    start: tuple
    times: np.ndarray
    vertices: np.ndarray  # (N, dim)
    seed: tuple
    end: float
    meta: dict = field(default_factory=dict)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    def __len__(self):
        return len(self.times)

    def position_at(self, t: float) -> np.ndarray:
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.vertices[max(i, 0)]

    def to_csv(self, path, labels: Sequence[str] | None = None):
        """Write ``time, x[, y, z][, state]`` rows with round-trip float formatting."""
        dim = self.vertices.shape[1]
        cols = ["x"] if dim == 1 else ["x", "y", "z"]
        header = ["time", *cols] + (["state"] if labels is not None else [])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, (t, v) in enumerate(zip(self.times, self.vertices)):
                row = [_fmt(t), *(int(c) for c in v)]
                if labels is not None:
                    row.append(labels[i])
                w.writerow(row)


def _fmt(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


# ---------------------------------------------------------------------------
# Engines


def _uniforms(rngs, size, width=1):
    return np.stack([r.random((size, width)) for r in rngs], axis=1)  # (size, n, width)


def _pick(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the sampled row per column, u uniform on [0, 1)."""
    c = np.cumsum(weights, axis=0)
    return np.minimum((u * c[-1] >= c).sum(axis=0), len(weights) - 1)


def _discrete_block(env: Environment, x0, t0: int, steps: int, seeds):
    geom = env.geometry
    n = len(seeds)
    rngs = [make_rng(s) for s in seeds]
    moves = np.vstack([geom.steps, np.zeros((1, geom.dim), dtype=np.int64)])
    pos = np.repeat(np.asarray(x0, dtype=np.int64).reshape(-1, 1), n, axis=1)
    path = np.empty((steps + 1, geom.dim, n), dtype=np.int32)
    path[0] = pos
    U = None
    for s in range(steps):
        if s % _CHUNK == 0:
            U = _uniforms(rngs, min(_CHUNK, steps - s))[..., 0]
        t = t0 + s
        w = env.local_weights(env.segment_index(t), pos)
        d = _pick(w, U[s % _CHUNK])
        pos = geom.normalize(pos + moves[d].T)
        path[s + 1] = pos
    times = np.arange(t0, t0 + steps + 1, dtype=float)
    return [
        Trajectory("discrete", tuple(int(v) for v in np.ravel(x0)), times,
                   path[:, :, i].astype(np.int64), normalize_seed(seeds[i]), float(t0 + steps))
        for i in range(n)
    ]


class _SegmentTracker:
    """Per-walker segment indices for walkers living in different environments."""

    def __init__(self, envs: Sequence[Environment], t0: float):
        self.shared = all(e.schedule is envs[0].schedule for e in envs)
        self.envs = envs
        if not self.shared:
            first = envs[0].schedule
            for e in envs:
                if (e.schedule.edge != first.edge or e.schedule.loop != first.loop
                        or e.geometry != envs[0].geometry or e.schedule.integer_clock):
                    raise DomainError("batched environments must share geometry and rules")
            width = max(len(e.schedule.breakpoints) for e in envs) + 1
            self.bp = np.full((len(envs), width), np.inf)
            for i, e in enumerate(envs):
                self.bp[i, : len(e.schedule.breakpoints)] = e.schedule.breakpoints
            self.ptr = np.array([max(e.segment_index(t0), 0) for e in envs], dtype=np.int64)
            self.rows = np.arange(len(envs))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        if self.shared:
            return self.envs[0].segment_index(t)
        while True:
            adv = self.bp[self.rows, self.ptr + 1] <= t
            if not adv.any():
                return self.ptr.copy()
            self.ptr += adv


def _continuous_block(dynamics, envs: Sequence[Environment], x0, t0: float, horizon: float, seeds):
    env = envs[0]
    geom = env.geometry
    n = len(seeds)
    rngs = [make_rng(s) for s in seeds]
    moves = np.vstack([geom.steps, np.zeros((1, geom.dim), dtype=np.int64)])
    pos = np.repeat(np.asarray(x0, dtype=np.int64).reshape(-1, 1), n, axis=1)
    rate = 1.0 if dynamics == "csrw" else max(e.rate_bound for e in envs)
    segment = _SegmentTracker(envs, t0)
    T = np.full(n, float(t0))
    alive = np.ones(n, dtype=bool)
    log_t, log_pos, log_ok = [], [], []
    candidates = np.zeros(n, dtype=np.int64)
    it = 0
    while alive.any():
        j = it % _CHUNK
        if j == 0:
            U = _uniforms(rngs, _CHUNK, 3)
            log_t.append(np.empty((_CHUNK, n)))
            log_pos.append(np.empty((_CHUNK, geom.dim, n), dtype=np.int64))
            log_ok.append(np.zeros((_CHUNK, n), dtype=bool))
        u = U[j]
        it += 1
        T = T - np.log1p(-u[:, 0]) / rate
        alive &= T <= t0 + horizon
        seg = segment(np.where(alive, T, t0 + horizon))
        w = env.local_weights(seg, pos)
        if dynamics == "vsrw":
            accept = alive & (u[:, 1] * rate < w.sum(axis=0))
        else:
            accept = alive.copy()
        candidates += alive
        d = _pick(w, u[:, 2])
        pos = np.where(accept, geom.normalize(pos + moves[d].T), pos)
        log_t[-1][j] = T
        log_pos[-1][j] = pos
        log_ok[-1][j] = accept
    times = np.concatenate(log_t)
    poss = np.concatenate(log_pos)  # (iters, dim, n)
    ok = np.concatenate(log_ok)
    out = []
    x0t = tuple(int(v) for v in np.ravel(x0))
    for i in range(n):
        m = ok[:, i]
        tt = np.concatenate([[float(t0)], times[m, i]])
        vv = np.concatenate([np.asarray(x0t, dtype=np.int64)[None, :], poss[m, :, i]])
        meta = {"candidates": int(candidates[i]), "rate_bound": rate}
        out.append(Trajectory(dynamics, x0t, tt, vv, normalize_seed(seeds[i]), float(t0 + horizon), meta))
    return out


def simulate_discrete(env: Environment, x0, t0: int = 0, steps: int = 1, seed=0) -> Trajectory:
    """Discrete-time walk: at time t move from x according to P^(t)(x, .)."""
    if steps < 0:
        raise DomainError("steps must be nonnegative")
    return _discrete_block(env, x0, int(t0), int(steps), [normalize_seed(seed)])[0]


def simulate_csrw(env: Environment, x0, t0: float = 0.0, horizon: float = 1.0, seed=0) -> Trajectory:
    """Constant speed walk: rate-1 exponential clocks, jump law P^(T) at the jump time T."""
    return _continuous_block("csrw", [env], x0, float(t0), float(horizon), [normalize_seed(seed)])[0]


def simulate_vsrw(env: Environment, x0, t0: float = 0.0, horizon: float = 1.0, seed=0) -> Trajectory:
    """Variable speed walk by thinning: candidates at rate ``env.rate_bound``,
    accepted with probability mu^(T)(x) / rate_bound."""
    return _continuous_block("vsrw", [env], x0, float(t0), float(horizon), [normalize_seed(seed)])[0]


def thinning_acceptance(env: Environment, t: float, x) -> float:
    """Probability that a VSRW candidate at (t, x) is a real jump."""
    return float(env.weights_at(t, x).sum() / env.rate_bound)


def _run_block(dynamics, envs, x0, t0, length, seeds, reduce):
    if dynamics == "discrete":
        trajs = _discrete_block(envs[0], x0, int(t0), int(length), seeds)
    else:
        trajs = _continuous_block(dynamics, envs, x0, float(t0), float(length), seeds)
    return trajs if reduce is None else [reduce(tr) for tr in trajs]


def default_jobs() -> int:
    v = os.environ.get("TDRW_THREADS")
    return int(v) if v else 1


def simulate_batch(
    dynamics: str,
    env: Environment | Sequence[Environment],
    x0,
    n: int,
    seed,
    *,
    steps: int | None = None,
    horizon: float | None = None,
    t0: float = 0,
    reduce: Callable[[Trajectory], object] | None = None,
    n_jobs: int | None = None,
) -> list:
    """Simulate ``n`` walks; walk i uses stream ``child_seed(seed, i)``.

    ``env`` may be one environment or one per walk (annealed experiments).
    With ``reduce`` each trajectory is mapped immediately and only the
    reduced values are kept, which bounds memory for long runs.  Results are
    returned in walk order regardless of ``n_jobs``.
    """
    if dynamics not in DYNAMICS:
        raise DomainError(f"unknown dynamics {dynamics!r}")
    if n < 1:
        raise DomainError("batch must be nonempty")
    envs = [env] * n if isinstance(env, Environment) else list(env)
    if len(envs) != n:
        raise DomainError("need one environment per walk")
    length = steps if dynamics == "discrete" else horizon
    if length is None:
        raise DomainError("discrete walks need steps, continuous walks need horizon")
    seeds = [child_seed(seed, i) for i in range(n)]
    rate = 1.0 if dynamics != "vsrw" else max(e.rate_bound for e in envs)
    per_walk = (length + 1) * (rate if dynamics != "discrete" else 1.0) * envs[0].dim
    block = int(max(1, min(n, _BLOCK_CELLS // max(per_walk, 1))))
    n_jobs = default_jobs() if n_jobs is None else n_jobs
    if n_jobs > 1:
        block = min(block, -(-n // n_jobs))
    blocks = [range(i, min(i + block, n)) for i in range(0, n, block)]
    jobs = (
        delayed(_run_block)(dynamics, [envs[i] for i in b], x0, t0, length, [seeds[i] for i in b], reduce)
        for b in blocks
    )
    if n_jobs == 1 or len(blocks) == 1:
        results = [fn(*a, **k) for fn, a, k in jobs]
    else:
        results = Parallel(n_jobs=n_jobs)(jobs)
    return [r for chunk in results for r in chunk]


# ---------------------------------------------------------------------------
# State traces


@dataclass
class StateTrace:
    """Environment state seen by the walker at each classified epoch."""

    times: np.ndarray
    labels: list[str]
    states: tuple[str, ...]
    counts: dict[str, int]
    change_times: np.ndarray

    def transition_counts(self) -> np.ndarray:
        idx = {s: i for i, s in enumerate(self.states)}
        codes = np.array([idx[lab] for lab in self.labels])
        m = np.zeros((len(self.states), len(self.states)), dtype=np.int64)
        np.add.at(m, (codes[:-1], codes[1:]), 1)
        return m

    def occupation_fraction(self, label: str, upto: int | None = None) -> float:
        labels = self.labels if upto is None else self.labels[:upto]
        return sum(1 for lab in labels if lab == label) / len(labels)


def _labels(env: Environment, times, verts) -> list[str]:
    preset = env.preset
    coords = verts.T
    seg = env.segment_index(times)
    w = env.local_weights(seg, coords)
    eps = env.params.get("eps", 0.0)
    if preset == "zigzag1d":
        return ["A+" if x > 1 else "A-" for x in w[0]]
    if preset in ("halfspace-dt", "halfspace-csrw"):
        return ["A+" if x > 1 else "A-" for x in w[4]]
    if preset == "poisson1d":
        if eps == 0:
            raise UnsupportedOperationError("the three states coincide when eps = 0")
        right = w[0]
        vals = np.array([1 - eps, 1.0, 1 + eps])
        code = np.argmin(np.abs(right[:, None] - vals[None, :]), axis=1)
        return [("A1", "A2", "A3")[c] for c in code]
    raise UnsupportedOperationError(f"no state classifier for preset {preset!r}")


_STATES = {
    "zigzag1d": ("A+", "A-"),
    "halfspace-dt": ("A+", "A-"),
    "halfspace-csrw": ("A+", "A-"),
    "poisson1d": ("A1", "A2", "A3"),
}


def classify_states(env: Environment, traj: Trajectory) -> StateTrace:
    """Label epochs by the conductances adjacent to the walker.

    Discrete walks are classified at every integer time.  For continuous
    walks the epochs are the jump times together with the breakpoints of the
    schedule, since the state also changes when the environment shifts.
    """
    if env.preset not in _STATES:
        raise UnsupportedOperationError(f"no state classifier for preset {env.preset!r}")
    times = traj.times
    verts = traj.vertices
    if traj.dynamics != "discrete" and not env.schedule.integer_clock:
        bps = np.asarray(env.schedule.breakpoints_in(traj.t0, traj.end))
        if len(bps):
            idx = np.searchsorted(times, bps, side="right") - 1
            order = np.argsort(np.concatenate([times, bps]), kind="stable")
            times = np.concatenate([times, bps])[order]
            verts = np.concatenate([verts, verts[idx]])[order]
    labels = _labels(env, times, verts)
    states = _STATES[env.preset]
    counts = {s: 0 for s in states}
    for lab in labels:
        counts[lab] += 1
    changed = [i for i in range(1, len(labels)) if labels[i] != labels[i - 1]]
    return StateTrace(times, labels, states, counts, times[changed])


# ---------------------------------------------------------------------------
# Excursions and summaries


@dataclass
class ExcursionRecord:
    sigma: np.ndarray  # floor epochs
    floor_positions: np.ndarray  # M_n, (N, 2)
    increments: np.ndarray  # D_n, (N-1, 2)
    heights: np.ndarray  # R_t along the trajectory

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.sigma)


def excursions(traj: Trajectory) -> ExcursionRecord:
    """Successive floor visits of a half-space trajectory.

    sigma_0 is the first floor epoch (the start for walks begun on the
    floor); each later sigma is the next epoch at height 0.  For continuous
    walks epochs are jump events.
    """
    if traj.vertices.shape[1] != 3:
        raise DomainError("excursions need a half-space trajectory")
    h = traj.vertices[:, 2]
    idx = np.flatnonzero(h == 0)
    sigma = traj.times[idx]
    M = traj.vertices[idx, :2]
    return ExcursionRecord(sigma, M, np.diff(M, axis=0), h)


def return_counts(traj: Trajectory, horizons: Sequence[float]) -> np.ndarray:
    """Number of epochs after the start spent at the start vertex, up to each horizon."""
    at = np.all(traj.vertices == np.asarray(traj.start)[None, :], axis=1)
    at[0] = False
    cum_t = traj.times[at]
    return np.searchsorted(cum_t, np.asarray(horizons, dtype=float), side="right")


@dataclass
class TrajectoryStats:
    n: int
    speed: np.ndarray  # per coordinate
    speed_se: np.ndarray
    mean_returns: float
    max_excursion: float


def trajectory_stats(trajs: Sequence[Trajectory]) -> TrajectoryStats:
    """Batch speed (displacement / elapsed time) with standard errors, returns, max excursion."""
    if not trajs:
        raise DomainError("empty batch")
    kinds = {tr.dynamics for tr in trajs}
    if len(kinds) != 1:
        raise DomainError("batch mixes dynamics")
    v = np.array([(tr.vertices[-1] - tr.vertices[0]) / (tr.end - tr.t0) for tr in trajs])
    n = len(trajs)
    se = v.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(v.shape[1], np.nan)
    ret = np.mean([return_counts(tr, [tr.end])[0] for tr in trajs])
    exc = max(float(np.abs(tr.vertices - tr.vertices[0]).sum(axis=1).max()) for tr in trajs)
    return TrajectoryStats(n, v.mean(axis=0), se, float(ret), exc)
