"""n-point motion of the Arratia flow: coalescing Brownian particles.

Particles move as independent Brownian motions until two neighbours meet;
from then on they move together.  Collisions are detected with the
bridge-corrected rule from :mod:`arratia_chaos.domains`.  At a detected
merge the common position is the average of the two tentative positions,
which keeps every coordinate a martingale.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .domains import WeylChamber, first_exit
from .rng import CHUNK, PathBatch, SamplePath, SeedLedger, TimeGrid, as_ledger, cumulate, draw_noise, iter_chunks


@dataclass(frozen=True)
class CoalescingMotion:
    """One realisation of the n-point motion on a grid.

    ``barrier_tau[i]`` is the time coordinates i and i+1 (0-based) became
    equal, ``inf`` if they never did within the horizon.
    """

    path: SamplePath
    barrier_tau: np.ndarray
    barrier_step: np.ndarray

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def n(self) -> int:
        return self.path.dim

    @property
    def values(self) -> np.ndarray:
        return self.path.values

    @property
    def pairwise_tau(self) -> np.ndarray:
        return pairwise_from_barriers(self.barrier_tau[None])[0]

    @property
    def first_collision(self) -> tuple[float, np.ndarray | None, int | None]:
        return first_collision(self)

    @property
    def colliding_pair(self) -> int | None:
        return first_collision(self)[2]

    @property
    def reduced_start(self) -> np.ndarray | None:
        return first_collision(self)[1]


def pairwise_from_barriers(btau: np.ndarray) -> np.ndarray:
    """tau_{ij} = latest merge time among the barriers between i and j."""
    N, B = btau.shape
    n = B + 1
    out = np.full((N, n, n), np.inf)
    for i in range(n):
        out[:, i, i] = 0.0
        run = np.zeros(N)
        for j in range(i + 1, n):
            run = np.maximum(run, btau[:, j - 1])
            out[:, i, j] = out[:, j, i] = run
    return out


@dataclass(frozen=True)
class MotionBatch:
    grid: TimeGrid
    values: np.ndarray          # (N, n, M+1)
    barrier_tau: np.ndarray     # (N, n-1)
    barrier_step: np.ndarray    # (N, n-1)
    uniforms: np.ndarray | None = None
    ledger: SeedLedger | None = None

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def tau(self) -> np.ndarray:
        """First collision time per path."""
        if self.n < 2:
            return np.full(self.size, np.inf)
        return self.barrier_tau.min(axis=1)

    @property
    def first_pair(self) -> np.ndarray:
        if self.n < 2:
            return np.full(self.size, -1)
        return np.where(np.isfinite(self.tau), np.argmin(self.barrier_tau, axis=1), -1)

    def motion(self, i: int) -> CoalescingMotion:
        u = None if self.uniforms is None else self.uniforms[i]
        p = SamplePath(self.grid, self.values[i, :, 0], self.values[i], u, self.ledger)
        return CoalescingMotion(p, self.barrier_tau[i].copy(), self.barrier_step[i].copy())

    def paths(self) -> PathBatch:
        return PathBatch(self.grid, self.values, self.uniforms, self.ledger)


def _resolve_merge(Q, merged, C_next, btau, bstep, fire_tau, e, t_mid):
    """Merge clusters of one path at step e.

    Q: tentative positions at e+1 (n,), merged: (n-1,) barrier state,
    fire_tau: (n-1,) tau for barriers firing now (inf otherwise).
    Returns (rep, off) for the new epoch and updates merged/btau/bstep in place.
    """
    n = Q.size
    fire = np.isfinite(fire_tau)
    while True:
        joined = merged | fire
        labels = np.concatenate(([0], np.cumsum(~joined)))
        old = np.concatenate(([0], np.cumsum(~merged)))
        pos = np.empty(n)
        for c in np.unique(labels):
            members = np.flatnonzero(labels == c)
            # average of the distinct old clusters being joined
            firsts = [members[0]] + [m for m in members[1:] if old[m] != old[m - 1]]
            pos[members] = Q[firsts].mean()
        bad = (~joined) & (np.diff(pos) <= 0)
        if not bad.any():
            break
        fire_tau = np.where(bad, t_mid, fire_tau)
        fire = np.isfinite(fire_tau)
    newly = fire & ~merged
    btau[newly] = fire_tau[newly]
    bstep[newly] = e
    merged |= fire
    rep = np.empty(n, dtype=int)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        rep[members] = members[0]
    off = pos - C_next[rep]
    return rep, off


def _coalesce_chunk(u, grid: TimeGrid, dW, U, bridge: bool):
    Nc, n, M = dW.shape
    dt = grid.dt
    C = cumulate(np.zeros(n), dW)
    X = np.array(u, dtype=float)[None, :, None] + C
    btau = np.full((Nc, max(n - 1, 0)), np.inf)
    bstep = np.full((Nc, max(n - 1, 0)), -1, dtype=int)
    if n < 2 or M == 0:
        return X, btau, bstep
    rep = np.tile(np.arange(n), (Nc, 1))
    off = np.tile(np.asarray(u, dtype=float), (Nc, 1))
    merged = np.zeros((Nc, n - 1), bool)
    s = np.zeros(Nc, dtype=int)
    act = np.arange(Nc)
    tgrid = np.arange(M + 1)
    for _ in range(n - 1):
        if act.size == 0:
            break
        P = X[act]
        dist = np.diff(P, axis=1)
        ex = first_exit(dist, dt, U[act] if bridge else None, 2.0,
                        active=~merged[act], from_step=s[act])
        has = ex.step >= 0
        nxt = []
        for k in np.flatnonzero(has):
            i = act[k]
            e = ex.step[k]
            a = dist[k, :, e]
            b = dist[k, :, e + 1]
            f = ex.fired[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(a <= 0, 0.0, np.where(b <= 0, a / (a - b), 0.5))
            fire_tau = np.where(f, (e + frac) * dt, np.inf)
            rep[i], off[i] = _resolve_merge(P[k, :, e + 1].copy(), merged[i], C[i, :, e + 1],
                                           btau[i], bstep[i], fire_tau, e, (e + 0.5) * dt)
            s[i] = e + 1
            nxt.append(i)
        act = np.asarray(nxt, dtype=int)
        if act.size:
            newP = off[act][:, :, None] + np.take_along_axis(C[act], rep[act][:, :, None], axis=1)
            mask = (tgrid[None, :] >= s[act][:, None])[:, None, :]
            X[act] = np.where(mask, newP, X[act])
    return X, btau, bstep


def simulate_batch(u, grid: TimeGrid, N: int, seed, bridge: bool = True) -> MotionBatch:
    """N independent realisations of the n-point motion started at ``u``."""
    u = WeylChamber(len(np.atleast_1d(u))).check_start(u)
    ledger = as_ledger(seed)
    n, M = u.size, grid.steps
    vals = np.empty((N, n, M + 1))
    us = np.empty((N, max(n - 1, 1), M))
    btau = np.empty((N, max(n - 1, 0)))
    bstep = np.empty((N, max(n - 1, 0)), dtype=int)
    for c, lo, size in iter_chunks(N):
        dW, U = draw_noise(n, grid, size, ledger, c)
        X, bt, bs = _coalesce_chunk(u, grid, dW, U, bridge)
        sl = slice(lo, lo + size)
        vals[sl], us[sl], btau[sl], bstep[sl] = X, U, bt, bs
    return MotionBatch(grid, vals, btau, bstep, us, ledger)


def simulate_npoint(u, grid: TimeGrid, seed, bridge: bool = True) -> CoalescingMotion:
    return simulate_batch(u, grid, 1, seed, bridge).motion(0)


def first_collision(motion: CoalescingMotion) -> tuple[float, np.ndarray | None, int | None]:
    """(tau, reduced start, colliding pair) with (inf, None, None) if no collision.

    The pair index j is 0-based: coordinates j and j+1 meet.
    """
    bt = motion.barrier_tau
    if bt.size == 0 or not np.isfinite(bt).any():
        return np.inf, None, None
    j = int(np.argmin(bt))
    e = int(motion.barrier_step[j])
    v = motion.values[:, e + 1]
    return float(bt[j]), np.delete(v, j + 1), j


def split_at_collision(motion: CoalescingMotion):
    """(pre-collision path on [0, t_{e+1}], post-collision (n-1)-point motion).

    The post motion starts at the reduced start with time re-based to zero.
    Raises ValueError if there is no collision on the grid.
    """
    tau, p, j = first_collision(motion)
    if p is None:
        raise ValueError("no collision within the horizon")
    e = int(motion.barrier_step[j])
    grid = motion.grid
    pre_grid = grid.sub(e + 1)
    pu = None if motion.path.uniforms is None else motion.path.uniforms[:, :e + 1]
    pre = SamplePath(pre_grid, motion.values[:, 0], motion.values[:, :e + 2], pu, motion.path.ledger)
    rest = grid.steps - e - 1
    post_grid = TimeGrid(rest * grid.dt, rest)
    keep = [i for i in range(motion.n) if i != j + 1]
    vals = motion.values[keep, e + 1:]
    t_split = (e + 1) * grid.dt
    old = np.delete(np.arange(motion.n - 1), j)
    bt = np.maximum(motion.barrier_tau[old] - t_split, 0.0)
    bs = np.where(motion.barrier_step[old] >= 0, np.maximum(motion.barrier_step[old] - e - 1, 0), -1)
    if motion.path.uniforms is not None and rest > 0:
        uu = motion.path.uniforms[np.delete(np.arange(motion.path.uniforms.shape[0]), j)
                                  if motion.n > 2 else [0], e + 1:]
    else:
        uu = None
    post = CoalescingMotion(SamplePath(post_grid, vals[:, 0], vals, uu, motion.path.ledger), bt, bs)
    return pre, post


# ---------------------------------------------------------------------------
# level sampler: one fresh Brownian window per level, chained through exits

@dataclass
class Level:
    """Level m of a hierarchical sample: an m-dim Brownian path from ``start``.

    ``tau`` is the exit time from S^m (inf when m == 1 or, for m == 2, when
    it falls outside the window), ``exit_pos`` the reduced (m-1)-point start
    of the next level.  ``capped`` marks exits not found before the
    completion cap.
    """

    m: int
    start: np.ndarray
    values: np.ndarray | None
    uniforms: np.ndarray | None
    tau: np.ndarray
    step: np.ndarray
    pair: np.ndarray
    exit_pos: np.ndarray | None
    capped: np.ndarray
    valid: np.ndarray | None = None  # observed steps per path, None means the full window


@dataclass
class LevelBatch:
    grid: TimeGrid
    u: np.ndarray
    levels: dict = field(default_factory=dict)
    ledger: SeedLedger | None = None

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def size(self) -> int:
        return self.levels[self.n].start.shape[0]

    def level(self, m: int) -> Level:
        return self.levels[m]

    @property
    def capped(self) -> np.ndarray:
        out = np.zeros(self.size, bool)
        for lv in self.levels.values():
            out |= lv.capped
        return out


# completion uses steps of size max(dt, COMPLETION_FRAC * t)
COMPLETION_FRAC = 1.0 / 256
COMPLETION_CAP = 1e6


def _merge_exit(x: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Drop coordinate j+1 after replacing coordinate j by the pair average."""
    K, m = x.shape
    y = x.copy()
    r = np.arange(K)
    y[r, j] = 0.5 * (x[r, j] + x[r, j + 1])
    keep = np.ones((K, m), bool)
    keep[r, j + 1] = False
    return y[keep].reshape(K, m - 1)


def complete_exits(x0: np.ndarray, t0: float, dt_min: float, rng: np.random.Generator,
                   frac: float = COMPLETION_FRAC, cap: float = COMPLETION_CAP):
    """Continue Brownian motions in S^m from x0 at time t0 until they leave.

    Returns (tau, pair, exit position, capped).
    """
    K, m = x0.shape
    tau = np.full(K, np.inf)
    pair = np.full(K, -1)
    pos = np.empty((K, m - 1))
    capped = np.zeros(K, bool)
    alive = np.arange(K)
    x = x0.copy()
    t = t0
    while alive.size:
        if t >= cap:
            capped[alive] = True
            j = np.argmin(np.diff(x, axis=1), axis=1)
            pos[alive] = _merge_exit(x, j)
            pair[alive] = j
            tau[alive] = np.inf
            break
        h = max(dt_min, frac * t)
        xn = x + np.sqrt(h) * rng.standard_normal(x.shape)
        uu = rng.random((x.shape[0], m - 1))
        d0 = np.diff(x, axis=1)
        d1 = np.diff(xn, axis=1)
        with np.errstate(under="ignore"):
            p = np.exp(-np.maximum(d0, 0) * np.maximum(d1, 0) / h)
        hit = (d1 <= 0) | (d0 <= 0) | (uu < p)
        with np.errstate(divide="ignore", invalid="ignore"):
            fr = np.where(d0 <= 0, 0.0, np.where(d1 <= 0, d0 / (d0 - d1), 0.5))
        tb = np.where(hit, t + fr * h, np.inf)
        done = hit.any(axis=1)
        if done.any():
            j = np.argmin(tb[done], axis=1)
            idx = alive[done]
            tau[idx] = tb[done].min(axis=1)
            pair[idx] = j
            pos[idx] = _merge_exit(xn[done], j)
        alive = alive[~done]
        x = xn[~done]
        t += h
    return tau, pair, pos, capped


def _level_chunk(start, grid: TimeGrid, ledger: SeedLedger, chunk: int, keep_paths: bool):
    size, m = start.shape
    M = grid.steps
    dW, U = draw_noise(m, grid, size, ledger, chunk)
    X = cumulate(start, dW)
    if m == 1:
        return Level(1, start, X if keep_paths else None, U if keep_paths else None,
                     np.full(size, np.inf), np.full(size, -1), np.full(size, -1), None, np.zeros(size, bool))
    ex = first_exit(np.diff(X, axis=1), grid.dt, U, 2.0)
    tau = ex.tau.copy()
    pair = ex.barrier.copy()
    pos = np.empty((size, m - 1))
    capped = np.zeros(size, bool)
    hit = ex.step >= 0
    if hit.any():
        r = np.flatnonzero(hit)
        pos[r] = _merge_exit(X[r, :, ex.step[r] + 1], pair[r])
    miss = np.flatnonzero(~hit)
    if miss.size:
        if m >= 3:
            rng = ledger.child(1).generator(chunk)
            t_, p_, x_, c_ = complete_exits(X[miss, :, M], grid.horizon, grid.dt, rng)
            tau[miss], pair[miss], pos[miss], capped[miss] = t_, p_, x_, c_
        else:
            # the 1-point level only enters through its increments
            pos[miss] = X[miss, :, M].mean(axis=1, keepdims=True)
    return Level(m, start, X if keep_paths else None, U if keep_paths else None,
                 tau, ex.step, pair, pos, capped)


def sample_levels(u, grid: TimeGrid, N: int, seed, keep_paths: bool = True,
                  lowest: int = 1) -> LevelBatch:
    """Hierarchical sample of the chain of post-collision motions.

    Level n is a Brownian window from ``u``; its exit from S^n gives the
    reduced start of level n-1, which is driven by fresh noise, and so on
    down to ``lowest``.  Each level thus lives on its own shifted clock.
    """
    u = WeylChamber(len(np.atleast_1d(u))).check_start(u)
    ledger = as_ledger(seed)
    n = u.size
    out = LevelBatch(grid, u, {}, ledger)
    parts: dict[int, list[Level]] = {m: [] for m in range(lowest, n + 1)}
    for c, lo, size in iter_chunks(N):
        start = np.tile(u, (size, 1))
        for m in range(n, lowest - 1, -1):
            lv = _level_chunk(start, grid, ledger.child(m), c, keep_paths)
            parts[m].append(lv)
            if m > 1:
                start = lv.exit_pos
    for m, ps in parts.items():
        cat = lambda name: None if getattr(ps[0], name) is None else np.concatenate([getattr(p, name) for p in ps])
        out.levels[m] = Level(m, cat("start"), cat("values"), cat("uniforms"), cat("tau"),
                              cat("step"), cat("pair"), cat("exit_pos"), cat("capped"))
    return out


def levels_from_motion(motion: CoalescingMotion, need: int = 1):
    """Chain of single-path levels obtained by repeatedly splitting a motion.

    Returns (LevelBatch of size 1, truncated) where truncated is True when
    a level above ``need`` has no collision on the grid.  Levels past the
    horizon are padded with their last position and have ``valid`` 0.
    """
    grid = motion.grid
    K = grid.steps + 1
    lb = LevelBatch(grid, motion.values[:, 0].copy(), {}, motion.path.ledger)
    cur, last, truncated = motion, None, False
    for m in range(motion.n, 0, -1):
        if cur is None:
            x = last[:m]
            lb.levels[m] = Level(m, x[None], np.repeat(x[None, :, None], K, axis=2), None,
                                 np.array([np.inf]), np.array([-1]), np.array([-1]),
                                 x[None, :m - 1] if m > 1 else None, np.array([True]), np.array([0]))
            continue
        k = cur.values.shape[1]
        vals = np.pad(cur.values, ((0, 0), (0, K - k)), mode="edge")[None]
        tau, p, j = first_collision(cur) if m > 1 else (np.inf, None, None)
        step = -1 if p is None else int(cur.barrier_step[j])
        lb.levels[m] = Level(m, cur.values[:, 0][None], vals, None, np.array([tau]), np.array([step]),
                             np.array([-1 if j is None else j]), None if p is None else p[None],
                             np.array([False]), np.array([k - 1]))
        if m == 1:
            break
        if p is None:
            truncated = truncated or m > need
            last, cur = cur.values[:, -1], None
        else:
            _, cur = split_at_collision(cur)
    return lb, truncated


# ---------------------------------------------------------------------------
# binary dump: magic, header struct, then float64 little-endian, path-major,
# coordinate-major within a path

MAGIC = b"ARFLOW01"
HEADER = struct.Struct("<IIdQQI")


def write_paths(fh, values: np.ndarray, T: float, ledger: SeedLedger | None) -> None:
    N, n, K = values.shape
    seed = ledger.master_seed if ledger else 0
    stream = ledger.stream_id if ledger else 0
    fh.write(MAGIC)
    fh.write(HEADER.pack(n, K - 1, float(T), seed, stream, N))
    fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_paths(fh):
    """Returns (values (N, n, M+1), header dict)."""
    if fh.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a path dump")
    n, M, T, seed, stream, N = HEADER.unpack(fh.read(HEADER.size))
    data = np.frombuffer(fh.read(8 * N * n * (M + 1)), dtype="<f8")
    if data.size != N * n * (M + 1):
        raise ValueError("truncated path dump")
    return data.reshape(N, n, M + 1).copy(), {"n": n, "M": M, "T": T, "seed": seed, "stream": stream, "N": N}


def collision_stats(batch: MotionBatch) -> dict:
    tau = batch.tau
    fin = np.isfinite(tau)
    return {
        "N": int(batch.size), "n": int(batch.n), "T": batch.grid.horizon, "M": batch.grid.steps,
        "collided_fraction": float(fin.mean()),
        "mean_tau_given_collision": float(tau[fin].mean()) if fin.any() else float("nan"),
    }


def stats_json(stats: dict) -> str:
    return json.dumps(stats, indent=2, sort_keys=True)
