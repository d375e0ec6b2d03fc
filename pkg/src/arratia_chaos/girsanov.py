"""Path maps: the killed ODE solution xi, the conditioning transform phi and
its inverse psi, the drift-removal map G, and rejection sampling of paths
conditioned to survive past t.

All corrections are left-point Riemann sums on the path grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import WeylChamber
from .rng import PathBatch, SamplePath, TimeGrid, as_ledger, brownian_batch, make_grid
from .sde import DRIFT_CAP, DriftField, cap_vectors, solve_xi_batch

ACCEPT_FLOOR = 1e-3


class NotInRangeError(ValueError):
    """The path is outside the image of phi (its xi leaves G before t)."""


@dataclass(frozen=True)
class XiSolution:
    base: SamplePath
    xi: SamplePath
    lifetime: float
    step: int          # grid step containing the lifetime, -1 if alive
    capped: int = 0


@dataclass(frozen=True)
class TransformedPath:
    t: float
    path: SamplePath
    valid: bool
    capped: int = 0


def _domain_for(path_dim, domain):
    return domain if domain is not None else WeylChamber(path_dim)


def solve_xi(omega: SamplePath, drift: DriftField | None = None, domain=None,
             bridge: bool = True) -> XiSolution:
    """xi_{j+1} = xi_j + (omega_{j+1} - omega_j) + aleph(xi_j) dt, killed on leaving G."""
    domain = _domain_for(omega.dim, domain)
    us = omega.uniforms[None] if omega.uniforms is not None else None
    xb = solve_xi_batch(omega.values[None], omega.grid.dt, drift, domain, us, bridge and us is not None)
    xi = SamplePath(omega.grid, omega.values[:, 0], xb.xi[0], omega.uniforms, omega.ledger)
    return XiSolution(omega, xi, float(xb.tau[0]), int(xb.step[0]), xb.capped)


def alive_before(step: np.ndarray, j: int) -> np.ndarray:
    """Paths whose lifetime is not in a step before j (step j itself counts)."""
    return (step < 0) | (step >= j)


def log_alpha_drift(field, t: float, xi: np.ndarray, dt: float, cap: float = DRIFT_CAP):
    """grad log alpha(t - t_i, xi_i) for grid times t_i < t, zero afterwards.

    ``xi`` is (N, n, M+1); returns ((N, n, M) drift, capped count).
    """
    N, n, K = xi.shape
    M = K - 1
    out = np.zeros((N, n, M))
    ti = np.arange(M) * dt
    idx = np.flatnonzero(ti < t - 1e-12 * max(dt, 1.0))
    if idx.size == 0:
        return out, 0
    x = np.moveaxis(xi[:, :, idx], 1, 2)                      # (N, k, n)
    g = field.grad_log_alpha(np.broadcast_to(t - ti[idx], x.shape[:-1]), x)
    g, over = cap_vectors(g, cap)
    out[:, :, idx] = np.moveaxis(g, 2, 1)
    return out, int(over.sum())


def phi_batch(t: float, omega: np.ndarray, xi: np.ndarray, field, dt: float):
    """phi(t, omega) on the grid: omega minus the accumulated log-alpha drift.

    Returns (values (N, n, M+1), capped count).
    """
    g, ncap = log_alpha_drift(field, t, xi, dt)
    corr = np.zeros_like(omega)
    np.cumsum(g * dt, axis=2, out=corr[:, :, 1:])
    return omega - corr, ncap


def phi_transform(t: float, omega: SamplePath, field, drift: DriftField | None = None,
                  domain=None, bridge: bool = True) -> TransformedPath:
    """phi(t, omega)(r) = omega(r) - sum_{t_i < r ^ t} grad log alpha(t - t_i, xi(t_i)) dt.

    Refuses paths with lifetime <= t, where the transform is not used.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    if t > omega.grid.horizon:
        raise ValueError(f"t={t} beyond the grid horizon {omega.grid.horizon}")
    sol = solve_xi(omega, drift, domain or field.domain, bridge)
    if not sol.lifetime > t:
        raise ValueError(f"lifetime {sol.lifetime:.6g} <= t={t:.6g}: phi is only defined on {{tau > t}}")
    vals, ncap = phi_batch(t, omega.values[None], sol.xi.values[None], field, omega.grid.dt)
    p = SamplePath(omega.grid, omega.values[:, 0], vals[0], omega.uniforms, omega.ledger)
    return TransformedPath(t, p, True, ncap)


def psi_inverse_batch(t: float, eta: np.ndarray, dt: float, field, drift: DriftField | None, domain):
    """Forward recursion recovering omega from eta = phi(t, omega).

    Returns (omega, ok mask, capped count); ``ok`` is False where xi leaves
    G at a grid time before t.
    """
    N, n, K = eta.shape
    M = K - 1
    d_eta = np.diff(eta, axis=2)
    xi = np.empty_like(eta)
    xi[:, :, 0] = eta[:, :, 0]
    corr = np.zeros_like(eta)
    ok = domain.contains(eta[:, :, 0])
    ncap = 0
    for j in range(M):
        x = xi[:, :, j]
        step = d_eta[:, :, j].copy()
        if drift is not None and not drift.is_zero:
            a, over = cap_vectors(drift(x))
            ncap += int(over.sum())
            step += a * dt
        gj = np.zeros((N, n))
        if j * dt < t - 1e-12 * max(dt, 1.0):
            live = ok & domain.contains(x)
            if live.any():
                g = field.grad_log_alpha(np.full(int(live.sum()), t - j * dt), x[live])
                g, over = cap_vectors(g)
                ncap += int(over.sum())
                gj[live] = g
            ok &= live
        xi[:, :, j + 1] = x + step + gj * dt
        corr[:, :, j + 1] = corr[:, :, j] + gj * dt
    # a path must also stay inside up to the grid time at or after t
    k = min(int(np.ceil(t / dt - 1e-9)) if dt > 0 else 0, M)
    ok &= domain.contains(np.moveaxis(xi[:, :, :k + 1], 1, 2)).all(axis=1)
    return eta + corr, ok, ncap


def psi_inverse(t: float, eta: SamplePath, field, drift: DriftField | None = None,
                domain=None) -> SamplePath:
    """Inverse of phi(t, .) on its image; raises NotInRangeError off the image."""
    if t < 0:
        raise ValueError("t must be non-negative")
    domain = domain or field.domain
    om, ok, _ = psi_inverse_batch(t, eta.values[None], eta.grid.dt, field, drift, domain)
    if not ok[0]:
        raise NotInRangeError("xi leaves the domain before t: path is not in the image of phi")
    return SamplePath(eta.grid, eta.values[:, 0], om[0], eta.uniforms, eta.ledger)


# ---------------------------------------------------------------------------
# drift removal up to the exit time

@dataclass
class GBatch:
    values: np.ndarray   # (N, n, M+1), frozen after the exit step
    step: np.ndarray     # exit step per path, -1 if alive at the horizon
    tau: np.ndarray
    capped: int
    evaluated: int

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=2)


def g_transform_batch(omega: np.ndarray, dt: float, drift: DriftField | None, domain=None,
                      uniforms: np.ndarray | None = None, bridge: bool = True) -> GBatch:
    """G(omega) = omega(. ^ tau) - int_0^{. ^ tau} aleph(omega(r)) dr on the grid.

    tau is the (bridge-corrected) exit of omega itself from G; the path is
    stopped at the end of the grid step containing tau.
    """
    N, n, K = omega.shape
    M = K - 1
    domain = domain or WeylChamber(n)
    xb = solve_xi_batch(omega, dt, None, domain, uniforms if bridge else None, bridge)
    inc = np.diff(omega, axis=2)
    live = np.ones((N, M), bool)
    j = np.arange(M)
    live &= (xb.step[:, None] < 0) | (j[None, :] <= xb.step[:, None])
    ncap = 0
    if drift is not None and not drift.is_zero:
        x = np.moveaxis(omega[:, :, :-1], 1, 2)[live]        # (L, n)
        a, over = cap_vectors(drift(x))
        ncap = int(over.sum())
        full = np.zeros((N, M, n))
        full[live] = a
        inc = inc - np.moveaxis(full, 2, 1) * dt
    inc = np.where(live[:, None, :], inc, 0.0)
    out = np.empty_like(omega)
    out[:, :, 0] = omega[:, :, 0]
    np.cumsum(inc, axis=2, out=out[:, :, 1:])
    out[:, :, 1:] += omega[:, :, :1]
    return GBatch(out, xb.step, xb.tau, ncap, int(live.sum()))


def g_transform(omega: SamplePath, weights, theta=None, domain=None) -> SamplePath:
    """Drift-removed path for aleph_theta = grad log beta_theta, stopped at the exit.

    ``theta`` defaults to the leading times stored in ``weights``.
    """
    if theta is None:
        theta = tuple(weights.times[:omega.dim - 2]) if weights.times else (0.0,) * (omega.dim - 2)
    drift = weights.drift(theta)
    us = omega.uniforms[None] if omega.uniforms is not None else None
    gb = g_transform_batch(omega.values[None], omega.grid.dt, drift, domain, us)
    return SamplePath(omega.grid, omega.values[:, 0], gb.values[0], omega.uniforms, omega.ledger)


# ---------------------------------------------------------------------------
# conditioned sampling by rejection

@dataclass
class ConditionedSample:
    paths: PathBatch
    xi: np.ndarray
    acceptance: float
    stderr: float
    attempts: int
    t: float


def sample_conditioned(u, t: float, drift: DriftField | None, domain, N: int, seed,
                       grid: TimeGrid | None = None, M: int = 1024, batch: int = 8192,
                       floor: float = ACCEPT_FLOOR) -> ConditionedSample:
    """N Brownian paths (on ``grid``, default [0, t] with M steps) whose xi survives past t."""
    domain = domain or WeylChamber(len(np.atleast_1d(u)))
    u = domain.check_start(u)
    if grid is None:
        grid = make_grid(t if t > 0 else 1.0, M)
    if t > grid.horizon:
        raise ValueError("grid must cover [0, t]")
    ledger = as_ledger(seed)
    kept_v, kept_u, kept_x = [], [], []
    got = attempts = 0
    k = 0
    while got < N:
        pb = brownian_batch(u, grid, batch, ledger.child(k))
        xb = solve_xi_batch(pb.values, grid.dt, drift, domain, pb.uniforms)
        acc = xb.tau > t
        attempts += batch
        got += int(acc.sum())
        kept_v.append(pb.values[acc])
        kept_u.append(pb.uniforms[acc])
        kept_x.append(xb.xi[acc])
        k += 1
        rate = got / attempts
        if k == 1 and rate < floor:
            raise ValueError(f"acceptance {rate:.3g} below {floor:g}; rejection sampling is too costly "
                             "here and conditioned h-transform sampling is not implemented")
    vals = np.concatenate(kept_v)[:N]
    us = np.concatenate(kept_u)[:N]
    xis = np.concatenate(kept_x)[:N]
    p = got / attempts
    return ConditionedSample(PathBatch(grid, vals, us, ledger), xis, p,
                             float(np.sqrt(p * (1 - p) / attempts)), attempts, t)
