"""Structured-grid full-order model for Darcy-Boussinesq convection.

Dimensionless system on a rectangle with no-flow walls::

    u + grad p - y_hat Ra T = 0,    div u = 0
    dT/dt + u . grad T - lap T - f_c = 0

Discretisation: cell-centred ``T`` and ``p`` on an ``ny x nx`` grid (row 0 at
the bottom), face-normal velocities (``ux`` on vertical faces, shape
``(ny, nx + 1)``; ``uy`` on horizontal faces, shape ``(ny + 1, nx)``).
Taking the discrete divergence of the Darcy law gives a pure-Neumann Poisson
problem for ``p``; the temperature update is BDF in time with implicit
diffusion and explicit first-order upwind advection lagged at the previous
step's velocity and temperature.
"""
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import NoConvergence, NonPositive, ShapeMismatch, UnsupportedOrder
from .linalg import pcg

SIDES = ("left", "right", "bottom", "top")
SCENARIOS = ("heated_side", "elder", "modified_elder")

# coefficients of phi^n, phi^{n-1}, ... and the dt multiple of the denominator
BDF_TABLE = {
    1: ((1, -1), 1),
    2: ((3, -4, 1), 2),
    3: ((11, -18, 9, -2), 6),
    4: ((25, -48, 36, -16, 3), 12),
}


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    @property
    def hx(self):
        return self.lx / self.nx

    @property
    def hy(self):
        return self.ly / self.ny

    @property
    def h(self):
        return min(self.hx, self.hy)

    @property
    def cell_area(self):
        return self.hx * self.hy

    @property
    def shape(self):
        return (self.ny, self.nx)

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)


@dataclass(frozen=True)
class Segment:
    """Dirichlet temperature ``value`` on ``side`` between ``start`` and ``end``.

    Positions run along the side (x for bottom/top, y for left/right).
    """

    side: str
    start: float
    end: float
    value: float


@dataclass(frozen=True)
class Scenario:
    name: str
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    dirichlet: tuple = ()
    flux_bc: str = "noflow"
    heated: tuple = None
    subdomain: tuple = None
    f_c: float = 0.0
    initial_T: float = 0.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.name!r}")
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 cells per direction")
        if self.lx <= 0 or self.ly <= 0:
            raise NonPositive("domain extents must be positive")
        if self.flux_bc != "noflow":
            raise ValueError("only no-flow walls are supported")
        for seg in self.dirichlet:
            if seg.side not in SIDES:
                raise ValueError(f"unknown side {seg.side!r}")
            length = self.lx if seg.side in ("bottom", "top") else self.ly
            if not 0.0 <= seg.start < seg.end <= length:
                raise ValueError(f"segment {seg} does not lie on the boundary")
        if self.subdomain is not None:
            x0, x1, y0, y1 = self.subdomain
            if not (0.0 <= x0 < x1 <= self.lx and 0.0 <= y0 < y1 <= self.ly):
                raise ValueError("subdomain must lie inside the domain")

    @property
    def grid(self):
        return Grid(self.nx, self.ny, self.lx, self.ly)

    @property
    def n_params(self):
        return 2 if self.subdomain is not None else 1

    def ra_field(self, mu):
        """Cell-wise buoyancy coefficient: ``Ra`` or ``(Ra1 outside, Ra2 inside)``."""
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        if mu.size != self.n_params:
            raise ShapeMismatch(f"{self.name} expects {self.n_params} parameter(s), got {mu.size}")
        if np.any(mu <= 0):
            raise NonPositive("Rayleigh numbers must be positive")
        ra = np.full((self.ny, self.nx), mu[0])
        if self.subdomain is not None:
            x0, x1, y0, y1 = self.subdomain
            X, Y = self.grid.cell_centers()
            ra[(X > x0) & (X < x1) & (Y > y0) & (Y < y1)] = mu[1]
        return ra


def heated_side(nx=32, ny=32):
    """Unit square, hot left wall, cold right wall, insulated top and bottom."""
    return Scenario(
        "heated_side", nx, ny, 1.0, 1.0,
        dirichlet=(Segment("left", 0.0, 1.0, 1.0), Segment("right", 0.0, 1.0, 0.0)),
        heated=("left", 0.0, 1.0),
    )


def elder(nx=64, ny=32):
    """2:1 box, hot central half of the bottom, cold top, insulated elsewhere."""
    return Scenario(
        "elder", nx, ny, 2.0, 1.0,
        dirichlet=(Segment("bottom", 0.5, 1.5, 1.0), Segment("top", 0.0, 2.0, 0.0)),
        heated=("bottom", 0.5, 1.5),
    )


def modified_elder(nx=64, ny=32):
    """Elder box with a centred rectangle (1/4 of each extent) using ``Ra2``."""
    base = elder(nx, ny)
    return replace(base, name="modified_elder", subdomain=(0.75, 1.25, 0.375, 0.625))


def make_scenario(name, nx, ny):
    return {"heated_side": heated_side, "elder": elder, "modified_elder": modified_elder}[name](nx, ny)


@dataclass(frozen=True)
class SolverParams:
    cfl: float = 0.5
    dt0: float = 1e-4
    dt_max: float = 5e-4
    bdf_order: int = 4
    t_end: float = 0.02
    poisson_tol: float = 1e-10
    temperature_tol: float = 1e-12
    max_iter: int = 20000

    def __post_init__(self):
        if not (0 < self.dt0 <= self.dt_max):
            raise ValueError("need 0 < dt0 <= dt_max")
        if self.cfl <= 0 or self.t_end <= 0:
            raise ValueError("cfl and t_end must be positive")
        if self.bdf_order not in BDF_TABLE:
            raise UnsupportedOrder(f"BDF order {self.bdf_order} not in 1..4")


@dataclass
class FieldState:
    T: np.ndarray
    p: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    t: float


@dataclass
class Trajectory:
    """One full-order run: parameters, timestamps, stacked fields.

    ``T`` has shape ``(n_snapshots, ny, nx)``; ``p``, ``ux``, ``uy`` are
    optional and stacked the same way.
    """

    mu: np.ndarray
    times: np.ndarray
    T: np.ndarray
    grid: Grid
    p: np.ndarray = None
    ux: np.ndarray = None
    uy: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n_snapshots(self):
        return len(self.times)

    def state(self, k):
        pick = lambda a: None if a is None else a[k]
        return FieldState(self.T[k], pick(self.p), pick(self.ux), pick(self.uy), float(self.times[k]))


# ---------------------------------------------------------------- formulas

def rayleigh_number(g, alpha, kappa, dT, H, K):
    """``Ra = g alpha kappa dT H / K``."""
    args = dict(g=g, alpha=alpha, kappa=kappa, dT=dT, H=H, K=K)
    bad = [k for k, v in args.items() if not v > 0]
    if bad:
        raise NonPositive(f"non-positive argument(s): {', '.join(bad)}")
    return g * alpha * kappa * dT * H / K


def adaptive_dt(u_max_norm, h_cell, cfl, dt_max):
    """CFL-limited step clamped at ``dt_max``; ``dt_max`` when the flow is at rest."""
    if u_max_norm == 0.0:
        return dt_max
    return min(cfl * h_cell / u_max_norm, dt_max)


def bdf_coefficients(m, dt):
    """Coefficients ``a_0..a_m`` with ``BDF_m(phi^n) = sum_i a_i phi^{n-i}``."""
    if m not in BDF_TABLE:
        raise UnsupportedOrder(f"BDF order {m} not in 1..4")
    if not dt > 0:
        raise NonPositive("dt must be positive")
    coeffs, denom = BDF_TABLE[m]
    return np.array([c / (denom * dt) for c in coeffs])


def bdf_coefficients_exact(m):
    """Rational coefficients times ``dt`` (used for exactness checks)."""
    coeffs, denom = BDF_TABLE[m]
    return [Fraction(c, denom) for c in coeffs]


# ---------------------------------------------------------------- pressure

def _neumann_neg_laplacian(grid):
    """Matrix-free ``-lap`` with zero-flux walls, plus its diagonal."""
    ny, nx = grid.shape
    ax, ay = 1.0 / grid.hx ** 2, 1.0 / grid.hy ** 2
    diag = np.zeros((ny, nx))
    diag[:, 1:] += ax
    diag[:, :-1] += ax
    diag[1:, :] += ay
    diag[:-1, :] += ay

    def apply(p):
        out = diag * p
        out[:, 1:] -= ax * p[:, :-1]
        out[:, :-1] -= ax * p[:, 1:]
        out[1:, :] -= ay * p[:-1, :]
        out[:-1, :] -= ay * p[1:, :]
        return out

    return apply, diag


def _remove_mean(a):
    return a - a.mean()


def solve_poisson(rhs, grid, tol=1e-10, x0=None, max_iter=20000):
    """Solve ``lap p = rhs`` with zero-flux walls; the result has zero mean.

    ``rhs`` must be compatible (zero sum); its mean is removed first.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != grid.shape:
        raise ShapeMismatch(f"rhs shape {rhs.shape} != grid {grid.shape}")
    apply, diag = _neumann_neg_laplacian(grid)
    p, _ = pcg(apply, -rhs, diag, x0=x0, rtol=tol, max_iter=max_iter, project=_remove_mean)
    return _remove_mean(p)


def _face_buoyancy(T, ra):
    """``Ra T`` averaged onto interior horizontal faces; wall faces are zero."""
    b = ra * T
    by = np.zeros((T.shape[0] + 1, T.shape[1]))
    by[1:-1, :] = 0.5 * (b[1:, :] + b[:-1, :])
    return by


def pressure_rhs(T, ra, grid):
    """Right-hand side of ``lap p = d(Ra T)/dy`` from the face buoyancy."""
    by = _face_buoyancy(T, ra)
    return (by[1:, :] - by[:-1, :]) / grid.hy


def _check_fields(T, ra, grid):
    T = np.asarray(T, dtype=np.float64)
    ra = np.broadcast_to(np.asarray(ra, dtype=np.float64), grid.shape)
    if T.shape != grid.shape:
        raise ShapeMismatch(f"T shape {T.shape} != grid {grid.shape}")
    if not np.all(np.isfinite(T)):
        raise ValueError("temperature field is not finite")
    return T, ra


def solve_pressure(T, ra, grid, tol=1e-10, x0=None, max_iter=20000):
    """Pressure such that the Darcy velocity is discretely divergence free."""
    T, ra = _check_fields(T, ra, grid)
    return solve_poisson(pressure_rhs(T, ra, grid), grid, tol=tol, x0=x0, max_iter=max_iter)


def compute_velocity(p, T, ra, grid):
    """Face velocities ``u = -grad p + y_hat Ra T`` with zero normal flow on walls."""
    T, ra = _check_fields(T, ra, grid)
    p = np.asarray(p, dtype=np.float64)
    if p.shape != grid.shape:
        raise ShapeMismatch(f"p shape {p.shape} != grid {grid.shape}")
    ny, nx = grid.shape
    ux = np.zeros((ny, nx + 1))
    ux[:, 1:-1] = -(p[:, 1:] - p[:, :-1]) / grid.hx
    uy = _face_buoyancy(T, ra)
    uy[1:-1, :] -= (p[1:, :] - p[:-1, :]) / grid.hy
    return ux, uy


def divergence(ux, uy, grid):
    return (ux[:, 1:] - ux[:, :-1]) / grid.hx + (uy[1:, :] - uy[:-1, :]) / grid.hy


def cell_velocity(ux, uy):
    """Face velocities averaged to cell centres, shape ``(2, ny, nx)``."""
    return np.stack([0.5 * (ux[:, 1:] + ux[:, :-1]), 0.5 * (uy[1:, :] + uy[:-1, :])])


def max_speed(ux, uy):
    return float(max(np.max(np.abs(ux)), np.max(np.abs(uy))))


# ------------------------------------------------------------- temperature

@dataclass
class TemperatureBC:
    """Face diffusion weights and Dirichlet data for the temperature stencil."""

    cx: np.ndarray  # (ny, nx + 1)
    cy: np.ndarray  # (ny + 1, nx)
    bx: np.ndarray  # boundary temperatures on vertical faces
    by: np.ndarray

    @classmethod
    def from_scenario(cls, scenario):
        g = scenario.grid
        ny, nx = g.shape
        ax, ay = 1.0 / g.hx ** 2, 1.0 / g.hy ** 2
        cx = np.zeros((ny, nx + 1))
        cy = np.zeros((ny + 1, nx))
        cx[:, 1:-1] = ax
        cy[1:-1, :] = ay
        bx = np.zeros_like(cx)
        by = np.zeros_like(cy)
        xc = (np.arange(nx) + 0.5) * g.hx
        yc = (np.arange(ny) + 0.5) * g.hy
        for seg in scenario.dirichlet:
            pos = xc if seg.side in ("bottom", "top") else yc
            hit = (pos >= seg.start) & (pos <= seg.end)
            if seg.side == "left":
                cx[hit, 0], bx[hit, 0] = 2 * ax, seg.value
            elif seg.side == "right":
                cx[hit, -1], bx[hit, -1] = 2 * ax, seg.value
            elif seg.side == "bottom":
                cy[0, hit], by[0, hit] = 2 * ay, seg.value
            else:
                cy[-1, hit], by[-1, hit] = 2 * ay, seg.value
        return cls(cx, cy, bx, by)

    def diag(self):
        return self.cx[:, 1:] + self.cx[:, :-1] + self.cy[1:, :] + self.cy[:-1, :]

    def boundary_source(self):
        """Contribution of the Dirichlet data to ``lap T``."""
        s = np.zeros((self.cx.shape[0], self.cy.shape[1]))
        s[:, 0] += self.cx[:, 0] * self.bx[:, 0]
        s[:, -1] += self.cx[:, -1] * self.bx[:, -1]
        s[0, :] += self.cy[0, :] * self.by[0, :]
        s[-1, :] += self.cy[-1, :] * self.by[-1, :]
        return s

    def neg_laplacian(self, T):
        """``-lap T`` for the interior stencil only (Dirichlet data excluded)."""
        out = self.diag() * T
        out[:, 1:] -= self.cx[:, 1:-1] * T[:, :-1]
        out[:, :-1] -= self.cx[:, 1:-1] * T[:, 1:]
        out[1:, :] -= self.cy[1:-1, :] * T[:-1, :]
        out[:-1, :] -= self.cy[1:-1, :] * T[1:, :]
        return out


def advance_temperature(history, ux, uy, dt, m, f_c, bc, grid, tol=1e-12, max_iter=20000):
    """One BDF step of the temperature equation.

    Parameters
    ----------
    history : sequence of (ny, nx) arrays
        Previous temperatures, oldest first; ``history[-1]`` is ``T^{n-1}``.
    ux, uy : face velocities used for the explicit upwind advection.
    dt : float
    m : int
        BDF order; needs ``len(history) >= m``.
    f_c : float or (ny, nx) array
        Source term.
    bc : TemperatureBC
    """
    if m not in BDF_TABLE:
        raise UnsupportedOrder(f"BDF order {m} not in 1..4")
    if len(history) < m:
        raise ValueError(f"BDF{m} needs {m} history states, got {len(history)}")
    a = bdf_coefficients(m, dt)
    prev = np.asarray(history[-1], dtype=np.float64)
    if prev.shape != grid.shape:
        raise ShapeMismatch(f"history field shape {prev.shape} != grid {grid.shape}")
    rhs = np.asarray(f_c, dtype=np.float64) + bc.boundary_source()
    for i in range(1, m + 1):
        rhs = rhs - a[i] * np.asarray(history[-i], dtype=np.float64)
    rhs = rhs - kernels.upwind_advection(
        np.ascontiguousarray(prev), np.ascontiguousarray(ux), np.ascontiguousarray(uy),
        grid.hx, grid.hy)
    a0 = a[0]
    diag = a0 + bc.diag()
    T, _ = pcg(lambda x: a0 * x + bc.neg_laplacian(x), rhs, diag, x0=prev,
               rtol=tol, max_iter=max_iter)
    return T


# -------------------------------------------------------------- time loop

def run_simulation(scenario, params, mu, keep_pressure=False, keep_velocity=False):
    """Integrate from ``T = initial_T`` to ``t_end`` and return the trajectory.

    The first step uses ``dt0``; later steps follow :func:`adaptive_dt` on the
    previous velocity, and the final step is shortened to land on ``t_end``.
    Orders ramp up ``1, 2, ..., bdf_order`` while history accumulates.
    """
    grid = scenario.grid
    ra = scenario.ra_field(mu)
    bc = TemperatureBC.from_scenario(scenario)
    T = np.full(grid.shape, float(scenario.initial_T))
    p = solve_pressure(T, ra, grid, tol=params.poisson_tol, max_iter=params.max_iter)
    ux, uy = compute_velocity(p, T, ra, grid)

    times = [0.0]
    Ts, ps, uxs, uys = [T], [p], [ux], [uy]
    history = [T]
    t = 0.0
    n = 0
    eps_t = 1e-12 * params.t_end
    while t < params.t_end - eps_t:
        n += 1
        if n == 1:
            dt = params.dt0
        else:
            dt = adaptive_dt(max_speed(ux, uy), grid.h, params.cfl, params.dt_max)
        last = t + dt > params.t_end - eps_t
        if last:
            dt = params.t_end - t
        order = min(params.bdf_order, len(history))
        try:
            T = advance_temperature(history[-order:], ux, uy, dt, order, scenario.f_c, bc, grid,
                                    tol=params.temperature_tol, max_iter=params.max_iter)
            p = solve_pressure(T, ra, grid, tol=params.poisson_tol, x0=p, max_iter=params.max_iter)
        except NoConvergence as exc:
            err = NoConvergence(f"step {n} (t={t:.6g}): {exc}")
            err.step = n
            raise err from exc
        ux, uy = compute_velocity(p, T, ra, grid)
        t = params.t_end if last else t + dt
        times.append(t)
        Ts.append(T)
        ps.append(p)
        uxs.append(ux)
        uys.append(uy)
        history = (history + [T])[-params.bdf_order:]

    stack = lambda xs, keep: np.stack(xs) if keep else None
    return Trajectory(
        mu=np.atleast_1d(np.asarray(mu, dtype=np.float64)).copy(),
        times=np.array(times),
        T=np.stack(Ts),
        grid=grid,
        p=stack(ps, keep_pressure),
        ux=stack(uxs, keep_velocity),
        uy=stack(uys, keep_velocity),
        meta={"scenario": scenario.name, "bdf_order": params.bdf_order},
    )
