"""
Scalar conservation law u_t + G(u)_x = 0 with G(u) = 2u(1-u)(2u-1)
Exact Riemann entropy solutions, admissibility checks and a Godunov solver
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import CflError
from .lattice import DensityProfile

SQRT3 = math.sqrt(3.0)
CRITICAL_POINTS = (0.5 - 1.0 / (2.0 * SQRT3), 0.5 + 1.0 / (2.0 * SQRT3))
MAX_SPEED = 2.0
OLEINIK_TOL = 1e-12


# ============================================
# Flux
# ============================================

def flux_eval(u):
    """G(u) = 2u(1-u)(2u-1)"""
    u = np.asarray(u, dtype=np.float64)
    return 2.0 * u * (1.0 - u) * (2.0 * u - 1.0)


def speed_eval(u):
    """H(u) = G'(u) = 1 - 12(u - 1/2)^2"""
    u = np.asarray(u, dtype=np.float64)
    return 1.0 - 12.0 * (u - 0.5) ** 2


def speed_inverse_lower(v):
    """Branch of H^{-1} with values in [0, 1/2]"""
    v = np.asarray(v, dtype=np.float64)
    return 0.5 - np.sqrt(np.maximum(1.0 - v, 0.0) / 12.0)


def speed_inverse_upper(v):
    """Branch of H^{-1} with values in [1/2, 1]"""
    v = np.asarray(v, dtype=np.float64)
    return 0.5 + np.sqrt(np.maximum(1.0 - v, 0.0) / 12.0)


def tangency(u: float) -> float:
    """Point a != u where the chord from (u, G(u)) touches the graph: a = 3/4 - u/2"""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    if u == 0.5:
        raise ValueError("tangency degenerates at the inflection point u = 1/2")
    return 0.75 - 0.5 * u


def rh_speed(u_minus: float, u_plus: float) -> float:
    """Rankine-Hugoniot speed (G(u-) - G(u+)) / (u- - u+)"""
    if u_minus == u_plus:
        raise ValueError("Rankine-Hugoniot speed needs distinct states")
    return float((flux_eval(u_minus) - flux_eval(u_plus)) / (u_minus - u_plus))


def oleinik_check(u_minus: float, u_plus: float, tol: float = OLEINIK_TOL) -> bool:
    """Chord below the graph for upward jumps, above it for downward jumps

    chord - G is a cubic vanishing at both states, so its sign on the open
    interval is decided at its interior critical points.
    """
    if u_minus == u_plus:
        raise ValueError("admissibility needs distinct states")
    s = rh_speed(u_minus, u_plus)
    lo, hi = min(u_minus, u_plus), max(u_minus, u_plus)
    candidates = [lo + 0.5 * (hi - lo)]
    if s <= 1.0:
        r = math.sqrt((1.0 - s) / 12.0)
        candidates += [c for c in (0.5 - r, 0.5 + r) if lo < c < hi]
    g_minus = float(flux_eval(u_minus))
    for c in candidates:
        gap = g_minus + s * (c - u_minus) - float(flux_eval(c))
        if u_minus < u_plus and gap > tol:
            return False
        if u_minus > u_plus and gap < -tol:
            return False
    return True


# ============================================
# Riemann problem
# ============================================

class PieceKind(str, Enum):
    CONSTANT = "constant"
    FAN_LOWER = "fan-lower"
    FAN_UPPER = "fan-upper"


@dataclass(frozen=True)
class Piece:
    """One self-similar piece on the v-interval (lo, hi]"""

    kind: PieceKind
    lo: float
    hi: float
    value: Optional[float] = None

    def evaluate(self, v):
        if self.kind == PieceKind.CONSTANT:
            return np.full_like(np.asarray(v, dtype=np.float64), self.value)
        if self.kind == PieceKind.FAN_LOWER:
            return speed_inverse_lower(v)
        return speed_inverse_upper(v)

    def flipped(self) -> "Piece":
        if self.kind == PieceKind.CONSTANT:
            return Piece(PieceKind.CONSTANT, self.lo, self.hi, 1.0 - self.value)
        kind = PieceKind.FAN_UPPER if self.kind == PieceKind.FAN_LOWER else PieceKind.FAN_LOWER
        return Piece(kind, self.lo, self.hi)


@dataclass(frozen=True)
class RiemannSolution:
    """Entropy solution of the Riemann problem as a function of v = x/t"""

    lam: float
    rho: float
    pieces: Tuple[Piece, ...]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.array([p.hi for p in self.pieces[:-1]])

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, v, side="left")
        out = np.empty_like(v)
        for k, piece in enumerate(self.pieces):
            mask = idx == k
            if np.any(mask):
                out[mask] = piece.evaluate(v[mask])
        return out

    def at(self, x, t: float):
        """u(x, t); t = 0 gives the initial step"""
        x = np.asarray(x, dtype=np.float64)
        if t <= 0:
            return np.where(x < 0, self.lam, self.rho)
        return self(x / t)

    def jumps(self) -> List[Tuple[float, float, float]]:
        """(speed, left state, right state) for each discontinuity"""
        out = []
        for left, right in zip(self.pieces, self.pieces[1:]):
            v = left.hi
            ul = float(left.evaluate(v))
            ur = float(right.evaluate(v))
            if abs(ul - ur) > 1e-12:
                out.append((v, ul, ur))
        return out

    def flipped(self) -> "RiemannSolution":
        return RiemannSolution(1.0 - self.lam, 1.0 - self.rho, tuple(p.flipped() for p in self.pieces))


def _solve_low_right(lam: float, rho: float) -> Tuple[Piece, ...]:
    """Cases for rho <= 1/2"""
    inf = math.inf
    if lam == rho:
        return (Piece(PieceKind.CONSTANT, -inf, inf, lam),)
    if lam < rho:
        a, b = float(speed_eval(lam)), float(speed_eval(rho))
        return (
            Piece(PieceKind.CONSTANT, -inf, a, lam),
            Piece(PieceKind.FAN_LOWER, a, b),
            Piece(PieceKind.CONSTANT, b, inf, rho),
        )
    rho_star = 0.75 - 0.5 * rho
    if lam <= rho_star:
        s = rh_speed(lam, rho)
        return (Piece(PieceKind.CONSTANT, -inf, s, lam), Piece(PieceKind.CONSTANT, s, inf, rho))
    a, b = float(speed_eval(lam)), float(speed_eval(rho_star))
    return (
        Piece(PieceKind.CONSTANT, -inf, a, lam),
        Piece(PieceKind.FAN_UPPER, a, b),
        Piece(PieceKind.CONSTANT, b, inf, rho),
    )


def riemann_solve(lam: float, rho: float) -> RiemannSolution:
    """Entropy solution for left state lam and right state rho

    rho > 1/2 is solved through the hole problem (1 - lam, 1 - rho), using
    G(1 - u) = -G(u).
    """
    if not (0.0 <= lam <= 1.0 and 0.0 <= rho <= 1.0):
        raise ValueError(f"Riemann data must lie in [0, 1], got ({lam}, {rho})")
    if rho <= 0.5:
        return RiemannSolution(lam, rho, _solve_low_right(lam, rho))
    return RiemannSolution(1.0 - lam, 1.0 - rho, _solve_low_right(1.0 - lam, 1.0 - rho)).flipped()


def riemann_variational(lam: float, rho: float, v):
    """argmin of G(s) - v s over [lam, rho] if lam <= rho, argmax over [rho, lam] otherwise

    The derivative H(s) - v is quadratic, so the extremum sits at an endpoint
    or at one of the two roots of H(s) = v.
    """
    v = np.asarray(v, dtype=np.float64)
    lo, hi = min(lam, rho), max(lam, rho)
    r = np.sqrt(np.maximum(1.0 - v, 0.0) / 12.0)
    candidates = np.stack(np.broadcast_arrays(np.float64(lo), np.float64(hi), 0.5 - r, 0.5 + r))
    usable = (candidates > lo) & (candidates < hi) & (v <= 1.0)
    usable[:2] = True
    values = flux_eval(candidates) - v * candidates
    if lam <= rho:
        k = np.argmin(np.where(usable, values, np.inf), axis=0)
    else:
        k = np.argmax(np.where(usable, values, -np.inf), axis=0)
    out = np.take_along_axis(candidates, k[np.newaxis], axis=0)[0]
    return float(out) if out.ndim == 0 else out


# ============================================
# Godunov scheme
# ============================================

def godunov_flux(a, b):
    """min of G over [a, b] if a <= b, max over [b, a] otherwise"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ga, gb = flux_eval(a), flux_eval(b)
    rising = a <= b
    best = np.where(rising, np.minimum(ga, gb), np.maximum(ga, gb))
    for c in CRITICAL_POINTS:
        inside = (lo < c) & (c < hi)
        gc = float(flux_eval(c))
        best = np.where(inside & rising, np.minimum(best, gc), best)
        best = np.where(inside & ~rising, np.maximum(best, gc), best)
    return best


@dataclass
class Grid1D:
    """Cell averages on [-half_width, half_width]"""

    half_width: float
    dx: float
    values: np.ndarray
    cfl: float = 0.4
    left_ghost: float = 0.0
    right_ghost: float = 0.0
    time: float = 0.0

    @classmethod
    def from_profile(cls, u0: DensityProfile, half_width: float, dx: float, cfl: float = 0.4) -> "Grid1D":
        n_cells = int(round(2.0 * half_width / dx))
        dx = 2.0 * half_width / n_cells
        edges = -half_width + dx * np.arange(n_cells + 1)
        left, right = u0.edge_values
        return cls(
            half_width=half_width,
            dx=dx,
            values=u0.cell_averages(edges),
            cfl=cfl,
            left_ghost=left,
            right_ghost=right,
        )

    @property
    def n_cells(self) -> int:
        return int(self.values.size)

    @property
    def centers(self) -> np.ndarray:
        return -self.half_width + self.dx * (np.arange(self.n_cells) + 0.5)

    @property
    def edges(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.n_cells + 1)

    @property
    def dt(self) -> float:
        return self.cfl * self.dx / MAX_SPEED

    def mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def sample(self, x) -> np.ndarray:
        """Piecewise-constant reconstruction at points x"""
        idx = np.clip(np.floor((np.asarray(x) + self.half_width) / self.dx).astype(np.int64), 0, self.n_cells - 1)
        return self.values[idx]

    def copy(self) -> "Grid1D":
        return Grid1D(self.half_width, self.dx, self.values.copy(), self.cfl,
                      self.left_ghost, self.right_ghost, self.time)


@dataclass
class GodunovResult:
    grid: Grid1D
    snapshots: List[Grid1D] = field(default_factory=list)
    boundary_flux: float = 0.0
    initial_mass: float = 0.0
    steps: int = 0

    @property
    def mass_defect(self) -> float:
        """Final mass minus initial mass minus net boundary inflow"""
        return self.grid.mass() - self.initial_mass - self.boundary_flux


def godunov_step(grid: Grid1D, dt: float) -> float:
    """Advance in place; returns the net inflow through both ends times dt"""
    ext = np.concatenate(([grid.left_ghost], grid.values, [grid.right_ghost]))
    F = godunov_flux(ext[:-1], ext[1:])
    grid.values = grid.values - (dt / grid.dx) * (F[1:] - F[:-1])
    grid.time += dt
    return dt * float(F[0] - F[-1])


def godunov_evolve(
    grid: Grid1D,
    t_end: float,
    snapshot_times: Sequence[float] = (),
) -> GodunovResult:
    """First-order monotone finite-volume evolution to t_end"""
    if grid.cfl > 0.5:
        raise CflError(f"CFL number {grid.cfl} exceeds 0.5")
    grid = grid.copy()
    result = GodunovResult(grid=grid, initial_mass=grid.mass())
    pending = sorted(t for t in snapshot_times if grid.time <= t <= t_end)
    dt_max = grid.dt
    while grid.time < t_end - 1e-15:
        target = min(t_end, pending[0]) if pending else t_end
        dt = min(dt_max, target - grid.time)
        result.boundary_flux += godunov_step(grid, dt)
        result.steps += 1
        while pending and grid.time >= pending[0] - 1e-15:
            result.snapshots.append(grid.copy())
            pending.pop(0)
    while pending:
        result.snapshots.append(grid.copy())
        pending.pop(0)
    logger.debug(f"Godunov: {result.steps} steps on {grid.n_cells} cells to t={t_end}")
    return result


def godunov_from_profile(u0: DensityProfile, half_width: float, dx: float, t_end: float,
                         cfl: float = 0.4, snapshot_times: Sequence[float] = ()) -> GodunovResult:
    return godunov_evolve(Grid1D.from_profile(u0, half_width, dx, cfl), t_end, snapshot_times)


def l1_error(values: np.ndarray, reference: np.ndarray, dx: float) -> float:
    return float(np.sum(np.abs(np.asarray(values) - np.asarray(reference))) * dx)


def level_crossing(x: np.ndarray, u: np.ndarray, level: float, lo: float = -math.inf,
                   hi: float = math.inf) -> Optional[float]:
    """Linearly interpolated position where u crosses `level` inside [lo, hi]

    With several crossings the one across the steepest cell pair wins.
    """
    mask = (x >= lo) & (x <= hi)
    xs, us = x[mask], u[mask] - level
    if xs.size < 2:
        return None
    cross = np.flatnonzero(np.sign(us[:-1]) * np.sign(us[1:]) < 0)
    if not cross.size:
        return None
    i = cross[np.argmax(np.abs(us[cross] - us[cross + 1]))]
    frac = us[i] / (us[i] - us[i + 1])
    return float(xs[i] + frac * (xs[i + 1] - xs[i]))
