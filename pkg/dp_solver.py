"""
Backward dynamic programming on the LLR state.

solve_dp computes per-stage gap amplitudes v_k(l) minimising
    E[terminal_cost(l_{N+1})] + λ Σ_k E[p0 p1 v_k²]
on a uniform symmetric grid. The expectation over the channel noise is taken in
closed form for the piecewise-linear cost-to-go (Gauss-Hermite is kept as an
option); forward_propagate pushes the two conditional
densities of l through a policy to get the exact error probability and energy;
calibrate_lambda bisects λ until the energy budget S is met with equality.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.signal import fftconvolve
from scipy.special import ndtr

from belief import ArrayLike, _out, posterior, terminal_cost
from config import config
from errors import CalibrationError, NumericalError

# interpolation weights this close to a node snap onto it
NODE_SNAP = 1e-9
# elements per vectorised block (states x cells or states x quadrature nodes)
SCAN_BLOCK = 1_000_000
MASS_TOLERANCE = 1e-6
INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------- Config & grid ----------
class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    N: int = Field(ge=1, description="delay constraint (channel uses)")
    S: float = Field(gt=0, description="expected energy budget, unit noise variance")
    l_max: float = Field(default_factory=lambda: config["FBDP_L_MAX"], gt=0)
    grid_points: int = Field(default_factory=lambda: config["FBDP_GRID_POINTS"], ge=3)
    quad_order: int = Field(default_factory=lambda: config["FBDP_QUAD_ORDER"], ge=2)
    expectation: Literal["exact", "gauss_hermite"] = Field(default_factory=lambda: config["FBDP_EXPECTATION"])
    v_max: Optional[float] = Field(default_factory=lambda: config["FBDP_V_MAX"], gt=0)
    v_steps: int = Field(default_factory=lambda: config["FBDP_V_STEPS"], ge=3)
    v_tol: float = Field(default_factory=lambda: config["FBDP_V_TOL"], gt=0)
    lambda_tol: float = Field(default_factory=lambda: config["FBDP_LAMBDA_TOL"], gt=0)
    lambda_lo: float = Field(default_factory=lambda: config["FBDP_LAMBDA_LO"], gt=0)
    lambda_hi: float = Field(default_factory=lambda: config["FBDP_LAMBDA_HI"], gt=0)
    density_floor: float = Field(default_factory=lambda: config["FBDP_DENSITY_FLOOR"], ge=0)
    v_eps: float = Field(default_factory=lambda: config["FBDP_V_EPS"], gt=0)
    max_bracket_steps: int = Field(default=12, ge=0)
    max_bisections: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.grid_points % 2 == 0:
            raise ValueError(f"grid_points must be odd, got {self.grid_points}")
        if self.lambda_lo >= self.lambda_hi:
            raise ValueError(f"lambda_lo ({self.lambda_lo}) must be below lambda_hi ({self.lambda_hi})")
        return self

    @property
    def v_search_max(self) -> float:
        return self.v_max if self.v_max is not None else 6.0 * (1.0 + math.sqrt(self.S))

    @property
    def grid(self) -> "Grid":
        return make_grid(self)


class Grid(BaseModel):
    model_config = ConfigDict(frozen=True)

    l_min: float
    l_max: float = Field(gt=0)
    points: int = Field(ge=3)
    spacing: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_symmetric(self):
        if self.points % 2 == 0:
            raise ValueError(f"grid needs an odd number of points, got {self.points}")
        if self.l_min != -self.l_max:
            raise ValueError("grid must be symmetric about 0")
        return self

    @property
    def half(self) -> int:
        return (self.points - 1) // 2

    @property
    def center(self) -> int:
        return self.half

    @property
    def nodes(self) -> np.ndarray:
        # integer multiples of the spacing: exactly symmetric, exact 0 at the centre
        return np.arange(-self.half, self.half + 1, dtype=float) * self.spacing


def make_grid(cfg: SolverConfig) -> Grid:
    if cfg.grid_points < 3 or cfg.grid_points % 2 == 0:
        raise ValueError(f"grid_points must be odd and >= 3, got {cfg.grid_points}")
    half = (cfg.grid_points - 1) // 2
    return Grid(l_min=-cfg.l_max, l_max=cfg.l_max, points=cfg.grid_points, spacing=cfg.l_max / half)


@dataclass(frozen=True)
class Quadrature:
    nodes: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=16)
def gauss_hermite_quadrature(order: int) -> Quadrature:
    """Nodes/weights for E[f(z)], z ~ N(0,1)."""
    if order < 2:
        raise ValueError(f"quadrature order must be >= 2, got {order}")
    x, w = hermgauss(order)
    nodes = x * math.sqrt(2.0)
    weights = w / math.sqrt(math.pi)
    weights = weights / weights.sum()
    # hermgauss nodes come in ± pairs up to rounding; force exact symmetry
    nodes = 0.5 * (nodes - nodes[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return Quadrature(nodes=nodes, weights=weights)


# ---------- Tables ----------
@dataclass(frozen=True)
class ValueTable:
    stage: int
    values: np.ndarray


@dataclass(frozen=True)
class PolicyTable:
    """Gap amplitudes v_k(l) >= 0 sampled on the grid, one row per stage."""

    N: int
    grid: Grid
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=float)
        if amps.shape != (self.N, self.grid.points):
            raise ValueError(f"policy shape {amps.shape} does not match N={self.N}, points={self.grid.points}")
        if np.any(amps < 0) or not np.all(np.isfinite(amps)):
            raise ValueError("policy amplitudes must be finite and non-negative")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def stage(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.N:
            raise ValueError(f"stage {k} outside 1..{self.N}")
        return self.amplitudes[k - 1]

    def lookup(self, k: int, l: ArrayLike) -> ArrayLike:
        return interp_eval(self.stage(k), self.grid, l)

    @classmethod
    def silent(cls, N: int, grid: Grid) -> "PolicyTable":
        return cls(N=N, grid=grid, amplitudes=np.zeros((N, grid.points)))


@dataclass(frozen=True)
class CalibratedSolution:
    lam: float
    policy: PolicyTable
    values: List[ValueTable]
    achieved_energy: float
    error_probability: float
    config: SolverConfig
    probes: int = 0


class ForwardResult(NamedTuple):
    error_probability: float
    expected_energy: float
    densities: Tuple[np.ndarray, np.ndarray]
    stage_energy: List[float]


# ---------- Interpolation & Bellman expectation ----------
def interp_eval(table, grid: Grid, l: ArrayLike) -> ArrayLike:
    """Piecewise-linear interpolation on the grid, saturating outside [l_min, l_max]."""
    values = np.asarray(getattr(table, "values", table), dtype=float)
    x = (np.asarray(l, dtype=float) - grid.l_min) / grid.spacing
    x = np.clip(x, 0.0, grid.points - 1)
    i = np.minimum(np.floor(x).astype(np.intp), grid.points - 2)
    t = x - i
    t = np.where(t < NODE_SNAP, 0.0, np.where(t > 1.0 - NODE_SNAP, 1.0, t))
    return _out((1.0 - t) * values[i] + t * values[i + 1])


def _phi(x: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * x * x) / SQRT_2PI


def _cell_integrals(a: np.ndarray, offset: np.ndarray, sigma) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell Gaussian mass and first moment for standardized node positions a (last axis)."""
    lower = ndtr(a)
    upper = ndtr(-a)
    dens = _phi(a)
    # use whichever tail keeps precision for each cell
    mass = np.where(a[..., :-1] >= 0, upper[..., :-1] - upper[..., 1:], lower[..., 1:] - lower[..., :-1])
    moment = offset * mass + sigma * (dens[..., :-1] - dens[..., 1:])
    return mass, moment, lower, upper


def _exact_expectation(values: np.ndarray, grid: Grid, mu, sigma) -> np.ndarray:
    """E[J(mu + sigma z)] for the saturating piecewise-linear interpolant of J, in closed form."""
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    shape = mu.shape
    mu = mu.ravel()
    sigma = np.maximum(sigma.ravel(), np.finfo(float).tiny)
    nodes = grid.nodes
    slopes = np.diff(values) / grid.spacing
    out = np.empty(mu.size)
    rows = max(1, SCAN_BLOCK // nodes.size)
    for start in range(0, mu.size, rows):
        m = mu[start:start + rows, None]
        s = sigma[start:start + rows, None]
        mass, moment, lower, upper = _cell_integrals((nodes[None, :] - m) / s, m - nodes[None, :-1], s)
        inner = mass @ values[:-1] + moment @ slopes
        out[start:start + rows] = values[0] * lower[:, 0] + values[-1] * upper[:, -1] + inner
    return out.reshape(shape)


def _scan_nodes(values: np.ndarray, grid: Grid, v: np.ndarray, sign: float) -> np.ndarray:
    """Exact E[J(x_j ± v²/2 + v z)] at every node x_j for each v > 0, shape (len(v), points).

    The Gaussian sits at a fixed offset from every node, so each row is a
    correlation of the cell coefficients with one kernel.
    """
    P, h = grid.points, grid.spacing
    slopes = np.diff(values) / h
    offsets = np.arange(-(P - 1), P) * h  # node i minus node j
    out = np.empty((v.size, P))
    rows = max(1, SCAN_BLOCK // (2 * P))
    for start in range(0, v.size, rows):
        vc = v[start:start + rows, None]
        drift = sign * 0.5 * vc * vc
        mass, moment, lower, upper = _cell_integrals((offsets[None, :] - drift) / vc, drift - offsets[None, :-1], vc)
        full = (fftconvolve(values[-2::-1][None, :], mass, axes=1)
                + fftconvolve(slopes[::-1][None, :], moment, axes=1))
        inner = full[:, P - 2:2 * P - 2][:, ::-1]
        tails = values[0] * lower[:, P - 1::-1] + values[-1] * upper[:, :P - 2:-1]
        out[start:start + rows] = inner + tails
    return out


def _quadrature_expectation(values: np.ndarray, grid: Grid, quad: Quadrature, mu, sigma) -> np.ndarray:
    mu, sigma = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float))
    shape = mu.shape
    mu, sigma = mu.ravel(), sigma.ravel()
    out = np.empty(mu.size)
    rows = max(1, SCAN_BLOCK // quad.nodes.size)
    for start in range(0, mu.size, rows):
        pts = mu[start:start + rows, None] + sigma[start:start + rows, None] * quad.nodes
        out[start:start + rows] = interp_eval(values, grid, pts) @ quad.weights
    return out.reshape(shape)


def _expected_cost(values: np.ndarray, grid: Grid, quad: Optional[Quadrature], l, v, lam: float) -> np.ndarray:
    """Stage cost plus cost-to-go; exact for the interpolant unless a quadrature is given."""
    l, v = np.broadcast_arrays(np.asarray(l, dtype=float), np.asarray(v, dtype=float))
    p0, p1 = posterior(l)
    drift = 0.5 * v * v
    if quad is None:
        j1 = _exact_expectation(values, grid, l + drift, v)
        j0 = _exact_expectation(values, grid, l - drift, v)
    else:
        j1 = _quadrature_expectation(values, grid, quad, l + drift, v)
        j0 = _quadrature_expectation(values, grid, quad, l - drift, v)
    return lam * p0 * p1 * v * v + p1 * j1 + p0 * j0


def q_value(J_next, grid: Grid, quad: Optional[Quadrature], l: float, v: float, lam: float) -> float:
    """Stage cost plus expected cost-to-go of playing amplitude v in state l.

    With quad=None the expectation over the channel noise is taken exactly for
    the piecewise-linear J_next; otherwise the Gauss-Hermite rule is used.
    """
    if v < 0:
        raise ValueError(f"amplitude must be non-negative, got {v}")
    values = np.asarray(getattr(J_next, "values", J_next), dtype=float)
    if v == 0:
        return float(interp_eval(values, grid, l))
    return float(_expected_cost(values, grid, quad, l, v, lam))


def _scan(values, grid, quad, l, v_scan, lam) -> np.ndarray:
    """q over the v candidates, one row per state; column 0 is the exact v = 0 value."""
    on_nodes = quad is None and l.shape == (grid.points,) and np.array_equal(l, grid.nodes)
    if on_nodes:
        v = v_scan[1:]
        p0, p1 = posterior(l)
        q = (lam * (p0 * p1)[:, None] * v[None, :] ** 2
             + p1[:, None] * _scan_nodes(values, grid, v, +1.0).T
             + p0[:, None] * _scan_nodes(values, grid, v, -1.0).T)
    else:
        q = _expected_cost(values, grid, quad, l[:, None], v_scan[None, 1:], lam)
    return np.concatenate((interp_eval(values, grid, l)[:, None], q), axis=1)


def _golden_on_cubic(q: np.ndarray, v_scan: np.ndarray, j: np.ndarray, n_iter: int) -> np.ndarray:
    """Golden-section search over [v_{j-1}, v_{j+1}] on the cubic through four scan samples."""
    steps = v_scan.size - 1
    dv = v_scan[1] - v_scan[0]
    base = np.clip(j - 1, 0, steps - 3)
    y = np.take_along_axis(q, base[:, None] + np.arange(4), axis=1)
    d1 = y[:, 1] - y[:, 0]
    d2 = y[:, 2] - 2.0 * y[:, 1] + y[:, 0]
    d3 = y[:, 3] - 3.0 * y[:, 2] + 3.0 * y[:, 1] - y[:, 0]

    def cubic(t):
        return y[:, 0] + t * (d1 + (t - 1.0) * (0.5 * d2 + (t - 2.0) * d3 / 6.0))

    # bracket in units of scan steps from v_scan[base]
    a = (np.maximum(j - 1, 0) - base).astype(float)
    b = (np.minimum(j + 1, steps) - base).astype(float)
    c = b - INV_GOLDEN * (b - a)
    d = a + INV_GOLDEN * (b - a)
    fc, fd = cubic(c), cubic(d)
    for _ in range(n_iter):
        left = fc <= fd  # ties keep the smaller amplitude
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - INV_GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + INV_GOLDEN * (b - a))
        x = cubic(np.where(left, new_c, new_d))
        fc, fd = np.where(left, x, fd), np.where(left, fc, x)
        c, d = new_c, new_d
    t = np.where(fc <= fd, c, d)
    return v_scan[base] + t * dv


def inner_minimize(J_next, grid: Grid, quad: Optional[Quadrature], l: ArrayLike, lam: float,
                   cfg: SolverConfig) -> Tuple[ArrayLike, ArrayLike]:
    """Coarse scan of v over [0, v_max] then golden-section refinement around the best cell.

    The refined amplitude is kept only when its directly evaluated q beats the
    best scan value; v = 0 wins every tie.
    """
    values = np.asarray(getattr(J_next, "values", J_next), dtype=float)
    scalar = np.ndim(l) == 0
    l_all = np.atleast_1d(np.asarray(l, dtype=float))
    v_max = cfg.v_search_max
    v_scan = np.linspace(0.0, v_max, cfg.v_steps + 1)
    n_iter = max(1, math.ceil(math.log(2.0 * v_max / cfg.v_steps / cfg.v_tol) / math.log(1.0 / INV_GOLDEN)))

    q = _scan(values, grid, quad, l_all, v_scan, lam)
    j = np.argmin(q, axis=1)
    rows = np.arange(l_all.size)
    coarse = q[rows, j]
    v_star = v_scan[j]
    best = coarse.copy()

    v_ref = _golden_on_cubic(q, v_scan, j, n_iter)
    cand = np.flatnonzero(v_ref > 0)
    if cand.size:
        fr = _expected_cost(values, grid, quad, l_all[cand], v_ref[cand], lam)
        better = fr < coarse[cand]
        v_star[cand[better]] = v_ref[cand[better]]
        best[cand[better]] = fr[better]

    silent = q[:, 0] <= best
    v_star = np.where(silent, 0.0, v_star)
    best = np.where(silent, q[:, 0], best)
    if scalar:
        return float(v_star[0]), float(best[0])
    return v_star, best


def bellman_backup(J_next: ValueTable, k: int, lam: float, cfg: SolverConfig,
                   grid: Optional[Grid] = None, quad: Optional[Quadrature] = None) -> Tuple[ValueTable, np.ndarray]:
    grid = grid or make_grid(cfg)
    if quad is None and cfg.expectation == "gauss_hermite":
        quad = gauss_hermite_quadrature(cfg.quad_order)
    v_star, best = inner_minimize(J_next, grid, quad, grid.nodes, lam, cfg)
    return ValueTable(stage=k, values=best), v_star


def solve_dp(lam: float, cfg: SolverConfig) -> Tuple[PolicyTable, List[ValueTable]]:
    """Backward recursion J_{N+1} = terminal_cost, J_k = min_v q_value; returns policy and J_1..J_{N+1}."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    grid = make_grid(cfg)
    quad = gauss_hermite_quadrature(cfg.quad_order) if cfg.expectation == "gauss_hermite" else None
    tables = [ValueTable(stage=cfg.N + 1, values=terminal_cost(grid.nodes))]
    amplitudes = np.zeros((cfg.N, grid.points))
    for k in range(cfg.N, 0, -1):
        table, v_star = bellman_backup(tables[0], k, lam, cfg, grid, quad)
        tables.insert(0, table)
        amplitudes[k - 1] = v_star
    return PolicyTable(N=cfg.N, grid=grid, amplitudes=amplitudes), tables


# ---------- Density propagation ----------
def _cell_edges(grid: Grid) -> np.ndarray:
    nodes = grid.nodes
    return np.concatenate(([-np.inf], 0.5 * (nodes[:-1] + nodes[1:]), [np.inf]))


def _spread(mass: np.ndarray, grid: Grid, v: np.ndarray, sign: float, cfg: SolverConfig) -> np.ndarray:
    """One stage of l -> l ± v²/2 + v z, lumping each Gaussian onto grid cells."""
    active = (v >= cfg.v_eps) & (mass > cfg.density_floor)
    out = np.where(active, 0.0, mass)
    if not np.any(active):
        return out
    nodes = grid.nodes
    edges = _cell_edges(grid)
    src = np.flatnonzero(active)
    rows = max(1, SCAN_BLOCK // edges.size)
    # sources in index order so the reduction order is fixed
    for start in range(0, src.size, rows):
        idx = src[start:start + rows]
        mu = nodes[idx] + sign * 0.5 * v[idx] ** 2
        z = (edges[None, :] - mu[:, None]) / v[idx][:, None]
        lower = ndtr(z)
        upper = ndtr(-z)
        # use whichever tail keeps precision for each cell
        right_of_mean = (nodes[None, :] - mu[:, None]) > 0
        cells = np.where(right_of_mean, upper[:, :-1] - upper[:, 1:], lower[:, 1:] - lower[:, :-1])
        out = out + mass[idx] @ cells
    return out


def _checked(mass: np.ndarray, k: int, label: str) -> np.ndarray:
    total = math.fsum(mass)
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise NumericalError(f"stage {k}: density of l given m={label} has mass {total:.12f}")
    return mass / total


def forward_propagate(policy: PolicyTable, cfg: SolverConfig) -> ForwardResult:
    """Exact (grid-lumped) error probability and expected energy of a policy."""
    grid = policy.grid
    nodes = grid.nodes
    p0, p1 = posterior(nodes)
    weight = p0 * p1
    f1 = np.zeros(grid.points)
    f0 = np.zeros(grid.points)
    f1[grid.center] = 1.0
    f0[grid.center] = 1.0

    stage_energy = []
    for k in range(1, policy.N + 1):
        v = policy.stage(k)
        stage_energy.append(math.fsum(weight * v * v * 0.5 * (f1 + f0)))
        f1 = _checked(_spread(f1, grid, v, +1.0, cfg), k, "1")
        f0 = _checked(_spread(f0, grid, v, -1.0, cfg), k, "0")

    # node 0 decodes as m = 0, so it is an error for m = 1 only
    err1 = math.fsum(f1[nodes <= 0])
    err0 = math.fsum(f0[nodes > 0])
    return ForwardResult(
        error_probability=0.5 * err1 + 0.5 * err0,
        expected_energy=math.fsum(stage_energy),
        densities=(f1, f0),
        stage_energy=stage_energy,
    )


# ---------- λ calibration ----------
class _Probe(NamedTuple):
    lam: float
    policy: PolicyTable
    values: List[ValueTable]
    fwd: ForwardResult

    @property
    def energy(self) -> float:
        return self.fwd.expected_energy


def calibrate_lambda(S: float, cfg: SolverConfig, verbose: bool = False) -> CalibratedSolution:
    """Bisect log λ until the policy's expected energy meets S within lambda_tol."""
    if S <= 0:
        raise ValueError(f"energy budget must be positive, got {S}")
    cfg = cfg.model_copy(update={"S": S})
    tol = cfg.lambda_tol
    probes = 0
    print(f"🔄 Calibrating λ for N={cfg.N}, S={S:g} (grid {cfg.grid_points}, v_max {cfg.v_search_max:.3g})")

    def probe(lam: float) -> _Probe:
        nonlocal probes
        probes += 1
        policy, values = solve_dp(lam, cfg)
        fwd = forward_propagate(policy, cfg)
        if verbose:
            print(f"   λ={lam:.6g} -> energy={fwd.expected_energy:.6g}, BER={fwd.error_probability:.6g}")
        return _Probe(lam, policy, values, fwd)

    def met(p: _Probe) -> bool:
        return abs(p.energy - S) / S <= tol

    def done(p: _Probe) -> CalibratedSolution:
        print(f"✅ λ={p.lam:.6g}: BER={p.fwd.error_probability:.6g}, energy={p.energy:.6g} ({probes} probes)")
        return CalibratedSolution(lam=p.lam, policy=p.policy, values=p.values,
                                  achieved_energy=p.energy,
                                  error_probability=p.fwd.error_probability,
                                  config=cfg, probes=probes)

    # λ_lo must overspend the budget; halve it until it does
    lo = probe(cfg.lambda_lo)
    steps = 0
    while lo.energy <= S and not met(lo):
        if steps == cfg.max_bracket_steps:
            raise CalibrationError(
                f"energy {lo.energy:.6g} at λ={lo.lam:.3g} stays below S={S:g}; "
                f"increase v_max ({cfg.v_search_max:.3g}) or l_max ({cfg.l_max:g})")
        lo = probe(lo.lam / 2.0)
        steps += 1
    if met(lo):
        return done(lo)

    # λ_hi must underspend it; double until it does
    hi = probe(cfg.lambda_hi)
    steps = 0
    while hi.energy >= S and not met(hi):
        if steps == cfg.max_bracket_steps:
            raise CalibrationError(f"energy {hi.energy:.6g} at λ={hi.lam:.3g} stays above S={S:g}")
        hi = probe(hi.lam * 2.0)
        steps += 1
    if met(hi):
        return done(hi)

    for _ in range(cfg.max_bisections):
        if hi.lam / lo.lam - 1.0 < 1e-12:
            break
        mid = probe(math.sqrt(lo.lam * hi.lam))
        if met(mid):
            return done(mid)
        if mid.energy > S:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"bisection stalled: energy jumps from {lo.energy:.6g} to {hi.energy:.6g} "
        f"between λ={lo.lam:.9g} and λ={hi.lam:.9g}")
