"""Fading-memory kernels and the integrated-past-history field.

The memory of the heat flux is carried by a convolution kernel k with unit
mass. Internally all quadrature runs against mu = -(1 - omega) k', the
nonnegative, nonincreasing density that weights the history. The singular
family mu_eps(s) = eps^-2 mu(s/eps) concentrates the memory near s = 0 as
eps -> 0; its total mass scales like 1/eps.

The history state Phi^t(s) accumulates the recent past of the primary field,
Phi^t(s) = int_0^s U(t - y) dy, and evolves by pure transport in s with
inflow Phi^t(0) = 0. The discretization is semi-Lagrangian on a grid graded
toward s = 0: values are pulled back along characteristics and the fresh
segment is added by exact quadrature of the step's inflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from .domain import DiscreteDomain, StateField

__all__ = [
    "KernelSpec",
    "exponential_kernel",
    "tabulated_kernel",
    "RescaledKernel",
    "rescale_kernel",
    "KernelReport",
    "validate_kernel",
    "HistoryGrid",
    "build_history_grid",
    "HistoryField",
    "zero_history",
    "history_from_profile",
    "memory_norm_sq",
    "convolve_wentzell",
    "advance_history",
    "history_oracle",
    "tail_function",
    "ds_flat_energy",
    "sup_tau_tail",
    "k2_norm_sq",
    "DissipationReport",
    "dissipation_check",
]

Array = NDArray[np.float64]


# -- kernels -------------------------------------------------------------


@dataclass(frozen=True)
class KernelSpec:
    """Memory kernel described through the density mu = -(1 - omega) k'.

    Parameters
    ----------
    family : {"exponential", "tabulated"}
    omega : float
        Instantaneous-conduction fraction, strictly between 0 and 1.
    delta : float
        Claimed decay rate in the domination inequality
        ``mu' + delta mu <= 0``. Validated, not assumed.
    rate : float
        Exponential family only: k(s) = rate * exp(-rate s), so
        mu(s) = (1 - omega) rate^2 exp(-rate s). Unit k-mass by construction.
    s_table, mu_table : ndarray, optional
        Tabulated family: piecewise-linear mu samples; mu = 0 beyond the
        table.
    """

    family: str
    omega: float
    delta: float
    rate: float = 1.0
    s_table: Optional[Array] = None
    mu_table: Optional[Array] = None

    def __post_init__(self):
        if not (0.0 < self.omega < 1.0):
            raise ValueError(f"omega must lie in (0, 1), got {self.omega}")
        if self.delta <= 0.0:
            raise ValueError("delta must be positive")
        if self.family == "exponential":
            if self.rate <= 0.0:
                raise ValueError("exponential rate must be positive")
        elif self.family == "tabulated":
            s, m = self.s_table, self.mu_table
            if s is None or m is None or len(s) != len(m) or len(s) < 2:
                raise ValueError("tabulated kernel needs matching s/mu tables")
            if s[0] != 0.0 or np.any(np.diff(s) <= 0):
                raise ValueError("tabulated s grid must start at 0 and increase")
        else:
            raise ValueError(f"unknown kernel family {self.family!r}")

    def mu(self, s) -> Array:
        s = np.asarray(s, dtype=float)
        if self.family == "exponential":
            return (1.0 - self.omega) * self.rate**2 * np.exp(-self.rate * s)
        return np.interp(s, self.s_table, self.mu_table, right=0.0)

    def mu_integral(self, a: float, b: float) -> float:
        """Exact integral of mu over [a, b] (b may be inf)."""
        if b < a:
            raise ValueError("need a <= b")
        if self.family == "exponential":
            r, c = self.rate, (1.0 - self.omega) * self.rate
            ea = math.exp(-r * a)
            eb = 0.0 if math.isinf(b) else math.exp(-r * b)
            return c * (ea - eb)
        return self._table_integral(a, b)

    def _table_integral(self, a: float, b: float) -> float:
        s, m = self.s_table, self.mu_table
        b = min(b, s[-1])
        a = min(a, s[-1])
        if b <= a:
            return 0.0
        # exact piecewise-linear integral between arbitrary bounds
        grid = np.unique(np.concatenate([[a, b], s[(s > a) & (s < b)]]))
        vals = np.interp(grid, s, m)
        return float(np.trapezoid(vals, grid))

    def mu_mass(self) -> float:
        return self.mu_integral(0.0, math.inf)

    def first_moment(self) -> float:
        """int_0^inf s mu(s) ds; equals (1 - omega) * int k for admissible k."""
        if self.family == "exponential":
            return 1.0 - self.omega
        s, m = self.s_table, self.mu_table
        return float(np.trapezoid(s * m, s))


def exponential_kernel(omega: float, rate: float = 1.0,
                       delta: Optional[float] = None) -> KernelSpec:
    """Exponential kernel k(s) = rate exp(-rate s); delta defaults to rate."""
    return KernelSpec("exponential", omega, rate if delta is None else delta, rate=rate)


def tabulated_kernel(omega: float, s_table, mu_table, delta: float) -> KernelSpec:
    return KernelSpec(
        "tabulated", omega, delta,
        s_table=np.asarray(s_table, dtype=float),
        mu_table=np.asarray(mu_table, dtype=float),
    )


@dataclass(frozen=True)
class RescaledKernel:
    """The singularly scaled density mu_eps(s) = eps^-2 mu(s / eps)."""

    kernel: KernelSpec
    eps: float

    def mu(self, s) -> Array:
        return self.kernel.mu(np.asarray(s, dtype=float) / self.eps) / self.eps**2

    def integral(self, a: float, b: float) -> float:
        return self.kernel.mu_integral(a / self.eps,
                                       b / self.eps if not math.isinf(b) else b) / self.eps

    def mass(self) -> float:
        return self.kernel.mu_mass() / self.eps


def rescale_kernel(kernel: KernelSpec, eps: float) -> RescaledKernel:
    """Concentrate the kernel at scale eps in (0, 1]."""
    if not (0.0 < eps <= 1.0):
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    return RescaledKernel(kernel, float(eps))


@dataclass
class KernelReport:
    passed: bool
    checks: dict


def validate_kernel(kernel: KernelSpec, probe: Optional[Array] = None) -> KernelReport:
    """Check admissibility of a kernel; reports slack, never raises.

    Checks: mu >= 0, mu nonincreasing, the domination inequality
    mu' + delta mu <= 0, and unit mass of the underlying k recovered from
    the first-moment identity int s mu ds = 1 - omega.
    """
    checks = {}
    scale = max(float(kernel.mu(0.0)), 1.0)
    tol = 1e-10 * scale

    if probe is None:
        if kernel.family == "tabulated":
            probe = kernel.s_table
        else:
            probe = np.geomspace(1e-4, 60.0 / kernel.rate, 2048)
            probe = np.concatenate([[0.0], probe])
    mu = kernel.mu(probe)

    checks["nonnegative"] = {"passed": bool(np.min(mu) >= -tol),
                             "slack": float(np.min(mu))}

    if kernel.family == "exponential":
        # mu' = -rate * mu exactly; domination slack is (delta - rate) mu
        worst = float((kernel.delta - kernel.rate) * np.max(mu))
        checks["nonincreasing"] = {"passed": True, "slack": float(-kernel.rate * np.max(mu))}
        checks["delta_domination"] = {"passed": worst <= tol, "slack": worst}
    else:
        slopes = np.diff(mu) / np.diff(probe)
        checks["nonincreasing"] = {"passed": bool(np.max(slopes) <= tol),
                                   "slack": float(np.max(slopes))}
        # on each linear segment sup(mu' + delta mu) sits at the larger endpoint
        seg_worst = slopes + kernel.delta * np.maximum(mu[:-1], mu[1:])
        worst = float(np.max(seg_worst))
        checks["delta_domination"] = {"passed": worst <= tol, "slack": worst}

    k_mass = kernel.first_moment() / (1.0 - kernel.omega)
    checks["unit_mass"] = {"passed": bool(abs(k_mass - 1.0) <= 1e-6),
                           "slack": float(k_mass - 1.0)}

    return KernelReport(passed=all(c["passed"] for c in checks.values()), checks=checks)


# -- history grid ----------------------------------------------------------


@dataclass
class HistoryGrid:
    """Quadrature grid in the past-time variable s.

    ``s_nodes`` carry the field values; ``edges`` bound the quadrature cells
    (edges[0] = 0, edges[-1] = s_max); ``weights[j]`` is the exact mu_eps
    mass of cell j, so sums over nodes integrate against mu_eps.
    """

    kernel: KernelSpec
    eps: float
    s_nodes: Array
    edges: Array
    weights: Array

    @property
    def n_s(self) -> int:
        return self.s_nodes.size

    @property
    def s_max(self) -> float:
        return float(self.edges[-1])

    @property
    def rescaled(self) -> RescaledKernel:
        return RescaledKernel(self.kernel, self.eps)

    def window_weights(self, lo: float, hi: float) -> Array:
        """Per-cell mu_eps mass of cell intersect [lo, hi]."""
        rk = self.rescaled
        a = np.clip(self.edges[:-1], lo, hi)
        b = np.clip(self.edges[1:], lo, hi)
        return np.array([rk.integral(x, y) if y > x else 0.0 for x, y in zip(a, b)])

    def same_nodes(self, other: "HistoryGrid") -> bool:
        return self.n_s == other.n_s and bool(np.all(self.s_nodes == other.s_nodes))


def build_history_grid(kernel: KernelSpec, eps: float, n_s: int = 128,
                       s_max_factor: float = 30.0,
                       spacing: str = "geometric",
                       s_max: Optional[float] = None) -> HistoryGrid:
    """Build the graded s-grid with exact cell masses.

    Geometric spacing runs from eps * 1e-3 (comfortably below the eps/10
    resolution requirement) to s_max = s_max_factor * eps / delta. Uniform
    spacing is available for step-aligned quadrature studies. The truncated
    mass must cover all but 1e-6 of the total.
    """
    if n_s < 16:
        raise ValueError(f"n_s must be >= 16, got {n_s}")
    rk = rescale_kernel(kernel, eps)
    if s_max is None:
        s_max = s_max_factor * eps / kernel.delta
    if spacing == "geometric":
        s0 = eps * 1e-3
        nodes = s0 * (s_max / s0) ** (np.arange(n_s) / (n_s - 1))
    elif spacing == "uniform":
        nodes = np.linspace(s_max / n_s, s_max, n_s)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")

    edges = np.empty(n_s + 1)
    edges[0] = 0.0
    edges[-1] = s_max
    if spacing == "geometric":
        edges[1:-1] = np.sqrt(nodes[:-1] * nodes[1:])
    else:
        edges[1:-1] = 0.5 * (nodes[:-1] + nodes[1:])

    weights = np.array([rk.integral(a, b) for a, b in zip(edges[:-1], edges[1:])])
    total = rk.mass()
    truncated = 1.0 - weights.sum() / total
    if truncated > 1e-6:
        raise ValueError(
            f"history grid truncates {truncated:.2e} of the kernel mass; "
            "increase s_max_factor or n_s"
        )
    return HistoryGrid(kernel=kernel, eps=float(eps), s_nodes=nodes,
                       edges=edges, weights=weights)


# -- history field ----------------------------------------------------------


@dataclass
class HistoryField:
    """History values at the s-nodes: arrays of shape (n_s, n_bulk/n_boundary)."""

    grid: HistoryGrid
    bulk: Array
    boundary: Array

    def copy(self) -> "HistoryField":
        return HistoryField(self.grid, self.bulk.copy(), self.boundary.copy())

    def field_at(self, j: int) -> StateField:
        return StateField(self.bulk[j].copy(), self.boundary[j].copy())

    def _check_mate(self, other: "HistoryField"):
        if not self.grid.same_nodes(other.grid):
            raise ValueError("history fields live on different s-grids")

    def __add__(self, other: "HistoryField") -> "HistoryField":
        self._check_mate(other)
        return HistoryField(self.grid, self.bulk + other.bulk,
                            self.boundary + other.boundary)

    def __sub__(self, other: "HistoryField") -> "HistoryField":
        self._check_mate(other)
        return HistoryField(self.grid, self.bulk - other.bulk,
                            self.boundary - other.boundary)

    def __mul__(self, c: float) -> "HistoryField":
        return HistoryField(self.grid, self.bulk * c, self.boundary * c)

    __rmul__ = __mul__


def zero_history(grid: HistoryGrid, d: DiscreteDomain) -> HistoryField:
    return HistoryField(grid, np.zeros((grid.n_s, d.n_bulk)),
                        np.zeros((grid.n_s, d.n_boundary)))


def history_from_profile(grid: HistoryGrid, d: DiscreteDomain,
                         profile: Callable[[Array], Array],
                         shape: StateField) -> HistoryField:
    """Separable history Phi(s) = profile(s) * shape."""
    p = np.asarray(profile(grid.s_nodes), dtype=float)
    return HistoryField(grid, np.outer(p, shape.bulk), np.outer(p, shape.boundary))


# -- weighted norms ----------------------------------------------------------


def _x2_rows(bulk: Array, boundary: Array, d: DiscreteDomain) -> Array:
    return (bulk**2) @ d.dx + (boundary**2) @ d.dsigma


def _v1_rows(bulk: Array, boundary: Array, d: DiscreteDomain,
             alpha: float, beta: float) -> Array:
    sb = d.stiff_bulk @ bulk.T
    rows = np.einsum("jn,nj->j", bulk, sb)
    if alpha != 0.0:
        rows = rows + alpha * ((bulk**2) @ d.dx)
    sg = d.stiff_gamma @ boundary.T
    rows = rows + np.einsum("jn,nj->j", boundary, sg)
    rows = rows + beta * ((boundary**2) @ d.dsigma)
    return rows


def _pair_rows(bulk: Array, boundary: Array, d: DiscreteDomain,
               alpha: float, beta: float) -> tuple[Array, Array]:
    pb = -(d.lap_stencil @ bulk.T).T + alpha * bulk
    pg = (d.normal_deriv @ bulk.T).T - (d.lb_stencil @ boundary.T).T + beta * boundary
    return pb, pg


def memory_norm_sq(phi: Optional[HistoryField], level: int, d: DiscreteDomain,
                   alpha: float, beta: float) -> float:
    """Squared mu_eps-weighted norm of the history at first-order level 0/1/2.

    Level 0 integrates the flat pair norm, level 1 the first-order form,
    level 2 the squared equation-pair image. ``phi=None`` (no memory, eps=0)
    gives 0.
    """
    if phi is None:
        return 0.0
    w = phi.grid.weights
    if level == 0:
        rows = _x2_rows(phi.bulk, phi.boundary, d)
    elif level == 1:
        rows = _v1_rows(phi.bulk, phi.boundary, d, alpha, beta)
    elif level == 2:
        pb, pg = _pair_rows(phi.bulk, phi.boundary, d, alpha, beta)
        rows = _x2_rows(pb, pg, d)
    else:
        raise ValueError(f"level must be 0, 1 or 2, got {level}")
    return float(w @ rows)


def convolve_wentzell(phi: Optional[HistoryField], d: DiscreteDomain,
                      alpha: float, beta: float) -> StateField:
    """Memory load: the mu_eps-weighted integral of the equation pair.

    By linearity this equals applying the coupled operator to the weighted
    sum of the history slices, which is how it is evaluated.
    """
    if phi is None:
        return d.zero_field()
    w = phi.grid.weights
    u_w = StateField(w @ phi.bulk, w @ phi.boundary)
    from .domain import apply_wentzell
    return apply_wentzell(u_w, d, alpha, beta)


# -- transport ----------------------------------------------------------------


def _interp_rows(s_nodes: Array, values: Array, q: Array) -> Array:
    """Linear interpolation of history rows at query offsets q >= 0.

    Rows of ``values`` hold the field at s_nodes; the inflow anchor (0, 0)
    closes the left end. Queries must satisfy q < s_max.
    """
    n_s = s_nodes.size
    s_ext = np.concatenate([[0.0], s_nodes])
    idx = np.searchsorted(s_ext, q, side="right") - 1
    idx = np.clip(idx, 0, n_s - 1)
    left = s_ext[idx]
    right = s_ext[idx + 1]
    t = (q - left) / (right - left)
    vals_ext = np.vstack([np.zeros((1, values.shape[1])), values])
    return (1.0 - t)[:, None] * vals_ext[idx] + t[:, None] * vals_ext[idx + 1]


def advance_history(phi: HistoryField, u_new: StateField, dt: float,
                    u_prev: Optional[StateField] = None) -> HistoryField:
    """One transport step of the history under the field's motion.

    Values are pulled back along the characteristic s -> s - dt; nodes with
    s <= dt are filled by exact integration of the step's inflow. With only
    ``u_new`` the inflow is treated as constant over the step; passing
    ``u_prev`` integrates the linear-in-time inflow exactly (trapezoid),
    which is what the evolution steppers use.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    g = phi.grid
    s = g.s_nodes
    q = np.maximum(s - dt, 0.0)

    new_bulk = _interp_rows(s, phi.bulk, q)
    new_bdry = _interp_rows(s, phi.boundary, q)

    full = s > dt
    part = ~full
    if u_prev is None:
        new_bulk[full] += dt * u_new.bulk
        new_bdry[full] += dt * u_new.boundary
        new_bulk[part] = s[part, None] * u_new.bulk
        new_bdry[part] = s[part, None] * u_new.boundary
    else:
        inc_b = 0.5 * dt * (u_prev.bulk + u_new.bulk)
        inc_g = 0.5 * dt * (u_prev.boundary + u_new.boundary)
        new_bulk[full] += inc_b
        new_bdry[full] += inc_g
        sp_ = s[part, None]
        curv = sp_**2 / (2.0 * dt)
        new_bulk[part] = sp_ * u_new.bulk + curv * (u_prev.bulk - u_new.bulk)
        new_bdry[part] = sp_ * u_new.boundary + curv * (u_prev.boundary - u_new.boundary)
    return HistoryField(g, new_bulk, new_bdry)


def history_oracle(times: Array, path: list[StateField],
                   grid: HistoryGrid, d: DiscreteDomain, t: float,
                   phi0: Optional[HistoryField] = None) -> HistoryField:
    """Reference history from the exact representation formula.

    For s <= t the history is the running integral of the path,
    Phi^t(s) = int_0^s U(t - y) dy; beyond the elapsed time the shifted
    initial history carries over, Phi^t(s) = Phi0(s - t) + int_0^t U. The
    path is treated as piecewise linear in time and integrated exactly, so
    this is an independent oracle for the semi-Lagrangian transport.
    """
    times = np.asarray(times, dtype=float)
    if times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise ValueError("path times must increase from 0")
    if not (-1e-12 <= t <= times[-1] + 1e-12):
        raise ValueError("t outside the sampled path")
    t = float(min(max(t, 0.0), times[-1]))

    bulk_path = np.stack([u.bulk for u in path])
    bdry_path = np.stack([u.boundary for u in path])
    dt_cells = np.diff(times)
    cum_b = np.vstack([
        np.zeros((1, bulk_path.shape[1])),
        np.cumsum(0.5 * (bulk_path[1:] + bulk_path[:-1]) * dt_cells[:, None], axis=0),
    ])
    cum_g = np.vstack([
        np.zeros((1, bdry_path.shape[1])),
        np.cumsum(0.5 * (bdry_path[1:] + bdry_path[:-1]) * dt_cells[:, None], axis=0),
    ])

    def path_cum(a: Array) -> tuple[Array, Array]:
        # exact integral of the piecewise-linear path from 0 to each a
        i = np.clip(np.searchsorted(times, a, side="right") - 1, 0, times.size - 2)
        th = a - times[i]
        frac = th / dt_cells[i]
        ub = bulk_path[i] + frac[:, None] * (bulk_path[i + 1] - bulk_path[i])
        ug = bdry_path[i] + frac[:, None] * (bdry_path[i + 1] - bdry_path[i])
        ib = cum_b[i] + 0.5 * th[:, None] * (bulk_path[i] + ub)
        ig = cum_g[i] + 0.5 * th[:, None] * (bdry_path[i] + ug)
        return ib, ig

    s = grid.s_nodes
    recent = s <= t
    out_b = np.zeros((grid.n_s, d.n_bulk))
    out_g = np.zeros((grid.n_s, d.n_boundary))

    if np.any(recent):
        it_b, it_g = path_cum(np.array([t]))
        ia_b, ia_g = path_cum(t - s[recent])
        out_b[recent] = it_b - ia_b
        out_g[recent] = it_g - ia_g
    if np.any(~recent):
        it_b, it_g = path_cum(np.array([t]))
        if phi0 is not None:
            out_b[~recent] = _interp_rows(s, phi0.bulk, s[~recent] - t)
            out_g[~recent] = _interp_rows(s, phi0.boundary, s[~recent] - t)
        out_b[~recent] += it_b
        out_g[~recent] += it_g
    return HistoryField(grid, out_b, out_g)


# -- tails and strong norms ----------------------------------------------------


def tail_function(phi: Optional[HistoryField], tau: float, d: DiscreteDomain,
                  alpha: float, beta: float) -> float:
    """Mass of the first-order history energy outside [1/tau, tau].

    T(tau; Phi) = int_{(0,1/tau) U (tau,inf)} eps mu_eps(s) ||Phi(s)||_V1^2 ds,
    for tau >= 1. Decreasing in tau by construction.
    """
    if tau < 1.0:
        raise ValueError("tau must be >= 1")
    if phi is None:
        return 0.0
    g = phi.grid
    w = g.window_weights(0.0, 1.0 / tau) + g.window_weights(tau, g.s_max)
    rows = _v1_rows(phi.bulk, phi.boundary, d, alpha, beta)
    return float(g.eps * (w @ rows))


def _ds_rows(phi: HistoryField) -> tuple[Array, Array]:
    """One-sided s-derivative rows, anchored at the zero inflow value."""
    s = phi.grid.s_nodes
    db = np.empty_like(phi.bulk)
    dg = np.empty_like(phi.boundary)
    db[0] = phi.bulk[0] / s[0]
    dg[0] = phi.boundary[0] / s[0]
    ds = np.diff(s)[:, None]
    db[1:] = np.diff(phi.bulk, axis=0) / ds
    dg[1:] = np.diff(phi.boundary, axis=0) / ds
    return db, dg


def ds_flat_energy(phi: Optional[HistoryField], d: DiscreteDomain) -> float:
    """mu_eps-weighted flat energy of the one-sided s-derivative."""
    if phi is None:
        return 0.0
    db, dg = _ds_rows(phi)
    return float(phi.grid.weights @ _x2_rows(db, dg, d))


def sup_tau_tail(phi: Optional[HistoryField], d: DiscreteDomain,
                 alpha: float, beta: float) -> float:
    """sup of tau * tail over the dyadic grid tau = 1, 2, 4, ... up to twice
    the grid horizon (the tail vanishes beyond it)."""
    if phi is None:
        return 0.0
    tau = 1.0
    sup_t = 0.0
    while tau <= 2.0 * max(1.0, phi.grid.s_max):
        sup_t = max(sup_t, tau * tail_function(phi, tau, d, alpha, beta))
        tau *= 2.0
    return sup_t


def k2_norm_sq(phi: Optional[HistoryField], d: DiscreteDomain,
               alpha: float, beta: float) -> float:
    """Squared strong history norm: level-2 energy, eps-scaled s-derivative
    energy, and the dyadic sup of tau * tail."""
    if phi is None:
        return 0.0
    return (
        memory_norm_sq(phi, 2, d, alpha, beta)
        + phi.grid.eps * ds_flat_energy(phi, d)
        + sup_tau_tail(phi, d, alpha, beta)
    )


@dataclass
class DissipationReport:
    lhs: float
    bound: float
    slack: float
    passed: bool


def dissipation_check(phi: HistoryField, d: DiscreteDomain,
                      alpha: float, beta: float) -> DissipationReport:
    """Verify <T Phi, Phi>_M1 <= -(delta / 2 eps) ||Phi||_M1^2.

    The transport generator T acts as -d/ds; the discrete pairing uses the
    same one-sided derivative and mu_eps quadrature as the strong norm.
    Returns the measured slack (bound - lhs, nonnegative when the
    inequality holds).
    """
    g = phi.grid
    db, dg = _ds_rows(phi)
    # <T phi, phi> = - sum_j w_j <d_s phi_j, phi_j>_V1, computed rowwise
    sb = d.stiff_bulk @ phi.bulk.T
    rows = np.einsum("jn,nj->j", db, sb)
    if alpha != 0.0:
        rows = rows + alpha * ((db * phi.bulk) @ d.dx)
    sg = d.stiff_gamma @ phi.boundary.T
    rows = rows + np.einsum("jn,nj->j", dg, sg)
    rows = rows + beta * ((dg * phi.boundary) @ d.dsigma)
    lhs = -float(g.weights @ rows)

    m1 = memory_norm_sq(phi, 1, d, alpha, beta)
    bound = -(g.kernel.delta / (2.0 * g.eps)) * m1
    slack = bound - lhs
    # kernels at the domination equality sit at slack 0 up to s-quadrature
    # error, so the pass margin is a fraction of the bound, not roundoff
    tol = 0.05 * abs(bound) + 1e-12
    return DissipationReport(lhs=lhs, bound=bound, slack=slack, passed=slack >= -tol)
