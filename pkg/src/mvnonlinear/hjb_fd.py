"""Monotone finite-difference solver for the auxiliary HJB equation.

    v_t + inf_pi [ v_x (r x + pi^+ sigma theta_low - pi^- sigma theta_high)
                   + 1/2 v_xx sigma^2 pi^2 ] = 0,      v(T, x) = (x - d)^2

Spatial operator
    Diffusion uses central second differences.  Drift is upwinded; with
    ``drift="central-monotone"`` (default) a central first difference is
    also admitted for any control whose diffusion is large enough for the
    stencil to keep nonnegative weights.  The Hamiltonian is the minimum
    over this fixed family of monotone stencils, so the scheme stays
    monotone either way.

Controls
    ``control_search="grid"`` minimises over the ``n_pi`` point control
    grid only.  ``"exact"`` (default) minimises the discrete Hamiltonian
    over the whole interval ``[-control_bound, control_bound]``: on each
    stencil piece it is a quadratic in ``pi``, so the minimum sits at a
    piece vertex or breakpoint, and those are enumerated per node.  That
    minimum is never above the grid minimum, so the grid itself is skipped.

Mesh
    ``frame="discounted"`` (default) moves the wealth nodes with the
    riskless flow, ``x_i(t) = y_i exp(-int_t^T r)`` on a uniform ``y`` grid
    spanning ``[x_min, x_max]`` at ``T``.  The ``r x`` drift then drops out
    of the stencil and the switching threshold stays at ``y = d``.
    ``frame="fixed"`` keeps the nodes at ``x_i`` for all times.

Time stepping
    ``implicit`` (default) is backward Euler with Howard policy iteration at
    every level; every frozen-control matrix is an M-matrix, so it is
    monotone for any step.  ``explicit`` is forward Euler and is checked
    against its CFL bound before the sweep.

The two end nodes carry the explicit solution as Dirichlet data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .closed_form import policy_array, value_function
from .errors import CflViolation, NonFiniteValue, ShapeMismatch, ValidationError
from .market import MarketParams, discount_factor, require_valid

SCHEMES = ("implicit", "explicit")
FRAMES = ("discounted", "fixed")
DRIFTS = ("central-monotone", "upwind")
CONTROL_SEARCHES = ("exact", "grid")
CFL_SAFETY = 0.9


@dataclass(frozen=True)
class GridConfig:
    """Uniform time-wealth mesh, control set and scheme options.

    The control grid has ``n_pi`` points spread uniformly over
    ``[-control_bound, control_bound]``; the point nearest zero is pinned
    to exactly zero.
    """

    x_min: float
    x_max: float
    n_x: int = 401
    n_t: int = 400
    control_bound: float = 8.0
    n_pi: int = 161
    scheme: str = "implicit"
    frame: str = "discounted"
    drift: str = "central-monotone"
    control_search: str = "exact"
    max_policy_iter: int = 100

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max) and self.x_min < self.x_max):
            raise ValidationError(f"need finite x_min < x_max, got [{self.x_min}, {self.x_max}]")
        for name, low in (("n_x", 3), ("n_t", 1), ("n_pi", 3), ("max_policy_iter", 1)):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val or val < low:
                raise ValidationError(f"{name} must be an integer >= {low}, got {val!r}")
            object.__setattr__(self, name, int(val))
        if not (math.isfinite(self.control_bound) and self.control_bound > 0):
            raise ValidationError(f"control_bound must be positive, got {self.control_bound}")
        for name, allowed in (("scheme", SCHEMES), ("frame", FRAMES), ("drift", DRIFTS),
                              ("control_search", CONTROL_SEARCHES)):
            if getattr(self, name) not in allowed:
                raise ValidationError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @property
    def dx(self) -> float:
        """Node spacing at ``T`` (and at every level for the fixed frame)."""
        return (self.x_max - self.x_min) / (self.n_x - 1)

    def dt(self, horizon: float) -> float:
        return horizon / self.n_t

    def x_grid(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    def t_grid(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, horizon, self.n_t + 1)

    def controls(self) -> np.ndarray:
        c = self.control_bound * np.linspace(-1.0, 1.0, self.n_pi)
        c[np.argmin(np.abs(c))] = 0.0
        return c

    def nodes(self, params: MarketParams) -> np.ndarray:
        """Wealth of node ``i`` at level ``n``, shape ``(n_t + 1, n_x)``."""
        x = self.x_grid()[None, :]
        if self.frame == "fixed":
            return np.broadcast_to(x, (self.n_t + 1, self.n_x)).copy()
        disc = discount_factor(params, self.t_grid(params.horizon))
        return x * disc[:, None]

    def refined(self, space: int = 2, time: int = 4) -> "GridConfig":
        """Same domain and options with ``dx / space`` and ``dt / time``."""
        return GridConfig(**{**asdict(self), "n_x": (self.n_x - 1) * space + 1, "n_t": self.n_t * time})

    def as_dict(self):
        return asdict(self)


def default_grid(params: MarketParams, d: float, **overrides) -> GridConfig:
    """Domain that keeps the switching threshold well inside the mesh.

    ``[min(0, c) - 1, c + 2]`` with ``c = d exp(-int_0^T r)``, stretched by
    ``d`` when ``d > 1``.  The control bound is twice the largest optimal
    position over the domain, rounded up.
    """
    c = d * discount_factor(params, 0.0)
    lo, hi = min(0.0, c) - 1.0, c + 2.0
    if d > 1.0:
        lo, hi = lo * d, hi * d
    kw = dict(x_min=lo, x_max=hi)
    kw.update(overrides)
    if "control_bound" not in overrides:
        kw["control_bound"] = _control_bound_for(params, d, kw["x_min"], kw["x_max"])
    return GridConfig(**kw)


def _control_bound_for(params: MarketParams, d, x_min, x_max, n_t=64):
    t = np.linspace(0.0, params.horizon, n_t + 1)
    worst = 0.0
    for x in (x_min, x_max):
        worst = max(worst, float(np.max(np.abs(policy_array(params, t, np.full_like(t, x), d)))))
    return float(max(1.0, math.ceil(2.0 * worst)))


@dataclass
class GridSolution:
    """Value approximations ``values[n, i] ~ v(t_n, x[n, i]; d)``.

    ``policy`` holds the minimising control (amount in stock) at each
    interior node, ``central`` whether the central drift stencil was used.
    """

    values: np.ndarray
    config: GridConfig
    d: float
    horizon: float
    x: np.ndarray = field(repr=False)
    policy: np.ndarray | None = field(default=None, repr=False)
    central: np.ndarray | None = field(default=None, repr=False)
    policy_iterations: np.ndarray | None = field(default=None, repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.config.t_grid(self.horizon)

    def to_csv(self, path_or_file):
        """Write long-format rows ``t,x,v``."""
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh)
            w.writerow(["t", "x", "v"])
            for tn, xs, vs in zip(self.t, self.x, self.values):
                for xi, vi in zip(xs, vs):
                    w.writerow([repr(float(tn)), repr(float(xi)), repr(float(vi))])
        finally:
            if own:
                fh.close()


class _Level:
    """Stencil data for one time level.

    For control ``pi`` the drift in mesh units is
    ``beta + g sigma (theta_low pi^+ - theta_high pi^-)`` and the diffusion
    weight is ``a pi^2`` with ``a = (g sigma)^2 / (2 dx^2)``; ``g`` is the
    mesh stretch (1 on the fixed frame) and ``beta = r x`` only on the
    fixed frame.
    """

    def __init__(self, params: MarketParams, config: GridConfig, t: float, x_int: np.ndarray):
        r, lo, hi, sigma = params.coefficients(t)
        self.dx = config.dx
        if config.frame == "fixed":
            g = 1.0
            self.beta = r * x_int
        else:
            g = 1.0 / discount_factor(params, t)
            self.beta = np.zeros_like(x_int)
        self.a = 0.5 * (g * sigma) ** 2 / self.dx**2
        self.gp = g * sigma * lo
        self.gm = g * sigma * hi
        self.bound = config.control_bound
        self.use_central = config.drift == "central-monotone"

    def drift(self, pi):
        return self.beta + self.gp * np.maximum(pi, 0.0) - self.gm * np.maximum(-pi, 0.0)

    def weights(self, pi, central):
        """Stencil weights ``(down, up)``, both nonnegative."""
        b = self.drift(pi)
        diff = self.a * pi * pi
        half = 0.5 * b / self.dx
        # clipping only touches roots of the monotonicity condition (rounding level)
        down = np.where(central, np.maximum(diff - half, 0.0), diff + np.maximum(-b, 0.0) / self.dx)
        up = np.where(central, np.maximum(diff + half, 0.0), diff + np.maximum(b, 0.0) / self.dx)
        return down, up

    def rate_bound(self):
        """Largest ``down + up`` over the admissible family (for the CFL test)."""
        worst = np.abs(self.beta) / self.dx
        for pi in (-self.bound, self.bound):
            worst = np.maximum(worst, 2 * self.a * pi * pi + np.abs(self.drift(pi)) / self.dx)
        return float(np.max(worst))

    def candidates(self, v, grid_controls, exact):
        n = v.shape[0] - 2
        rows = [np.zeros(n)]
        if not exact:
            rows += [np.full(n, c) for c in grid_controls]
        else:
            mid = v[1:-1]
            s2 = v[2:] - 2.0 * mid + v[:-2]
            dp = (v[2:] - mid) / self.dx
            dm = (mid - v[:-2]) / self.dx
            d0 = 0.5 * (dp + dm)
            curv = 2.0 * self.a * s2
            B = self.bound
            with np.errstate(divide="ignore", invalid="ignore"):
                for gamma, lo, hi in ((self.gp, 0.0, B), (self.gm, -B, 0.0)):
                    slopes = (dp, dm, d0) if self.use_central else (dp, dm)
                    for D in slopes:
                        vert = np.where(curv > 0.0, -gamma * D / curv, 0.0)
                        rows.append(np.clip(np.nan_to_num(vert), lo, hi))
                    if gamma > 0.0:
                        rows.append(np.clip(-self.beta / gamma, lo, hi))
                    if self.use_central and self.a > 0.0:
                        # central stencil stays monotone while a pi^2 >= |b| / (2 dx)
                        q = 4.0 * self.a * self.dx
                        for sgn in (1.0, -1.0):
                            disc = gamma * gamma + sgn * 8.0 * self.a * self.dx * self.beta
                            root = np.sqrt(np.maximum(disc, 0.0))
                            for pm in (1.0, -1.0):
                                rows.append(np.clip((sgn * gamma + pm * root) / q, lo, hi))
            rows += [np.full(n, B), np.full(n, -B)]
        return np.stack(rows)

    def best(self, v, grid_controls, exact):
        """Minimising ``(pi, central, L v)`` per interior node; ties go to the earlier candidate."""
        P = self.candidates(v, grid_controls, exact)
        mid = v[1:-1]
        lower, upper = (v[:-2] - mid)[None, :], (v[2:] - mid)[None, :]
        down, up = self.weights(P, False)
        L_up = down * lower + up * upper
        if self.use_central:
            b = self.drift(P)
            ok = self.a * P * P >= (1.0 - 1e-12) * np.abs(b) / (2.0 * self.dx)
            down, up = self.weights(P, True)
            L_c = np.where(ok, down * lower + up * upper, np.inf)
            stacked = np.concatenate((L_up, L_c))
        else:
            stacked = L_up
        k = np.argmin(stacked, axis=0)
        cols = np.arange(stacked.shape[1])
        m = P.shape[0]
        return P[k % m, cols], k >= m, stacked[k, cols]


def _grid_order(config: GridConfig):
    c = config.controls()
    return c[np.lexsort((c, np.abs(c)))]


def check_cfl(params: MarketParams, config: GridConfig, safety: float = CFL_SAFETY) -> float:
    """Raise :class:`CflViolation` unless the explicit sweep is monotone.

    The explicit update is a convex combination of neighbouring values iff
    ``dt * (down + up) <= 1`` for every node and admissible control;
    ``safety`` tightens the bound.  Returns the achieved ``dt * max rate``.
    """
    dt = config.dt(params.horizon)
    nodes = config.nodes(params)
    worst = 0.0
    for n, tn in enumerate(config.t_grid(params.horizon)):
        worst = max(worst, _Level(params, config, tn, nodes[n, 1:-1]).rate_bound())
    if dt * worst > safety:
        raise CflViolation(
            f"explicit scheme not monotone: dt*max(rate)={dt * worst:.4g} > {safety}; "
            f"need n_t >= {math.ceil(params.horizon * worst / safety)}"
        )
    return dt * worst


def solve_hjb(params: MarketParams, d: float, grid: GridConfig, terminal=None) -> GridSolution:
    """Backward sweep from ``T`` to ``0`` on ``grid``.

    ``terminal`` replaces the terminal data ``(x - d)^2`` on the interior
    nodes (used to probe the comparison principle); the Dirichlet columns
    always come from the explicit solution.
    """
    require_valid(params)
    T = params.horizon
    t = grid.t_grid(T)
    dt = grid.dt(T)
    if grid.scheme == "explicit":
        check_cfl(params, grid)
    nodes = grid.nodes(params)
    controls = _grid_order(grid)
    exact = grid.control_search == "exact"
    n_int = grid.n_x - 2

    values = np.empty((grid.n_t + 1, grid.n_x))
    policy = np.zeros((grid.n_t + 1, n_int))
    central = np.zeros((grid.n_t + 1, n_int), dtype=bool)
    iters = np.zeros(grid.n_t + 1, dtype=np.int64)
    values[-1] = (nodes[-1] - d) ** 2
    if terminal is not None:
        terminal = np.asarray(terminal, dtype=float)
        if terminal.shape != (grid.n_x,):
            raise ShapeMismatch(f"terminal data has shape {terminal.shape}, expected ({grid.n_x},)")
        values[-1, 1:-1] = terminal[1:-1]
    level = _Level(params, grid, T, nodes[-1, 1:-1])
    policy[-1], central[-1], _ = level.best(values[-1], controls, exact)

    v = values[-1]
    pi, cen = policy[-1].copy(), central[-1].copy()
    for n in range(grid.n_t - 1, -1, -1):
        tn = t[n]
        level = _Level(params, grid, tn, nodes[n, 1:-1])
        new = np.empty_like(v)
        new[[0, -1]] = value_function(params, tn, nodes[n, [0, -1]], d)
        if grid.scheme == "explicit":
            pi, cen, lv = level.best(v, controls, exact)
            new[1:-1] = v[1:-1] + dt * lv
            iters[n] = 1
        else:
            prev = None
            for it in range(1, grid.max_policy_iter + 1):
                down, up = level.weights(pi, cen)
                ab = np.empty((3, n_int))
                ab[0, 0] = ab[2, -1] = 0.0
                ab[0, 1:] = -dt * up[:-1]
                ab[1] = 1.0 + dt * (down + up)
                ab[2, :-1] = -dt * down[1:]
                rhs = v[1:-1].copy()
                rhs[0] += dt * down[0] * new[0]
                rhs[-1] += dt * up[-1] * new[-1]
                new[1:-1] = solve_banded((1, 1), ab, rhs, check_finite=False)
                pi_new, cen_new, _ = level.best(new, controls, exact)
                if np.array_equal(pi_new, pi) and np.array_equal(cen_new, cen):
                    break
                # continuous controls can keep moving in the last bits
                if prev is not None and np.max(np.abs(new - prev)) <= 1e-14 * max(1.0, np.max(np.abs(new))):
                    break
                prev = new.copy()
                pi, cen = pi_new, cen_new
            iters[n] = it
        if not np.all(np.isfinite(new)):
            bad = int(np.flatnonzero(~np.isfinite(new))[0])
            raise NonFiniteValue(f"non-finite value at t={tn:g}, x={nodes[n, bad]:g}")
        values[n] = new
        policy[n], central[n] = pi, cen
        v = new
    return GridSolution(values, grid, float(d), T, nodes, policy=policy, central=central,
                        policy_iterations=iters)


@dataclass(frozen=True)
class ErrorReport:
    l_inf_abs: float
    l_inf_rel: float
    l2_rel: float
    worst_node: tuple[float, float]
    half_l_inf_abs: float
    half_l_inf_rel: float
    half_worst_node: tuple[float, float]
    rel_floor: float
    convergence_order_estimate: float | None = None
    boundary: str = "dirichlet-explicit-solution"

    def as_dict(self):
        out = asdict(self)
        out["worst_node"] = list(self.worst_node)
        out["half_worst_node"] = list(self.half_worst_node)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), **kw)


def rel_floor_for(d: float) -> float:
    return 1e-4 * (1.0 + d * d)


def exact_surface(params: MarketParams, grid: GridConfig, d: float) -> np.ndarray:
    """Explicit value function sampled on the mesh of ``grid``."""
    t = grid.t_grid(params.horizon)[:, None]
    return value_function(params, t, grid.nodes(params), d)


def compare_to_closed_form(solution: GridSolution, params: MarketParams,
                           convergence_order_estimate: float | None = None) -> ErrorReport:
    """Pointwise error of ``solution`` against the explicit value function.

    Errors are taken over every interior node at every level.  Relative
    errors divide by ``max(|v|, rel_floor)`` because ``v`` vanishes on the
    switching threshold.  The ``half_*`` fields restrict to the middle half
    of the wealth interval, away from the Dirichlet data.
    """
    grid = solution.config
    expected_shape = (grid.n_t + 1, grid.n_x)
    if solution.values.shape != expected_shape:
        raise ShapeMismatch(f"values have shape {solution.values.shape}, grid implies {expected_shape}")
    if not math.isclose(solution.horizon, params.horizon):
        raise ShapeMismatch(f"solution horizon {solution.horizon} != market horizon {params.horizon}")
    exact = exact_surface(params, grid, solution.d)
    floor = rel_floor_for(solution.d)
    t = grid.t_grid(params.horizon)
    x = grid.nodes(params)

    def stats(cols):
        err = np.abs(solution.values[:, cols] - exact[:, cols])
        rel = err / np.maximum(np.abs(exact[:, cols]), floor)
        n, i = np.unravel_index(np.argmax(rel), rel.shape)
        return err, rel, (float(t[n]), float(x[n, cols[i]]))

    interior = np.arange(1, grid.n_x - 1)
    err, rel, worst = stats(interior)
    l2_den = math.sqrt(float(np.sum(np.maximum(np.abs(exact[:, interior]), floor) ** 2)))
    lo = grid.x_min + 0.25 * (grid.x_max - grid.x_min)
    hi = grid.x_max - 0.25 * (grid.x_max - grid.x_min)
    y = grid.x_grid()
    half = interior[(y[interior] >= lo) & (y[interior] <= hi)]
    herr, hrel, hworst = stats(half)
    return ErrorReport(
        l_inf_abs=float(err.max()),
        l_inf_rel=float(rel.max()),
        l2_rel=math.sqrt(float(np.sum(err**2))) / l2_den,
        worst_node=worst,
        half_l_inf_abs=float(herr.max()),
        half_l_inf_rel=float(hrel.max()),
        half_worst_node=hworst,
        rel_floor=floor,
        convergence_order_estimate=convergence_order_estimate,
    )


def refinement_study(params: MarketParams, d: float, grid: GridConfig, space: int = 2, time: int = 4):
    """Solve on ``grid`` and on its refinement; estimate the order in ``dx``.

    Returns ``(coarse_report, fine_report)``; both carry the order
    ``log(e_coarse / e_fine) / log(space)`` computed from the interior
    L-infinity absolute errors.
    """
    coarse = compare_to_closed_form(solve_hjb(params, d, grid), params)
    fine = compare_to_closed_form(solve_hjb(params, d, grid.refined(space, time)), params)
    order = math.log(coarse.l_inf_abs / fine.l_inf_abs) / math.log(space)
    return (
        ErrorReport(**{**asdict(coarse), "convergence_order_estimate": order}),
        ErrorReport(**{**asdict(fine), "convergence_order_estimate": order}),
    )


def extract_fd_policy(solution: GridSolution, params: MarketParams) -> np.ndarray:
    """Minimising control at every node, shape ``(n_t + 1, n_x)``.

    Recomputed from the stored values with the solver's own minimisation.
    Boundary columns hold NaN: the Dirichlet nodes carry no control.
    """
    grid = solution.config
    if solution.values.shape != (grid.n_t + 1, grid.n_x):
        raise ShapeMismatch(f"values have shape {solution.values.shape}")
    nodes = grid.nodes(params)
    controls = _grid_order(grid)
    exact = grid.control_search == "exact"
    out = np.full(solution.values.shape, np.nan)
    for n, tn in enumerate(grid.t_grid(params.horizon)):
        level = _Level(params, grid, tn, nodes[n, 1:-1])
        out[n, 1:-1] = level.best(solution.values[n], controls, exact)[0]
    return out
