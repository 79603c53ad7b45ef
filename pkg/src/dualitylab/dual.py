"""Dual problem: minimize the conjugate objective over martingale densities.

The feasible set is the polytope of nonnegative processes Z with Z_0 = 1
that are martingales and keep every traded asset's price process a
martingale after reweighting.  On a finite tree a density is pinned by its
leaf values, so the public polytope object uses the leaf parameterization
from ``treeops``; the solver additionally changes coordinates to the
induced leaf *measure* q = P * zeta, which lives inside the probability
simplex and keeps the barrier geometry bounded even when the densities
themselves span many orders of magnitude.

The objective is

    F = sum over consuming nodes of  P * dkappa * V(node, y * Z(node)),

with V the conjugate field.  Since the conjugate of any admissible field
descends infinitely steeply at 0, minimizers stay strictly positive
wherever the objective looks; a logarithmic barrier with decreasing weight
keeps iterates interior.  Newton steps are taken inside the affine set in
iterate-scaled (Dikin) coordinates, where the barrier contributes exactly
its weight to every diagonal entry, and the multipliers come from an SVD
least-squares solve rather than the squared-conditioning Schur complement.
Optimality is certified by the tighter of two true bounds: the separable
Lagrangian gap at the Newton multipliers and the linearized (Frank-Wolfe)
gap; when curvature dies along some directions (conjugates flatten for
huge arguments), vertex steps recover global progress.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import LinearConstraint, linprog, minimize

from .errors import ConvergenceError, DualityLabError, InfeasibleMarketError
from .market import MarketModel
from .treeops import Geometry, build_geometry, full_polytope_matrices
from .utility import UtilityField

ARBITRAGE_MARGIN = 1e-11
BOUNDARY_FLAG_LEVEL = 1e-6
_LP_OPTS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass
class MartingalePolytope:
    """Leaf-parameterized martingale-density constraints A zeta = b, zeta >= 0.

    ``agg`` maps leaf density values to per-node values, Z = agg @ zeta; the
    rows of A are the normalization Z_0 = 1 followed by one pricing row per
    (non-terminal node, tradable asset), ordered by node position then asset.
    """

    model: MarketModel
    A: np.ndarray
    b: np.ndarray
    agg: np.ndarray
    leaves: np.ndarray
    _interior: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def n_leaves(self) -> int:
        return self.leaves.size

    @property
    def n_constraints(self) -> int:
        return self.A.shape[0]

    def to_node_values(self, zeta: np.ndarray) -> np.ndarray:
        return self.agg @ np.asarray(zeta, dtype=float)

    def residual(self, zeta: np.ndarray) -> float:
        return float(np.max(np.abs(self.A @ np.asarray(zeta, dtype=float) - self.b)))

    def contains(self, zeta: np.ndarray, tol: float = 1e-9) -> bool:
        zeta = np.asarray(zeta, dtype=float)
        return bool(np.min(zeta) >= -tol and self.residual(zeta) <= tol)

    def interior_point(self) -> np.ndarray:
        if self._interior is None:
            self._interior = find_interior(self.A, self.b)
        return self._interior.copy()


def martingale_polytope(model: MarketModel) -> MartingalePolytope:
    A, b, agg = full_polytope_matrices(model)
    return MartingalePolytope(model=model, A=A, b=b, agg=agg, leaves=model.tree.leaves)


def find_interior(A: np.ndarray, b: np.ndarray, center=None) -> np.ndarray:
    """Strictly positive solution of A x = b, or raise on arbitrage.

    First tries the least-norm shift of ``center`` (ones by default); when
    that leaves the positive orthant, falls back to a max-margin LP.  A
    nonpositive optimal margin means no strictly positive point exists,
    which for the density polytope is exactly the presence of arbitrage.
    """
    n = A.shape[1]
    x0 = np.ones(n) if center is None else np.asarray(center, dtype=float)
    gram = A @ A.T
    try:
        shift = A.T @ np.linalg.solve(gram, b - A @ x0)
        x = x0 + shift
        if np.min(x) > 1e-9 and np.max(np.abs(A @ x - b)) < 1e-9:
            return x
    except np.linalg.LinAlgError:
        pass

    # max t  s.t.  A x = b,  x_i >= t
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=np.zeros(n),
        A_eq=a_eq,
        b_eq=b,
        bounds=[(None, None)] * n + [(None, 1.0)],
        method="highs",
        options=_LP_OPTS,
    )
    if res.status != 0 or res.x is None:
        raise InfeasibleMarketError(
            "no martingale density exists for this market (feasibility LP failed)"
        )
    margin = res.x[-1]
    if margin <= ARBITRAGE_MARGIN:
        raise InfeasibleMarketError(
            f"no strictly positive martingale density exists (margin {margin:.3g}); "
            "the market admits arbitrage"
        )
    return res.x[:-1]


# ---------------------------------------------------------------------------
# Geometry-scoped caches (measure coordinates)


def _measure_system(geo: Geometry):
    """Constraint system of the polytope in leaf-measure coordinates q = P zeta."""
    cached = getattr(geo, "_measure_system", None)
    if cached is None:
        prob = geo.tree.path_prob[geo.solve_leaves]
        cached = (geo.A / prob[None, :], geo.b, prob)
        geo._measure_system = cached
    return cached


def measure_interior(geo: Geometry) -> np.ndarray:
    """Strictly positive feasible leaf measure, cached on the geometry.

    Doubles as the no-arbitrage gate for the trimmed view: projection of the
    physical leaf measure first, max-margin LP as fallback.
    """
    cached = getattr(geo, "_measure_interior", None)
    if cached is None:
        Aq, b, prob = _measure_system(geo)
        cached = find_interior(Aq, b, center=prob)
        geo._measure_interior = cached
    return cached.copy()


def entropy_center(geo: Geometry) -> np.ndarray:
    """Probability-weighted log center of the polytope, in measure coordinates.

    Minimizes -sum_j P_j log q_j over the affine constraints: the natural
    well-scaled starting point, whose objective is its own barrier and whose
    Hessian P_j / q_j^2 never flattens.
    """
    cached = getattr(geo, "_entropy_center", None)
    if cached is not None:
        return cached.copy()
    Aq, b, prob = _measure_system(geo)
    q = measure_interior(geo)
    for _ in range(200):
        g = -prob / q
        h = prob / q**2
        step, lam2 = _kkt_step_diag(Aq, b, q, g, h)
        if lam2 / 2.0 <= 1e-14:
            break
        alpha = 1.0
        neg = step < 0.0
        if np.any(neg):
            alpha = min(1.0, 0.995 * float(np.min(-q[neg] / step[neg])))
        base = -float(np.dot(prob, np.log(q)))
        slope = float(np.dot(g, step))
        for _ in range(50):
            cand = q + alpha * step
            if np.min(cand) > 0.0 and -float(np.dot(prob, np.log(cand))) <= base + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        q = q + alpha * step
    geo._entropy_center = q
    return q.copy()


def ensure_full_density(geo: Geometry) -> np.ndarray:
    """Per-node values of one strictly positive density on the whole tree.

    Raises ``InfeasibleMarketError`` when none exists, so this doubles as
    the no-arbitrage gate used by both solvers.  Cached on the geometry.
    """
    cached = getattr(geo, "_full_interior_nodes", None)
    if cached is None:
        if geo.trimmed.size == geo.tree.n_nodes:
            prob = geo.tree.path_prob[geo.solve_leaves]
            cached = geo.agg @ (measure_interior(geo) / prob)
        else:
            A, b, agg = full_polytope_matrices(geo.model)
            cached = agg @ find_interior(A, b)
        geo._full_interior_nodes = cached
    return cached


# ---------------------------------------------------------------------------
# Dual solve


@dataclass
class DualSolution:
    """Optimal density and value of the dual problem at a given y."""

    Z: np.ndarray
    zeta: np.ndarray
    y: float
    value: float
    attained_on_boundary: bool
    iterations: int
    converged: bool
    model: MarketModel
    field: UtilityField


class _DualObjective:
    """F(q), gradient, and Hessian over the leaf-measure coordinates."""

    def __init__(self, geo: Geometry, field: UtilityField, y: float):
        self.geo = geo
        self.y = y
        tree = geo.tree
        prob = tree.path_prob[geo.solve_leaves]
        cons = [pos for pos in geo.trimmed if geo.consuming[pos]]
        self.coef = np.array(
            [tree.path_prob[pos] * geo.model.clock.dkappa[pos] for pos in cons]
        )
        self.w = field.weight_array([tree.ids[pos] for pos in cons])
        self.base = field.base()
        # Fast path: every consuming node is itself a trimmed leaf, so each
        # node density reads a single scaled coordinate Z = q / P.
        self.single = all(int(pos) in geo.leaf_order for pos in cons)
        if self.single:
            self.cols = np.array([geo.leaf_order[int(pos)] for pos in cons], dtype=np.int64)
            self.col_scale = 1.0 / prob[self.cols]
            self.M = None
        else:
            self.cols = None
            self.col_scale = None
            rows = [geo.order_of[int(pos)] for pos in cons]
            self.M = geo.agg[rows] / prob[None, :]

    def node_args(self, q: np.ndarray) -> np.ndarray:
        z = q[self.cols] * self.col_scale if self.single else self.M @ q
        return self.y * z / self.w

    def value(self, q: np.ndarray) -> float:
        return float(np.dot(self.coef * self.w, self.base.v(self.node_args(q))))

    def grad(self, q: np.ndarray) -> np.ndarray:
        args = self.node_args(q)
        # dV(node)/dZ = y v'(arg); v' = -inverse marginal of the base
        gnode = -self.coef * self.y * self.base.inv_u_prime(args)
        if self.single:
            out = np.zeros(q.size)
            np.add.at(out, self.cols, gnode * self.col_scale)
            return out
        return self.M.T @ gnode

    def hess_diag_or_dense(self, q: np.ndarray):
        """Returns (diag, None) on the fast path, else (None, dense)."""
        args = self.node_args(q)
        curv = self.coef * (self.y**2 / self.w) * _v_second(self.base, args)
        if self.single:
            d = np.zeros(q.size)
            np.add.at(d, self.cols, curv * self.col_scale**2)
            return d, None
        return None, (self.M.T * curv) @ self.M

    def lower_bound(self, A, b, nu) -> float:
        """Lagrangian lower bound on the polytope minimum, for any multipliers.

        Dualizing the equality rows leaves a separable minimization over the
        box [0, 1]^n (the measure coordinates never exceed 1), which has a
        closed form through the inverse marginal.  Only available on the
        fast path, where the objective is coordinate-separable.
        """
        if not self.single:
            return -math.inf
        a = A.T @ nu
        total = -float(np.dot(nu, b))

        mask = np.ones(a.size, dtype=bool)
        mask[self.cols] = False
        total += float(np.sum(np.minimum(0.0, a[mask])))

        ac = a[self.cols]
        k = self.y * self.col_scale / self.w
        c = self.coef * self.w
        pos = ac > 0.0
        if np.any(pos):
            marg = ac[pos] / (c[pos] * k[pos])
            z = self.base.u_prime(marg)
            val = c[pos] * self.base.v(z) + ac[pos] * z / k[pos]
            total += float(np.sum(val))
        if np.any(~pos):
            # Linear part nonpositive: the box minimum sits at q = 1.
            total += float(np.sum(c[~pos] * self.base.v(k[~pos]) + ac[~pos]))
        return total


def _v_second(base, y):
    """d2 v / dy2 of a base family: v'' = -d(inverse marginal)/dy > 0."""
    y = np.asarray(y, dtype=float)
    eps = 1e-7
    lo = np.maximum(y * (1.0 - eps), 1e-300)
    hi = y * (1.0 + eps)
    return (base.inv_u_prime(lo) - base.inv_u_prime(hi)) / (hi - lo)


def solve_dual(
    model: MarketModel,
    field: UtilityField,
    y: float,
    tol: float = 1e-8,
    max_iter: int = 500,
    warm_start: Optional[np.ndarray] = None,
    _geometry: Optional[Geometry] = None,
) -> DualSolution:
    """Minimize the clock-weighted conjugate over the density polytope.

    ``warm_start`` accepts the ``zeta`` of a previous solution on the same
    model.  The returned solution carries the optimal density on every node
    of the tree; on subtrees the clock never reaches, the density is
    extended with a scaled copy of a fixed interior density so that it
    satisfies all polytope constraints even though the value ignores it.
    """
    if y <= 0.0:
        raise DualityLabError(f"dual argument must be positive, got {y}")
    if field.family == "affine-test":
        raise DualityLabError("affine test field is not admissible for solving")
    geo = _geometry if _geometry is not None else build_geometry(model)
    ensure_full_density(geo)

    # The log and power conjugates factorize in y, so their minimizing
    # density does not depend on y: solve once at y = 1 (well scaled) and
    # map the value through the exact scaling law.
    if field.family in ("log", "power") and y != 1.0:
        ref = _scaling_reference(geo, model, field, tol, max_iter)
        if field.family == "log":
            wmass = _weighted_clock_mass(geo, field)
            value = ref.value - wmass * math.log(y)
        else:
            expo = field.gamma / (field.gamma - 1.0)
            value = ref.value * y**expo
        return DualSolution(
            Z=ref.Z,
            zeta=ref.zeta,
            y=y,
            value=value,
            attained_on_boundary=ref.attained_on_boundary,
            iterations=ref.iterations,
            converged=ref.converged,
            model=model,
            field=field,
        )

    Aq, b, prob = _measure_system(geo)
    n = prob.size

    q = None
    if warm_start is not None and np.asarray(warm_start).size == n:
        cand = np.asarray(warm_start, dtype=float) * prob
        if np.min(cand) > 0.0 and np.max(np.abs(Aq @ cand - b)) < 1e-8:
            q = cand
    if q is None:
        q = entropy_center(geo)

    obj = _DualObjective(geo, field, y)

    # Barrier weights: plain mu on consuming coordinates; coordinates the
    # objective never sees keep a small floor so they stay strictly interior
    # without drifting the value.
    dead_cols = np.array(
        [geo.leaf_order[int(pos)] for pos in geo.solve_leaves if geo.dead_root_mask[pos]],
        dtype=np.int64,
    )
    mu_floor = 1e-10

    def barrier_weights(mu: float) -> np.ndarray:
        w = np.full(n, mu)
        if dead_cols.size:
            w[dead_cols] = max(mu, mu_floor)
        return w

    # In measure coordinates the barrier curvature never drops below mu, so
    # the continuation can run essentially to machine precision; the deep
    # stages are what let Newton finish migrating mass through directions
    # where the conjugate has no curvature left.
    mus = [1e-2]
    while mus[-1] > 2e-16:
        mus.append(max(mus[-1] * 1e-2, 2e-16))

    eps = np.finfo(float).eps
    iterations = 0

    def newton_pass(q, mu, inner_tol, budget, f_stall):
        """Damped Newton until the decrement or the value progress dies.

        Returns the final iterate and the last KKT multipliers, which feed
        the Lagrangian gap certificate.
        """
        nonlocal iterations
        bw = barrier_weights(mu)
        f_prev = None
        stall = 0
        nu = None
        for _ in range(budget):
            if iterations >= max_iter:
                raise ConvergenceError(
                    f"dual solve at y={y} exceeded {max_iter} Newton iterations"
                )
            iterations += 1
            g_obj = obj.grad(q)
            g = g_obj - bw / q
            d_diag, d_dense = obj.hess_diag_or_dense(q)
            if d_dense is None:
                step, lam2, nu = _scaled_newton_step(Aq, b, q, g_obj, d_diag, bw)
            else:
                h_u = (q[:, None] * q[None, :]) * d_dense + np.diag(bw)
                du, lam2, nu = _kkt_step_dense(
                    Aq * q[None, :], b - Aq @ q, q * g_obj - bw, h_u
                )
                step = q * du
            if lam2 / 2.0 <= inner_tol:
                if lam2 > 0.0:
                    # Quadratic phase: the pending step squares the accuracy.
                    q = _line_search(obj, q, step, g, bw)
                return q, nu
            f_now = obj.value(q)
            if f_prev is not None and abs(f_prev - f_now) <= f_stall:
                stall += 1
                if stall >= 3:
                    return q, nu
            else:
                stall = 0
            f_prev = f_now
            q = _line_search(obj, q, step, g, bw)
        return q, nu

    for mu in mus[:-1]:
        scale = 1.0 + abs(obj.value(q))
        q, _ = newton_pass(
            q, mu, max(0.05 * mu * n, 1e-16), 120, max(0.02 * tol, 8.0 * eps) * scale
        )

    # Final stage.  Suboptimality is certified by the tighter of two true
    # bounds: the Lagrangian (separable Fenchel) gap at the Newton
    # multipliers and the linearized Frank-Wolfe gap.  When Newton stalls in
    # curvature-free directions, vertex steps with exact line search restore
    # global progress.
    mu = mus[-1]
    gap = math.inf
    done = False
    for _ in range(40):
        scale = 1.0 + abs(obj.value(q))
        q, nu = newton_pass(
            q, mu, max(1e-3 * tol, 5.0 * eps) * scale, 80,
            max(1e-3 * tol, 8.0 * eps) * scale,
        )
        if nu is not None:
            gap = obj.value(q) - obj.lower_bound(Aq, b, nu)
            if gap <= tol * scale:
                done = True
                break
        g = obj.grad(q)
        fw_gap, vertex = _linearized_gap(Aq, b, q, g)
        noise = 32.0 * eps * float(np.abs(g) @ (np.abs(q) + np.abs(vertex)))
        gap = min(gap, fw_gap)
        if fw_gap <= max(tol * scale, noise):
            done = True
            break
        # Vertex steps as a last resort; Newton under the deep barrier does
        # the heavy lifting, these only nudge past degenerate plateaus.
        for _ in range(8):
            q = _fw_line_search(obj, q, vertex, g)
            g = obj.grad(q)
            fw_gap, vertex = _linearized_gap(Aq, b, q, g)
            gap = min(gap, fw_gap)
    if not done:
        raise ConvergenceError(
            f"dual solve at y={y} could not certify tolerance {tol} "
            f"(certified gap {gap:.3g})"
        )

    # Snap back onto the equality manifold: vertex steps inherit the LP
    # engine's feasibility tolerance, which would otherwise leak into the
    # reported density.
    r = b - Aq @ q
    if float(np.max(np.abs(r))) > 1e-13:
        gram = Aq @ Aq.T
        try:
            corrected = q + Aq.T @ np.linalg.solve(gram, r)
        except np.linalg.LinAlgError:
            corrected = q + Aq.T @ np.linalg.lstsq(gram, r, rcond=None)[0]
        if float(np.min(corrected)) > 0.0:
            q = corrected

    zeta = q / prob
    zfull = _extend_density(geo, zeta)
    z_cons = obj.node_args(q) * obj.w / y
    return DualSolution(
        Z=zfull,
        zeta=zeta,
        y=y,
        value=obj.value(q),
        attained_on_boundary=bool(np.min(z_cons) < BOUNDARY_FLAG_LEVEL),
        iterations=iterations,
        converged=True,
        model=model,
        field=field,
    )


def _field_key(field: UtilityField):
    wkey = None if field.weights is None else id(field.weights)
    return (field.family, field.gamma, field.alpha, field.beta, wkey)


def _scaling_reference(geo, model, field, tol, max_iter) -> "DualSolution":
    """Dual solution at y = 1, cached per geometry and field.

    Re-solves when a tighter tolerance is requested than the cached entry
    was produced with.
    """
    cache = getattr(geo, "_dual_reference", None)
    if cache is None:
        cache = {}
        geo._dual_reference = cache
    key = _field_key(field)
    hit = cache.get(key)
    if hit is None or hit[1] > tol or not hit[0].converged:
        sol = solve_dual(model, field, 1.0, tol=tol, max_iter=max_iter, _geometry=geo)
        cache[key] = (sol, tol)
    return cache[key][0]


def _weighted_clock_mass(geo, field) -> float:
    tree = geo.tree
    dk = geo.model.clock.dkappa
    cons = np.flatnonzero(dk > 0.0)
    w = field.weight_array([tree.ids[int(k)] for k in cons])
    return float(np.dot(tree.path_prob[cons] * dk[cons], w))


def _linearized_gap(A, b, x, g):
    """Frank-Wolfe gap g @ (x - argmin) over the polytope; a true bound on
    the suboptimality of the convex objective at x."""
    res = linprog(
        g,
        A_eq=A,
        b_eq=b,
        bounds=[(0.0, None)] * g.size,
        method="highs",
        options=_LP_OPTS,
    )
    if res.status != 0 or res.x is None:
        raise ConvergenceError(f"gap-certificate LP failed: {res.message}")
    vertex = res.x
    return float(g @ (x - vertex)), vertex


def _kkt_step_core(A, r, g, hdiag):
    """Equality-constrained Newton step for a diagonal Hessian.

    Solves min 0.5 d' diag(h) d + g' d over A d = r.  The multipliers are
    the least-squares solution of (h^-1/2 A') nu ~ -(h^-1/2 g), which an
    SVD solves stably even when the curvature spans many orders of
    magnitude; forming the Schur complement A H^-1 A' explicitly would
    square that conditioning.
    """
    s = 1.0 / np.sqrt(hdiag)
    nu, *_ = np.linalg.lstsq(s[:, None] * A.T, -(s * g), rcond=None)
    step = -(s * s) * (g + A.T @ nu)
    if float(np.max(np.abs(r))) > 0.0:
        # Repair any feasibility drift through the plain projection.
        gram = A @ A.T
        try:
            step = step + A.T @ np.linalg.solve(gram, r)
        except np.linalg.LinAlgError:
            step = step + A.T @ np.linalg.lstsq(gram, r, rcond=None)[0]
    lam2 = float(np.dot(step, hdiag * step))
    return step, lam2, nu


def _kkt_step_diag(A, b, x, g, hdiag):
    step, lam2, _ = _kkt_step_core(A, b - A @ x, g, hdiag)
    return step, lam2


def _scaled_newton_step(Aq, b, q, g_obj, h_obj, bw):
    """Newton step in Dikin coordinates d(q) = q * du.

    Rescaling by the current iterate equalizes the barrier's diagonal
    contribution to exactly the barrier weight, so deep barrier stages stay
    numerically solvable even when the objective curvature collapses along
    some coordinates and explodes along others.  The multipliers are
    coordinate-free and are returned for gap certification.
    """
    g_u = q * g_obj - bw
    h_u = q * q * h_obj + bw
    A_u = Aq * q[None, :]
    du, lam2, nu = _kkt_step_core(A_u, b - Aq @ q, g_u, h_u)
    return q * du, lam2, nu


def _kkt_step_dense(A, r, g, hdense):
    scale = float(np.max(np.abs(np.diag(hdense)))) or 1.0
    ridge = 1e-13 * scale
    for _ in range(12):
        try:
            cf = cho_factor(hdense + ridge * np.eye(hdense.shape[0]))
            hg = cho_solve(cf, g)
            hat = cho_solve(cf, A.T)
            schur = A @ hat
            rhs = -A @ hg - r
            nu = np.linalg.solve(schur, rhs)
            step = -hg - hat @ nu
            lam2 = float(np.dot(step, hdense @ step))
            if lam2 < 0.0:
                raise np.linalg.LinAlgError
            return step, lam2, nu
        except np.linalg.LinAlgError:
            ridge *= 100.0
    raise ConvergenceError("dual Newton system could not be factorized")


def _fw_line_search(obj, q, vertex, g):
    """Exact line search for the true objective along a vertex direction.

    The derivative along the segment is monotone (convexity), so bisection
    on it finds the segment minimizer; a fraction-to-boundary cap keeps the
    iterate strictly positive for the following barrier steps.
    """
    d = vertex - q
    neg = d < 0.0
    alpha_hi = 1.0
    if np.any(neg):
        alpha_hi = min(1.0, 0.9999 * float(np.min(-q[neg] / d[neg])))

    def slope(alpha):
        return float(np.dot(obj.grad(q + alpha * d), d))

    lo, hi = 0.0, alpha_hi
    if slope(hi) <= 0.0:
        return q + hi * d
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if slope(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return q + lo * d


def _line_search(obj, x, step, g, bw):
    def phi(z):
        return obj.value(z) - float(np.dot(bw, np.log(z)))

    alpha = 1.0
    neg = step < 0.0
    if np.any(neg):
        alpha = min(1.0, 0.995 * float(np.min(-x[neg] / step[neg])))
    base = phi(x)
    slope = float(np.dot(g, step))
    for _ in range(60):
        cand = x + alpha * step
        if np.min(cand) > 0.0:
            val = phi(cand)
            if val <= base + 1e-4 * alpha * slope:
                return cand
        alpha *= 0.5
    cand = x + alpha * step
    return cand if np.min(cand) > 0.0 else x


def _extend_density(geo: Geometry, zeta) -> np.ndarray:
    """Per-node density on the whole tree, extended below the trimmed view.

    Below the trimmed region the optimizer is not determined by the value,
    so the density continues as a scaled copy of a fixed strictly positive
    density; the result satisfies every polytope constraint.
    """
    tree = geo.tree
    z = np.zeros(tree.n_nodes)
    z[geo.trimmed] = geo.agg @ zeta
    if geo.trimmed.size == tree.n_nodes:
        return z

    z_int = ensure_full_density(geo)
    trimmed_set = set(int(p) for p in geo.trimmed)
    for pos in range(tree.n_nodes):
        if int(pos) in trimmed_set:
            continue
        p = tree.parent[pos]
        ref = z_int[p]
        z[pos] = z[p] * (z_int[pos] / ref) if ref > 0 else 0.0
    return z


def dual_over_measures(
    model: MarketModel,
    field: UtilityField,
    y: float,
    tol: float = 1e-8,
) -> float:
    """Cross-check value: direct minimization over the full-tree polytope.

    Independent of :func:`solve_dual`: parameterizes by the density values
    on all tree leaves, builds the dense objective and derivatives, and
    hands the constrained program to a general-purpose solver.
    """
    if y <= 0.0:
        raise DualityLabError(f"dual argument must be positive, got {y}")
    poly = martingale_polytope(model)
    tree = model.tree
    clock = model.clock

    cons = np.flatnonzero(clock.dkappa > 0.0)
    coef = tree.path_prob[cons] * clock.dkappa[cons]
    w = field.weight_array([tree.ids[int(k)] for k in cons])
    M = poly.agg[cons]
    base = field.base()

    def args_of(zeta):
        return y * (M @ zeta) / w

    def fun(zeta):
        return float(np.dot(coef * w, base.v(args_of(zeta))))

    def jac(zeta):
        gnode = -coef * y * base.inv_u_prime(args_of(zeta))
        return M.T @ gnode

    def hess(zeta):
        curv = coef * (y**2 / w) * _v_second(base, args_of(zeta))
        return (M.T * curv) @ M

    # Conjugates of log/power blow up at 0; keep those coordinates off the
    # boundary with a tiny positive bound.  The bounded family is finite at 0.
    finite_at_zero = math.isfinite(float(base.v(0.0)))
    lb = 0.0 if finite_at_zero else 1e-14

    x0 = poly.interior_point()
    res = minimize(
        fun,
        x0,
        jac=jac,
        hess=hess,
        method="trust-constr",
        constraints=[LinearConstraint(poly.A, poly.b, poly.b)],
        bounds=[(lb, None)] * poly.n_leaves,
        options={"gtol": 1e-12, "xtol": 1e-14, "maxiter": 3000, "verbose": 0},
    )
    if not res.success and res.status not in (1, 2):
        raise ConvergenceError(
            f"direct polytope minimization failed at y={y}: {res.message}"
        )
    return float(res.fun)
