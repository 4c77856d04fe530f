"""Rigid-body equilibrium under contact forces.

The object's acceleration under n frictional point contacts is bilinear in
the normal forces F and the friction coefficients gamma, delta in [-1, 1]:

    accel = N F + mu B (gamma o F) + mu T (delta o F) + g6

where accel stacks (a, alpha), g6 stacks (g, 0), and N, B, T are 6 x n
matrices whose top blocks are scaled by 1/m and bottom blocks by 1/I.  Each
contact presses along the inward direction -n_i, so column i of N is
[-n_i / m; -((p_i - com) x n_i) / I]; B and T are built from the tangent
frame directions b_i, t_i with positive sign, matching the friction force
mu F_i (gamma_i b_i + delta_i t_i).

Stability energy is the minimum of ||accel||^2 over the friction box, a
convex box-constrained quadratic program.  A differentiable relaxation
bounds each acceleration row independently and penalizes rows whose
attainable interval excludes zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SolverError
from .scene import GRAVITY, ObjectModel, check_unit_normals, tangent_bases

DEFAULT_MU = 1.0
QP_TOL = 1e-8
QP_MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class EquilibriumSystem:
    """Assembled acceleration model for a fixed set of contacts.

    n_mat columns hold the inward force directions (-n_i), so the
    acceleration identity reads literally
    accel == n_mat @ F + mu * b_mat @ (gamma * F) + mu * t_mat @ (delta * F) + gravity6.
    """

    n_mat: np.ndarray
    b_mat: np.ndarray
    t_mat: np.ndarray
    gravity6: np.ndarray
    mu: float
    forces: np.ndarray

    @property
    def n_contacts(self):
        return self.forces.shape[0]

    def acceleration(self, gamma, delta, forces=None):
        """Evaluate the bilinear acceleration map at (gamma, delta)."""
        f = self.forces if forces is None else np.asarray(forces, dtype=float)
        return (self.n_mat @ f
                + self.mu * (self.b_mat @ (np.asarray(gamma) * f))
                + self.mu * (self.t_mat @ (np.asarray(delta) * f))
                + self.gravity6)


@dataclass(frozen=True, eq=False)
class StabilityResult:
    """Minimizer of the stability QP: energy == ||accel||^2 at (gamma, delta)."""

    energy: float
    gamma: np.ndarray
    delta: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True, eq=False)
class ForceExistenceResult:
    """Minimizer of ||accel||^2 over both bounded forces and friction."""

    energy: float
    forces: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    accel: np.ndarray


def _freeze(arr):
    arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
    arr.flags.writeable = False
    return arr


def assemble(obj: ObjectModel, points, normals, forces,
             mu: float = DEFAULT_MU, gravity=GRAVITY, bases=None) -> EquilibriumSystem:
    """Build the 6 x n acceleration matrices for a contact set.

    ``bases`` may supply explicit tangent frames as a (b, t) pair of (n, 3)
    arrays; by default frames come from the deterministic pivot rule.  With
    a degenerate inertia (all points at the com) the angular rows are zero.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
    n = points.shape[0]
    normals = np.asarray(normals, dtype=float).reshape(n, 3) if n else np.zeros((0, 3))
    forces = np.atleast_1d(np.asarray(forces, dtype=float))
    if forces.shape != (n,):
        raise ShapeError(f"expected {n} forces, got shape {forces.shape}")
    if np.any(forces < 0) or not np.all(np.isfinite(forces)):
        raise ValueError("contact forces must be finite and non-negative")
    if mu < 0:
        raise ValueError("friction coefficient must be non-negative")
    gravity = np.asarray(gravity, dtype=float)
    if gravity.shape != (3,) or not np.all(np.isfinite(gravity)):
        raise ValueError("gravity must be a finite 3-vector")
    if n:
        check_unit_normals(normals)
        if bases is None:
            b_dirs, t_dirs = tangent_bases(normals)
        else:
            b_dirs, t_dirs = (np.asarray(a, dtype=float).reshape(n, 3) for a in bases)
        arms = points - obj.com
        inv_inertia = 1.0 / obj.inertia if obj.inertia > 0 else 0.0
        def blocks(dirs, sign):
            top = sign * dirs.T / obj.mass
            bottom = sign * np.cross(arms, dirs).T * inv_inertia
            return np.vstack([top, bottom])
        n_mat = blocks(normals, -1.0)
        b_mat = blocks(b_dirs, 1.0)
        t_mat = blocks(t_dirs, 1.0)
    else:
        n_mat = b_mat = t_mat = np.zeros((6, 0))
    gravity6 = np.concatenate([gravity, np.zeros(3)])
    return EquilibriumSystem(n_mat=_freeze(n_mat), b_mat=_freeze(b_mat),
                             t_mat=_freeze(t_mat), gravity6=_freeze(gravity6),
                             mu=float(mu), forces=_freeze(forces))


def assemble_from_contact_state(obj: ObjectModel, state, mu: float = DEFAULT_MU,
                                gravity=GRAVITY):
    """System over the state's force-carrying points, using object normals.

    Returns (system, indices of the contact points).  Zero-force points
    contribute nothing to the acceleration, so dropping them is exact.
    """
    idx = np.flatnonzero(state.force > 0)
    sys = assemble(obj, obj.points[idx], obj.normals[idx], state.force[idx],
                   mu=mu, gravity=gravity)
    return sys, idx


# A feasible x is accepted once the Frank-Wolfe duality gap certifies
# f(x) - f* <= max_s grad . (x - s) < GAP_TOL, matching the contract that
# the returned energy is the global minimum within 1e-8.
GAP_TOL = 1e-8


def _solve_projected(mat, const, project, x0, tol, max_iter, gap, polish=None):
    """Minimize ||mat @ x + const||^2 over a convex set.

    ADMM with an exact x-update (the 6 x 6 Gram matrix is eigendecomposed
    once, so the regularized normal equations solve in closed form for any
    penalty) and the exact Euclidean projection as the z-update.  The
    penalty follows the standard residual-balancing rule.  Iterates stop
    when the duality gap ``gap(grad, z)`` certifies optimality within
    GAP_TOL or the projected-gradient norm falls below ``tol``.  An
    optional ``polish(z)`` callback may propose an exact active-set
    solution; it is accepted only if the gap certifies it (ill-conditioned
    free subspaces otherwise stretch the tail by orders of magnitude).
    Returns (x, converged, gap).
    """
    z = project(np.asarray(x0, dtype=float))
    k = z.size
    if k == 0:
        return z, True, 0.0
    gram = mat @ mat.T
    lam, q = np.linalg.eigh(gram)
    lam = np.maximum(lam, 0.0)
    lam_max = lam[-1]
    if lam_max <= 0.0:
        return z, True, 0.0
    pg_step = 1.0 / (2.0 * lam_max)
    mtc = mat.T @ const

    def value(pt):
        r = mat @ pt + const
        return float(r @ r)

    rho = 1.0
    s = np.zeros(k)
    best_z, best_f, best_gap = z, value(z), np.inf
    for it in range(max_iter):
        b = rho * (z - s) - 2.0 * mtc
        y = q @ ((q.T @ (mat @ b)) / (lam + 0.5 * rho))
        x = (b - mat.T @ y) / rho
        z_new = project(x + s)
        s = s + x - z_new
        prim = np.linalg.norm(x - z_new)
        dual = rho * np.linalg.norm(z_new - z)
        z = z_new
        r = mat @ z + const
        f = float(r @ r)
        g = 2.0 * (mat.T @ r)
        # f >= 0 everywhere, so f itself bounds the suboptimality as well
        gap_val = min(gap(g, z), f)
        if f < best_f:
            best_z, best_f, best_gap = z, f, gap_val
        if gap_val < GAP_TOL:
            return z, True, gap_val
        pg = (z - project(z - pg_step * g)) / pg_step
        if float(np.linalg.norm(pg)) < tol:
            return z, True, gap_val
        if polish is not None and it % 50 == 49:
            cand = polish(best_z)
            if cand is not None:
                cand = project(cand)
                f_cand = value(cand)
                g_cand = 2.0 * (mat.T @ (mat @ cand + const))
                cand_gap = min(gap(g_cand, cand), f_cand)
                if cand_gap < GAP_TOL and f_cand <= best_f + GAP_TOL:
                    return cand, True, cand_gap
        if it % 10 == 9:
            # scale-aware residual balancing with a clamped penalty
            prim_rel = prim / max(np.linalg.norm(x), np.linalg.norm(z), 1.0)
            dual_rel = dual / max(rho * np.linalg.norm(s), 1.0)
            if prim_rel > 10.0 * dual_rel and rho < 1e6:
                rho *= 2.0
                s /= 2.0
            elif dual_rel > 10.0 * prim_rel and rho > 1e-4:
                rho /= 2.0
                s *= 2.0
    return best_z, False, best_gap


def stability_energy(sys: EquilibriumSystem, tol: float = QP_TOL,
                     max_iter: int = QP_MAX_ITER) -> StabilityResult:
    """Minimize ||accel||^2 over gamma, delta in [-1, 1]^n.

    The objective is a convex quadratic over a box, so the returned energy
    is the global minimum within solver tolerance.  Raises SolverError
    (carrying the best iterate) if the projected gradient norm does not
    fall below ``tol`` within ``max_iter`` iterations.
    """
    n = sys.n_contacts
    const = sys.n_mat @ sys.forces + sys.gravity6
    if n == 0:
        return StabilityResult(energy=float(const @ const), gamma=np.zeros(0),
                               delta=np.zeros(0), accel=_freeze(const))
    scaled = sys.mu * sys.forces
    mat = np.hstack([sys.b_mat * scaled, sys.t_mat * scaled])

    def project(z):
        return np.clip(z, -1.0, 1.0)

    def gap(g, z):
        # linear minimization over the box is -sum |g|
        return float(g @ z + np.abs(g).sum())

    def polish(z):
        # exact solve on the coordinates the iterate left strictly inside
        free = np.abs(z) < 1.0 - 1e-7
        cand = np.where(free, 0.0, np.sign(z))
        rhs = -(mat @ cand + const)
        if free.any():
            sol, *_ = np.linalg.lstsq(mat[:, free], rhs, rcond=None)
            cand[free] = sol
        return cand

    x, converged, gap_val = _solve_projected(mat, const, project,
                                             np.zeros(2 * n), tol, max_iter,
                                             gap=gap, polish=polish)
    accel = mat @ x + const
    result = StabilityResult(energy=float(accel @ accel), gamma=_freeze(x[:n]),
                             delta=_freeze(x[n:]), accel=_freeze(accel))
    if not converged:
        raise SolverError(
            f"stability QP not converged: optimality gap {gap_val:.3e} > {GAP_TOL:.1e}",
            result=result)
    return result


def _interval_bounds(sys: EquilibriumSystem, forces):
    """Per-row lower/upper bounds of the attainable acceleration."""
    fric = sys.mu * (np.abs(sys.b_mat) + np.abs(sys.t_mat))
    lower = (sys.n_mat - fric) @ forces + sys.gravity6
    upper = (sys.n_mat + fric) @ forces + sys.gravity6
    return lower, upper, fric


def stability_loss(sys: EquilibriumSystem) -> float:
    """Differentiable relaxation: penalty for rows whose interval excludes 0.

    With F_fric = mu |B| + mu |T| (elementwise), returns
    1' max{(N - F_fric) F + g6, 0} - 1' min{(N + F_fric) F + g6, 0}.
    Always >= 0; zero stability energy implies zero loss.
    """
    lower, upper, _ = _interval_bounds(sys, sys.forces)
    return float(np.maximum(lower, 0.0).sum() - np.minimum(upper, 0.0).sum())


def _check_masked_args(sys, force_map, likelihood):
    force_map = np.asarray(force_map, dtype=float)
    likelihood = np.asarray(likelihood, dtype=float)
    n = sys.n_contacts
    if force_map.shape != (n,) or likelihood.shape != (n,):
        raise ShapeError(f"expected two length-{n} arrays, got {force_map.shape} and {likelihood.shape}")
    if np.any(force_map < 0) or np.any(likelihood < 0) or np.any(likelihood > 1):
        raise ValueError("force map must be >= 0 and likelihood within [0, 1]")
    return force_map, likelihood


def stability_loss_masked(sys: EquilibriumSystem, force_map, likelihood) -> float:
    """stability_loss with F replaced by force_map o likelihood."""
    force_map, likelihood = _check_masked_args(sys, force_map, likelihood)
    lower, upper, _ = _interval_bounds(sys, force_map * likelihood)
    return float(np.maximum(lower, 0.0).sum() - np.minimum(upper, 0.0).sum())


def loss_gradient(sys: EquilibriumSystem, force_map, likelihood) -> np.ndarray:
    """Analytic subgradient of stability_loss_masked w.r.t. the force map.

    At a hinge kink the active-side (one-sided) derivative is returned:
    a row counts as active when its bound has reached zero.
    """
    force_map, likelihood = _check_masked_args(sys, force_map, likelihood)
    if sys.n_contacts == 0:
        return np.zeros(0)
    lower, upper, fric = _interval_bounds(sys, force_map * likelihood)
    low_active = lower >= 0.0
    up_active = upper <= 0.0
    grad_eff = ((sys.n_mat - fric).T @ low_active.astype(float)
                - (sys.n_mat + fric).T @ up_active.astype(float))
    return grad_eff * likelihood


def solve_force_existence(obj: ObjectModel, points, normals,
                          mu: float = DEFAULT_MU, gravity=GRAVITY,
                          f_max: float = 20.0, tol: float = QP_TOL,
                          max_iter: int = QP_MAX_ITER) -> ForceExistenceResult:
    """Minimize ||accel||^2 over forces and friction jointly.

    Variables are reparameterized per contact as (u, v, w) = (F, gamma F,
    delta F) with 0 <= u <= f_max and |v|, |w| <= u, which makes the problem
    a convex quadratic over a product of convex sets; the projection is
    computed exactly per contact.  Used to test whether admissible forces
    exist that hold the object still.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 3)
    n = points.shape[0]
    gravity6 = np.concatenate([np.asarray(gravity, dtype=float), np.zeros(3)])
    if n == 0:
        return ForceExistenceResult(energy=float(gravity6 @ gravity6),
                                    forces=np.zeros(0), gamma=np.zeros(0),
                                    delta=np.zeros(0), accel=_freeze(gravity6))
    sys = assemble(obj, points, normals, np.zeros(n), mu=mu, gravity=gravity)
    mat = np.hstack([sys.n_mat, mu * sys.b_mat, mu * sys.t_mat])

    def project(z):
        u, v, w = z[:n].copy(), z[n:2 * n], z[2 * n:]
        sv, sw = np.sign(v), np.sign(w)
        beta, gam = np.abs(v), np.abs(w)
        lo = np.minimum(beta, gam)
        hi = np.maximum(beta, gam)

        def phi(u_val):
            return ((u_val - u) ** 2
                    + (np.minimum(beta, u_val) - beta) ** 2
                    + (np.minimum(gam, u_val) - gam) ** 2)

        # per-piece minimizers of the convex piecewise quadratic over [0, inf);
        # the cap at f_max commutes with the 1-d argmin by convexity
        c1 = np.maximum(u, hi)
        c2 = np.clip(0.5 * (u + hi), lo, hi)
        c3 = np.clip((u + lo + hi) / 3.0, 0.0, lo)
        cands = np.stack([c1, c2, c3])
        best = cands[np.argmin(np.stack([phi(c) for c in cands]), axis=0),
                     np.arange(n)]
        best = np.minimum(best, f_max)
        return np.concatenate([best, sv * np.minimum(beta, best),
                               sw * np.minimum(gam, best)])

    def gap(g, z):
        # linear minimization over each capped cone: v, w oppose their
        # gradients at magnitude u, then u goes to f_max when profitable
        coef = g[:n] - np.abs(g[n:2 * n]) - np.abs(g[2 * n:])
        return float(g @ z - f_max * np.minimum(coef, 0.0).sum())

    def polish(z):
        # exact solve on the active-set pattern of the iterate: per contact
        # the force may be off/capped/free and each friction component may
        # be free or tied to the force at the cone boundary
        u, v, w = z[:n], z[n:2 * n], z[2 * n:]
        slack = 1e-7
        cols, baseline = [], np.zeros(6)
        plan = []
        for i in range(n):
            if u[i] <= 1e-9 * (1.0 + f_max):
                plan.append(("off",))
                continue
            tied_v = abs(v[i]) >= u[i] * (1.0 - slack)
            tied_w = abs(w[i]) >= u[i] * (1.0 - slack)
            u_col = mat[:, i].copy()
            if tied_v:
                u_col += np.sign(v[i]) * mat[:, n + i]
            if tied_w:
                u_col += np.sign(w[i]) * mat[:, 2 * n + i]
            capped = u[i] >= f_max * (1.0 - slack)
            entry = ["cap" if capped else "var", tied_v and np.sign(v[i]),
                     tied_w and np.sign(w[i])]
            if capped:
                baseline += f_max * u_col
            else:
                entry.append(len(cols))
                cols.append(u_col)
            if not tied_v:
                entry.append(("v", len(cols)))
                cols.append(mat[:, n + i])
            if not tied_w:
                entry.append(("w", len(cols)))
                cols.append(mat[:, 2 * n + i])
            plan.append(tuple(entry))
        if not cols:
            sol = np.zeros(0)
        else:
            sol, *_ = np.linalg.lstsq(np.column_stack(cols),
                                      -(baseline + gravity6), rcond=None)
        cand = np.zeros(3 * n)
        for i, entry in enumerate(plan):
            if entry[0] == "off":
                continue
            kind, sv, sw = entry[0], entry[1], entry[2]
            rest = list(entry[3:])
            ui = f_max if kind == "cap" else float(sol[rest.pop(0)])
            cand[i] = ui
            cand[n + i] = sv * ui if sv else 0.0
            cand[2 * n + i] = sw * ui if sw else 0.0
            for tag, pos in rest:
                cand[(n if tag == "v" else 2 * n) + i] = float(sol[pos])
        return cand

    x, converged, gap_val = _solve_projected(mat, gravity6, project,
                                             np.zeros(3 * n), tol, max_iter,
                                             gap=gap, polish=polish)
    u, v, w = x[:n], x[n:2 * n], x[2 * n:]
    safe = np.where(u > 0, u, 1.0)
    gamma = np.clip(v / safe, -1.0, 1.0)
    delta = np.clip(w / safe, -1.0, 1.0)
    accel = mat @ x + gravity6
    result = ForceExistenceResult(energy=float(accel @ accel), forces=_freeze(u),
                                  gamma=_freeze(gamma), delta=_freeze(delta),
                                  accel=_freeze(accel))
    if not converged:
        raise SolverError(
            f"force-existence QP not converged: optimality gap {gap_val:.3e} > {GAP_TOL:.1e}",
            result=result)
    return result
