import logging
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.special import logsumexp

from checks import INFO, CheckResult, InputError, LaboratoryError, verdict
from fields import GridSpec, ScalarField, discrete_laplacian
from geometry import Polygon, axis_aligned_rectangle, chebyshev_set, diameter

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MAX_BACKTRACKS = 30
MAX_STEP_SCALE = 16.0


class EigensolverError(LaboratoryError):
    pass


class ZeroDenominator(EigensolverError):
    pass


class NonFiniteEncountered(EigensolverError):
    pass


class EmptyRegion(EigensolverError):
    pass


class InvalidLadder(InputError, EigensolverError):
    pass


@dataclass
class LadderConfig:
    p_list: Tuple[float, ...] = (2, 4, 8, 16, 32, 64)
    max_iter: int = 1500
    step_tol: float = 1e-7
    grad_tol: float = 1e-5
    window: int = 25

    def __post_init__(self):
        self.p_list = tuple(float(p) for p in self.p_list)
        if not self.p_list or self.p_list[0] != 2.0:
            raise InvalidLadder(f"ladder must start at p=2, got {list(self.p_list)}")
        if any(b <= a for a, b in zip(self.p_list, self.p_list[1:])):
            raise InvalidLadder(f"ladder must be strictly increasing, got {list(self.p_list)}")
        if self.max_iter < 1 or self.window < 1:
            raise InvalidLadder("max_iter and window must be positive")


@dataclass
class GroundState:
    p: float = 2.0
    field: Optional[ScalarField] = None
    lambda_p: float = float("nan")
    iterations: int = 0
    residual: float = float("nan")
    converged: bool = False
    flags: List[str] = dc_field(default_factory=list)
    history: List[Tuple[int, float, float]] = dc_field(default_factory=list)

    @property
    def root(self) -> float:
        """lambda_p^(1/p), the quantity that tends to the inverse inradius."""
        return float(self.lambda_p ** (1.0 / self.p))


class RayleighQuotient:
    """Discrete log-quotient on the inside nodes of a grid.

    Numerator: P1 gradients on the two triangles of every cell, weighted by
    half the cut-cell area. Denominator: lumped nodal mass.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        idx = -np.ones((grid.ny, grid.nx), dtype=int)
        idx[grid.inside_mask] = np.arange(grid.interior_count)
        self.n = grid.interior_count

        cj, ci = np.nonzero(grid.cell_weights > 0)
        n00 = idx[cj, ci]
        n10 = idx[cj, ci + 1]
        n01 = idx[cj + 1, ci]
        n11 = idx[cj + 1, ci + 1]
        half = 0.5 * grid.cell_weights[cj, ci]

        # lower-left triangle (n00, n10, n01), upper-right triangle (n11, n01, n10)
        self.gx = self._differences(np.concatenate([n10, n11]), np.concatenate([n00, n01]), grid.h)
        self.gy = self._differences(np.concatenate([n01, n11]), np.concatenate([n00, n10]), grid.h)
        self.weights = np.concatenate([half, half])
        self.mass = grid.node_weights[grid.inside_mask]

        w = sparse.diags(self.weights)
        self.stiffness = (self.gx.T @ w @ self.gx + self.gy.T @ w @ self.gy).tocsc()
        self._factor = None

    def _differences(self, plus: np.ndarray, minus: np.ndarray, h: float) -> sparse.csr_matrix:
        rows = np.arange(len(plus))
        keep_p = plus >= 0
        keep_m = minus >= 0
        r = np.concatenate([rows[keep_p], rows[keep_m]])
        c = np.concatenate([plus[keep_p], minus[keep_m]])
        d = np.concatenate([np.full(keep_p.sum(), 1.0 / h), np.full(keep_m.sum(), -1.0 / h)])
        return sparse.csr_matrix((d, (r, c)), shape=(len(plus), self.n))

    @property
    def factor(self):
        if self._factor is None:
            self._factor = splu(self.stiffness)
        return self._factor

    def precondition(self, vector: np.ndarray) -> np.ndarray:
        return self.factor.solve(vector)

    def energy(self, u: np.ndarray) -> float:
        return float(u @ (self.stiffness @ u))

    def log_terms(self, u: np.ndarray, p: float):
        gx = self.gx @ u
        gy = self.gy @ u
        g2 = gx * gx + gy * gy
        au = np.abs(u)
        with np.errstate(divide="ignore"):
            log_d = logsumexp(p * np.log(au), b=self.mass)
            log_n = logsumexp(0.5 * p * np.log(g2), b=self.weights)
        if not np.isfinite(log_d):
            raise ZeroDenominator("field vanishes at every inside node")
        return log_n, log_d, gx, gy, g2, au

    def evaluate(self, u: np.ndarray, p: float):
        """(log quotient, gradient of log quotient, relative Euler-Lagrange residual)."""
        log_n, log_d, gx, gy, g2, au = self.log_terms(u, p)
        if not np.isfinite(log_n):
            raise NonFiniteEncountered(f"numerator is not finite at p={p}")
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(g2 > 0, np.exp(np.log(self.weights) + 0.5 * p * np.log(g2) - log_n) / g2, 0.0)
            b = np.where(au > 0, np.exp(np.log(self.mass) + p * np.log(au) - log_d) / u, 0.0)
        grad_n = p * (self.gx.T @ (a * gx) + self.gy.T @ (a * gy))
        grad_d = p * b
        grad = grad_n - grad_d
        scale = np.abs(grad_d).max()
        residual = float(np.abs(grad).max() / scale) if scale > 0 else float("inf")
        return log_n - log_d, grad, residual


@lru_cache(maxsize=8)
def quotient_for(grid: GridSpec) -> RayleighQuotient:
    return RayleighQuotient(grid)


def rayleigh_quotient(field: ScalarField, p: float) -> float:
    rq = quotient_for(field.grid)
    log_n, log_d, *_ = rq.log_terms(field.inner, p)
    return float(np.exp(log_n - log_d))


def minimize_ground_state(polygon: Polygon, p: float, init: ScalarField, max_iter: int = 1500,
                          step_tol: float = 1e-7, grad_tol: float = 1e-5, window: int = 25) -> GroundState:
    grid = init.grid
    if grid.polygon is not polygon:
        logger.debug(f"minimize_ground_state: init grid belongs to {grid.polygon.name}, solving on it")
    rq = quotient_for(grid)
    u = np.maximum(init.inner, 0.0)
    if u.max() <= 0:
        raise ZeroDenominator("initial field has no positive inside value")
    u = u / u.max()
    lq, grad, residual = rq.evaluate(u, p)
    if not np.isfinite(lq):
        raise NonFiniteEncountered(f"initial quotient is not finite at p={p}")

    state = GroundState(p=float(p))
    state.history.append((0, float(np.exp(lq)), residual))
    log_history = [lq]
    scale = 1.0
    it = 0
    stalled = False
    for it in range(1, max_iter + 1):
        direction = -rq.precondition(grad)
        base = rq.energy(u) / p
        step = scale
        accepted = None
        for _ in range(MAX_BACKTRACKS):
            trial = np.maximum(u + step * base * direction, 0.0)
            top = trial.max()
            if not np.isfinite(top) or top <= 0:
                step *= 0.5
                continue
            trial /= top
            lq_t, grad_t, residual_t = rq.evaluate(trial, p)
            predicted = float(grad @ (trial - u))
            if np.isfinite(lq_t) and lq_t <= lq + ARMIJO * min(predicted, 0.0):
                accepted = (trial, lq_t, grad_t, residual_t)
                break
            step *= 0.5
        if accepted is None:
            stalled = True
            break
        scale = min(step * 1.5, MAX_STEP_SCALE) if step == scale else step
        u, lq, grad, residual = accepted
        log_history.append(lq)
        state.history.append((it, float(np.exp(lq)), residual))
        if residual < grad_tol:
            state.converged = True
            break
        if len(log_history) > window and np.expm1(log_history[-window - 1] - lq) < step_tol:
            state.converged = True
            break
    if stalled:
        state.flags.append("LineSearchStalled")
        logger.warning(f"p={p:g} line search stalled at iteration {it}, keeping the best iterate")
    elif not state.converged:
        state.flags.append("MaxIterExceeded")
        logger.warning(f"p={p:g} hit the iteration budget ({max_iter}), keeping the best iterate")

    values = np.full((grid.ny, grid.nx), np.nan)
    values[grid.inside_mask] = u
    state.field = ScalarField(grid, values, 0.0, "u_p")
    state.lambda_p = float(np.exp(lq))
    state.iterations = it
    state.residual = residual
    outcome = "converged" if state.converged else "stopped"
    logger.info(f"p={p:g} {outcome} after {it} iterations, lambda_p^(1/p)={state.root:.5g}")
    return state


def distance_field(grid: GridSpec) -> ScalarField:
    dist = grid.node_distances
    return ScalarField(grid, dist / np.nanmax(dist), 0.0, "u_p")


def continuation_solve(polygon: Polygon, ladder: LadderConfig, grid: GridSpec) -> List[GroundState]:
    states: List[GroundState] = []
    init = distance_field(grid)
    carried: List[str] = []
    for p in ladder.p_list:
        try:
            state = minimize_ground_state(
                polygon, p, init, ladder.max_iter, ladder.step_tol, ladder.grad_tol, ladder.window
            )
        except LaboratoryError as e:
            logger.warning(f"p={p:g} failed with {e.qualified_name}: {e}; continuing the ladder")
            carried.append(f"{e.qualified_name} at p={p:g}")
            continue
        state.flags.extend(carried)
        carried = []
        states.append(state)
        init = state.field
    if not states:
        raise EigensolverError(f"every rung of the ladder failed for {polygon.name}")
    return states


def gradient_bound_check(state: GroundState, polygon: Polygon) -> CheckResult:
    lam_inf = chebyshev_set(polygon).lambda_inf
    u = state.field
    tol = 10.0 * u.grid.h * lam_inf
    bound = (state.lambda_p * diameter(polygon)) ** (1.0 / (state.p - 1.0)) * u.sup
    observed = float(np.nanmax(u.gradient_magnitude))
    margin = observed - bound
    return CheckResult(
        name=f"gradient_upper_bound[p={state.p:g}]",
        status=verdict(margin <= tol),
        value=margin,
        threshold=tol,
        message=f"max |grad u_p| = {observed:.4g}, bound = {bound:.4g}",
        details={"bound": bound, "max_gradient": observed, "p": state.p},
    )


def lower_gradient_check(state: GroundState, polygon: Polygon, c: float = 0.5) -> CheckResult:
    if not 0.0 < c < 1.0:
        raise EmptyRegion(f"level c must lie in (0, 1), got {c}")
    lam_inf = chebyshev_set(polygon).lambda_inf
    u = state.field
    tol = 10.0 * u.grid.h * lam_inf
    inside = u.grid.inside_mask
    below = inside & (np.where(inside, u.values, np.inf) <= c)
    if not below.any():
        raise EmptyRegion(f"no inside node has u_p <= {c}")
    log_gradient = u.gradient_magnitude[below] / np.maximum(u.values[below], 1e-300)
    bound = np.log(1.0 / c) / (2.0 * diameter(polygon))
    observed = float(log_gradient.min())
    margin = observed - bound
    flags = ["LowExponent"] if state.p < 16 else []
    return CheckResult(
        name=f"gradient_lower_bound[p={state.p:g},c={c:g}]",
        status=verdict(margin >= -tol),
        value=margin,
        threshold=-tol,
        message=f"min |grad v_p| below level {c:g} is {observed:.4g}, bound {bound:.4g}",
        details={"bound": bound, "min_log_gradient": observed, "nodes": int(below.sum())},
        flags=flags,
    )


def superharmonicity_check(state: GroundState, lambda_inf: float) -> CheckResult:
    u = state.field
    tol = 10.0 * u.grid.h * lambda_inf
    worst = float(np.nanmax(discrete_laplacian(u)))
    return CheckResult(
        name=f"superharmonicity[p={state.p:g}]",
        status=INFO,
        value=worst,
        threshold=tol,
        message="max five-point Laplacian " + ("within" if worst <= tol else "above") + " tolerance",
        details={"holds": worst <= tol},
    )


def eigenvalue_oracle(polygon: Polygon, state: GroundState, rel_tol: float = 0.01) -> CheckResult:
    dims = axis_aligned_rectangle(polygon)
    if state.p != 2.0:
        return CheckResult(name="eigenvalue_oracle", status=INFO, message=f"oracle needs p=2, got {state.p:g}")
    if dims is None:
        return CheckResult(
            name="eigenvalue_oracle",
            status=INFO,
            value=state.lambda_p,
            message=f"no closed form for {polygon.name}",
        )
    a, b = dims
    exact = np.pi ** 2 * (1.0 / a ** 2 + 1.0 / b ** 2)
    err = abs(state.lambda_p - exact) / exact
    return CheckResult(
        name="eigenvalue_oracle",
        status=verdict(err <= rel_tol),
        value=err,
        threshold=rel_tol,
        message=f"lambda_2 = {state.lambda_p:.6g}, exact {exact:.6g}",
        details={"lambda_2": state.lambda_p, "exact": exact},
    )


def extrapolated_root(states: List[GroundState]) -> float:
    """lambda_p^(1/p) carried to p = inf from the top two rungs, taking the gap to shrink like log(p)/p."""
    top = states[-1]
    if len(states) < 2:
        return top.root
    prev = states[-2]
    x_prev, x_top = np.log(prev.p) / prev.p, np.log(top.p) / top.p
    # log(p)/p peaks at p = e and cannot separate rungs below it
    if prev.p < np.e or abs(x_prev - x_top) < 1e-12:
        return top.root
    return float((prev.root * x_top - top.root * x_prev) / (x_top - x_prev))


def lambda_limit_check(states: List[GroundState], lambda_inf: float, rel_tol: float = 0.1) -> CheckResult:
    roots = [s.root for s in states]
    top = states[-1]
    estimate = extrapolated_root(states)
    err = abs(estimate - lambda_inf) / lambda_inf
    trend = bool(np.all(np.diff(roots) <= 1e-9 * max(roots))) or bool(np.all(np.diff(roots) >= 0))
    return CheckResult(
        name="lambda_limit",
        status=verdict(err <= rel_tol) if top.p >= 32 else INFO,
        value=err,
        threshold=rel_tol,
        message=f"extrapolated lambda_p^(1/p) = {estimate:.5g} (p={top.p:g} gives {top.root:.5g}), "
                f"1/R = {lambda_inf:.5g}",
        details={
            "p": [s.p for s in states],
            "roots": roots,
            "root": top.root,
            "extrapolated": estimate,
            "raw_error": abs(top.root - lambda_inf) / lambda_inf,
            "monotone": trend,
        },
    )
