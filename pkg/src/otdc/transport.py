"""Discrete optimal transport solvers.

``exact_ot`` solves the Kantorovich linear program with the transportation
simplex, i.e. network simplex specialised to the complete bipartite graph
between the two supports. ``sinkhorn`` solves the entropic problem by
alternating diagonal scaling and falls back to log-domain updates when the
Gibbs kernel underflows. The 1-D routines work on quantile functions.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .dist import DiscreteDistribution, Schema

logger = logging.getLogger(__name__)

EXACT_MAX_SUPPORT = 512
MARGINAL_MISMATCH_TOL = 1e-9


def hamming_cost(schema: Schema) -> np.ndarray:
    """Number of attributes in which two joint tuples differ."""
    grids = np.indices(schema.shape).reshape(len(schema.shape), -1)
    return (grids[:, :, None] != grids[:, None, :]).sum(axis=0).astype(float)


def _numeric_codes(domain) -> np.ndarray:
    try:
        return np.array([float(v) for v in domain])
    except (TypeError, ValueError):
        return np.arange(len(domain), dtype=float)


def sqeuclidean_cost(schema: Schema) -> np.ndarray:
    """Squared Euclidean distance between numerically coded tuples.

    An attribute whose values all parse as numbers is coded by value,
    otherwise by position in its domain.
    """
    grids = np.indices(schema.shape).reshape(len(schema.shape), -1)
    coords = np.stack(
        [_numeric_codes(dom)[g] for (_, dom), g in zip(schema.attributes, grids)]
    )
    diff = coords[:, :, None] - coords[:, None, :]
    return (diff**2).sum(axis=0)


COST_FUNCTIONS = {"hamming": hamming_cost, "sqeuclid": sqeuclidean_cost}


def cost_matrix(schema: Schema, kind: str = "hamming") -> np.ndarray:
    try:
        return COST_FUNCTIONS[kind](schema)
    except KeyError:
        raise ValueError(
            f"unknown cost {kind!r}; expected one of {sorted(COST_FUNCTIONS)}"
        ) from None


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between a source and a target histogram."""

    plan: np.ndarray
    source: np.ndarray
    target: np.ndarray

    @property
    def row_marginal(self) -> np.ndarray:
        return self.plan.sum(axis=1)

    @property
    def col_marginal(self) -> np.ndarray:
        return self.plan.sum(axis=0)

    def cost(self, C: np.ndarray) -> float:
        return float(np.sum(self.plan * C))

    def marginal_violation(self) -> float:
        return float(
            np.abs(self.row_marginal - self.source).sum()
            + np.abs(self.col_marginal - self.target).sum()
        )


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.01
    max_iter: int = 10_000
    tol: float = 1e-9
    log_domain: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")


@dataclass(frozen=True)
class SinkhornResult:
    plan: TransportPlan
    iterations: int
    residual: float
    converged: bool
    log_domain: bool


def _histograms(mu, nu, C):
    a = mu.mass if isinstance(mu, DiscreteDistribution) else np.asarray(mu, float)
    b = nu.mass if isinstance(nu, DiscreteDistribution) else np.asarray(nu, float)
    C = np.asarray(C, dtype=float)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match ({a.size}, {b.size})")
    if np.any(~np.isfinite(C)) or np.any(C < 0):
        raise ValueError("cost entries must be finite and non-negative")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("histograms must be non-negative")
    if abs(a.sum() - b.sum()) > MARGINAL_MISMATCH_TOL:
        raise ValueError(
            f"marginal mass mismatch: {a.sum():.12g} vs {b.sum():.12g}"
        )
    return a, b, C


# --------------------------------------------------------------------------
# exact solver


def _least_cost_start(a, b, C):
    """Initial basic feasible solution by the matrix-minimum rule.

    Returns ``m + n - 1`` basic cells forming a spanning tree of the
    bipartite graph, some possibly carrying zero flow.
    """
    m, n = C.shape
    supply, demand = a.copy(), b.copy()
    row_open = np.ones(m, bool)
    col_open = np.ones(n, bool)
    masked = C.copy()
    flow = np.zeros((m, n))
    basis = []
    rows_left, cols_left = m, n
    while rows_left + cols_left > 1:
        k = int(np.argmin(masked))
        i, j = divmod(k, n)
        x = min(supply[i], demand[j])
        flow[i, j] = x
        basis.append((i, j))
        supply[i] -= x
        demand[j] -= x
        # close exactly one line unless it is the last cell
        if (supply[i] <= demand[j] and rows_left > 1) or cols_left == 1:
            row_open[i] = False
            masked[i, :] = np.inf
            rows_left -= 1
            demand[j] = max(demand[j], 0.0)
        else:
            col_open[j] = False
            masked[:, j] = np.inf
            cols_left -= 1
            supply[i] = max(supply[i], 0.0)
    return flow, basis


class _Tree:
    """Spanning-tree basis. Rows are nodes ``0..m-1``, columns ``m..m+n-1``."""

    def __init__(self, m, n, cells):
        self.m, self.n = m, n
        self.adj = [set() for _ in range(m + n)]
        for i, j in cells:
            self.add(i, j)

    def add(self, i, j):
        self.adj[i].add(self.m + j)
        self.adj[self.m + j].add(i)

    def remove(self, i, j):
        self.adj[i].discard(self.m + j)
        self.adj[self.m + j].discard(i)

    def potentials(self, C):
        m = self.m
        pot = np.full(m + self.n, np.nan)
        pot[0] = 0.0
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for w in self.adj[u]:
                if np.isnan(pot[w]):
                    # u_i + v_j = C_ij on basic cells
                    pot[w] = C[u, w - m] - pot[u] if u < m else C[w, u - m] - pot[u]
                    queue.append(w)
        return pot[:m], pot[m:]

    def path(self, src, dst):
        prev = {src: None}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            if u == dst:
                break
            for w in self.adj[u]:
                if w not in prev:
                    prev[w] = u
                    queue.append(w)
        nodes = [dst]
        while prev[nodes[-1]] is not None:
            nodes.append(prev[nodes[-1]])
        return nodes[::-1]


def _transport_simplex(a, b, C, max_pivots=None):
    m, n = C.shape
    flow, basis = _least_cost_start(a, b, C)
    tree = _Tree(m, n, basis)
    scale = max(1.0, float(np.abs(C).max()))
    tol = 1e-12 * scale
    max_pivots = max_pivots or 50 * (m + n) * max(m, n) + 1000
    degenerate_run = 0
    bland = False
    for pivots in range(max_pivots):
        u, v = tree.potentials(C)
        reduced = C - u[:, None] - v[None, :]
        if bland:
            neg = np.flatnonzero(reduced.ravel() < -tol)
            if neg.size == 0:
                return flow, pivots
            k = int(neg[0])
        else:
            k = int(np.argmin(reduced))
            if reduced.flat[k] >= -tol:
                return flow, pivots
        i, j = divmod(k, n)
        nodes = tree.path(i, m + j)
        # cells along the tree path from row i to column j; alternate -,+,-
        cells = []
        for p, q in zip(nodes, nodes[1:]):
            cells.append((p, q - m) if p < m else (q, p - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta, leave = min((flow[c], c) for c in minus)
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        flow[i, j] += theta
        flow[leave] = 0.0
        tree.remove(*leave)
        tree.add(i, j)
        if theta <= tol * 1e-3:
            degenerate_run += 1
            if degenerate_run > 10 * (m + n) and not bland:
                logger.debug("switching to Bland's rule after degenerate pivots")
                bland = True
        else:
            degenerate_run = 0
    raise RuntimeError(f"transport simplex did not terminate in {max_pivots} pivots")


def exact_ot(mu, nu, cost) -> tuple[TransportPlan, float]:
    """Optimal coupling of ``mu`` and ``nu`` for the linear cost ``cost``.

    ``mu`` and ``nu`` are histograms (arrays or ``DiscreteDistribution``) of
    equal total mass. Zero-mass entries are dropped before solving; each
    remaining support may hold at most ``EXACT_MAX_SUPPORT`` points.
    """
    a, b, C = _histograms(mu, nu, cost)
    rows, cols = np.flatnonzero(a > 0), np.flatnonzero(b > 0)
    if rows.size > EXACT_MAX_SUPPORT or cols.size > EXACT_MAX_SUPPORT:
        raise ValueError(
            f"supports {rows.size}x{cols.size} exceed the exact solver limit "
            f"of {EXACT_MAX_SUPPORT}; use sinkhorn"
        )
    plan = np.zeros_like(C)
    if rows.size and cols.size:
        aa, bb = a[rows], b[cols]
        bb = bb * (aa.sum() / bb.sum())
        sub, _ = _transport_simplex(aa, bb, C[np.ix_(rows, cols)])
        plan[np.ix_(rows, cols)] = np.clip(sub, 0.0, None)
    tp = TransportPlan(plan, a, b)
    return tp, tp.cost(C)


# --------------------------------------------------------------------------
# entropic solver


def _sinkhorn_scaling(a, b, K, cfg):
    u = np.ones_like(a)
    v = np.ones_like(b)
    residual = np.inf
    for it in range(1, cfg.max_iter + 1):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u = a / (K @ v)
            v = b / (K.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            return None
        residual = float(np.abs(u * (K @ v) - a).sum())
        if residual <= cfg.tol:
            break
    return u[:, None] * K * v[None, :], it, residual


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """``log(sum(exp(a)))`` along ``axis``; stable, and -inf for empty mass."""
    m = a.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - m).sum(axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


ANNEAL_STAGE_ITERS = 100


def _sinkhorn_log(a, b, C, cfg):
    """Log-domain iterations with epsilon scaling and a Newton finish.

    Degenerate costs (many tied optimal plans, as with Hamming) make plain
    iterations converge sublinearly at small epsilon. Halving epsilon from
    the cost scale and warm-starting the potentials avoids most of that;
    the intermediate stages get a short iteration budget each. On small
    problems a final stage that still stalls is finished by Newton steps
    on the dual. Every update, Newton steps included, counts against
    ``cfg.max_iter`` in the final stage.
    """
    la, lb = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    stages = []
    eps = max(float(C.max()), cfg.epsilon)
    while eps > cfg.epsilon:
        stages.append(eps)
        eps /= 2
    stages.append(cfg.epsilon)
    newton = a.size + b.size <= NEWTON_MAX_DIM

    def sweeps(f, g, eps, n):
        done, residual = 0, np.inf
        for done in range(1, n + 1):
            f = eps * la - eps * logsumexp((g[None, :] - C) / eps, axis=1)
            g = eps * lb - eps * logsumexp((f[:, None] - C) / eps, axis=0)
            rows = np.exp(logsumexp((f[:, None] + g[None, :] - C) / eps, axis=1))
            residual = float(np.abs(rows - a).sum())
            if residual <= cfg.tol:
                break
        return f, g, done, residual

    total = 0
    for eps in stages[:-1]:
        f, g, done, _ = sweeps(f, g, eps, ANNEAL_STAGE_ITERS)
        total += done

    eps, left = cfg.epsilon, cfg.max_iter
    plain = min(left, NEWTON_SWITCH_ITERS) if newton else left
    f, g, done, residual = sweeps(f, g, eps, plain)
    total, left = total + done, left - done
    if residual > cfg.tol and newton and left > 0:
        f, g, done = _newton_polish(la, lb, C, eps, f, g, cfg.tol,
                                    min(NEWTON_MAX_STEPS, left))
        total, left = total + done, left - done
        # back to plain sweeps for whatever budget is left; after a
        # successful Newton finish the first sweep already meets tol
        if left > 0:
            f, g, done, residual = sweeps(f, g, eps, left)
            total += done
    logP = (f[:, None] + g[None, :] - C) / eps
    return np.exp(logP), total, residual


NEWTON_MAX_DIM = 1000
NEWTON_SWITCH_ITERS = 1000
NEWTON_MAX_STEPS = 50


def _newton_polish(la, lb, C, eps, f, g, tol, max_steps=NEWTON_MAX_STEPS):
    """Damped Newton ascent on the entropic dual, from Sinkhorn's potentials.

    Matrix scaling slows to a crawl when the plan is nearly degenerate;
    Newton's method converges quadratically there. The last column
    potential is pinned to remove the constant shift of the dual.
    """
    a, b = np.exp(la), np.exp(lb)
    m, n = a.size, b.size

    def dual(f, g):
        return f @ a + g @ b - eps * np.exp(logsumexp(
            ((f[:, None] + g[None, :] - C) / eps).ravel(), axis=0))

    steps = 0
    for steps in range(1, max_steps + 1):
        P = np.exp((f[:, None] + g[None, :] - C) / eps)
        r, c = P.sum(axis=1), P.sum(axis=0)
        if np.abs(r - a).sum() + np.abs(c - b).sum() <= tol:
            break
        grad = np.concatenate([a - r, (b - c)[:-1]])
        H = np.zeros((m + n - 1, m + n - 1))
        H[:m, :m] = np.diag(r)
        H[m:, m:] = np.diag(c[:-1])
        H[:m, m:] = P[:, :-1]
        H[m:, :m] = P[:, :-1].T
        H /= eps
        H[np.diag_indices_from(H)] += 1e-14
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        df = step[:m]
        dg = np.append(step[m:], 0.0)
        base, slope, t = dual(f, g), grad @ step, 1.0
        while t > 1e-10 and dual(f + t * df, g + t * dg) < base + 1e-4 * t * slope:
            t /= 2
        f, g = f + t * df, g + t * dg
    return f, g, steps


def sinkhorn(mu, nu, cost, cfg: SinkhornConfig | None = None) -> SinkhornResult:
    """Entropic OT plan ``diag(u) K diag(v)`` with ``K = exp(-C / epsilon)``.

    Iterates until the L1 violation of both marginals is at most
    ``cfg.tol`` or ``cfg.max_iter`` is reached; the outcome is reported in
    ``converged`` rather than raised.
    """
    cfg = cfg or SinkhornConfig()
    a_full, b_full, C_full = _histograms(mu, nu, cost)
    rows, cols = np.flatnonzero(a_full > 0), np.flatnonzero(b_full > 0)
    a, b = a_full[rows], b_full[cols]
    b = b * (a.sum() / b.sum())
    C = C_full[np.ix_(rows, cols)]

    log_domain = cfg.log_domain
    spent = 0
    if not log_domain:
        K = np.exp(-C / cfg.epsilon)
        if np.any(K == 0):
            logger.debug("Gibbs kernel underflows at epsilon=%g", cfg.epsilon)
            log_domain = True
        else:
            out = _sinkhorn_scaling(a, b, K, cfg)
            if out is None:
                log_domain = True
            elif out[2] > cfg.tol:
                logger.debug("scaling stalled at residual %g; retrying in log domain", out[2])
                spent = out[1]
                log_domain = True
    if log_domain:
        out = _sinkhorn_log(a, b, C, cfg)
    sub, iterations, _ = out
    iterations += spent

    plan = np.zeros_like(C_full)
    plan[np.ix_(rows, cols)] = sub
    tp = TransportPlan(plan, a_full, b_full)
    residual = tp.marginal_violation()
    return SinkhornResult(tp, iterations, residual, residual <= cfg.tol, log_domain)


# --------------------------------------------------------------------------
# one-dimensional routines


def _samples(values, weights=None):
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty sample set")
    if weights is None:
        w = np.full(x.size, 1.0 / x.size)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != x.shape:
            raise ValueError("values and weights differ in length")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()
    # merge ties so the quantile function has one step per distinct value
    support, inverse = np.unique(x, return_inverse=True)
    merged = np.bincount(inverse, weights=w, minlength=support.size)
    keep = merged > 0
    return support[keep], merged[keep]


def quantile_function(values, weights=None):
    """Right-continuous-CDF quantile ``t -> inf{x : F(x) >= t}`` as a callable."""
    x, w = _samples(values, weights)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0

    def q(t):
        idx = np.searchsorted(cdf, np.asarray(t, dtype=float), side="left")
        return x[np.clip(idx, 0, x.size - 1)]

    return q


def wasserstein_1d(u_values, v_values, u_weights=None, v_weights=None, order=1.0):
    """Exact ``W_p`` between discrete 1-D distributions via quantiles."""
    if order < 1:
        raise ValueError("order must be >= 1")
    x, wx = _samples(u_values, u_weights)
    y, wy = _samples(v_values, v_weights)
    cx, cy = np.cumsum(wx), np.cumsum(wy)
    cx[-1] = cy[-1] = 1.0
    levels = np.union1d(cx, cy)
    dt = np.diff(np.concatenate([[0.0], levels]))
    qx = x[np.clip(np.searchsorted(cx, levels, side="left"), 0, x.size - 1)]
    qy = y[np.clip(np.searchsorted(cy, levels, side="left"), 0, y.size - 1)]
    total = float(np.sum(dt * np.abs(qx - qy) ** order))
    return total ** (1.0 / order)


def barycenter_1d(u_values, v_values, alpha, grid=1000, u_weights=None, v_weights=None):
    """Two-measure 1-D barycenter with weight ``alpha`` on the first measure.

    Returns ``(values, weights)``: the averaged quantile function sampled at
    the ``grid`` cell centres ``(k + 1/2) / grid``, each with mass
    ``1 / grid``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if grid < 2:
        raise ValueError("grid must be at least 2")
    t = (np.arange(grid) + 0.5) / grid
    qu = quantile_function(u_values, u_weights)(t)
    qv = quantile_function(v_values, v_weights)(t)
    return alpha * qu + (1.0 - alpha) * qv, np.full(grid, 1.0 / grid)
