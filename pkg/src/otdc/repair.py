"""Optimal-transport repair of a dataset for one CI constraint.

The probabilistic cleaner looks for a coupling whose source marginal is the
empirical distribution of the data and whose target marginal satisfies the
constraint, at minimum expected cost. The CI set is not convex, so the
solver works from several starts:

* a penalty path that alternates an entropic transport step with a soft
  target marginal and a closed-form projection of the target onto the CI
  set, tightening the penalty until the two agree;
* the projection of the data distribution itself.

Each start is improved by exact LPs. Holding the Y|Z factor of the target
fixed makes the problem linear in the (X, Z) factor and vice versa, and a
trust-region step on the linearised product moves both factors together.
The cheapest target is re-projected onto the CI set and the final plan is
solved exactly against it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .dist import (
    CIConstraint,
    DiscreteDistribution,
    Schema,
    ci_projection,
    ci_violation,
    conditional,
    empirical_distribution,
    marginal,
)
from .transport import (
    EXACT_MAX_SUPPORT,
    SinkhornConfig,
    TransportPlan,
    cost_matrix,
    exact_ot,
    logsumexp,
    sinkhorn,
)

logger = logging.getLogger(__name__)

MAX_OUTER = 200
OUTER_TOL = 1e-7
REFINE_MAX_VARS = 200_000


@dataclass(frozen=True)
class RepairProblem:
    data: list
    schema: Schema
    sigma: CIConstraint
    cost: str = "hamming"
    ci_tol: float = 1e-6
    reg: SinkhornConfig = field(default_factory=lambda: SinkhornConfig(epsilon=0.01))

    def __post_init__(self):
        if len(self.data) == 0:
            raise ValueError("repair needs a non-empty dataset")
        self.sigma.validate(self.schema)


@dataclass(frozen=True)
class ProbabilisticCleaner:
    """Row-stochastic map ``pi(v' | v)`` for every source tuple in the support."""

    schema: Schema
    source_support: np.ndarray
    conditional: np.ndarray

    def __post_init__(self):
        rows = self.conditional.sum(axis=1)
        if np.any(self.conditional < 0) or np.any(np.abs(rows - 1.0) > 1e-9):
            raise ValueError("cleaner rows must be probability vectors")

    def row(self, tup) -> np.ndarray:
        code = self.schema.encode(tup)
        pos = np.searchsorted(self.source_support, code)
        if pos >= self.source_support.size or self.source_support[pos] != code:
            raise KeyError(f"tuple {tup!r} is outside the cleaner's support")
        return self.conditional[pos]

    def mapping(self) -> dict[tuple, dict[tuple, float]]:
        out = {}
        for code, row in zip(self.source_support, self.conditional):
            nz = np.flatnonzero(row > 0)
            out[self.schema.decode(code)] = {
                self.schema.decode(j): float(row[j]) for j in nz
            }
        return out


@dataclass(frozen=True)
class RepairResult:
    plan: TransportPlan
    target: DiscreteDistribution
    cleaner: ProbabilisticCleaner
    transport_cost: float
    ci_violation_before: float
    ci_violation_after: float
    iterations: int
    converged: bool
    lifted: bool = False


def cleaner_from_plan(plan: TransportPlan, schema: Schema) -> ProbabilisticCleaner:
    """Condition a plan on its source: ``pi(v' | v) = pi(v, v') / pi(v)``."""
    rows = plan.plan.sum(axis=1)
    support = np.flatnonzero(plan.source > 0)
    if np.any(rows[support] <= 0):
        bad = support[rows[support] <= 0]
        raise ValueError(f"plan has zero mass on source rows {bad.tolist()}")
    cond = plan.plan[support] / rows[support, None]
    return ProbabilisticCleaner(schema, support, cond)


def apply_cleaner(data, cleaner: ProbabilisticCleaner, seed: int) -> list[tuple]:
    """Resample every tuple from its cleaner row with a seeded generator."""
    schema = cleaner.schema
    codes = schema.encode_many(data)
    pos = np.searchsorted(cleaner.source_support, codes)
    pos_c = np.clip(pos, 0, cleaner.source_support.size - 1)
    outside = cleaner.source_support[pos_c] != codes
    if np.any(outside):
        first = int(np.flatnonzero(outside)[0])
        raise KeyError(f"tuple {tuple(data[first])!r} is outside the cleaner's support")
    rng = np.random.default_rng(seed)
    draws = rng.random(len(codes))
    cum = np.cumsum(cleaner.conditional, axis=1)
    last = cleaner.conditional.shape[1] - 1 - np.argmax(cleaner.conditional[:, ::-1] > 0, axis=1)
    out = np.empty(len(codes), dtype=np.int64)
    for r in np.unique(pos_c):
        sel = pos_c == r
        hit = np.searchsorted(cum[r], draws[sel], side="right")
        out[sel] = np.minimum(hit, last[r])
    return [schema.decode(int(c)) for c in out]


def lift_unsaturated(
    pi_s: TransportPlan,
    P: DiscreteDistribution,
    u_attrs,
    w_attrs,
) -> TransportPlan:
    """Extend a plan over the constraint attributes ``U`` to all of ``V``.

    ``pi(uw, u'w') = pi_s(u, u') P(w | u)`` when ``w == w'`` and zero
    otherwise, so no mass moves along ``W``.
    """
    schema = P.schema
    u_attrs, w_attrs = list(u_attrs), list(w_attrs)
    if set(u_attrs) & set(w_attrs) or set(u_attrs) | set(w_attrs) != set(schema.names):
        raise ValueError("U and W must partition the schema attributes")
    PU = marginal(P, u_attrs)
    if pi_s.plan.shape != (PU.schema.size, PU.schema.size):
        raise ValueError("plan shape does not match the U domain")
    if np.abs(pi_s.row_marginal - PU.mass).sum() > 1e-9:
        raise ValueError("plan source marginal differs from the U-marginal of P")
    if not w_attrs:
        return TransportPlan(pi_s.plan.copy(), P.mass.copy(), pi_s.col_marginal)

    cond = conditional(P, w_attrs, u_attrs)
    pw_u = np.nan_to_num(cond.table)  # (dU, dW); undefined rows carry no plan mass
    dU, dW = pw_u.shape
    # lifted[u, w, u', w] = pi_s[u, u'] * P(w|u), axes in (U-group, W-group) order
    lifted = np.zeros((dU, dW, dU, dW))
    idx = np.arange(dW)
    lifted[:, idx, :, idx] = (pi_s.plan[None, :, :] * pw_u.T[:, :, None])
    lifted = lifted.reshape(dU * dW, dU * dW)

    # reorder rows/cols from (U, W) grouping back to schema order
    us = PU.schema
    ws = schema.restrict(w_attrs)
    order = list(us.names) + list(ws.names)
    shape = [len(schema.domain(n)) for n in order]
    perm = np.argsort([schema.position(n) for n in order])
    index = np.arange(schema.size).reshape(shape).transpose(perm).ravel()
    # index[k] = grouped position of schema code k
    lifted = lifted[np.ix_(index, index)]
    return TransportPlan(lifted, P.mass.copy(), lifted.sum(axis=0))


# --------------------------------------------------------------------------
# saturated solver


def _soft_target_sinkhorn(logP, C, logQ, eps, rho, f, g, iters):
    """Entropic plan with hard source marginal and KL-penalised target."""
    damp = rho / (rho + eps)
    for _ in range(iters):
        f = eps * logP - eps * logsumexp((g[None, :] - C) / eps, axis=1)
        g = damp * (eps * logQ - eps * logsumexp((f[:, None] - C) / eps, axis=0))
    return f, g


def _penalty_path(P, sigma, C, eps):
    """Continuation in the penalty weight; returns the final target estimate."""
    support = np.flatnonzero(P.mass > 0)
    Cs = C[support]
    logP = np.log(P.mass[support])
    scale = max(float(Cs.max()), 1.0)
    eps = eps * scale
    Q = ci_projection(P, sigma).mass
    f = np.zeros(support.size)
    g = np.zeros(P.schema.size)
    rho = 1e-2 * scale
    rho_max = 1e6 * scale
    outer = 0
    for outer in range(1, MAX_OUTER + 1):
        logQ = np.log(np.maximum(Q, 1e-300))
        f, g = _soft_target_sinkhorn(logP, Cs, logQ, eps, rho, f, g, iters=20)
        R = np.exp(logsumexp((f[:, None] + g[None, :] - Cs) / eps, axis=0))
        R_dist = DiscreteDistribution(P.schema, R / R.sum())
        Q_new = ci_projection(R_dist, sigma).mass
        moved = float(np.abs(Q_new - Q).sum())
        Q = Q_new
        if rho >= rho_max and moved < OUTER_TOL:
            return Q, outer, True
        rho = min(rho * 1.5, rho_max)
    return Q, outer, False


def _plan_to(P, Q, C, reg):
    if (
        np.count_nonzero(P.mass) <= EXACT_MAX_SUPPORT
        and np.count_nonzero(Q > 0) <= EXACT_MAX_SUPPORT
    ):
        plan, _ = exact_ot(P.mass, Q, C)
        return plan, True
    res = sinkhorn(P.mass, Q, C, reg)
    M = res.plan.plan
    rows = M.sum(axis=1)
    # the source marginal is a hard constraint: rescale rows onto it
    with np.errstate(invalid="ignore", divide="ignore"):
        M = np.where(rows[:, None] > 0, M * (P.mass / rows)[:, None], 0.0)
    return TransportPlan(M, P.mass.copy(), M.sum(axis=0)), res.converged


def _group_codes(schema, sigma):
    """Flattened X, Y and Z group index of every joint code."""
    digits = np.indices(schema.shape).reshape(len(schema.shape), -1)
    out = []
    for names in (sigma.x, sigma.y, sigma.z):
        pos = [schema.position(n) for n in schema.names if n in set(names)]
        code = np.zeros(schema.size, dtype=np.int64)
        for p in pos:
            code = code * schema.shape[p] + digits[p]
        out.append(code)
    return out


def _conditional_factor(Q, own, z, n_own, n_z):
    """``Q(own | z)`` as an (n_own, n_z) array, uniform where ``Q(z) = 0``."""
    joint = np.bincount(own * n_z + z, weights=Q, minlength=n_own * n_z)
    joint = joint.reshape(n_own, n_z)
    pz = joint.sum(axis=0)
    return np.where(pz > 0, joint / np.where(pz > 0, pz, 1.0), 1.0 / n_own)


def _block_lp(P_s, C_s, fixed_factor, free, n_free):
    """Cheapest plan whose target is ``T(free) * fixed_factor``; ``T`` is free."""
    s, d = C_s.shape
    n_pi = s * d
    rows = sp.kron(sp.eye(s), np.ones((1, d)))
    cols = sp.hstack([
        sp.kron(np.ones((1, s)), sp.eye(d)),
        -sp.csr_matrix((fixed_factor, (np.arange(d), free)), shape=(d, n_free)),
    ])
    A = sp.vstack([sp.hstack([rows, sp.csr_matrix((s, n_free))]), cols]).tocsc()
    b = np.concatenate([P_s, np.zeros(d)])
    c = np.concatenate([C_s.ravel(), np.zeros(n_free)])
    res = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    T = np.clip(res.x[n_pi:], 0.0, None)
    return T[free] * fixed_factor


def _refine(P, sigma, C, Q, y_first=True, max_rounds=50):
    """Alternate exact LP steps over the X|Z and Y|Z factors of the target.

    ``Q`` need not be CI-consistent: the first step keeps one conditional
    factor of ``Q`` and re-optimises the other side, which yields a
    consistent target.
    """
    support = np.flatnonzero(P.mass > 0)
    P_s, C_s = P.mass[support], C[support]
    gx, gy, gz = _group_codes(P.schema, sigma)
    nx, ny, nz = gx.max() + 1, gy.max() + 1, gz.max() + 1
    blocks = [(gy, gx, ny, nx), (gx, gy, nx, ny)]
    if not y_first:
        blocks.reverse()
    best = np.inf
    for _ in range(max_rounds):
        start = best
        for own, other, n_own, n_other in blocks:
            factor = _conditional_factor(Q, own, gz, n_own, nz)[own, gz]
            cand = _block_lp(P_s, C_s, factor, other * nz + gz, n_other * nz)
            if cand is None:
                continue
            cand = cand / cand.sum()
            cost = exact_ot(P_s, cand, C_s)[1]
            if cost < best - 1e-12:
                best, Q = cost, cand
        if start - best < 1e-10:
            break
    return Q


class _JointLP:
    """LP step on both factors of ``Q = A(x, z) * B(y | z)``, linearised at
    ``(A0, B0)`` and kept within an infinity-norm trust region.

    The sparsity pattern is fixed, so it is built once; each step only
    refreshes the values of the two linearised blocks.
    """

    def __init__(self, P_s, C_s, ax, by, n_a, n_b, b_z):
        s, d = C_s.shape
        self.P_s, self.ax, self.by = P_s, ax, by
        self.n_pi, self.n_a, self.n_b = s * d, n_a, n_b
        n_z = b_z.max() + 1
        self.n_z = n_z
        k = np.arange(s * d)
        j = np.arange(d)
        self.rows = np.concatenate([k // d, s + k % d, s + j, s + j, s + d + b_z])
        self.cols = np.concatenate([
            k, k, self.n_pi + ax, self.n_pi + n_a + by, self.n_pi + n_a + np.arange(n_b),
        ])
        self.fixed = np.ones(2 * s * d)
        self.shape = (s + d + n_z, self.n_pi + n_a + n_b)
        self.c = np.concatenate([C_s.ravel(), np.zeros(n_a + n_b)])

    def __call__(self, A0, B0, radius):
        vals = np.concatenate([self.fixed, -B0[self.by], -A0[self.ax], np.ones(self.n_b)])
        A = sp.csc_matrix((vals, (self.rows, self.cols)), shape=self.shape)
        b = np.concatenate([self.P_s, -A0[self.ax] * B0[self.by], np.ones(self.n_z)])
        lo = np.concatenate([np.zeros(self.n_pi), np.maximum(0.0, A0 - radius),
                             np.maximum(0.0, B0 - radius)])
        hi = np.concatenate([np.full(self.n_pi, np.inf), A0 + radius,
                             np.minimum(1.0, B0 + radius)])
        res = linprog(self.c, A_eq=A, b_eq=b, bounds=np.column_stack([lo, hi]),
                      method="highs")
        if res.status != 0:
            return None
        x = np.clip(res.x, 0.0, None)
        return x[self.n_pi:self.n_pi + self.n_a], x[self.n_pi + self.n_a:]


def _polish(P, sigma, C, Q, radius=0.25, min_radius=1e-7, max_steps=500):
    """Trust-region sequential LP over both conditional factors at once.

    Block steps stall where moving X|Z and Y|Z together is needed; a joint
    step along the linearised product gets past those points.
    """
    support = np.flatnonzero(P.mass > 0)
    P_s, C_s = P.mass[support], C[support]
    gx, gy, gz = _group_codes(P.schema, sigma)
    nx, ny, nz = gx.max() + 1, gy.max() + 1, gz.max() + 1
    ax, by = gx * nz + gz, gy * nz + gz
    step_lp = _JointLP(P_s, C_s, ax, by, nx * nz, ny * nz, np.arange(ny * nz) % nz)
    A = np.bincount(ax, weights=Q, minlength=nx * nz)
    B = _conditional_factor(Q, gy, gz, ny, nz).ravel()
    Q = A[ax] * B[by]
    Q = Q / Q.sum()
    best = exact_ot(P_s, Q, C_s)[1]
    for _ in range(max_steps):
        if radius < min_radius:
            break
        step = step_lp(A, B, radius)
        if step is not None:
            A1, B1 = step
            Q1 = A1[ax] * B1[by]
            if Q1.sum() > 0:
                Q1 = Q1 / Q1.sum()
                cost = exact_ot(P_s, Q1, C_s)[1]
                if cost < best - 1e-12:
                    A, B, Q, best = A1, B1, Q1, cost
                    radius = min(1.0, 2 * radius)
                    continue
        radius /= 4
    return Q


def _distinct(arrays, tol=1e-9):
    out = []
    for a in arrays:
        if all(np.abs(a - b).sum() > tol for b in out):
            out.append(a)
    return out


def _solve_saturated(P, sigma, C, reg):
    Q_path, outer, converged = _penalty_path(P, sigma, C, reg.epsilon)
    starts = [ci_projection(P, sigma).mass, Q_path]
    support = np.count_nonzero(P.mass)
    if support * P.schema.size <= REFINE_MAX_VARS:
        refined = [
            _refine(P, sigma, C, Q, y_first)
            for Q in (P.mass, starts[0], Q_path)
            for y_first in (True, False)
        ]
        starts = [_polish(P, sigma, C, Q) for Q in _distinct(refined)]
    candidates = []
    for target in starts:
        # exact CI consistency, then the exact plan for that target
        target = ci_projection(DiscreteDistribution(P.schema, target), sigma).mass
        plan, ok = _plan_to(P, target, C, reg)
        candidates.append((plan.cost(C), plan, ok))
    cost, plan, ok = min(candidates, key=lambda c: c[0])
    # the penalty path is only one start; what counts is whether the plan
    # to the winning target was solved to tolerance
    if not converged:
        logger.debug("penalty path stopped after %d rounds; best of %d starts kept",
                     outer, len(candidates))
    return plan, outer, ok


def solve_probabilistic_cleaner(prob: RepairProblem) -> RepairResult:
    """Minimum-cost coupling from the data distribution to a CI-consistent one.

    Constraints that do not mention every attribute are solved on the
    constraint attributes and lifted back to the full schema.
    """
    schema, sigma = prob.schema, prob.sigma
    P = empirical_distribution(prob.data, schema)
    before = ci_violation(P, sigma)
    C_full = cost_matrix(schema, prob.cost)

    if before <= prob.ci_tol or np.count_nonzero(P.mass) == 1:
        plan = TransportPlan(np.diag(P.mass), P.mass.copy(), P.mass.copy())
        return RepairResult(
            plan, P, cleaner_from_plan(plan, schema), 0.0, before, before, 0, True
        )

    lifted = not sigma.is_saturated(schema)
    if lifted:
        u_attrs = [n for n in schema.names if n in set(sigma.attributes)]
        w_attrs = [n for n in schema.names if n not in set(sigma.attributes)]
        PU = marginal(P, u_attrs)
        plan_u, outer, converged = _solve_saturated(
            PU, sigma, cost_matrix(PU.schema, prob.cost), prob.reg
        )
        plan = lift_unsaturated(plan_u, P, u_attrs, w_attrs)
    else:
        plan, outer, converged = _solve_saturated(P, sigma, C_full, prob.reg)

    target = DiscreteDistribution(schema, np.clip(plan.col_marginal, 0.0, None))
    after = ci_violation(target, sigma)
    return RepairResult(
        plan=plan,
        target=target,
        cleaner=cleaner_from_plan(plan, schema),
        transport_cost=plan.cost(C_full),
        ci_violation_before=before,
        ci_violation_after=after,
        iterations=outer,
        converged=converged and after <= prob.ci_tol,
        lifted=lifted,
    )


# --------------------------------------------------------------------------
# deterministic maps

DETERMINISTIC_MAX_SUPPORT = 12
DETERMINISTIC_MAX_DOMAIN = 16


def solve_deterministic_map(prob: RepairProblem, tol: float = 1e-9):
    """Cheapest transport map ``T`` with ``T(D)`` consistent with ``sigma``.

    Exhaustive branch and bound over maps from the distinct tuples of the
    data to the joint domain. The cost is summed over data rows, so bag
    duplicates must all move to the same image.
    """
    schema = prob.schema
    codes = schema.encode_many(prob.data)
    support, counts = np.unique(codes, return_counts=True)
    if support.size > DETERMINISTIC_MAX_SUPPORT or schema.size > DETERMINISTIC_MAX_DOMAIN:
        raise ValueError(
            f"exact map search supports at most {DETERMINISTIC_MAX_SUPPORT} distinct "
            f"tuples over a domain of {DETERMINISTIC_MAX_DOMAIN}"
        )
    C = cost_matrix(schema, prob.cost)
    n = counts.sum()
    order = np.argsort(-counts, kind="stable")
    support, counts = support[order], counts[order]
    choices = [np.argsort(C[s], kind="stable") for s in support]

    def consistent(images):
        mass = np.bincount(images, weights=counts, minlength=schema.size) / n
        return ci_violation(DiscreteDistribution(schema, mass), prob.sigma) <= tol

    # upper bound: collapse everything onto the most frequent tuple
    best_cost = float(np.sum(counts * C[support, support[0]]))
    best = [int(support[0])] * support.size
    images = [0] * support.size

    def search(k, acc):
        nonlocal best_cost, best
        if acc >= best_cost:
            return
        if k == support.size:
            if consistent(np.array(images)):
                best_cost, best = acc, list(images)
            return
        for t in choices[k]:
            step = acc + counts[k] * C[support[k], t]
            if step >= best_cost:
                break
            images[k] = int(t)
            search(k + 1, step)

    search(0, 0.0)
    mapping = {schema.decode(int(s)): schema.decode(t) for s, t in zip(support, best)}
    return mapping, best_cost


def apply_map(data, mapping) -> list[tuple]:
    return [mapping[tuple(t)] for t in data]
