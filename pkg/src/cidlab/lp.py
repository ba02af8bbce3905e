"""Dense bounded-variable primal simplex and best-first branch and bound.

Problems are stated as::

    minimize    c @ x
    subject to  A @ x == b
                lower <= x <= upper

Every variable needs at least one finite bound.  Sizes here are small (a few
hundred columns), so the basis inverse is kept explicitly and refreshed by
refactorization every ``REFACTOR`` pivots.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-9
INT_TOL = 1e-6
REFACTOR = 50
BLAND_AFTER = 10


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None = None
    fun: float = np.inf
    iterations: int = 0

    @property
    def success(self) -> bool:
        return self.status == "optimal"


class _Tableau:
    def __init__(self, A, b, lower, upper, tol):
        m, n = A.shape
        self.m, self.n, self.tol = m, n, tol
        if np.any(~np.isfinite(lower) & ~np.isfinite(upper)):
            raise LPError("free variables are not supported")
        if np.any(lower > upper + tol):
            raise LPError("lower bound above upper bound")
        x = np.where(np.isfinite(lower), lower, upper).astype(float)
        r = b - A @ x
        sign = np.where(r >= 0, 1.0, -1.0)
        self.A = np.hstack([A, np.diag(sign)])
        self.b = b.astype(float)
        self.lo = np.concatenate([lower, np.zeros(m)])
        self.hi = np.concatenate([upper, np.full(m, np.inf)])
        self.x = np.concatenate([x, np.abs(r)])
        self.basis = np.arange(n, n + m)
        self.is_basic = np.zeros(n + m, dtype=bool)
        self.is_basic[self.basis] = True
        self.Binv = np.diag(sign)
        self.since_refactor = 0
        self.iterations = 0

    def refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        nonbasic = ~self.is_basic
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs
        self.since_refactor = 0

    def run(self, cost, max_iter):
        tol = self.tol
        dtol = tol * max(1.0, float(np.max(np.abs(cost))))
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                raise LPError(f"simplex iteration limit {max_iter} reached")
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.A
            movable = (~self.is_basic) & (self.hi - self.lo > tol)
            at_upper = np.isfinite(self.hi) & (self.x >= self.hi - tol)
            up = movable & ~at_upper & (d < -dtol)
            down = movable & at_upper & (d > dtol)
            candidates = np.flatnonzero(up | down)
            if candidates.size == 0:
                return
            if degenerate > BLAND_AFTER:
                j = int(candidates[0])
            else:
                j = int(candidates[np.argmax(np.abs(d[candidates]))])
            direction = 1.0 if up[j] else -1.0
            alpha = self.Binv @ self.A[:, j]
            delta = direction * alpha
            theta = self.hi[j] - self.lo[j]
            leave = -1
            xb = self.x[self.basis]
            lob, hib = self.lo[self.basis], self.hi[self.basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.full(self.m, np.inf)
                dec = delta > PIVOT_TOL
                inc = delta < -PIVOT_TOL
                lim[dec] = (xb[dec] - lob[dec]) / delta[dec]
                lim[inc] = (hib[inc] - xb[inc]) / -delta[inc]
            lim = np.maximum(lim, 0.0)
            if lim.size and lim.min() < theta:
                best = lim.min()
                ties = np.flatnonzero(lim <= best + tol)
                if degenerate > BLAND_AFTER:
                    r = int(ties[np.argmin(self.basis[ties])])
                else:
                    r = int(ties[np.argmax(np.abs(delta[ties]))])
                theta, leave = float(lim[r]), r
            if not np.isfinite(theta):
                raise LPError("unbounded direction")
            degenerate = degenerate + 1 if theta <= tol else 0
            self.x[self.basis] = xb - theta * delta
            self.x[j] += direction * theta
            if leave >= 0:
                out = self.basis[leave]
                self.x[out] = self.lo[out] if delta[leave] > 0 else self.hi[out]
                self.is_basic[out] = False
                self.is_basic[j] = True
                self.basis[leave] = j
                pivot = alpha[leave]
                row = self.Binv[leave] / pivot
                self.Binv -= np.outer(alpha, row)
                self.Binv[leave] = row
                self.since_refactor += 1
                if self.since_refactor >= REFACTOR:
                    self.refactor()
            else:
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
            self.iterations += 1


def solve_lp(c, A, b, lower, upper, tol: float = PIVOT_TOL, max_iter: int | None = None) -> LPResult:
    """Two-phase bounded simplex.  Returns status ``optimal`` or ``infeasible``."""
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    m, n = A.shape
    if m == 0:
        x = np.where(c > 0, lower, np.where(c < 0, upper, np.where(np.isfinite(lower), lower, upper)))
        if not np.all(np.isfinite(x)):
            raise LPError("unbounded")
        return LPResult("optimal", x, float(c @ x), 0)
    tab = _Tableau(A, b, lower, upper, tol)
    max_iter = max_iter or 100 * (m + n) + 1000
    phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    tab.run(phase1, max_iter)
    tab.refactor()
    scale = 1.0 + float(np.max(np.abs(b)))
    if tab.x[n:].sum() > 1e-7 * scale:
        return LPResult("infeasible", None, np.inf, tab.iterations)
    tab.hi[n:] = 0.0
    phase2 = np.concatenate([c, np.zeros(m)])
    tab.run(phase2, max_iter)
    tab.refactor()
    x = tab.x[:n].copy()
    x = np.clip(x, lower, upper)
    return LPResult("optimal", x, float(c @ x), tab.iterations)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lower: np.ndarray = field(compare=False)
    upper: np.ndarray = field(compare=False)


@dataclass
class MILPResult:
    status: str
    x: np.ndarray | None = None
    fun: float = np.inf
    nodes: int = 0

    @property
    def success(self) -> bool:
        return self.status == "optimal"


def solve_milp(c, A, b, lower, upper, integer, tol: float = PIVOT_TOL, int_tol: float = INT_TOL) -> MILPResult:
    """Best-first branch and bound on the LP bound over the ``integer`` columns."""
    c = np.asarray(c, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    integer = np.asarray(integer, dtype=int)
    best_x, best_f = None, np.inf
    root = solve_lp(c, A, b, lower, upper, tol)
    if not root.success:
        return MILPResult("infeasible", None, np.inf, 1)
    heap = [(_Node(root.fun, 0, lower, upper), root)]
    seq, nodes = 1, 1
    gap = 1e-9 * max(1.0, float(np.max(np.abs(c))))
    while heap:
        node, res = heapq.heappop(heap)
        if node.bound >= best_f - gap:
            continue
        frac = np.abs(res.x[integer] - np.round(res.x[integer]))
        if integer.size == 0 or frac.max() <= int_tol:
            x = res.x.copy()
            x[integer] = np.round(x[integer])
            best_x, best_f = x, res.fun
            continue
        j = int(integer[np.argmax(frac)])
        for branch in ("down", "up"):
            lo, hi = node.lower.copy(), node.upper.copy()
            if branch == "down":
                hi[j] = np.floor(res.x[j])
            else:
                lo[j] = np.ceil(res.x[j])
            if lo[j] > hi[j]:
                continue
            child = solve_lp(c, A, b, lo, hi, tol)
            nodes += 1
            if child.success and child.fun < best_f - gap:
                heapq.heappush(heap, (_Node(child.fun, seq, lo, hi), child))
                seq += 1
    if best_x is None:
        return MILPResult("infeasible", None, np.inf, nodes)
    return MILPResult("optimal", best_x, best_f, nodes)
