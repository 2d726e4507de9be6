"""Minimum-norm quadratic programs for safety filters and control allocation.

The solver is a dual active-set method in the Goldfarb-Idnani style. It
starts from the unconstrained minimizer and only ever adds constraints
that are violated, so a reference that already satisfies every constraint
is returned untouched. Infeasibility shows up as a violated constraint
whose normal lies in the span of the active normals with no droppable
multiplier; the constraints involved are reported.

Constraint indexing used in ``QpSolution.active_set``: inequality ``i``
maps to ``i``; lower box bound ``j`` to ``len(ineq) + j``; upper box
bound ``j`` to ``len(ineq) + dim + j``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, NumericalError

MAX_ITER = 1000
_FEAS_TOL = 1e-12


@dataclass(frozen=True)
class Allocation:
    Bp: np.ndarray
    target: np.ndarray
    slack_weight: float = 1e6

    def __post_init__(self):
        Bp = np.atleast_2d(np.asarray(self.Bp, dtype=float))
        target = np.atleast_1d(np.asarray(self.target, dtype=float))
        if Bp.shape[0] != target.size:
            raise ValueError(f"Bp has {Bp.shape[0]} rows but target has {target.size} entries")
        if not self.slack_weight > 0:
            raise ValueError("slack_weight must be positive")
        object.__setattr__(self, "Bp", Bp)
        object.__setattr__(self, "target", target)


@dataclass(frozen=True)
class QpProblem:
    """min ||du - reference||^2 (+ slack penalty) s.t. a_i . du >= b_i, lo <= du <= hi."""

    dim: int
    reference: np.ndarray | None = None
    ineq: Sequence[tuple[np.ndarray, float]] = ()
    box: tuple[np.ndarray, np.ndarray] | None = None
    alloc: Allocation | None = None

    def __post_init__(self):
        ref = np.zeros(self.dim) if self.reference is None else np.atleast_1d(
            np.asarray(self.reference, dtype=float))
        if ref.size != self.dim:
            raise ValueError(f"reference has {ref.size} entries, expected {self.dim}")
        rows = []
        for a, b in self.ineq:
            a = np.atleast_1d(np.asarray(a, dtype=float))
            if a.size != self.dim:
                raise ValueError(f"constraint row has {a.size} entries, expected {self.dim}")
            if not (np.all(np.isfinite(a)) and math.isfinite(b)):
                raise ValueError("constraint coefficients must be finite")
            rows.append((a, float(b)))
        box = self.box
        if box is not None:
            lo = np.broadcast_to(np.asarray(box[0], dtype=float), (self.dim,)).copy()
            hi = np.broadcast_to(np.asarray(box[1], dtype=float), (self.dim,)).copy()
            if np.any(lo > hi):
                raise ValueError("box lower bound exceeds upper bound")
            box = (lo, hi)
        if self.alloc is not None and self.alloc.Bp.shape[1] != self.dim:
            raise ValueError("allocation matrix column count must equal dim")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "ineq", tuple(rows))
        object.__setattr__(self, "box", box)

    def constraint_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """All inequalities as (C, d) with C @ du >= d, in active-set index order."""
        rows = [a for a, _ in self.ineq]
        rhs = [b for _, b in self.ineq]
        if self.box is not None:
            lo, hi = self.box
            eye = np.eye(self.dim)
            rows.extend(eye)
            rhs.extend(lo)
            rows.extend(-eye)
            rhs.extend(-hi)
        if not rows:
            return np.zeros((0, self.dim)), np.zeros(0)
        return np.array(rows, dtype=float), np.array(rhs, dtype=float)


@dataclass(frozen=True)
class QpSolution:
    delta_u: np.ndarray
    active_set: frozenset = field(default_factory=frozenset)
    objective: float = 0.0
    slack: np.ndarray | None = None
    iterations: int = 0


def _polish(hinv, x0, x, eq_rows, C, d, active):
    """Re-solve the KKT system of the final working set in one shot.

    The incremental updates drift off the active constraints by round-off
    (noticeably so with a heavily weighted slack); projecting ``x0`` onto
    the working set directly puts the result back on them.
    """
    if not active:
        return x
    if not eq_rows:
        # no heavy slack in play: the Schur complement is well conditioned
        if len(active) == 1:
            n = C[active[0]]
            hn = hinv * n
            return x0 + hn * ((d[active[0]] - float(n @ x0)) / float(n @ hn))
        N = C[active]
        W = hinv[:, None] * N.T
        try:
            lam = np.linalg.solve(N @ W, d[active] - N @ x0)
        except np.linalg.LinAlgError:
            return x
        return x0 + W @ lam
    N = np.array(eq_rows + [C[j] for j in active])
    rhs = np.concatenate([[float(r @ x0) for r in eq_rows], d[active]])
    # null-space method: its accuracy depends on N only, whereas the Schur
    # complement N H^-1 N^T is close to singular when a heavily weighted
    # slack is nearly pinned by the box
    U, sv, Vt = np.linalg.svd(N)
    if sv.size == 0 or sv[-1] <= 1e-12 * sv[0]:
        return x
    x_p = Vt[:sv.size].T @ ((U.T @ rhs) / sv)
    Z = Vt[sv.size:].T
    if Z.shape[1] == 0:
        return x_p
    H = 1.0 / hinv
    red = Z.T @ (H[:, None] * Z)
    v = np.linalg.solve(red, Z.T @ (H * (x0 - x_p)))
    return x_p + Z @ v


def solve_min_norm_closed_form(A: float, B, Theta: float, alpha_h: float) -> np.ndarray:
    """KKT solution of min ||du||^2 s.t. A + B.du - Theta >= -alpha_h."""
    B = np.atleast_1d(np.asarray(B, dtype=float))
    psi = A - Theta + alpha_h
    if psi >= 0.0:
        return np.zeros_like(B)
    bb = float(B @ B)
    if bb == 0.0:
        raise InfeasibleError(
            f"barrier cannot be defended: input has no effect on h and margin is {psi:.6g}",
            conflicting=(0,))
    return -psi * B / bb


def _dual_active_set(hess_diag: np.ndarray, x0: np.ndarray, C: np.ndarray, d: np.ndarray,
                     E: np.ndarray | None = None):
    """min 0.5 (x-x0)^T H (x-x0) s.t. E x = e0 (already satisfied by x0), C x >= d.

    ``H`` is diagonal positive definite. ``E`` rows are equality normals that
    stay active throughout; ``x0`` must be the equality-constrained minimizer.
    Returns (x, active inequality indices, iterations).
    """
    hinv = 1.0 / hess_diag
    x = x0.copy()
    n_eq = 0 if E is None else E.shape[0]
    eq_rows = [] if E is None else list(E)
    active: list[int] = []
    mult: list[float] = []
    iters = 0

    def direction(normals: list[np.ndarray], n_p: np.ndarray):
        g_np = hinv * n_p
        if not normals:
            return g_np, np.zeros(0)
        N = np.array(normals).T
        W = hinv[:, None] * N
        M = N.T @ W
        if M.shape[0] == 1:
            m00 = float(M[0, 0])
            if not m00 > 0.0:
                raise NumericalError("active constraint normals became dependent")
            r = (W.T @ n_p) / m00
            return g_np - W @ r, r
        try:
            Lm = np.linalg.cholesky(M)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("active constraint normals became dependent") from exc
        r = np.linalg.solve(Lm.T, np.linalg.solve(Lm, W.T @ n_p))
        return g_np - W @ r, r

    while True:
        if C.shape[0] == 0:
            return x, active, iters
        viol = (C @ x - d) / (1.0 + np.abs(d))
        if active:
            viol[active] = 0.0
        p = int(viol.argmin())  # argmin returns the lowest index on ties
        if viol[p] >= -_FEAS_TOL:
            return _polish(hinv, x0, x, eq_rows, C, d, active), active, iters
        n_p = C[p]
        u_p = 0.0
        while True:
            iters += 1
            if iters > MAX_ITER:
                raise NumericalError(f"active-set iteration cap ({MAX_ITER}) reached")
            normals = eq_rows + [C[j] for j in active]
            z, r = direction(normals, n_p)
            r_ineq = r[n_eq:]
            t1, k = math.inf, -1
            for idx, rj in enumerate(r_ineq):
                if rj > 1e-14:
                    ratio = mult[idx] / rj
                    if ratio < t1:
                        t1, k = ratio, idx
            zn = float(z @ n_p)
            if zn <= 1e-14 * float(n_p @ (hinv * n_p)):
                if k < 0:
                    conflicting = [p] + [active[i] for i, rj in enumerate(r_ineq) if rj < -1e-12]
                    raise InfeasibleError(
                        "constraints cannot be satisfied together",
                        conflicting=tuple(sorted(conflicting)))
                # dual step only, then drop the blocking constraint
                for idx in range(len(mult)):
                    mult[idx] -= t1 * r_ineq[idx]
                u_p += t1
                del active[k], mult[k]
                continue
            t2 = (d[p] - float(n_p @ x)) / zn
            t = min(t1, t2)
            x = x + t * z
            for idx in range(len(mult)):
                mult[idx] -= t * r_ineq[idx]
            u_p += t
            if t2 <= t1:
                active.append(p)
                mult.append(u_p)
                break
            del active[k], mult[k]


@functools.lru_cache(maxsize=16)
def _box_rows(dim: int) -> np.ndarray:
    eye = np.eye(dim)
    rows = np.concatenate([eye, -eye])
    rows.flags.writeable = False
    return rows


@functools.lru_cache(maxsize=16)
def _ones(dim: int) -> np.ndarray:
    ones = np.ones(dim)
    ones.flags.writeable = False
    return ones


def _stack(dim: int, A: np.ndarray, b: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    if lo is None:
        return A, b
    return np.concatenate([A, _box_rows(dim)]), np.concatenate([b, lo, -hi])


def solve_rows(dim: int, reference: np.ndarray, A: np.ndarray, b: np.ndarray,
               lo: np.ndarray | None = None, hi: np.ndarray | None = None,
               alloc: Allocation | None = None) -> QpSolution:
    """Unchecked entry point for callers that already hold validated arrays.

    ``A`` is (k, dim), ``b`` is (k,), ``lo``/``hi`` are (dim,) or both None.
    """
    if alloc is not None:
        return _allocate(dim, reference, A, b, lo, hi, alloc)
    if dim == 1:
        return _solve_scalar(float(reference[0]), A[:, 0].tolist(), b.tolist(),
                             None if lo is None else float(lo[0]),
                             None if hi is None else float(hi[0]))
    C, d = _stack(dim, A, b, lo, hi)
    x, active, iters = _dual_active_set(_ones(dim), reference.copy(), C, d)
    diff = x - reference
    return QpSolution(delta_u=x, active_set=frozenset(active),
                      objective=float(diff @ diff), iterations=iters)


def _solve_scalar(ref: float, a: list, b: list, lo, hi) -> QpSolution:
    """One decision variable: every row is a lower or an upper bound on it."""
    rows = list(zip(a, b))
    if lo is not None:
        rows += [(1.0, lo), (-1.0, -hi)]
    low, low_i = -math.inf, -1
    up, up_i = math.inf, -1
    for i, (ai, bi) in enumerate(rows):
        if ai > 0.0:
            v = bi / ai
            if v > low:
                low, low_i = v, i
        elif ai < 0.0:
            v = bi / ai
            if v < up:
                up, up_i = v, i
        elif bi > _FEAS_TOL * (1.0 + abs(bi)):
            raise InfeasibleError("constraint has no input dependence and is violated",
                                  conflicting=(i,))
    if low > up + _FEAS_TOL * (1.0 + abs(low)):
        raise InfeasibleError("constraints cannot be satisfied together",
                              conflicting=tuple(sorted((low_i, up_i))))
    if ref < low:
        x, active = low, [low_i]
    elif ref > up:
        x, active = up, [up_i]
    else:
        x, active = ref, []
    return QpSolution(delta_u=np.array([x]), active_set=frozenset(active),
                      objective=(x - ref) ** 2, iterations=len(active))


def _split(p: QpProblem):
    if p.ineq:
        A = np.array([a for a, _ in p.ineq])
        b = np.array([b for _, b in p.ineq])
    else:
        A, b = np.zeros((0, p.dim)), np.zeros(0)
    lo, hi = p.box if p.box is not None else (None, None)
    return A, b, lo, hi


def solve_active_set(p: QpProblem) -> QpSolution:
    if p.alloc is not None:
        return solve_allocation(p)
    return solve_rows(p.dim, p.reference, *_split(p))


def solve_allocation(p: QpProblem) -> QpSolution:
    """min ||du - ref||^2 + w ||delta||^2 s.t. Bp du + delta = target, inequalities, box."""
    if p.alloc is None:
        raise ValueError("problem has no allocation block")
    return _allocate(p.dim, p.reference, *_split(p), p.alloc)


def _effector_groups(Bp, A, reference, lo, hi) -> list[list[int]]:
    """Indices of inputs whose data columns are bitwise identical."""
    cols = [Bp.T, A.T, reference[:, None]]
    if lo is not None:
        cols += [lo[:, None], hi[:, None]]
    data = np.ascontiguousarray(np.hstack(cols))
    groups: dict[bytes, list[int]] = {}
    for j, row in enumerate(data):
        groups.setdefault(row.tobytes(), []).append(j)
    return list(groups.values())


def _allocate(m: int, reference: np.ndarray, A: np.ndarray, b: np.ndarray, lo, hi,
              alloc: Allocation) -> QpSolution:
    # Inputs with identical data columns take identical values at the (unique)
    # optimum, so each group is solved as one variable of weight len(group).
    # This keeps ganged effectors exactly equal; the heavy slack weight would
    # otherwise let round-off split them.
    Bp, target, w = alloc.Bp, alloc.target, alloc.slack_weight
    groups = _effector_groups(Bp, A, reference, lo, hi)
    reps = [g[0] for g in groups]
    k = np.array([len(g) for g in groups], dtype=float)
    g_dim = len(groups)
    Bp_r = Bp[:, reps] * k
    A_r = A[:, reps] * k
    ref_r = reference[reps]
    lo_r = None if lo is None else lo[reps]
    hi_r = None if hi is None else hi[reps]
    C, d = _stack(g_dim, A_r, b, lo_r, hi_r)

    n_slack = Bp.shape[0]
    hess = np.concatenate([k, np.full(n_slack, w)])
    # equality [Bp I] z = target; minimizer of the weighted projection of (ref, 0)
    E = np.hstack([Bp_r, np.eye(n_slack)])
    z_ref = np.concatenate([ref_r, np.zeros(n_slack)])
    hinv = 1.0 / hess
    W = hinv[:, None] * E.T
    lam = np.linalg.solve(E @ W, target - E @ z_ref)
    z0 = z_ref + W @ lam
    C_full = np.hstack([C, np.zeros((C.shape[0], n_slack))])
    z, active_r, iters = _dual_active_set(hess, z0, C_full, d, E)

    du = np.empty(m)
    for g, members in enumerate(groups):
        du[members] = z[g]
    slack = z[g_dim:]
    n_ineq = A.shape[0]
    active = set()
    for i in active_r:
        if i < n_ineq:
            active.add(i)
        elif i < n_ineq + g_dim:
            active.update(n_ineq + j for j in groups[i - n_ineq])
        else:
            active.update(n_ineq + m + j for j in groups[i - n_ineq - g_dim])
    diff = du - reference
    objective = float(diff @ diff + w * slack @ slack)
    return QpSolution(delta_u=du, active_set=frozenset(active), objective=objective,
                      slack=slack, iterations=iters)
