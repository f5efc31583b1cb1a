"""Bounded-variable least squares (active-set, Stark-Parker style).

Minimises ``0.5 * ||A x - y||^2`` subject to ``lower <= x <= upper``.  The
result is judged solely by the KKT conditions at the returned point, with
gradient ``g = A^T (A x - y)``:

* interior variables:      ``|g_i| <= tol``
* variables at the lower:  ``g_i >= -tol``
* variables at the upper:  ``g_i <= tol``

where ``tol = rtol * ||A^T y||_inf``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import IterationLimit, NonFinite, ValidationError

INTERIOR, AT_LOWER, AT_UPPER, FIXED = "interior", "at-lower", "at-upper", "fixed"


@dataclass(frozen=True)
class KKTEntry:
    status: str
    gradient: float
    violation: float


@dataclass(frozen=True)
class BVLSResult:
    x: np.ndarray
    objective: float
    gradient: np.ndarray
    kkt: List[KKTEntry]
    tol: float
    iterations: int
    status: str  # "optimal", "iteration-limit" or "stalled"

    @property
    def kkt_ok(self) -> bool:
        return all(e.violation <= self.tol for e in self.kkt)

    @property
    def max_violation(self) -> float:
        return max((e.violation for e in self.kkt), default=0.0)


def kkt_report(A, y, x, lower, upper, rtol: float = 1e-8):
    """Classify each variable and measure its KKT violation at ``x``."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    g = A.T @ (A @ x - y)
    tol = rtol * float(np.max(np.abs(A.T @ y), initial=0.0))
    entries = []
    for i, gi in enumerate(g):
        if lower[i] == upper[i]:
            entries.append(KKTEntry(FIXED, float(gi), 0.0))
        elif x[i] <= lower[i]:
            entries.append(KKTEntry(AT_LOWER, float(gi), max(0.0, -gi)))
        elif x[i] >= upper[i]:
            entries.append(KKTEntry(AT_UPPER, float(gi), max(0.0, gi)))
        else:
            entries.append(KKTEntry(INTERIOR, float(gi), abs(gi)))
    return g, entries, tol


def _check_inputs(A, y, lower, upper):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    m, n = A.shape
    if y.shape != (m,):
        raise ValidationError(f"y has {y.size} entries, A has {m} rows")
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (n,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (n,)).copy()
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise NonFinite("A and y must be finite")
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
        raise ValidationError("bounds must satisfy lower <= upper")
    if np.any(lower == np.inf) or np.any(upper == -np.inf):
        raise ValidationError("a variable cannot be bounded at an infinity")
    return A, y, lower, upper


def solve_bvls(
    A,
    y,
    lower,
    upper,
    max_iter: Optional[int] = None,
    rtol: float = 1e-8,
    raise_on_limit: bool = False,
) -> BVLSResult:
    """Solve the box-constrained least-squares problem.

    Columns are rescaled to unit norm internally.  If ``max_iter`` outer
    iterations are exhausted the current iterate is returned with status
    ``"iteration-limit"`` (or IterationLimit is raised when requested).
    """
    A, y, lower, upper = _check_inputs(A, y, lower, upper)
    m, n = A.shape
    if max_iter is None:
        max_iter = 10 * n + 50

    s = np.linalg.norm(A, axis=0)
    s[s == 0] = 1.0
    As = A / s
    lb, ub = lower * s, upper * s
    fixed = lb == ub

    def solve_free(F, z):
        rhs = y - As[:, ~F] @ z[~F]
        sol, *_ = np.linalg.lstsq(As[:, F], rhs, rcond=None)
        return sol

    # start from the clipped unconstrained solution
    z = np.clip(np.linalg.lstsq(As, y, rcond=None)[0], lb, ub)
    z[fixed] = lb[fixed]
    on = np.zeros(n, dtype=int)  # -1 at lower, +1 at upper, 0 free
    on[z <= lb] = -1
    on[z >= ub] = 1
    on[fixed] = -1
    z[on == -1] = lb[on == -1]
    z[on == 1] = ub[on == 1]

    tol = rtol * float(np.max(np.abs(A.T @ y), initial=0.0))
    status = "iteration-limit"
    banned: set = set()
    iteration = 0
    while iteration < max_iter:
        iteration += 1
        # make z optimal over the current free set, dropping variables that hit a bound
        for _ in range(n + 1):
            F = on == 0
            if not F.any():
                break
            zf = solve_free(F, z)
            lo, hi, cur = lb[F], ub[F], z[F]
            if np.all((zf > lo) & (zf < hi)):
                z[F] = zf
                break
            d = zf - cur
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d < 0, (lo - cur) / d, np.where(d > 0, (hi - cur) / d, np.inf))
            alpha = min(1.0, float(np.min(step)))
            alpha = max(alpha, 0.0)
            idx = np.flatnonzero(F)
            z[idx] = cur + alpha * d
            for k in np.flatnonzero(step <= alpha):
                j = idx[k]
                if d[k] < 0:
                    z[j], on[j] = lb[j], -1
                else:
                    z[j], on[j] = ub[j], 1

        x = z / s
        g = A.T @ (A @ x - y)
        viol = np.where(on == -1, -g, np.where(on == 1, g, 0.0))
        viol[fixed] = 0.0
        for j in banned:
            viol[j] = 0.0
        j = int(np.argmax(viol)) if n else 0
        if n == 0 or viol[j] <= tol:
            status = "optimal" if not banned else "stalled"
            if banned:
                # re-check without bans: a banned variable may be fine now
                g_all = np.where(on == -1, -g, np.where(on == 1, g, 0.0))
                g_all[fixed] = 0.0
                if np.max(g_all, initial=0.0) <= tol:
                    status = "optimal"
            break
        side = on[j]
        on[j] = 0
        # freeing j must move it inward; if the sub-solve pushes it straight back, ban it
        F = on == 0
        zf = solve_free(F, z)
        k = int(np.flatnonzero(F).tolist().index(j))
        inward = zf[k] > lb[j] if side == -1 else zf[k] < ub[j]
        if not inward:
            on[j] = side
            banned.add(j)
            continue
        banned.clear()

    x = z / s
    x = np.minimum(np.maximum(x, lower), upper)
    x[on == -1] = lower[on == -1]
    x[on == 1] = upper[on == 1]
    g, entries, tol = kkt_report(A, y, x, lower, upper, rtol)
    r = A @ x - y
    result = BVLSResult(
        x=x,
        objective=0.5 * float(r @ r),
        gradient=g,
        kkt=entries,
        tol=tol,
        iterations=iteration,
        status=status,
    )
    if status == "iteration-limit" and raise_on_limit:
        raise IterationLimit(f"no KKT point after {max_iter} iterations", result)
    return result
