"""Fit the five calibrated currents (and an intercept) to measured energies.

Each benchmark contributes one row: its per-current coefficients from the
power model, and the measured energy minus the model's fixed (non-calibrated)
energy.  The box-constrained fit keeps every current between zero and its
datasheet value; currents whose column is identically zero cannot be seen by
the data and stay at their datasheet value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bvls import BVLSResult, KKTEntry, solve_bvls
from .device import CURRENT_NAMES, CalibratedCurrents, DeviceSpec, default_bounds
from .errors import DegenerateProblem, IdMismatch, ValidationError
from .measurement import RunEnergy
from .power import coefficients, energy
from .tracestats import CommandStats

log = logging.getLogger(__name__)

INTERCEPT = "intercept_b"


@dataclass
class CalibrationProblem:
    ids: List[str]
    A: np.ndarray  # rows x 5, one column per calibrated current
    y: np.ndarray  # measured - e_const
    e_const: np.ndarray
    measured: np.ndarray  # total measured energy per row (net, or gross in gross mode)
    bounds: Dict[str, Tuple[float, float]]
    datasheet: CalibratedCurrents
    fit_intercept: bool = True
    stddev: Optional[np.ndarray] = None
    weighted: bool = False
    excluded: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.ids) < 1:
            raise DegenerateProblem("calibration needs at least one benchmark row")
        if not np.all(np.isfinite(self.y)):
            raise ValidationError("y must be finite")
        for k, (lo, hi) in self.bounds.items():
            if not lo <= hi:
                raise ValidationError(f"bound for {k} has lower > upper")

    @property
    def columns(self) -> List[str]:
        """Names of the fitted columns, in solver order."""
        cols = [k for k in CURRENT_NAMES if k not in self.excluded]
        return cols + ([INTERCEPT] if self.fit_intercept else [])

    def design(self) -> np.ndarray:
        """Fitted design matrix (zero columns removed, intercept column appended)."""
        keep = [CURRENT_NAMES.index(k) for k in CURRENT_NAMES if k not in self.excluded]
        A = self.A[:, keep]
        if self.fit_intercept:
            A = np.hstack([A, np.ones((A.shape[0], 1))])
        return A


def build_problem(
    stats_per_bench: Sequence[Tuple[str, CommandStats]],
    energies: Sequence[Tuple[str, RunEnergy]],
    device: DeviceSpec,
    bounds: Optional[Dict[str, Tuple[float, float]]] = None,
    fit_intercept: bool = True,
    weighted: bool = False,
    gross: bool = False,
) -> CalibrationProblem:
    """Stack one coefficient row per benchmark; ``y = measured - e_const``.

    With ``gross`` the measured side keeps the static baseline and the same
    static energy is added to the model's fixed part, so both sides agree.
    """
    ids = [i for i, _ in stats_per_bench]
    e_ids = [i for i, _ in energies]
    if len(set(ids)) != len(ids) or len(set(e_ids)) != len(e_ids):
        raise IdMismatch("duplicate benchmark ids")
    if set(ids) != set(e_ids):
        raise IdMismatch(
            f"stats and energies disagree: only in stats {sorted(set(ids) - set(e_ids))}, "
            f"only in energies {sorted(set(e_ids) - set(ids))}"
        )
    if len(ids) < len(CURRENT_NAMES):
        log.warning("only %d benchmark rows for %d currents; fit is underdetermined", len(ids), len(CURRENT_NAMES))
    by_id = dict(energies)
    rows, e_const, measured, sd = [], [], [], []
    for bench, st in stats_per_bench:
        c = coefficients(st, device)
        e = by_id[bench]
        rows.append(c.vector())
        if gross:
            measured.append(e.gross_energy)
            e_const.append(c.e_const + e.static_energy)
        else:
            measured.append(e.net_energy)
            e_const.append(c.e_const)
        sd.append(e.stddev)
    A = np.array(rows, dtype=float)
    measured_a = np.array(measured, dtype=float)
    e_const_a = np.array(e_const, dtype=float)
    excluded = [k for j, k in enumerate(CURRENT_NAMES) if not np.any(A[:, j])]
    for k in excluded:
        log.warning("current %s is not excited by any benchmark; kept at its datasheet value", k)
    return CalibrationProblem(
        ids=ids,
        A=A,
        y=measured_a - e_const_a,
        e_const=e_const_a,
        measured=measured_a,
        bounds=dict(bounds) if bounds is not None else default_bounds(device),
        datasheet=CalibratedCurrents.from_datasheet(device),
        fit_intercept=fit_intercept,
        stddev=np.array(sd, dtype=float),
        weighted=weighted,
        excluded=excluded,
    )


@dataclass(frozen=True)
class ObservabilityReport:
    names: List[str]
    column_norms: np.ndarray
    correlation: np.ndarray
    condition_number: float
    weak: List[str]
    collinear: List[Tuple[str, str, float]]

    def format(self) -> str:
        lines = [f"condition number (normalised columns): {self.condition_number:.4g}"]
        for n, v in zip(self.names, self.column_norms):
            flag = "  WEAK" if n in self.weak else ""
            lines.append(f"  |{n}| = {v:.4e}{flag}")
        for a, b, c in self.collinear:
            lines.append(f"  collinear: {a} ~ {b} (corr {c:+.6f})")
        return "\n".join(lines) + "\n"


def diagnose(
    A,
    names: Optional[Sequence[str]] = None,
    weak_ratio: float = 1e-3,
    collinear_threshold: float = 0.99,
) -> ObservabilityReport:
    """Column norms, uncentred column correlations and the normalised condition number."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        raise ValueError("diagnose needs a nonempty matrix")
    n = A.shape[1]
    names = list(names) if names is not None else [f"col{j}" for j in range(n)]
    norms = np.linalg.norm(A, axis=0)
    nz = norms > 0
    U = np.zeros_like(A)
    U[:, nz] = A[:, nz] / norms[nz]
    corr = np.clip(U.T @ U, -1.0, 1.0)
    np.fill_diagonal(corr, np.where(nz, 1.0, 0.0))
    if nz.any():
        sv = np.linalg.svd(U[:, nz], compute_uv=False)
        full_rank = len(sv) == nz.sum() and sv[-1] > sv[0] * np.finfo(float).eps * max(A.shape)
        cond = float(sv[0] / sv[-1]) if full_rank else math.inf
    else:
        cond = math.inf
    top = norms.max() if n else 0.0
    weak = [names[j] for j in range(n) if norms[j] < weak_ratio * top or norms[j] == 0]
    pairs = [
        (names[i], names[j], float(corr[i, j]))
        for i in range(n)
        for j in range(i + 1, n)
        if nz[i] and nz[j] and abs(corr[i, j]) > collinear_threshold
    ]
    return ObservabilityReport(names, norms, corr, max(cond, 1.0), weak, pairs)


@dataclass(frozen=True)
class CalibrationResult:
    ids: List[str]
    currents: CalibratedCurrents
    residuals: np.ndarray  # predicted - measured, J
    relative_error: np.ndarray  # percent, |residual| / measured
    predicted: np.ndarray  # total model energy per row
    measured: np.ndarray
    objective: float
    kkt: Dict[str, KKTEntry]
    diagnostics: ObservabilityReport
    solver: BVLSResult
    excluded: List[str]

    @property
    def mean_relative_error(self) -> float:
        return float(np.mean(self.relative_error))

    def format(self) -> str:
        lines = ["current        value            status      gradient"]
        for k in (*CURRENT_NAMES, INTERCEPT):
            v = getattr(self.currents, k)
            e = self.kkt.get(k)
            st = e.status if e else "datasheet" if k in self.excluded else "not fitted"
            gr = f"{e.gradient:+.3e}" if e else ""
            lines.append(f"{k:<14} {v:<16.8g} {st:<11} {gr}")
        lines.append("benchmark      measured_J       model_J          error_%")
        for i, m, p, r in zip(self.ids, self.measured, self.predicted, self.relative_error):
            lines.append(f"{i:<14} {m:<16.8g} {p:<16.8g} {r:.4f}")
        lines.append(f"mean relative error: {self.mean_relative_error:.4f} %")
        return "\n".join(lines) + "\n"


def calibrate(problem: CalibrationProblem, rtol: float = 1e-8) -> CalibrationResult:
    """Diagnose, then solve the bounded least-squares fit."""
    cols = problem.columns
    A = problem.design()
    y = problem.y.copy()
    # observability is judged on energy scale: coefficient x datasheet current
    cur = [k for k in CURRENT_NAMES if k not in problem.excluded]
    sheet = np.array([getattr(problem.datasheet, k) for k in cur])
    diag = diagnose(A[:, : len(cur)] * sheet, cur)
    lower = np.array([problem.bounds.get(k, (0.0, math.inf))[0] for k in cols])
    upper = np.array([problem.bounds.get(k, (0.0, math.inf))[1] for k in cols])
    if problem.weighted:
        sd = problem.stddev
        if sd is None or np.any(~(sd > 0)):
            raise ValidationError("weighted fit needs a positive stddev for every row")
        w = 1.0 / sd
        sol = solve_bvls(A * w[:, None], y * w, lower, upper, rtol=rtol)
    else:
        sol = solve_bvls(A, y, lower, upper, rtol=rtol)
    if sol.status != "optimal":
        log.warning("solver finished with status %s (max KKT violation %.3g)", sol.status, sol.max_violation)
    fitted = dict(zip(cols, sol.x.tolist()))
    values = {k: fitted.get(k, getattr(problem.datasheet, k)) for k in CURRENT_NAMES}
    values[INTERCEPT] = fitted.get(INTERCEPT, 0.0)
    currents = CalibratedCurrents(**values)
    residuals = A @ sol.x - y
    predicted = problem.measured + residuals
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = 100.0 * np.abs(residuals) / np.abs(problem.measured)
    return CalibrationResult(
        ids=list(problem.ids),
        currents=currents,
        residuals=residuals,
        relative_error=rel,
        predicted=predicted,
        measured=problem.measured.copy(),
        objective=sol.objective,
        kkt=dict(zip(cols, sol.kkt)),
        diagnostics=diag,
        solver=sol,
        excluded=list(problem.excluded),
    )


@dataclass(frozen=True)
class ValidationRow:
    id: str
    measured: float
    precal: float
    postcal: float

    @property
    def precal_error(self) -> float:
        """Signed percent error of the datasheet model."""
        return 100.0 * (self.precal - self.measured) / self.measured

    @property
    def postcal_error(self) -> float:
        return 100.0 * (self.postcal - self.measured) / self.measured


def validate(
    currents: CalibratedCurrents,
    holdout: Sequence[Tuple[str, CommandStats, RunEnergy]],
    device: DeviceSpec,
    gross: bool = False,
) -> List[ValidationRow]:
    """Compare datasheet and calibrated model energies with held-out measurements."""
    if not holdout:
        raise ValueError("validate needs at least one held-out benchmark")
    sheet = CalibratedCurrents.from_datasheet(device)
    rows = []
    for bench, st, e in holdout:
        extra = e.static_energy if gross else 0.0
        measured = e.gross_energy if gross else e.net_energy
        pre = energy(st, device, sheet, allow_negative=True).e_total + extra
        post = energy(st, device, currents, allow_negative=True).e_total + extra
        rows.append(ValidationRow(bench, measured, pre, post))
    return rows


def validation_csv(rows: Sequence[ValidationRow]) -> str:
    lines = ["id,measured_j,precal_j,postcal_j,precal_error_pct,postcal_error_pct"]
    for r in rows:
        lines.append(
            f"{r.id},{float(r.measured)!r},{float(r.precal)!r},{float(r.postcal)!r},{r.precal_error:.6f},{r.postcal_error:.6f}"
        )
    return "\n".join(lines) + "\n"
