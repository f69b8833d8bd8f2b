"""Cone programs in explicit data form, with interchangeable solver backends.

A program collects affine maps into each supported cone, always in the
convention ``A @ x + b in K`` over a real decision vector ``x``. Two backends
are provided: a direct translation to Clarabel and a reformulation through
cvxpy. Any program this package generates must be solvable by both, and
`validate` checks a candidate point against every cone using plain numpy
arithmetic, independent of either solver.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class ConeSolution:
    status: SolveStatus
    x: np.ndarray | None
    objective: float | None
    backend: str

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


@dataclass
class ConeProgram:
    """min c @ x + c0 over real x subject to affine cone memberships.

    Each block stores (A, b) with the membership ``A @ x + b in K``:

    * zero: K = {0}
    * nonneg: componentwise nonnegative
    * soc: rows (t, z) with ||z|| <= t
    * rsoc: rows (a, b, z) with 2 a b >= ||z||^2 and a, b >= 0
    * expcone: rows (u, v, w) with v exp(u / v) <= w, v > 0
    * psd: full row-major vec of a symmetric matrix that must be PSD,
      stored as (A, b, side)

    An optional quadratic term ``0.5 x' quad x`` (full symmetric matrix) is
    supported but unused by the solvers built on top of this module.
    """

    n: int
    c: np.ndarray | None = None
    c0: float = 0.0
    zero: list = field(default_factory=list)
    nonneg: list = field(default_factory=list)
    soc: list = field(default_factory=list)
    rsoc: list = field(default_factory=list)
    expcone: list = field(default_factory=list)
    psd: list = field(default_factory=list)
    quad: np.ndarray | None = None

    def cost(self) -> np.ndarray:
        if self.c is None:
            return np.zeros(self.n)
        return np.asarray(self.c, dtype=float)

    def describe(self) -> str:
        parts = [f"n={self.n}"]
        for kind in ("zero", "nonneg", "soc", "rsoc", "expcone"):
            blocks = getattr(self, kind)
            if blocks:
                parts.append(f"{kind}={[len(b) for _, b in blocks]}")
        if self.psd:
            parts.append(f"psd={[side for _, _, side in self.psd]}")
        return " ".join(parts)


def _rsoc_to_soc(A: np.ndarray, b: np.ndarray):
    # (a, b, z) with 2ab >= ||z||^2 becomes ||(a - b, sqrt2 z)|| <= a + b
    A2 = np.empty_like(A)
    b2 = np.empty_like(b)
    A2[0], b2[0] = A[0] + A[1], b[0] + b[1]
    A2[1], b2[1] = A[0] - A[1], b[0] - b[1]
    A2[2:], b2[2:] = np.sqrt(2.0) * A[2:], np.sqrt(2.0) * b[2:]
    return A2, b2


def _svec_rows(A: np.ndarray, b: np.ndarray, side: int):
    # scaled upper triangle, column major, off-diagonals times sqrt2
    idx, scale = [], []
    for j in range(side):
        for i in range(j + 1):
            idx.append(i * side + j)
            scale.append(1.0 if i == j else np.sqrt(2.0))
    s = np.asarray(scale)
    return s[:, None] * A[idx], s * b[idx]


_CLARABEL_STATUS = {
    "Solved": SolveStatus.OPTIMAL,
    "AlmostSolved": SolveStatus.OPTIMAL,
    "PrimalInfeasible": SolveStatus.INFEASIBLE,
    "AlmostPrimalInfeasible": SolveStatus.INFEASIBLE,
    "DualInfeasible": SolveStatus.UNBOUNDED,
    "AlmostDualInfeasible": SolveStatus.UNBOUNDED,
}


class ClarabelBackend:
    """Direct translation to Clarabel's Ax + s = b, s in K interface."""

    name = "clarabel"

    def __init__(self, **settings):
        self._overrides = settings

    def solve(self, program: ConeProgram, tol: float) -> ConeSolution:
        import clarabel

        blocks = []
        for A, b in program.zero:
            blocks.append((A, b, clarabel.ZeroConeT(len(b))))
        for A, b in program.nonneg:
            blocks.append((A, b, clarabel.NonnegativeConeT(len(b))))
        for A, b in program.soc:
            blocks.append((A, b, clarabel.SecondOrderConeT(len(b))))
        for A, b in program.rsoc:
            A2, b2 = _rsoc_to_soc(A, b)
            blocks.append((A2, b2, clarabel.SecondOrderConeT(len(b2))))
        for A, b in program.expcone:
            blocks.append((A, b, clarabel.ExponentialConeT()))
        for A, b, side in program.psd:
            A2, b2 = _svec_rows(A, b, side)
            blocks.append((A2, b2, clarabel.PSDTriangleConeT(side)))

        n = program.n
        if blocks:
            A_cl = sp.csc_matrix(np.vstack([-A for A, _, _ in blocks]))
            b_cl = np.concatenate([b for _, b, _ in blocks])
        else:
            A_cl = sp.csc_matrix((0, n))
            b_cl = np.zeros(0)
        cones = [cone for _, _, cone in blocks]

        if program.quad is None:
            P = sp.csc_matrix((n, n))
        else:
            P = sp.triu(sp.csc_matrix(program.quad)).tocsc()

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        for key, val in self._overrides.items():
            setattr(settings, key, val)

        solver = clarabel.DefaultSolver(P, program.cost(), A_cl, b_cl, cones, settings)
        raw = solver.solve()
        status = _CLARABEL_STATUS.get(str(raw.status), SolveStatus.NUMERICAL_FAILURE)
        x = np.asarray(raw.x, dtype=float)
        if status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
            return ConeSolution(status, None, None, self.name)
        obj = float(program.cost() @ x + program.c0)
        return ConeSolution(status, x, obj, self.name)


_CVXPY_STATUS = {
    "optimal": SolveStatus.OPTIMAL,
    "optimal_inaccurate": SolveStatus.OPTIMAL,
    "infeasible": SolveStatus.INFEASIBLE,
    "infeasible_inaccurate": SolveStatus.INFEASIBLE,
    "unbounded": SolveStatus.UNBOUNDED,
    "unbounded_inaccurate": SolveStatus.UNBOUNDED,
}


class CvxpyBackend:
    """Rebuilds the program as a cvxpy problem. Slower, kept as a cross check."""

    name = "cvxpy"

    def __init__(self, solver: str = "CLARABEL"):
        self._solver = solver

    def solve(self, program: ConeProgram, tol: float) -> ConeSolution:
        import cvxpy as cp

        x = cp.Variable(program.n)
        cons = []
        for A, b in program.zero:
            cons.append(A @ x + b == 0)
        for A, b in program.nonneg:
            cons.append(A @ x + b >= 0)
        for A, b in program.soc:
            e = A @ x + b
            cons.append(cp.SOC(e[0], e[1:]))
        for A, b in program.rsoc:
            A2, b2 = _rsoc_to_soc(A, b)
            e = A2 @ x + b2
            cons.append(cp.SOC(e[0], e[1:]))
        for A, b in program.expcone:
            e = A @ x + b
            cons.append(cp.constraints.ExpCone(e[0], e[1], e[2]))
        for A, b, side in program.psd:
            M = cp.reshape(A @ x + b, (side, side), order="C")
            cons.append((M + M.T) / 2 >> 0)

        obj = program.cost() @ x
        if program.quad is not None:
            obj = obj + 0.5 * cp.quad_form(x, program.quad)
        prob = cp.Problem(cp.Minimize(obj), cons)
        try:
            prob.solve(solver=getattr(cp, self._solver), verbose=False)
        except cp.error.SolverError:
            return ConeSolution(SolveStatus.NUMERICAL_FAILURE, None, None, self.name)

        status = _CVXPY_STATUS.get(prob.status, SolveStatus.NUMERICAL_FAILURE)
        if status is not SolveStatus.OPTIMAL or x.value is None:
            xv = None if x.value is None else np.asarray(x.value, dtype=float)
            if status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
                xv = None
            return ConeSolution(status, xv, None, self.name)
        xv = np.asarray(x.value, dtype=float)
        return ConeSolution(status, xv, float(program.cost() @ xv + program.c0), self.name)


_BACKENDS = {"clarabel": ClarabelBackend, "cvxpy": CvxpyBackend}


def solve(program: ConeProgram, tol: float = 1e-8, backend="clarabel") -> ConeSolution:
    """Solve a cone program, returning the point and status from the backend."""
    if isinstance(backend, str):
        try:
            backend = _BACKENDS[backend]()
        except KeyError:
            raise ValueError(f"unknown backend {backend!r}") from None
    return backend.solve(program, float(tol))


@dataclass(frozen=True)
class ValidationReport:
    """Worst constraint residual per cone family at a candidate point.

    Every residual is nonnegative; zero means the family is satisfied
    exactly. The zero-cone entry is the largest absolute equality gap.
    """

    objective: float
    zero: float = 0.0
    nonneg: float = 0.0
    soc: float = 0.0
    rsoc: float = 0.0
    expcone: float = 0.0
    psd: float = 0.0

    @property
    def max_violation(self) -> float:
        return max(self.zero, self.nonneg, self.soc, self.rsoc, self.expcone, self.psd)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def validate(program: ConeProgram, x: np.ndarray) -> ValidationReport:
    """Check a point against every cone of a program with plain numpy."""
    x = np.asarray(x, dtype=float)
    if x.shape != (program.n,):
        raise ValueError(f"point has shape {x.shape}, expected ({program.n},)")

    worst = dict.fromkeys(("zero", "nonneg", "soc", "rsoc", "expcone", "psd"), 0.0)

    for A, b in program.zero:
        worst["zero"] = max(worst["zero"], float(np.max(np.abs(A @ x + b), initial=0.0)))
    for A, b in program.nonneg:
        worst["nonneg"] = max(worst["nonneg"], float(np.max(-(A @ x + b), initial=0.0)))
    for A, b in program.soc:
        e = A @ x + b
        worst["soc"] = max(worst["soc"], float(np.linalg.norm(e[1:]) - e[0]))
    for A, b in program.rsoc:
        e = A @ x + b
        gap = float(np.linalg.norm(e[2:]) ** 2 - 2.0 * e[0] * e[1])
        worst["rsoc"] = max(worst["rsoc"], gap, float(-e[0]), float(-e[1]))
    for A, b in program.expcone:
        u, v, w = A @ x + b
        if v > 0:
            with np.errstate(over="ignore"):
                gap = float(v * np.exp(u / v) - w)
        else:
            # closure of the cone at v = 0 needs u <= 0 and w >= 0
            gap = max(float(-v), float(u), float(-w))
        worst["expcone"] = max(worst["expcone"], gap)
    for A, b, side in program.psd:
        S = (A @ x + b).reshape(side, side)
        S = (S + S.T) / 2
        lam_min = float(np.linalg.eigvalsh(S)[0])
        worst["psd"] = max(worst["psd"], -lam_min)

    worst = {k: max(0.0, v) for k, v in worst.items()}
    return ValidationReport(objective=float(program.cost() @ x + program.c0), **worst)
