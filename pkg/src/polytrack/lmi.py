"""Semidefinite feasibility/optimization problems built from matrix variables.

A problem is a list of affine matrix expressions, each constrained positive
semidefinite, over symmetric-matrix, rectangular-matrix, and scalar decision
variables, with an optional linear objective over the scalars.  Internally
every variable is packed into a flat vector (symmetric matrices in lower-
triangular order with sqrt(2) off-diagonal scaling, so inner products are
preserved) and each constraint is compiled to the standard form
F0 + sum_k x_k F_k >= 0 handed to the conic backend (CVXOPT's cone LP
solver).  Solutions are re-verified with psd_check before being reported
feasible.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from cvxopt import matrix as _cvxmat
from cvxopt import solvers as _cvxsolvers

_SQRT2 = math.sqrt(2.0)
_SYM_TOL = 1e-9


class LmiError(ValueError):
    """Malformed expression, dimension mismatch, or contract violation."""


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"
    ITERATION_LIMIT = "iteration-limit"

    @property
    def ok(self):
        return self in (SolveStatus.OPTIMAL, SolveStatus.FEASIBLE)


@dataclass(frozen=True)
class MatrixVar:
    """A named decision variable: square-symmetric, rectangular, or scalar."""

    name: str
    rows: int
    cols: int
    symmetric: bool = False

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise LmiError(f"variable {self.name}: dims must be >= 1")
        if self.symmetric and self.rows != self.cols:
            raise LmiError(f"variable {self.name}: symmetric requires square dims")

    @property
    def dims(self):
        return (self.rows, self.cols)

    @property
    def size(self):
        """Length of the packed coefficient vector."""
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def basis(self):
        """Basis matrices B_k with value = sum_k x_k B_k for packed x.

        Symmetric variables use lower-triangular packing with off-diagonal
        entries scaled by 1/sqrt(2) (packed coefficients carry the sqrt(2)),
        which makes the packing an isometry for the Frobenius inner product.
        """
        mats = []
        if self.symmetric:
            for i in range(self.rows):
                for j in range(i + 1):
                    B = np.zeros((self.rows, self.cols))
                    if i == j:
                        B[i, i] = 1.0
                    else:
                        B[i, j] = B[j, i] = 1.0 / _SQRT2
                    mats.append(B)
        else:
            for i in range(self.rows):
                for j in range(self.cols):
                    B = np.zeros((self.rows, self.cols))
                    B[i, j] = 1.0
                    mats.append(B)
        return mats

    def pack(self, M):
        M = np.asarray(M, dtype=float).reshape(self.rows, self.cols)
        if self.symmetric:
            out = np.empty(self.size)
            k = 0
            for i in range(self.rows):
                for j in range(i + 1):
                    out[k] = M[i, i] if i == j else _SQRT2 * 0.5 * (M[i, j] + M[j, i])
                    k += 1
            return out
        return M.reshape(-1)

    def unpack(self, vec):
        vec = np.asarray(vec, dtype=float).reshape(self.size)
        if self.symmetric:
            M = np.zeros((self.rows, self.cols))
            k = 0
            for i in range(self.rows):
                for j in range(i + 1):
                    if i == j:
                        M[i, i] = vec[k]
                    else:
                        M[i, j] = M[j, i] = vec[k] / _SQRT2
                    k += 1
            return M
        return vec.reshape(self.rows, self.cols)


def scalar_var(name):
    return MatrixVar(name, 1, 1, symmetric=True)


@dataclass(frozen=True)
class _Term:
    """One affine contribution left @ V(^T) @ right."""

    left: np.ndarray
    var: MatrixVar
    right: np.ndarray
    transposed: bool = False

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[1])

    def value(self, V):
        V = V.T if self.transposed else V
        return self.left @ V @ self.right


class AffineMatrixExpr:
    """constant + sum of terms; constrained symmetric by construction.

    Use add_product for raw terms and sym_product to add a term together
    with its transpose.  Symmetry of the assembled expression is verified
    against a deterministic pseudo-random variable assignment when the
    expression enters a problem.
    """

    def __init__(self, constant, terms=None):
        self.constant = np.atleast_2d(np.asarray(constant, dtype=float))
        self.terms = list(terms) if terms else []

    @classmethod
    def zeros(cls, n, m=None):
        return cls(np.zeros((n, n if m is None else m)))

    @property
    def shape(self):
        return self.constant.shape

    def variables(self):
        seen = {}
        for t in self.terms:
            seen[t.var.name] = t.var
        return list(seen.values())

    def _check_term(self, left, var, right, transposed):
        left = np.atleast_2d(np.asarray(left, dtype=float))
        right = np.atleast_2d(np.asarray(right, dtype=float))
        vr, vc = (var.cols, var.rows) if transposed else (var.rows, var.cols)
        if left.shape[1] != vr or right.shape[0] != vc:
            raise LmiError(
                f"term dims {left.shape} @ {var.name}{'^T' if transposed else ''}"
                f"{(vr, vc)} @ {right.shape} do not chain")
        if (left.shape[0], right.shape[1]) != self.shape:
            raise LmiError(
                f"term of shape {(left.shape[0], right.shape[1])} does not match "
                f"expression shape {self.shape}")
        return left, right

    def add_product(self, left, var, right, transposed=False):
        left, right = self._check_term(left, var, right, transposed)
        self.terms.append(_Term(left, var, right, transposed))
        return self

    def sym_product(self, left, var, right):
        """Add left @ V @ right plus its transpose."""
        self.add_product(left, var, right)
        self.add_product(np.atleast_2d(right).T, var, np.atleast_2d(left).T,
                         transposed=not var.symmetric)
        return self

    def transposed(self):
        out = AffineMatrixExpr(self.constant.T)
        for t in self.terms:
            out.add_product(t.right.T, t.var, t.left.T,
                            transposed=t.transposed if t.var.symmetric else not t.transposed)
        return out

    def evaluate(self, values):
        """Dense value of the expression at a {name: matrix} assignment."""
        M = self.constant.copy()
        for t in self.terms:
            V = np.atleast_2d(np.asarray(values[t.var.name], dtype=float))
            M += t.value(V)
        return M

    def coefficient(self, var, basis_mat):
        """Linear response of the expression to var = basis_mat, others 0."""
        M = np.zeros(self.shape)
        for t in self.terms:
            if t.var.name == var.name:
                M += t.value(basis_mat)
        return M

    def check_symmetry(self):
        """Probe symmetry at a deterministic random assignment."""
        if self.shape[0] != self.shape[1]:
            raise LmiError(f"expression is not square: {self.shape}")
        rng = np.random.default_rng(0)
        values = {}
        for v in self.variables():
            M = rng.standard_normal((v.rows, v.cols))
            if v.symmetric:
                M = 0.5 * (M + M.T)
            values[v.name] = M
        val = self.evaluate(values)
        scale = max(1.0, np.abs(val).max())
        if np.abs(val - val.T).max() > _SYM_TOL * scale:
            raise LmiError("expression is not symmetric by construction")


def _as_expr(piece):
    if isinstance(piece, AffineMatrixExpr):
        return piece
    return AffineMatrixExpr(np.atleast_2d(np.asarray(piece, dtype=float)))


def block_expr(grid):
    """Assemble a block matrix of affine expressions into one expression.

    The caller supplies every block (use None for zeros where the row/column
    dimensions are inferable); off-diagonal blocks must come in transposed
    pairs for the result to be symmetric, which is verified.
    """
    nrows = len(grid)
    ncols = len(grid[0])
    if any(len(r) != ncols for r in grid):
        raise LmiError("ragged block grid")
    row_dims = [None] * nrows
    col_dims = [None] * ncols
    cells = [[None] * ncols for _ in range(nrows)]
    for i, row in enumerate(grid):
        for j, piece in enumerate(row):
            if piece is None:
                continue
            e = piece if isinstance(piece, AffineMatrixExpr) else _as_expr(piece)
            cells[i][j] = e
            r, c = e.constant.shape
            if row_dims[i] is None:
                row_dims[i] = r
            elif row_dims[i] != r:
                raise LmiError(f"block row {i}: inconsistent heights {row_dims[i]} vs {r}")
            if col_dims[j] is None:
                col_dims[j] = c
            elif col_dims[j] != c:
                raise LmiError(f"block col {j}: inconsistent widths {col_dims[j]} vs {c}")
    if any(d is None for d in row_dims) or any(d is None for d in col_dims):
        raise LmiError("a full block row or column is empty; dimensions not inferable")
    if row_dims != col_dims:
        raise LmiError(f"block grid is not square: {row_dims} vs {col_dims}")

    n = sum(row_dims)
    offs = np.concatenate([[0], np.cumsum(row_dims)]).astype(int)
    out = AffineMatrixExpr.zeros(n)
    for i in range(nrows):
        for j in range(ncols):
            e = cells[i][j]
            if e is None:
                continue
            r0, c0 = offs[i], offs[j]
            out.constant[r0:r0 + row_dims[i], c0:c0 + col_dims[j]] += e.constant
            Pi = np.zeros((n, row_dims[i]))
            Pi[r0:r0 + row_dims[i]] = np.eye(row_dims[i])
            Pj = np.zeros((col_dims[j], n))
            Pj[:, c0:c0 + col_dims[j]] = np.eye(col_dims[j])
            for t in e.terms:
                out.add_product(Pi @ t.left, t.var, t.right @ Pj, transposed=t.transposed)
    out.check_symmetry()
    return out


def times_scalar(M, var):
    """Affine expression M * s for a scalar variable s.

    Built as sum_i (M e_i) s e_i^T, since single terms are rank-limited by
    the 1x1 variable.
    """
    if var.size != 1:
        raise LmiError(f"times_scalar requires a scalar variable, got {var.name}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    expr = AffineMatrixExpr(np.zeros(M.shape))
    for i in range(M.shape[1]):
        e = np.zeros((1, M.shape[1]))
        e[0, i] = 1.0
        col = M[:, i:i + 1]
        if np.any(col):
            expr.add_product(col, var, e)
    if not expr.terms:  # keep at least one term so the variable stays referenced
        expr.add_product(np.zeros((M.shape[0], 1)), var, np.zeros((1, M.shape[1])))
    return expr


def schur_embed(blocks):
    """Embed a 2x2 grid [[X, Z^T], [Z, W]] as one PSD block.

    With W > 0 the embedded constraint is equivalent to the nonlinear
    condition X - Z^T W^{-1} Z >= 0 (Schur complement), which is how every
    synthesis inequality here is linearized.
    """
    if len(blocks) != 2 or any(len(r) != 2 for r in blocks):
        raise LmiError("schur_embed expects a 2x2 grid")
    return block_expr(blocks)


def psd_check(M, eps=1e-9):
    """True iff the symmetric matrix M has min eigenvalue >= -eps."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    scale = max(1.0, np.abs(M).max())
    if M.shape[0] != M.shape[1] or np.abs(M - M.T).max() > _SYM_TOL * scale:
        raise LmiError("psd_check requires a symmetric matrix")
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    return bool(w[0] >= -eps)


@dataclass(frozen=True)
class SolverSettings:
    """Backend tolerances.  Residual targets follow the per-step solve
    contract: fail fast and predictably."""

    abstol: float = 1e-8
    reltol: float = 1e-8
    feastol: float = 1e-8
    max_iterations: int = 200
    eps_psd: float = 1e-7       # post-solve PSD acceptance tolerance
    eps_strict: float = 1e-8    # shift used to encode strict inequalities
    verbose: bool = False


DEFAULT_SETTINGS = SolverSettings()


@dataclass
class SdpProblem:
    """Decision variables, PSD constraints, optional linear objective."""

    vars: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: dict | None = None   # {scalar var name: coefficient}, minimized

    def add_var(self, var):
        if any(v.name == var.name for v in self.vars):
            raise LmiError(f"duplicate variable name {var.name}")
        self.vars.append(var)
        return var

    def new_symmetric(self, name, n):
        return self.add_var(MatrixVar(name, n, n, symmetric=True))

    def new_rect(self, name, rows, cols):
        return self.add_var(MatrixVar(name, rows, cols))

    def new_scalar(self, name):
        return self.add_var(scalar_var(name))

    def add_psd(self, expr, strict=False, eps_strict=None):
        """Constrain expr >= 0; strict subtracts eps_strict * I."""
        declared = {v.name for v in self.vars}
        for v in expr.variables():
            if v.name not in declared:
                raise LmiError(f"constraint references undeclared variable {v.name}")
        expr.check_symmetry()
        if strict:
            shift = DEFAULT_SETTINGS.eps_strict if eps_strict is None else eps_strict
            expr = AffineMatrixExpr(expr.constant - shift * np.eye(expr.shape[0]),
                                    expr.terms)
        self.constraints.append(expr)
        return expr

    def minimize(self, coeffs):
        names = {v.name: v for v in self.vars}
        for name in coeffs:
            if name not in names:
                raise LmiError(f"objective references undeclared variable {name}")
            if names[name].size != 1:
                raise LmiError(f"objective variable {name} is not scalar")
        self.objective = dict(coeffs)

    def var_offsets(self):
        offs = {}
        k = 0
        for v in self.vars:
            offs[v.name] = k
            k += v.size
        return offs, k


@dataclass
class SdpSolution:
    status: SolveStatus
    values: dict = field(default_factory=dict)
    objective_value: float | None = None
    primal_infeasibility: float = math.nan
    gap: float = math.nan
    iterations: int = 0
    detail: str = ""

    @property
    def ok(self):
        return self.status.ok


def _compile(problem):
    """Compile to per-constraint (F0, [F_k]) stacks in packed variable order."""
    offs, nvar = problem.var_offsets()
    compiled = []
    for expr in problem.constraints:
        n = expr.shape[0]
        F0 = expr.constant
        F0 = 0.5 * (F0 + F0.T)
        cols = np.zeros((n * n, nvar))
        for v in problem.vars:
            if not any(t.var.name == v.name for t in expr.terms):
                continue
            base = offs[v.name]
            for k, B in enumerate(v.basis()):
                Fk = expr.coefficient(v, B)
                Fk = 0.5 * (Fk + Fk.T)
                cols[:, base + k] = Fk.reshape(-1, order="F")
        compiled.append((F0, cols, n))
    c = np.zeros(nvar)
    if problem.objective:
        for name, coeff in problem.objective.items():
            c[offs[name]] = coeff
    return c, compiled, offs, nvar


class CompiledSdp:
    """A problem compiled once for repeated solves.

    Per-step re-solves in the control loop change only constraint constants
    (the state-containment block), never the variable coefficients, so the
    coefficient stacks are frozen at compile time and set_constant patches
    the constant part in place.
    """

    def __init__(self, problem):
        if not problem.constraints:
            raise LmiError("problem has no constraints")
        self.problem = problem
        self.c, self._compiled, self.offs, self.nvar = _compile(problem)
        if self.nvar == 0:
            raise LmiError("problem has no variables")
        self._Gs = [_cvxmat(-cols) for _, cols, _ in self._compiled]
        self._F0 = [F0 for F0, _, _ in self._compiled]

    def set_constant(self, index, F0):
        F0 = np.asarray(F0, dtype=float)
        n = self._compiled[index][2]
        if F0.shape != (n, n):
            raise LmiError(f"constant for constraint {index} must be {n}x{n}")
        F0 = 0.5 * (F0 + F0.T)
        self._F0[index] = F0
        self.problem.constraints[index].constant = F0

    def solve(self, settings=None):
        settings = settings or DEFAULT_SETTINGS
        options = {
            "show_progress": settings.verbose,
            "maxiters": settings.max_iterations,
            "abstol": settings.abstol,
            "reltol": settings.reltol,
            "feastol": settings.feastol,
        }
        hs = [_cvxmat(F0) for F0 in self._F0]
        try:
            raw = _cvxsolvers.sdp(_cvxmat(self.c), Gs=self._Gs, hs=hs,
                                  options=options)
        except (ArithmeticError, ValueError, ZeroDivisionError) as exc:
            return SdpSolution(status=SolveStatus.NUMERICAL_FAILURE,
                               detail=f"backend raised {type(exc).__name__}: {exc}")

        problem = self.problem
        raw_status = raw["status"]
        iterations = int(raw.get("iterations", 0))
        if raw_status == "optimal":
            status = SolveStatus.OPTIMAL if problem.objective else SolveStatus.FEASIBLE
        elif raw_status == "primal infeasible":
            return SdpSolution(status=SolveStatus.INFEASIBLE, iterations=iterations,
                               detail="primal infeasibility certificate")
        elif raw_status == "dual infeasible":
            return SdpSolution(status=SolveStatus.INFEASIBLE, iterations=iterations,
                               detail="dual infeasibility certificate "
                                      "(primal empty or unbounded)")
        else:
            if iterations >= settings.max_iterations:
                return SdpSolution(status=SolveStatus.ITERATION_LIMIT,
                                   iterations=iterations,
                                   detail="iteration cap reached")
            return SdpSolution(status=SolveStatus.NUMERICAL_FAILURE,
                               iterations=iterations,
                               detail=f"backend status {raw_status!r}")

        x = np.array(raw["x"]).ravel()
        offs = self.offs
        values = {v.name: v.unpack(x[offs[v.name]:offs[v.name] + v.size])
                  for v in problem.vars}
        # residual check: every constraint must be PSD within eps_psd
        worst = 0.0
        for expr in problem.constraints:
            val = expr.evaluate(values)
            wmin = np.linalg.eigvalsh(0.5 * (val + val.T))[0]
            worst = max(worst, -float(wmin))
        sol = SdpSolution(
            status=status,
            values=values,
            objective_value=float(self.c @ x) if problem.objective else None,
            primal_infeasibility=worst,
            gap=float(raw.get("gap", math.nan)),
            iterations=iterations,
        )
        if worst > settings.eps_psd:
            sol = replace(sol, status=SolveStatus.NUMERICAL_FAILURE,
                          detail=f"solution violates PSD check by {worst:.3e}")
        return sol


def solve(problem, settings=None):
    """Solve min c'x subject to all constraints PSD via the conic backend.

    Deterministic for identical problems and settings.  Statuses are kept
    distinct so callers can apply fallbacks: INFEASIBLE covers both primal
    infeasibility certificates and dual-infeasibility certificates (our
    problem family is bounded, so the latter also signals an empty interior),
    ITERATION_LIMIT a clean non-convergence, NUMERICAL_FAILURE everything
    the backend could not certify.  Feasible/optimal solutions are
    re-verified with psd_check at eps_psd and demoted on violation.
    """
    return CompiledSdp(problem).solve(settings)


def dump_problem(problem):
    """Plain-text dump (one constraint per block, dense row-major matrices)
    for cross-checking against external tools."""
    out = io.StringIO()
    out.write(f"variables {len(problem.vars)}\n")
    for v in problem.vars:
        kind = "symmetric" if v.symmetric else "rect"
        out.write(f"  {v.name} {v.rows} {v.cols} {kind}\n")
    if problem.objective:
        items = " ".join(f"{k}:{v:.17g}" for k, v in sorted(problem.objective.items()))
        out.write(f"minimize {items}\n")
    else:
        out.write("feasibility\n")
    offs, nvar = problem.var_offsets()
    _, compiled, _, _ = _compile(problem)
    for ci, (F0, cols, n) in enumerate(compiled):
        out.write(f"constraint {ci} dim {n}\n")
        out.write("  F0 " + " ".join(f"{v:.17g}" for v in F0.reshape(-1)) + "\n")
        for v in problem.vars:
            base = offs[v.name]
            for k in range(v.size):
                col = cols[:, base + k]
                if np.any(col):
                    Fk = col.reshape(n, n, order="F")
                    out.write(f"  {v.name}[{k}] "
                              + " ".join(f"{val:.17g}" for val in Fk.reshape(-1)) + "\n")
    return out.getvalue()
