"""Canonical convex cone programs: linear + second-order + exponential cones.

A :class:`ConeProgram` is an immutable bundle

    minimize    c' x
    subject to  A_eq x = b_eq
                A_in x <= b_in
                lb <= x <= ub
                (x[i0], ..., x[im]) in SOC        for each soc block
                (x[i], x[j], x[k]) in ExpCone     for each exp block

where SOC means x[i0] >= ||(x[i1], ..., x[im])|| and ExpCone means
x[j] * exp(x[i] / x[j]) <= x[k] with x[j] > 0 (closure included).
Cones act on plain variable slots; the builder introduces auxiliary
variables with defining equalities whenever an affine expression (or a
constant) has to enter a cone.  Problems are solved with the Clarabel
interior-point engine; an independent residual checker re-verifies KKT
conditions from the raw program data.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

__all__ = [
    "LinExpr",
    "SolveStatus",
    "ConeProgram",
    "ConeProgramBuilder",
    "ConeSolution",
    "KKTReport",
    "ProgramError",
    "solve",
    "check_kkt",
    "dump_program",
]


class ProgramError(ValueError):
    """Malformed program construction (bad index, non-PSD quadratic, ...)."""


class LinExpr:
    """Sparse affine expression over program variables."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def var(cls, i: int) -> "LinExpr":
        return cls({int(i): 1.0})

    @classmethod
    def as_expr(cls, x) -> "LinExpr":
        """Coerce to an expression; numbers (including ints) are constants."""
        if isinstance(x, LinExpr):
            return x
        return cls(const=float(x))

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def __add__(self, other):
        other = LinExpr.as_expr(other)
        out = self.copy()
        for i, c in other.terms.items():
            out.terms[i] = out.terms.get(i, 0.0) + c
        out.const += other.const
        return out

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({i: -c for i, c in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-LinExpr.as_expr(other))

    def __rsub__(self, other):
        return (-self) + LinExpr.as_expr(other)

    def __mul__(self, scalar):
        scalar = float(scalar)
        return LinExpr({i: c * scalar for i, c in self.terms.items()}, self.const * scalar)

    __rmul__ = __mul__

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(c * x[i] for i, c in self.terms.items())

    def is_bare_var(self) -> int | None:
        if self.const == 0.0 and len(self.terms) == 1:
            (i, c), = self.terms.items()
            if c == 1.0:
                return i
        return None


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class ConeProgram:
    n_vars: int
    objective: np.ndarray
    objective_const: float
    A_eq: sparse.csr_matrix
    b_eq: np.ndarray
    A_in: sparse.csr_matrix
    b_in: np.ndarray
    soc_blocks: tuple[tuple[int, ...], ...]
    exp_blocks: tuple[tuple[int, int, int], ...]
    lb: np.ndarray
    ub: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def n_constraints(self) -> int:
        return self.A_eq.shape[0] + self.A_in.shape[0]


@dataclass(frozen=True)
class ConeSolution:
    status: SolveStatus
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    duals: np.ndarray
    solve_time: float
    iterations: int


@dataclass(frozen=True)
class KKTReport:
    primal_infeasibility: float  # cone-membership violation of b - Ax
    dual_stationarity: float  # || c + A' z ||_inf, normalized
    dual_cone_violation: float
    complementarity_gap: float

    @property
    def max_residual(self) -> float:
        return max(
            self.primal_infeasibility,
            self.dual_stationarity,
            self.dual_cone_violation,
            self.complementarity_gap,
        )


class ConeProgramBuilder:
    """Incrementally assembles a ConeProgram.

    Helper constraints (hyperbolic products, logs, squares) create the
    auxiliary variables and defining equalities needed to express affine
    arguments as cone members.
    """

    def __init__(self):
        self._n = 0
        self._names: list[str] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._obj: dict[int, float] = {}
        self._obj_const = 0.0
        self._eq: list[tuple[dict[int, float], float]] = []
        self._in: list[tuple[dict[int, float], float]] = []
        self._soc: list[tuple[int, ...]] = []
        self._exp: list[tuple[int, int, int]] = []
        self._fixed_cache: dict[float, int] = {}

    # -- variables ---------------------------------------------------

    def new_var(self, name: str = "", lb: float = -np.inf, ub: float = np.inf) -> int:
        if lb > ub:
            raise ProgramError(f"empty bound interval for {name or self._n}")
        idx = self._n
        self._n += 1
        self._names.append(name or f"x{idx}")
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        return idx

    def new_vars(self, count: int, name: str = "", lb: float = -np.inf, ub: float = np.inf):
        return [self.new_var(f"{name}[{j}]" if name else "", lb, ub) for j in range(count)]

    def var(self, idx: int) -> LinExpr:
        self._check_index(idx)
        return LinExpr.var(idx)

    def fixed(self, value: float, name: str = "") -> int:
        """Variable pinned to a constant (cached per value)."""
        value = float(value)
        if value not in self._fixed_cache:
            idx = self.new_var(name or f"const({value:g})")
            self.add_eq(LinExpr.var(idx), value)
            self._fixed_cache[value] = idx
        return self._fixed_cache[value]

    def _check_index(self, idx: int):
        if not (0 <= idx < self._n):
            raise ProgramError(f"unknown variable index {idx}")

    def _materialize(self, expr, name: str = "") -> int:
        """Return a variable slot equal to the given affine expression."""
        expr = LinExpr.as_expr(expr)
        bare = expr.is_bare_var()
        if bare is not None:
            self._check_index(bare)
            return bare
        if not expr.terms:
            return self.fixed(expr.const, name)
        aux = self.new_var(name)
        self.add_eq(expr - LinExpr.var(aux), 0.0)
        return aux

    # -- linear pieces -----------------------------------------------

    def minimize(self, expr):
        expr = LinExpr.as_expr(expr)
        for i, c in expr.terms.items():
            self._check_index(i)
            self._obj[i] = self._obj.get(i, 0.0) + c
        self._obj_const += expr.const

    def add_eq(self, expr, rhs: float = 0.0):
        expr = LinExpr.as_expr(expr)
        for i in expr.terms:
            self._check_index(i)
        self._eq.append((dict(expr.terms), float(rhs) - expr.const))

    def add_ineq(self, expr, rhs: float = 0.0):
        """expr <= rhs."""
        expr = LinExpr.as_expr(expr)
        for i in expr.terms:
            self._check_index(i)
        self._in.append((dict(expr.terms), float(rhs) - expr.const))

    # -- cones -------------------------------------------------------

    def add_soc(self, members) -> int:
        """x[m0] >= ||(x[m1], ..., x[mk])|| over raw variable slots."""
        members = tuple(int(m) for m in members)
        if len(members) < 2:
            raise ProgramError("second-order cone needs at least two members")
        for m in members:
            self._check_index(m)
        self._soc.append(members)
        return len(self._soc) - 1

    def add_exp(self, x: int, y: int, z: int) -> int:
        """x[y] * exp(x[x]/x[y]) <= x[z] over raw variable slots."""
        for m in (x, y, z):
            self._check_index(m)
        self._exp.append((int(x), int(y), int(z)))
        return len(self._exp) - 1

    def add_hyperbolic(self, w, u, rhs: float = 1.0) -> int:
        """Constrain w * u >= rhs with w, u >= 0 (rotated second-order cone).

        Realized as (w + u, 2 sqrt(rhs), w - u) in SOC, which also forces
        both factors nonnegative.
        """
        if rhs < 0:
            raise ProgramError("hyperbolic constraint needs rhs >= 0")
        w = LinExpr.as_expr(w)
        u = LinExpr.as_expr(u)
        head = self._materialize(w + u, "hyp.sum")
        diff = self._materialize(w - u, "hyp.diff")
        # fresh pinned variable (not the shared cache) so program sizes
        # do not depend on coincidentally equal right-hand sides
        two_root = self.new_var("hyp.rhs")
        self.add_eq(LinExpr.var(two_root), 2.0 * float(np.sqrt(rhs)))
        return self.add_soc((head, two_root, diff))

    def add_log_lower(self, t, v) -> int:
        """Constrain t <= log(v) (exponential cone, v > 0 on feasibility)."""
        ti = self._materialize(LinExpr.as_expr(t), "log.t")
        vi = self._materialize(LinExpr.as_expr(v), "log.v")
        one = self.fixed(1.0)
        return self.add_exp(ti, one, vi)

    def add_convex_quadratic(self, expr, slack) -> int:
        """Constrain expr**2 <= slack via the standard SOC epigraph lift."""
        expr = LinExpr.as_expr(expr)
        slack = LinExpr.as_expr(slack)
        head = self._materialize(slack * 0.5 + 0.5, "sq.hi")
        tail = self._materialize(slack * 0.5 - 0.5, "sq.lo")
        mid = self._materialize(expr, "sq.x")
        return self.add_soc((head, mid, tail))

    # -- assembly ----------------------------------------------------

    @staticmethod
    def _rows_to_csr(rows, n):
        data, ri, ci = [], [], []
        rhs = np.zeros(len(rows))
        for r, (terms, b) in enumerate(rows):
            rhs[r] = b
            for i, c in terms.items():
                if c != 0.0:
                    ri.append(r)
                    ci.append(i)
                    data.append(c)
        mat = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return mat, rhs

    def build(self) -> ConeProgram:
        c = np.zeros(self._n)
        for i, v in self._obj.items():
            c[i] = v
        A_eq, b_eq = self._rows_to_csr(self._eq, self._n)
        A_in, b_in = self._rows_to_csr(self._in, self._n)
        return ConeProgram(
            n_vars=self._n,
            objective=c,
            objective_const=self._obj_const,
            A_eq=A_eq,
            b_eq=b_eq,
            A_in=A_in,
            b_in=b_in,
            soc_blocks=tuple(self._soc),
            exp_blocks=tuple(self._exp),
            lb=np.array(self._lb),
            ub=np.array(self._ub),
            names=tuple(self._names),
        )


def _canonical_form(prog: ConeProgram):
    """Stack the program into (q, A, b, cones) with cones on slack rows."""
    n = prog.n_vars
    pin_rows = [
        ({i: 1.0}, prog.lb[i])
        for i in range(n)
        if np.isfinite(prog.lb[i]) and prog.lb[i] == prog.ub[i]
    ]
    A_pin, b_pin = ConeProgramBuilder._rows_to_csr(pin_rows, n)
    A_zero = sparse.vstack([prog.A_eq, A_pin], format="csr")
    b_zero = np.concatenate([prog.b_eq, b_pin])
    blocks = [A_zero]
    rhs = [b_zero]
    cones = []
    if A_zero.shape[0]:
        cones.append(("zero", A_zero.shape[0]))

    bound_rows = []
    for i in range(n):
        if prog.lb[i] == prog.ub[i] and np.isfinite(prog.lb[i]):
            continue  # pinned above
        if np.isfinite(prog.ub[i]):
            bound_rows.append(({i: 1.0}, prog.ub[i]))
        if np.isfinite(prog.lb[i]):
            bound_rows.append(({i: -1.0}, -prog.lb[i]))
    A_bnd, b_bnd = ConeProgramBuilder._rows_to_csr(bound_rows, n)
    A_nn = sparse.vstack([prog.A_in, A_bnd], format="csr")
    b_nn = np.concatenate([prog.b_in, b_bnd])
    if A_nn.shape[0]:
        blocks.append(A_nn)
        rhs.append(b_nn)
        cones.append(("nonneg", A_nn.shape[0]))

    # cone rows select variables: s_j = x_idx  ->  row -e_idx, b = 0
    for members in prog.soc_blocks:
        rows = [({m: -1.0}, 0.0) for m in members]
        A_c, b_c = ConeProgramBuilder._rows_to_csr(rows, n)
        blocks.append(A_c)
        rhs.append(b_c)
        cones.append(("soc", len(members)))
    for triple in prog.exp_blocks:
        rows = [({m: -1.0}, 0.0) for m in triple]
        A_c, b_c = ConeProgramBuilder._rows_to_csr(rows, n)
        blocks.append(A_c)
        rhs.append(b_c)
        cones.append(("exp", 3))

    A = sparse.vstack(blocks, format="csc") if blocks else sparse.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    return prog.objective, A, b, cones


_STATUS_MAP = {
    "Solved": SolveStatus.OPTIMAL,
    "PrimalInfeasible": SolveStatus.INFEASIBLE,
    "AlmostPrimalInfeasible": SolveStatus.INFEASIBLE,
    "DualInfeasible": SolveStatus.UNBOUNDED,
    "AlmostDualInfeasible": SolveStatus.UNBOUNDED,
    "AlmostSolved": SolveStatus.ITERATION_LIMIT,
    "MaxIterations": SolveStatus.ITERATION_LIMIT,
    "MaxTime": SolveStatus.ITERATION_LIMIT,
}


def solve(prog: ConeProgram, tol: float = 1e-8, max_iter: int = 200) -> ConeSolution:
    """Solve the program with the embedded interior-point engine.

    Deterministic for identical inputs.  status OPTIMAL guarantees the
    engine's primal/dual residuals are below ``tol``; callers wanting an
    engine-independent certificate should run :func:`check_kkt`.
    """
    q, A, b, cones = _canonical_form(prog)
    cone_objs = []
    for kind, size in cones:
        if kind == "zero":
            cone_objs.append(clarabel.ZeroConeT(size))
        elif kind == "nonneg":
            cone_objs.append(clarabel.NonnegativeConeT(size))
        elif kind == "soc":
            cone_objs.append(clarabel.SecondOrderConeT(size))
        else:
            cone_objs.append(clarabel.ExponentialConeT())
    P = sparse.csc_matrix((prog.n_vars, prog.n_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    # feasibility converges much more easily than the gap on these
    # programs; keeping it tighter makes downstream residual checks,
    # which key on feasibility, comfortably pass at the gap tolerance
    settings.tol_feas = max(0.1 * tol, 1e-12)
    settings.max_iter = max_iter
    # keep the KKT regularization floor below the requested accuracy,
    # otherwise tolerances tighter than the default floor cannot be met
    settings.static_regularization_constant = min(1e-8, 0.1 * tol)
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, q, A.tocsc(), b, cone_objs, settings)
    raw = solver.solve()
    elapsed = time.perf_counter() - t0
    status = _STATUS_MAP.get(str(raw.status).split(".")[-1], SolveStatus.NUMERICAL_FAILURE)
    x = np.asarray(raw.x, dtype=float)
    z = np.asarray(raw.z, dtype=float)
    if x.size != prog.n_vars or not np.all(np.isfinite(x)):
        if status is SolveStatus.OPTIMAL:
            status = SolveStatus.NUMERICAL_FAILURE
        x = np.full(prog.n_vars, np.nan)
    objective = float(q @ x + prog.objective_const) if np.all(np.isfinite(x)) else np.nan
    return ConeSolution(
        status=status,
        x=x,
        objective=objective,
        primal_residual=float(raw.r_prim),
        dual_residual=float(raw.r_dual),
        duals=z,
        solve_time=elapsed,
        iterations=int(raw.iterations),
    )


def _primal_cone_violation(s: np.ndarray, cones) -> float:
    worst = 0.0
    off = 0
    for kind, size in cones:
        blk = s[off : off + size]
        off += size
        if kind == "zero":
            worst = max(worst, float(np.max(np.abs(blk), initial=0.0)))
        elif kind == "nonneg":
            worst = max(worst, float(np.max(-blk, initial=0.0)))
        elif kind == "soc":
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        else:  # exp: y exp(x/y) <= z, y >= 0
            xx, yy, zz = blk
            if yy <= 1e-300:
                worst = max(worst, xx, -zz, -yy)
            else:
                worst = max(worst, yy * np.exp(min(xx / yy, 700.0)) - zz)
    return worst


def _dual_cone_violation(z: np.ndarray, cones) -> float:
    worst = 0.0
    off = 0
    for kind, size in cones:
        blk = z[off : off + size]
        off += size
        if kind == "zero":
            pass  # dual of {0} is everything
        elif kind == "nonneg":
            worst = max(worst, float(np.max(-blk, initial=0.0)))
        elif kind == "soc":
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        else:  # dual exp cone: u < 0, -u exp(v/u) <= e w  (plus u = 0 face)
            u, v, w = blk
            if u >= -1e-300:
                worst = max(worst, abs(min(u, 0.0)), -v, -w)
            else:
                worst = max(worst, -u * np.exp(min(v / u, 700.0)) - np.e * w)
    return worst


def check_kkt(prog: ConeProgram, sol: ConeSolution) -> KKTReport:
    """Re-derive KKT residuals from the raw program data and solution.

    Residuals are normalized the same way interior-point codes report
    them (relative to 1 + data norms), so they are directly comparable
    with the solve tolerance.
    """
    q, A, b, cones = _canonical_form(prog)
    x, z = sol.x, sol.duals
    s = b - A @ x
    b_scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
    c_scale = 1.0 + float(np.max(np.abs(q), initial=0.0))
    primal = _primal_cone_violation(s, cones) / b_scale
    dual_stat = float(np.max(np.abs(q + A.T @ z), initial=0.0)) / c_scale
    dual_cone = _dual_cone_violation(z, cones) / c_scale
    gap = abs(float(q @ x) + float(b @ z)) / (1.0 + abs(float(q @ x)))
    return KKTReport(
        primal_infeasibility=max(primal, 0.0),
        dual_stationarity=dual_stat,
        dual_cone_violation=max(dual_cone, 0.0),
        complementarity_gap=gap,
    )


def dump_program(prog: ConeProgram) -> str:
    """Plain-text rendering of a program for external cross-checks.

    Format: one line per item.  ``min`` lists the objective, ``bnd`` the
    finite variable bounds, ``eq``/``le`` the linear rows as
    ``coef*name`` sums, ``soc`` blocks as head >= ||tail|| and ``exp``
    blocks as y*exp(x/y) <= z, all referring to variable names.
    """

    def term_str(terms: dict[int, float] | np.ndarray) -> str:
        if isinstance(terms, np.ndarray):
            items = [(i, v) for i, v in enumerate(terms) if v != 0.0]
        else:
            items = sorted(terms.items())
        if not items:
            return "0"
        return " + ".join(f"{v:.12g}*{prog.names[i]}" for i, v in items)

    lines = [f"vars {prog.n_vars}"]
    lines.append(f"min {term_str(prog.objective)} + {prog.objective_const:.12g}")
    for i in range(prog.n_vars):
        if np.isfinite(prog.lb[i]) or np.isfinite(prog.ub[i]):
            lines.append(f"bnd {prog.names[i]} in [{prog.lb[i]:.12g}, {prog.ub[i]:.12g}]")
    A_eq = prog.A_eq.tocoo()
    eq_rows: list[dict[int, float]] = [dict() for _ in range(prog.A_eq.shape[0])]
    for r, c, v in zip(A_eq.row, A_eq.col, A_eq.data):
        eq_rows[r][c] = v
    for r, row in enumerate(eq_rows):
        lines.append(f"eq {term_str(row)} = {prog.b_eq[r]:.12g}")
    A_in = prog.A_in.tocoo()
    in_rows: list[dict[int, float]] = [dict() for _ in range(prog.A_in.shape[0])]
    for r, c, v in zip(A_in.row, A_in.col, A_in.data):
        in_rows[r][c] = v
    for r, row in enumerate(in_rows):
        lines.append(f"le {term_str(row)} <= {prog.b_in[r]:.12g}")
    for blk in prog.soc_blocks:
        tail = " ".join(prog.names[m] for m in blk[1:])
        lines.append(f"soc {prog.names[blk[0]]} >= || {tail} ||")
    for x, y, zz in prog.exp_blocks:
        lines.append(f"exp {prog.names[y]}*exp({prog.names[x]}/{prog.names[y]}) <= {prog.names[zz]}")
    return "\n".join(lines) + "\n"
