"""Sparse LP container, solver front end and infeasibility certificates.

Models are built in triplet form and solved either through HiGHS (via
scipy.optimize.linprog, the default) or through the self-contained dense
simplex in :mod:`feedline.simplex`.  Both engines sit behind ``solve_lp`` and
report duals in the same convention:

    dual[r]  =  d(objective) / d(rhs[r])

so Benders cuts can be assembled without engine-specific sign juggling.
Infeasibility certificates come from the elastic relaxation: minimize total
constraint violation; when that optimum is positive its duals form a Farkas
ray, which is verified numerically before being returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

INF = math.inf


class LpError(RuntimeError):
    pass


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration_limit"


class LpModel:
    """A minimize-sense sparse LP: bounds, rows with sense in {<=, =, >=}."""

    def __init__(self, name: str = "lp"):
        self.name = name
        self.obj: list[float] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.col_names: list[str] = []
        self.row_names: list[str] = []
        self.senses: list[str] = []       # 'L', 'E', 'G'
        self.rhs: list[float] = []
        self._ri: list[int] = []
        self._ci: list[int] = []
        self._cv: list[float] = []
        self._matrix = None

    # -- construction ------------------------------------------------------
    def add_col(self, name: str, lb: float = 0.0, ub: float = INF, obj: float = 0.0) -> int:
        if lb > ub:
            raise LpError(f"column {name}: lower bound {lb} exceeds upper bound {ub}")
        self.col_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.obj.append(float(obj))
        return len(self.col_names) - 1

    def add_row(self, name: str, sense: str, rhs: float, coefs) -> int:
        if sense not in ("L", "E", "G"):
            raise LpError(f"row {name}: sense must be 'L', 'E' or 'G'")
        if not math.isfinite(rhs):
            raise LpError(f"row {name}: right-hand side must be finite")
        r = len(self.row_names)
        self.row_names.append(name)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        for c, v in coefs:
            if v != 0.0:
                self._ri.append(r)
                self._ci.append(c)
                self._cv.append(float(v))
        self._matrix = None
        return r

    @property
    def ncols(self) -> int:
        return len(self.col_names)

    @property
    def nrows(self) -> int:
        return len(self.row_names)

    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None or self._matrix.shape != (self.nrows, self.ncols):
            self._matrix = sp.csr_matrix(
                (self._cv, (self._ri, self._ci)), shape=(self.nrows, self.ncols))
        return self._matrix


@dataclass
class LpSolution:
    status: LpStatus
    objective: float = math.nan
    x: np.ndarray | None = None
    duals: np.ndarray | None = None          # d obj / d rhs, per row
    reduced_costs: np.ndarray | None = None
    message: str = ""
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


_SCIPY_STATUS = {
    0: LpStatus.OPTIMAL,
    1: LpStatus.ITERATION_LIMIT,
    2: LpStatus.INFEASIBLE,
    3: LpStatus.UNBOUNDED,
    4: LpStatus.ITERATION_LIMIT,   # numerical trouble: surfaced, never silent
}


def solve_lp(model: LpModel, feas_tol: float = 1e-7, opt_tol: float = 1e-7,
             engine: str = "auto") -> LpSolution:
    """Solve a model and return primal values, row duals and reduced costs.

    ``engine`` is "highs" (default through scipy), or "dense" for the
    built-in bounded simplex; distinct solves share no mutable state.
    """
    if engine == "dense":
        from . import simplex
        return simplex.solve_dense(model, feas_tol=feas_tol, opt_tol=opt_tol)
    if engine not in ("auto", "highs"):
        raise LpError(f"unknown engine '{engine}'")

    A = model.matrix().tocsr()
    senses = np.array(model.senses)
    rhs = np.asarray(model.rhs, dtype=float)
    eq_rows = np.where(senses == "E")[0]
    le_rows = np.where(senses == "L")[0]
    ge_rows = np.where(senses == "G")[0]

    A_eq = A[eq_rows] if len(eq_rows) else None
    b_eq = rhs[eq_rows] if len(eq_rows) else None
    parts, brs = [], []
    if len(le_rows):
        parts.append(A[le_rows])
        brs.append(rhs[le_rows])
    if len(ge_rows):
        parts.append(-A[ge_rows])
        brs.append(-rhs[ge_rows])
    A_ub = sp.vstack(parts).tocsr() if parts else None
    b_ub = np.concatenate(brs) if brs else None

    res = linprog(
        c=np.asarray(model.obj, dtype=float),
        A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
        bounds=list(zip(model.lb, model.ub)),
        method="highs",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": feas_tol,
            "dual_feasibility_tolerance": opt_tol,
        },
    )

    status = _SCIPY_STATUS.get(res.status, LpStatus.ITERATION_LIMIT)
    sol = LpSolution(status=status, message=res.message,
                     iterations=int(getattr(res, "nit", 0) or 0))
    if status is not LpStatus.OPTIMAL:
        return sol

    duals = np.zeros(model.nrows)
    if len(eq_rows):
        duals[eq_rows] = res.eqlin.marginals
    if A_ub is not None:
        marg = res.ineqlin.marginals
        k = 0
        if len(le_rows):
            duals[le_rows] = marg[k:k + len(le_rows)]
            k += len(le_rows)
        if len(ge_rows):
            duals[ge_rows] = -marg[k:k + len(ge_rows)]

    sol.objective = float(res.fun)
    sol.x = np.asarray(res.x)
    sol.duals = duals
    sol.reduced_costs = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return sol


# ---------------------------------------------------------------------------
# infeasibility certificates

@dataclass
class FarkasCertificate:
    """Multipliers proving infeasibility.

    ``ray`` is indexed by model row.  In >=-orientation (<= rows negated) the
    multipliers are nonnegative, and

        margin = ray.b - sup_{lb<=x<=ub} ray.A x  >  0

    exhibits the contradiction; ``combo`` stores ray.A for inspection.
    """

    ray: np.ndarray
    margin: float
    combo: np.ndarray


def _certificate_margin(model: LpModel, ray: np.ndarray) -> tuple[float, np.ndarray]:
    A = model.matrix()
    yA = np.asarray(ray @ A).ravel()
    yb = float(np.dot(ray, model.rhs))
    lb = np.asarray(model.lb)
    ub = np.asarray(model.ub)
    sup = 0.0
    for j, coef in enumerate(yA):
        if abs(coef) < 1e-12:
            continue
        bound = ub[j] if coef > 0 else lb[j]
        if not math.isfinite(bound):
            return -math.inf, yA
        sup += coef * bound
    return yb - sup, yA


def extract_farkas(model: LpModel, solution: LpSolution | None = None,
                   engine: str = "auto", tol: float = 1e-7) -> FarkasCertificate:
    """Infeasibility certificate from the duals of the elastic relaxation.

    Raises LpError when the model is in fact feasible.
    """
    if solution is not None and solution.status is not LpStatus.INFEASIBLE:
        raise LpError("extract_farkas called on a model that was not proven infeasible")

    elastic = LpModel(name=model.name + "_elastic")
    for j in range(model.ncols):
        elastic.add_col(model.col_names[j], model.lb[j], model.ub[j], 0.0)
    A = model.matrix().tocsr()
    for r in range(model.nrows):
        row = A.getrow(r)
        coefs = list(zip(row.indices.tolist(), row.data.tolist()))
        sense = model.senses[r]
        if sense == "G":
            s = elastic.add_col(f"_viol[{r}]", 0.0, INF, 1.0)
            coefs.append((s, 1.0))
        elif sense == "L":
            s = elastic.add_col(f"_viol[{r}]", 0.0, INF, 1.0)
            coefs.append((s, -1.0))
        else:
            sp_ = elastic.add_col(f"_violp[{r}]", 0.0, INF, 1.0)
            sm_ = elastic.add_col(f"_violm[{r}]", 0.0, INF, 1.0)
            coefs.extend([(sp_, 1.0), (sm_, -1.0)])
        elastic.add_row(model.row_names[r], sense, model.rhs[r], coefs)

    res = solve_lp(elastic, engine=engine)
    if not res.optimal:
        raise LpError(f"elastic relaxation did not solve: {res.status}")
    if res.objective <= tol:
        raise LpError("extract_farkas: model is feasible (elastic violation is zero)")

    # orient multipliers so >=-rows carry y >= 0 and <=-rows y <= 0
    ray = res.duals.copy()
    margin, combo = _certificate_margin(model, ray)
    if margin <= 0:
        raise LpError(f"infeasibility certificate failed numeric check (margin={margin:g})")
    return FarkasCertificate(ray=ray, margin=margin, combo=combo)


# ---------------------------------------------------------------------------
# MPS interchange

def _mps_num(x: float) -> str:
    return f"{x:.12g}"


def write_mps(model: LpModel, path):
    """Free-format MPS export for cross-checks with external solvers."""
    lines = [f"NAME {model.name}", "ROWS", " N  OBJ"]
    for r, name in enumerate(model.row_names):
        lines.append(f" {model.senses[r]}  {name}")
    lines.append("COLUMNS")
    A = model.matrix().tocsc()
    for j, cname in enumerate(model.col_names):
        if model.obj[j] != 0.0:
            lines.append(f"    {cname}  OBJ  {_mps_num(model.obj[j])}")
        col = A.getcol(j)
        for r, v in zip(col.indices.tolist(), col.data.tolist()):
            lines.append(f"    {cname}  {model.row_names[r]}  {_mps_num(v)}")
    lines.append("RHS")
    for r, name in enumerate(model.row_names):
        if model.rhs[r] != 0.0:
            lines.append(f"    RHS  {name}  {_mps_num(model.rhs[r])}")
    lines.append("BOUNDS")
    for j, cname in enumerate(model.col_names):
        lo, hi = model.lb[j], model.ub[j]
        if lo == hi:
            lines.append(f" FX BND  {cname}  {_mps_num(lo)}")
            continue
        if lo == -INF and hi == INF:
            lines.append(f" FR BND  {cname}")
            continue
        if lo == -INF:
            lines.append(f" MI BND  {cname}")
        elif lo != 0.0:
            lines.append(f" LO BND  {cname}  {_mps_num(lo)}")
        if hi != INF:
            lines.append(f" UP BND  {cname}  {_mps_num(hi)}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_mps(path) -> LpModel:
    """Minimal free-format MPS reader (round-trips write_mps output)."""
    model = LpModel()
    section = None
    row_sense: dict[str, str] = {}
    row_coefs: dict[str, list[tuple[str, float]]] = {}
    rhs: dict[str, float] = {}
    bounds: dict[str, list[float]] = {}
    col_order: list[str] = []
    obj: dict[str, float] = {}
    objname = None

    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip()
            if not line or line.startswith("*"):
                continue
            head = line.split()
            if not line[0].isspace():
                section = head[0]
                if section == "NAME" and len(head) > 1:
                    model.name = head[1]
                continue
            if section == "ROWS":
                sense, name = head
                if sense == "N":
                    objname = name
                else:
                    row_sense[name] = sense
                    row_coefs[name] = []
            elif section == "COLUMNS":
                col, pairs = head[0], head[1:]
                if col not in bounds:
                    bounds[col] = [0.0, INF]
                    col_order.append(col)
                for rname, val in zip(pairs[::2], pairs[1::2]):
                    if rname == objname:
                        obj[col] = float(val)
                    else:
                        row_coefs[rname].append((col, float(val)))
            elif section == "RHS":
                for rname, val in zip(head[1::2], head[2::2]):
                    rhs[rname] = float(val)
            elif section == "BOUNDS":
                btype, _, col = head[0], head[1], head[2]
                val = float(head[3]) if len(head) > 3 else None
                if col not in bounds:
                    bounds[col] = [0.0, INF]
                    col_order.append(col)
                if btype == "UP":
                    bounds[col][1] = val
                elif btype == "LO":
                    bounds[col][0] = val
                elif btype == "FX":
                    bounds[col] = [val, val]
                elif btype == "FR":
                    bounds[col] = [-INF, INF]
                elif btype == "MI":
                    bounds[col][0] = -INF

    col_idx = {}
    for col in col_order:
        col_idx[col] = model.add_col(col, bounds[col][0], bounds[col][1], obj.get(col, 0.0))
    for rname, sense in row_sense.items():
        model.add_row(rname, sense, rhs.get(rname, 0.0),
                      [(col_idx[c], v) for c, v in row_coefs[rname]])
    return model
