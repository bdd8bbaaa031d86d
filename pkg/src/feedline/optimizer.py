"""Stochastic program builders and solvers for the feeding line.

The planning problem fixes equipment speeds V and initial inventories I0
before uncertainty reveals; scenario flows X and inventories I then follow
from the flow equations.  Because every second-stage equation is an
equality, the scenario block is a *forced* linear map of (V, I0): the LP's
only second-stage freedom is the shortfall/surplus pair (U, J) on the
feeding target.  Three solution paths exploit this to different degrees:

* ``build_extensive_form`` materializes the full LP across scenarios;
* ``solve_benders`` runs multi-cut Benders, with scenario subproblems either
  solved as LPs (duals -> cuts) or evaluated through the forced map and
  differentiated in closed form (the default; agrees with the LP route to
  rounding and is much faster);
* ``bisection_search`` wraps the solver in a penalty search on pi that
  steers the number of scenarios missing the target under the allowed
  fraction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lp import LpModel, LpStatus, extract_farkas, solve_lp
from .plant import EquipmentKind, LEVELS, Plant, horizon_operating_cost
from .scenarios import BaleSequence, Scenario, ScenarioSet, mean_scenario

INF = math.inf
U_TOL = 1e-6        # shortfall below this counts as "target met"
VIOL_TOL = 1e-4     # kg; forced-map violations below this are solver dust


class OptimizerError(RuntimeError):
    pass


@dataclass
class FirstStageSolution:
    """Here-and-now decisions: a speed schedule and initial inventories."""

    speeds: dict[str, np.ndarray]            # node -> (T,) m/period
    initial_inventory: dict[str, float]      # storage/mill -> kg

    def clipped(self, plant: Plant, seq: BaleSequence) -> "FirstStageSolution":
        """Snap numerical dust back inside the first-stage bounds."""
        level_idx = seq.level_index
        speeds = {nid: np.clip(arr, 0.0, _speed_caps(plant, nid, level_idx))
                  for nid, arr in self.speeds.items()}
        return FirstStageSolution(speeds=speeds,
                                  initial_inventory=dict(self.initial_inventory))


def _speed_caps(plant: Plant, nid: str, level_idx: np.ndarray) -> np.ndarray:
    eq = plant.graph.by_id[nid]
    return np.array([eq.speed_limit.at(l) for l in LEVELS])[level_idx]


def initial_inventory_caps(plant: Plant, seq: BaleSequence) -> dict[str, float]:
    """Mass cap on I0 per inventory node: initial volume allowance times the
    expected density of the node's stream under the first bale's level."""
    mean = mean_scenario(plant, seq)
    caps = {}
    for nid in plant.graph.inventory_nodes:
        eq = plant.graph.by_id[nid]
        vol = eq.initial_volume_cap if eq.initial_volume_cap is not None else 0.0
        caps[nid] = vol * mean.density[plant.graph.density_ref[nid]][0]
    return caps


def first_stage_cost(plant: Plant, fs: FirstStageSolution) -> float:
    cfg = plant.config
    return cfg.holding_weight * cfg.holding_cost * sum(
        fs.initial_inventory.get(nid, 0.0) for nid in plant.graph.storages)


# ---------------------------------------------------------------------------
# per-scenario coefficients

@dataclass
class ScenarioCoeffs:
    """Everything the flow equations need from one scenario, precomputed."""

    o: dict[str, np.ndarray]
    src_coef: np.ndarray                      # X_src = src_coef * V_src
    grinder_factor: dict[str, np.ndarray]     # o * (1 - dml - ml)
    theta: np.ndarray | None
    discharge_coef: dict[str, np.ndarray]     # storage: o * gamma * density
    mill_factor: dict[str, np.ndarray]        # o * (1 - ml)
    density_at: dict[str, np.ndarray]
    m_out: dict[str, np.ndarray]              # node outflow moisture
    x_ub: dict[str, np.ndarray]               # folded flow upper bounds
    inv_lb: dict[str, np.ndarray]
    inv_ub: dict[str, np.ndarray]


def scenario_coeffs(plant: Plant, seq: BaleSequence, sc: Scenario) -> ScenarioCoeffs:
    graph = plant.graph
    T = len(seq)
    if sc.horizon != T:
        raise OptimizerError(f"scenario horizon {sc.horizon} does not match sequence {T}")
    level_idx = seq.level_index
    cfg = plant.config

    o = {nid: sc.operating_at(nid) for nid in graph.topo_order}
    density_at = {nid: sc.density_at(plant, nid) for nid in graph.topo_order}
    m_out = {nid: sc.moisture_at(plant, nid) for nid in graph.topo_order}

    src = graph.source
    src_coef = o[src] * graph.bale_cross_section * sc.bale_density

    grinder_factor, mill_factor, discharge_coef = {}, {}, {}
    x_ub, inv_lb, inv_ub = {}, {}, {}
    for nid in graph.topo_order:
        eq = graph.by_id[nid]
        ml = np.array([eq.moisture_loss.at(l) for l in LEVELS])[level_idx]
        if eq.kind is EquipmentKind.GRINDER:
            grinder_factor[nid] = o[nid] * (1.0 - eq.dry_matter_loss - ml)
        elif eq.kind is EquipmentKind.PELLET_MILL:
            mill_factor[nid] = o[nid] * (1.0 - ml)
            inv_lb[nid] = np.zeros(T)
            inv_ub[nid] = eq.volume_cap * density_at[nid]
        elif eq.kind is EquipmentKind.STORAGE:
            discharge_coef[nid] = o[nid] * eq.cross_section * density_at[nid]
            inv_lb[nid] = eq.volume_floor * density_at[nid]
            inv_ub[nid] = eq.volume_cap * density_at[nid]

        ub = np.full(T, INF)
        if eq.infeed_cap is not None:
            cap = np.array([eq.infeed_cap.at(l) for l in LEVELS])[level_idx]
            ub = np.minimum(ub, cap / (1.0 - m_out[nid]))
        if nid == graph.reactor_feed:
            ub = np.minimum(ub, cfg.reactor_capacity / (1.0 - m_out[nid]))
        x_ub[nid] = ub

    return ScenarioCoeffs(
        o=o, src_coef=src_coef, grinder_factor=grinder_factor,
        theta=sc.bypass, discharge_coef=discharge_coef, mill_factor=mill_factor,
        density_at=density_at, m_out=m_out, x_ub=x_ub, inv_lb=inv_lb, inv_ub=inv_ub)


# ---------------------------------------------------------------------------
# LP block builder (shared by extensive form, mean-value model, subproblems)

class _Master:
    """First-stage columns (speeds, initial inventories) of an LpModel."""

    def __init__(self, model: LpModel, plant: Plant, seq: BaleSequence,
                 i0_caps: dict[str, float]):
        self.v_col: dict[tuple[str, int], int] = {}
        self.i0_col: dict[str, int] = {}
        level_idx = seq.level_index
        cfg = plant.config
        for nid in plant.graph.topo_order:
            caps = _speed_caps(plant, nid, level_idx)
            for t in range(len(seq)):
                self.v_col[(nid, t)] = model.add_col(f"V[{nid},{t}]", 0.0, caps[t])
        for nid in plant.graph.inventory_nodes:
            obj = cfg.holding_weight * cfg.holding_cost \
                if plant.graph.by_id[nid].kind is EquipmentKind.STORAGE else 0.0
            self.i0_col[nid] = model.add_col(f"I0[{nid}]", 0.0, i0_caps[nid], obj)

    def key_col(self, key) -> int:
        if key[0] == "V":
            return self.v_col[(key[1], key[2])]
        return self.i0_col[key[1]]


def _pin_value(pin: dict, key) -> float:
    if key[0] == "V":
        return float(pin["V"][key[1]][key[2]])
    return float(pin["I0"].get(key[1], 0.0))


def _add_scenario_block(model: LpModel, plant: Plant, seq: BaleSequence,
                        co: ScenarioCoeffs, label: str, pi: float, weight: float,
                        master: _Master | None, pin: dict | None,
                        rhs_deps: list | None, hard_target: bool = False):
    """Append one scenario's variables and rows.

    With ``master`` given, first-stage terms reference its columns (extensive
    form).  With ``pin`` given, first-stage values are fixed data moved to
    the right-hand side, and each dependence is recorded in ``rhs_deps`` as
    ``(row_name, key, coef)``: rhs(x) = base + coef * x[key].
    """
    graph = plant.graph
    T = len(seq)
    cfg = plant.config

    def fs_term(coefs, rhs, name, key, coef):
        if master is not None:
            coefs.append((master.key_col(key), -coef))
            return rhs
        if rhs_deps is not None and coef != 0.0:
            rhs_deps.append((name, key, coef))
        return rhs + coef * _pin_value(pin, key)

    x_col, i_col = {}, {}
    for nid in graph.topo_order:
        ub = co.x_ub[nid]
        for t in range(T):
            x_col[(nid, t)] = model.add_col(
                f"X[{label},{nid},{t}]", 0.0, ub[t],
                obj=-weight * (1.0 - co.m_out[nid][t]) if nid == graph.reactor_feed else 0.0)
    for nid in graph.inventory_nodes:
        for t in range(T):
            i_col[(nid, t)] = model.add_col(
                f"I[{label},{nid},{t}]", co.inv_lb[nid][t], co.inv_ub[nid][t])
    u_col = model.add_col(f"U[{label}]", 0.0, 0.0 if hard_target else INF, pi)
    j_col = model.add_col(f"J[{label}]", 0.0, INF)

    sep = graph.separation
    for t in range(T):
        for nid in graph.topo_order:
            eq = graph.by_id[nid]
            ups = graph.feeds.get(nid, ())
            name = f"flow[{label},{nid},{t}]"
            if eq.kind is EquipmentKind.BALE_INFEED:
                coefs = [(x_col[(nid, t)], 1.0)]
                rhs = fs_term(coefs, 0.0, name, ("V", nid, t), co.src_coef[t])
                model.add_row(name, "E", rhs, coefs)
            elif eq.kind is EquipmentKind.GRINDER:
                coefs = [(x_col[(nid, t)], 1.0)]
                coefs += [(x_col[(u, t)], -co.grinder_factor[nid][t]) for u in ups]
                model.add_row(name, "E", 0.0, coefs)
            elif eq.kind is EquipmentKind.STORAGE:
                coefs = [(x_col[(nid, t)], 1.0)]
                rhs = fs_term(coefs, 0.0, name, ("V", nid, t), co.discharge_coef[nid][t])
                model.add_row(name, "E", rhs, coefs)
                bname = f"inv[{label},{nid},{t}]"
                bal = [(i_col[(nid, t)], 1.0), (x_col[(nid, t)], 1.0)]
                bal += [(x_col[(u, t)], -1.0) for u in ups]
                if t == 0:
                    rhs = fs_term(bal, 0.0, bname, ("I0", nid), 1.0)
                else:
                    bal.append((i_col[(nid, t - 1)], -1.0))
                    rhs = 0.0
                model.add_row(bname, "E", rhs, bal)
            elif eq.kind is EquipmentKind.PELLET_MILL:
                fac = co.mill_factor[nid][t]
                keep = 1.0 - eq.residence
                coefs = [(x_col[(nid, t)], 1.0)]
                coefs += [(x_col[(u, t)], -fac * keep) for u in ups]
                if t == 0:
                    rhs = fs_term(coefs, 0.0, name, ("I0", nid), fac)
                else:
                    coefs.append((i_col[(nid, t - 1)], -fac))
                    rhs = 0.0
                model.add_row(name, "E", rhs, coefs)
                bname = f"inv[{label},{nid},{t}]"
                bal = [(i_col[(nid, t)], 1.0), (x_col[(nid, t)], 1.0)]
                bal += [(x_col[(u, t)], -1.0) for u in ups]
                if t == 0:
                    rhs = fs_term(bal, 0.0, bname, ("I0", nid), 1.0)
                else:
                    bal.append((i_col[(nid, t - 1)], -1.0))
                    rhs = 0.0
                model.add_row(bname, "E", rhs, bal)
            else:  # transport
                coefs = [(x_col[(nid, t)], 1.0)]
                if sep is not None and nid == sep.regrind_head:
                    coefs.append((x_col[(sep.feed, t)], -co.o[nid][t] * (1.0 - co.theta[t])))
                elif sep is not None and nid == sep.bypass_head:
                    coefs.append((x_col[(sep.feed, t)], -co.o[nid][t] * co.theta[t]))
                else:
                    coefs += [(x_col[(u, t)], -co.o[nid][t]) for u in ups]
                model.add_row(name, "E", 0.0, coefs)
                cname = f"cap[{label},{nid},{t}]"
                cap = [(x_col[(nid, t)], 1.0)]
                gd = eq.cross_section * co.density_at[nid][t]
                rhs = fs_term(cap, 0.0, cname, ("V", nid, t), gd)
                model.add_row(cname, "L", rhs, cap)

    k = graph.reactor_feed
    target = [(x_col[(k, t)], (1.0 - co.m_out[k][t]) / T) for t in range(T)]
    target += [(u_col, 1.0), (j_col, -1.0)]
    model.add_row(f"target[{label}]", "E", cfg.target_rate, target)
    return x_col, i_col, u_col, j_col


@dataclass
class ExtensiveModel:
    model: LpModel
    master: _Master
    x_col: dict
    i_col: dict
    u_col: dict
    j_col: dict
    pi: float

    def first_stage(self, x: np.ndarray, plant: Plant, seq: BaleSequence) -> FirstStageSolution:
        T = len(seq)
        speeds = {nid: np.array([x[self.master.v_col[(nid, t)]] for t in range(T)])
                  for nid in plant.graph.topo_order}
        inv0 = {nid: float(x[col]) for nid, col in self.master.i0_col.items()}
        return FirstStageSolution(speeds=speeds, initial_inventory=inv0)


def build_extensive_form(plant: Plant, seq: BaleSequence, sset: ScenarioSet,
                         pi: float, hard_target: bool = False) -> ExtensiveModel:
    """Full LP over all scenarios with the penalty objective.

    Objective: holding_weight * h . I0  -  (1/S) sum_s sum_t dry reactor flow
    +  pi * sum_s U_s.
    """
    if len(sset) == 0:
        raise OptimizerError("scenario set is empty")
    if any(sc.horizon != len(seq) for sc in sset):
        raise OptimizerError("scenario horizon does not match the bale sequence")
    model = LpModel(name="extensive")
    master = _Master(model, plant, seq, initial_inventory_caps(plant, seq))
    S = len(sset)
    xs, is_, us, js = {}, {}, {}, {}
    for s, sc in enumerate(sset):
        co = scenario_coeffs(plant, seq, sc)
        xs[s], is_[s], us[s], js[s] = _add_scenario_block(
            model, plant, seq, co, f"s{s}", pi, 1.0 / S, master, None, None,
            hard_target=hard_target)
    return ExtensiveModel(model=model, master=master, x_col=xs, i_col=is_,
                          u_col=us, j_col=js, pi=pi)


def build_mean_value(plant: Plant, seq: BaleSequence, failures: bool = False) -> ExtensiveModel:
    """Deterministic single-scenario model at expected parameter values.

    The chance constraint becomes the hard requirement R(X) >= target: the
    shortfall variable is fixed at zero, the surplus stays free.
    """
    mean = mean_scenario(plant, seq, failures=failures)
    sset = ScenarioSet(scenarios=[mean], seed=0, sequence=seq,
                       provenance={"mean_value": True})
    return build_extensive_form(plant, seq, sset, pi=0.0, hard_target=True)


def build_subproblem(plant: Plant, seq: BaleSequence, sc: Scenario,
                     first_stage: FirstStageSolution, pi: float, weight: float = 1.0):
    """Scenario LP with (V, I0) fixed on the right-hand side.

    Returns (model, rhs_deps, (x_col, i_col, u_col, j_col)); rhs_deps lists
    (row_index, key, coef) so optimal duals turn into a cut in the master
    variables.
    """
    model = LpModel(name="subproblem")
    co = scenario_coeffs(plant, seq, sc)
    pin = {"V": first_stage.speeds, "I0": first_stage.initial_inventory}
    named_deps: list = []
    handles = _add_scenario_block(model, plant, seq, co, "s", pi, weight,
                                  None, pin, named_deps)
    row_of = {name: r for r, name in enumerate(model.row_names)}
    rhs_deps = [(row_of[name], key, coef) for name, key, coef in named_deps]
    return model, rhs_deps, handles


def subproblem_cut_from_duals(solution, rhs_deps, pin) -> tuple[float, dict]:
    """Affine minorant  Q(x) >= const + sum coef[key] x[key]  from LP duals."""
    coefs: dict = {}
    anchor = 0.0
    for row, key, coef in rhs_deps:
        y = float(solution.duals[row])
        if y == 0.0 or coef == 0.0:
            continue
        coefs[key] = coefs.get(key, 0.0) + y * coef
        anchor += y * coef * _pin_value(pin, key)
    return solution.objective - anchor, coefs


# ---------------------------------------------------------------------------
# forced-map evaluation (exact closed form of the scenario block)

class AffineEvaluator:
    """Evaluates all scenario blocks of a set for a fixed first stage.

    The flow equations determine every X and I from (V, I0); this class runs
    that map vectorized across scenarios and differentiates it exactly, so
    optimality and feasibility cuts match the LP-dual route.
    """

    def __init__(self, plant: Plant, seq: BaleSequence, sset: ScenarioSet):
        self.plant = plant
        self.seq = seq
        self.S = len(sset)
        self.T = len(seq)
        self.coeffs = [scenario_coeffs(plant, seq, sc) for sc in sset]
        g = plant.graph
        self.order = g.topo_order

        def stack(get, ids):
            return {nid: np.stack([get(co, nid) for co in self.coeffs]) for nid in ids}

        self.o = stack(lambda co, n: co.o[n], self.order)
        self.density_at = stack(lambda co, n: co.density_at[n], self.order)
        self.m_out = stack(lambda co, n: co.m_out[n], self.order)
        self.x_ub = stack(lambda co, n: co.x_ub[n], self.order)
        self.src_coef = np.stack([co.src_coef for co in self.coeffs])
        self.theta = (np.stack([co.theta for co in self.coeffs])
                      if g.separation is not None else None)
        self.grinder_factor = stack(lambda co, n: co.grinder_factor[n], g.grinders)
        self.discharge_coef = stack(lambda co, n: co.discharge_coef[n], g.storages)
        self.mill_factor = stack(lambda co, n: co.mill_factor[n], g.mills)
        self.inv_lb = stack(lambda co, n: co.inv_lb[n], g.inventory_nodes)
        self.inv_ub = stack(lambda co, n: co.inv_ub[n], g.inventory_nodes)
        self.dry_w = 1.0 - self.m_out[g.reactor_feed]     # [S, T]

    @property
    def weight(self) -> float:
        return 1.0 / self.S

    # -- forward ------------------------------------------------------------
    def forced_flows(self, fs: FirstStageSolution):
        """X and I per node as [S, T] arrays for the fixed first stage."""
        g = self.plant.graph
        sep = g.separation
        X: dict[str, np.ndarray] = {}
        I: dict[str, np.ndarray] = {}
        for nid in self.order:
            eq = g.by_id[nid]
            ups = g.feeds.get(nid, ())
            if eq.kind is EquipmentKind.BALE_INFEED:
                X[nid] = self.src_coef * fs.speeds[nid][None, :]
            elif eq.kind is EquipmentKind.GRINDER:
                X[nid] = self.grinder_factor[nid] * sum(X[u] for u in ups)
            elif eq.kind is EquipmentKind.STORAGE:
                inflow = sum(X[u] for u in ups)
                dis = self.discharge_coef[nid] * fs.speeds[nid][None, :]
                I[nid] = fs.initial_inventory.get(nid, 0.0) + np.cumsum(inflow - dis, axis=1)
                X[nid] = dis
            elif eq.kind is EquipmentKind.PELLET_MILL:
                inflow = sum(X[u] for u in ups)
                keep = 1.0 - eq.residence
                fac = self.mill_factor[nid]
                Xm = np.empty_like(inflow)
                Im = np.empty_like(inflow)
                prev = np.full(self.S, fs.initial_inventory.get(nid, 0.0))
                for t in range(self.T):
                    out = fac[:, t] * (keep * inflow[:, t] + prev)
                    Xm[:, t] = out
                    prev = prev + inflow[:, t] - out
                    Im[:, t] = prev
                X[nid], I[nid] = Xm, Im
            else:  # transport
                if sep is not None and nid == sep.regrind_head:
                    X[nid] = self.o[nid] * (1.0 - self.theta) * X[sep.feed]
                elif sep is not None and nid == sep.bypass_head:
                    X[nid] = self.o[nid] * self.theta * X[sep.feed]
                else:
                    X[nid] = self.o[nid] * sum(X[u] for u in ups)
        return X, I

    def dry_feed(self, X) -> np.ndarray:
        return self.dry_w * X[self.plant.graph.reactor_feed]

    def violations(self, fs: FirstStageSolution, X, I, per_family: int = 3):
        """Violated hard constraints per scenario, batched by family.

        Returns a list (per scenario) of (amount, kind, node, t) tuples for the
        ``per_family`` most violated periods of every constraint family.
        """
        g = self.plant.graph
        out: list[list] = [[] for _ in range(self.S)]

        def consider(viol, kind, nid):
            take = min(per_family, viol.shape[1])
            idx = np.argpartition(-viol, take - 1, axis=1)[:, :take]
            vals = np.take_along_axis(viol, idx, axis=1)
            for s in range(self.S):
                for j in range(take):
                    if vals[s, j] > 0.0:
                        out[s].append((float(vals[s, j]), kind, nid, int(idx[s, j])))

        for nid in self.order:
            eq = g.by_id[nid]
            ub = self.x_ub[nid]
            if np.isfinite(ub).any():
                consider(np.where(np.isfinite(ub), X[nid] - ub, -INF), "x_ub", nid)
            if eq.kind is EquipmentKind.TRANSPORT:
                cap = eq.cross_section * self.density_at[nid] * fs.speeds[nid][None, :]
                consider(X[nid] - cap, "cap", nid)
            if nid in I:
                consider(I[nid] - self.inv_ub[nid], "inv_ub", nid)
                consider(self.inv_lb[nid] - I[nid], "inv_lb", nid)
        for s in range(self.S):
            out[s].sort(key=lambda v: -v[0])
        return out

    # -- reverse (exact gradients of forced quantities) ----------------------
    def adjoint(self, s: int, bar_x: dict[str, np.ndarray] | None = None,
                bar_i: dict[str, np.ndarray] | None = None) -> dict:
        """Gradient of sum(bar_x . X) + sum(bar_i . I) w.r.t. (V, I0).

        The forced map is linear, so the gradient is independent of the
        evaluation point.
        """
        g = self.plant.graph
        sep = g.separation
        T = self.T
        grad: dict = {}

        def bump(key, val):
            grad[key] = grad.get(key, 0.0) + val

        push = {nid: np.zeros(T) for nid in self.order}
        for nid in reversed(self.order):
            eq = g.by_id[nid]
            ups = g.feeds.get(nid, ())
            total = push[nid]
            if bar_x and nid in bar_x:
                total = total + bar_x[nid]
            if eq.kind is EquipmentKind.BALE_INFEED:
                bump(("V", nid), total * self.src_coef[s])
            elif eq.kind is EquipmentKind.GRINDER:
                for u in ups:
                    push[u] += total * self.grinder_factor[nid][s]
            elif eq.kind is EquipmentKind.STORAGE:
                binv = np.zeros(T) if not bar_i or nid not in bar_i else bar_i[nid]
                suffix = np.cumsum(binv[::-1])[::-1]
                bump(("V", nid),
                     (total - suffix) * self.discharge_coef[nid][s])
                bump(("I0", nid), float(binv.sum()))
                for u in ups:
                    push[u] += suffix
            elif eq.kind is EquipmentKind.PELLET_MILL:
                keep = 1.0 - eq.residence
                fac = self.mill_factor[nid][s]
                binv = np.zeros(T) if not bar_i or nid not in bar_i else bar_i[nid]
                run = 0.0
                bar_in = np.zeros(T)
                for t in range(T - 1, -1, -1):
                    b_i = binv[t] + run
                    b_x = total[t] - b_i
                    bar_in[t] = b_x * fac[t] * keep + b_i
                    run = b_x * fac[t] + b_i
                bump(("I0", nid), float(run))
                for u in ups:
                    push[u] += bar_in
            else:  # transport
                if sep is not None and nid == sep.regrind_head:
                    push[sep.feed] += total * self.o[nid][s] * (1.0 - self.theta[s])
                elif sep is not None and nid == sep.bypass_head:
                    push[sep.feed] += total * self.o[nid][s] * self.theta[s]
                else:
                    for u in ups:
                        push[u] += total * self.o[nid][s]

        out: dict = {}
        for key, val in grad.items():
            if key[0] == "V":
                arr = np.asarray(val)
                for t in np.nonzero(arr)[0]:
                    out[("V", key[1], int(t))] = float(arr[t])
            elif val != 0.0:
                out[("I0", key[1])] = float(val)
        return out

    # -- scenario values and cuts --------------------------------------------
    def q_value(self, s: int, dry: np.ndarray, pi: float) -> tuple[float, float]:
        """(Q_s, U_s) for scenario s given the dry reactor-feed paths."""
        r = self.plant.config.target_rate
        total = float(dry[s].sum())
        shortfall = max(0.0, r - total / self.T)
        return -self.weight * total + pi * shortfall, shortfall

    def optimality_cut(self, s: int, fs: FirstStageSolution, dry: np.ndarray,
                       pi: float) -> tuple[float, dict]:
        q, shortfall = self.q_value(s, dry, pi)
        k = self.plant.graph.reactor_feed
        factor = -self.weight - (pi / self.T if shortfall > U_TOL else 0.0)
        grad = self.adjoint(s, bar_x={k: factor * self.dry_w[s]})
        anchor = _grad_dot(grad, fs)
        return q - anchor, grad

    def feasibility_cut(self, s: int, worst) -> tuple[float, dict]:
        """Violated hard constraint as an affine row  base + grad.x <= 0."""
        _amount, kind, nid, t = worst
        one = np.zeros(self.T)
        seed_x, seed_i, extra = {}, {}, {}
        if kind == "x_ub":
            one[t] = 1.0
            seed_x[nid] = one
            base = -self.x_ub[nid][s, t]
        elif kind == "cap":
            one[t] = 1.0
            seed_x[nid] = one
            gd = self.plant.graph.by_id[nid].cross_section * self.density_at[nid][s, t]
            extra[("V", nid, t)] = -gd
            base = 0.0
        elif kind == "inv_ub":
            one[t] = 1.0
            seed_i[nid] = one
            base = -self.inv_ub[nid][s, t]
        else:  # inv_lb
            one[t] = -1.0
            seed_i[nid] = one
            base = self.inv_lb[nid][s, t]
        grad = self.adjoint(s, bar_x=seed_x, bar_i=seed_i)
        for key, val in extra.items():
            grad[key] = grad.get(key, 0.0) + val
        scale = max(1.0, max((abs(v) for v in grad.values()), default=1.0))
        return base / scale, {k2: v / scale for k2, v in grad.items()}


def _grad_dot(grad: dict, fs: FirstStageSolution) -> float:
    pin = {"V": fs.speeds, "I0": fs.initial_inventory}
    return sum(val * _pin_value(pin, key) for key, val in grad.items())


def _seed_structural_rows(model: LpModel, master: "_Master", ev: "AffineEvaluator",
                          plant: Plant):
    """Valid master rows implied by caps on memory-free sections of the line.

    Flow at a node upstream of the first storage is proportional to the
    infeed speed of the same period; flow on a storage's direct transport
    children is proportional to that storage's discharge speed.  Folding each
    cap over scenarios therefore yields per-period bounds and two-variable
    rows that hold for every scenario, which spares Benders thousands of
    single-facet feasibility cuts.  All rows are implied by the scenario
    constraints, so the master stays a relaxation.
    """
    g = plant.graph
    T = ev.T
    ones = FirstStageSolution(
        speeds={nid: np.ones(T) for nid in g.topo_order},
        initial_inventory={nid: 0.0 for nid in g.inventory_nodes})
    Xu, _ = ev.forced_flows(ones)

    drivers: dict[str, str] = {}
    for nid in g.upstream_of_storage():
        drivers[nid] = g.source
    for st in g.storages:
        drivers[st] = st
        for ch in g.children.get(st, ()):
            if g.by_id[ch].kind is EquipmentKind.TRANSPORT:
                drivers[ch] = st

    for nid in g.topo_order:
        drv = drivers.get(nid)
        if drv is None:
            continue
        coef = Xu[nid]                       # [S, T] flow per unit driver speed
        eq = g.by_id[nid]
        ub = ev.x_ub[nid]
        finite = np.isfinite(ub)
        if finite.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where((coef > 0) & finite, ub / np.where(coef > 0, coef, 1.0),
                               INF).min(axis=0)
            for t in range(T):
                col = master.v_col[(drv, t)]
                if lim[t] < model.ub[col]:
                    model.ub[col] = max(0.0, float(lim[t]))
        if eq.kind is EquipmentKind.TRANSPORT and nid != drv:
            gd = eq.cross_section * ev.density_at[nid]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(gd > 0, coef / np.where(gd > 0, gd, 1.0), INF).max(axis=0)
            for t in range(T):
                if 0.0 < ratio[t] < INF:
                    model.add_row(f"seed_cap[{nid},{t}]", "L", 0.0,
                                  [(master.v_col[(drv, t)], float(ratio[t])),
                                   (master.v_col[(nid, t)], -1.0)])


# ---------------------------------------------------------------------------
# multi-cut Benders

@dataclass
class Cut:
    kind: str                 # "opt" or "feas"
    scenario: int
    const: float
    coefs: dict
    pi_tag: float             # opt cuts stay valid for any pi >= pi_tag
    tag: tuple = ()           # feas cuts: (kind, node, t) for deduplication


@dataclass
class BendersResult:
    status: str                              # "optimal" | "iteration_limit" | "infeasible"
    first_stage: FirstStageSolution | None
    objective: float                         # incumbent (upper bound)
    lower_bound: float
    q_values: np.ndarray | None
    shortfalls: np.ndarray | None
    iterations: list = field(default_factory=list)
    pool: list = field(default_factory=list)


def solve_benders(plant: Plant, seq: BaleSequence, sset: ScenarioSet, pi: float,
                  gap_tol: float = 1e-6, subproblem_mode: str = "affine",
                  max_iters: int = 400, pool: list | None = None,
                  evaluator: AffineEvaluator | None = None) -> BendersResult:
    """Multi-cut Benders on the penalty model at fixed pi.

    One optimality cut per violated scenario per iteration; feasibility cuts
    whenever the trial first stage breaks a hard constraint.  Cuts carried in
    ``pool`` are reused when still valid at this pi (optimality cuts from a
    lower pi under-estimate the costlier objective, so they stay valid).
    """
    if subproblem_mode not in ("affine", "lp"):
        raise OptimizerError(f"unknown subproblem mode '{subproblem_mode}'")
    S = len(sset)
    if S == 0:
        raise OptimizerError("scenario set is empty")
    ev = evaluator or AffineEvaluator(plant, seq, sset)
    pool = list(pool) if pool else []
    cfg = plant.config
    eta_lb = -(cfg.reactor_capacity * ev.T) / S   # dry feed can never beat the cap
    T = len(seq)

    model = LpModel(name="master")
    master = _Master(model, plant, seq, initial_inventory_caps(plant, seq))
    eta = [model.add_col(f"eta[{s}]", eta_lb, INF, 1.0) for s in range(S)]
    _seed_structural_rows(model, master, ev, plant)
    feas_seen = set()

    def add_cut_row(cut: Cut):
        coefs = [(master.key_col(k), -v) for k, v in cut.coefs.items()]
        if cut.kind == "opt":
            coefs.append((eta[cut.scenario], 1.0))
        model.add_row(f"{cut.kind}[{model.nrows}]", "G", cut.const, coefs)

    for cut in pool:
        if cut.kind == "opt" and cut.pi_tag > pi * (1.0 + 1e-12):
            continue
        if cut.kind == "feas":
            feas_seen.add((cut.scenario,) + cut.tag)
        add_cut_row(cut)

    best_ub, best, best_q, best_u = INF, None, None, None
    log: list = []
    lb = -INF

    for it in range(1, max_iters + 1):
        msol = solve_lp(model)
        if msol.status is LpStatus.INFEASIBLE:
            return BendersResult(status="infeasible", first_stage=None, objective=INF,
                                 lower_bound=INF, q_values=None, shortfalls=None,
                                 iterations=log, pool=pool)
        if not msol.optimal:
            raise OptimizerError(f"master solve failed: {msol.status} {msol.message}")
        lb = msol.objective
        fs = FirstStageSolution(
            speeds={nid: np.array([msol.x[master.v_col[(nid, t)]] for t in range(T)])
                    for nid in plant.graph.topo_order},
            initial_inventory={nid: float(msol.x[c]) for nid, c in master.i0_col.items()})
        eta_hat = np.array([msol.x[e] for e in eta])

        new_cuts: list[Cut] = []
        qs = us = None
        if subproblem_mode == "affine":
            X, I = ev.forced_flows(fs)
            viol = ev.violations(fs, X, I)
            infeasible = False
            for s in range(S):
                for entry in viol[s]:
                    if entry[0] <= VIOL_TOL:
                        break   # sorted by size; the rest is solver dust
                    key = (s, entry[1], entry[2], entry[3])
                    if key in feas_seen:
                        continue   # already cut; residual is master dust
                    feas_seen.add(key)
                    c, gcoef = ev.feasibility_cut(s, entry)
                    new_cuts.append(Cut("feas", s, c, gcoef, 0.0, tag=entry[1:]))
                    infeasible = True
            if not infeasible:
                dry = ev.dry_feed(X)
                qs, us = np.empty(S), np.empty(S)
                for s in range(S):
                    qs[s], us[s] = ev.q_value(s, dry, pi)
                ub_iter = first_stage_cost(plant, fs) + float(qs.sum())
                for s in range(S):
                    if qs[s] > eta_hat[s] + 1e-7 * (1.0 + abs(qs[s])):
                        c, gcoef = ev.optimality_cut(s, fs, dry, pi)
                        new_cuts.append(Cut("opt", s, c, gcoef, pi))
            else:
                ub_iter = INF
        else:  # lp subproblems with dual-based cuts
            qs, us = np.empty(S), np.empty(S)
            pin = {"V": fs.speeds, "I0": fs.initial_inventory}
            infeasible = False
            for s, sc in enumerate(sset):
                sub, deps, handles = build_subproblem(plant, seq, sc, fs, pi, weight=1.0 / S)
                ssol = solve_lp(sub)
                if ssol.status is LpStatus.INFEASIBLE:
                    infeasible = True
                    cert = extract_farkas(sub)
                    coefs: dict = {}
                    anchor = 0.0
                    for row, key, coef in deps:
                        y = float(cert.ray[row])
                        if y and coef:
                            coefs[key] = coefs.get(key, 0.0) + y * coef
                            anchor += y * coef * _pin_value(pin, key)
                    const = cert.margin - anchor   # margin(x) <= 0 for feasible x
                    scale = max(1.0, max((abs(v) for v in coefs.values()), default=1.0))
                    new_cuts.append(Cut("feas", s, const / scale,
                                        {k: v / scale for k, v in coefs.items()}, 0.0,
                                        tag=("farkas", it)))
                    continue
                if not ssol.optimal:
                    raise OptimizerError(f"subproblem {s} failed: {ssol.status}")
                qs[s] = ssol.objective
                us[s] = float(ssol.x[handles[2]])
                if ssol.objective > eta_hat[s] + 1e-7 * (1.0 + abs(ssol.objective)):
                    c, gcoef = subproblem_cut_from_duals(ssol, deps, pin)
                    new_cuts.append(Cut("opt", s, c, gcoef, pi))
            ub_iter = INF if infeasible else first_stage_cost(plant, fs) + float(qs.sum())
            if infeasible:
                qs = us = None

        if ub_iter < best_ub:
            best_ub, best, best_q, best_u = ub_iter, fs, qs, us
        log.append({"iteration": it, "pi": pi, "lower_bound": lb,
                    "upper_bound": best_ub, "cuts_added": len(new_cuts)})
        for cut in new_cuts:
            pool.append(cut)
            add_cut_row(cut)
        if best_ub < INF and best_ub - lb <= gap_tol * (1.0 + abs(best_ub)):
            return BendersResult(status="optimal", first_stage=best, objective=best_ub,
                                 lower_bound=lb, q_values=best_q, shortfalls=best_u,
                                 iterations=log, pool=pool)
        if not new_cuts:
            # nothing separates the master point: optimal at tolerance
            if ub_iter == INF and qs is None:
                X, I = ev.forced_flows(fs)
                dry = ev.dry_feed(X)
                qs, us = np.empty(S), np.empty(S)
                for s in range(S):
                    qs[s], us[s] = ev.q_value(s, dry, pi)
                ub_iter = first_stage_cost(plant, fs) + float(qs.sum())
            return BendersResult(status="optimal", first_stage=fs, objective=ub_iter,
                                 lower_bound=lb, q_values=qs, shortfalls=us,
                                 iterations=log, pool=pool)

    return BendersResult(status="iteration_limit", first_stage=best, objective=best_ub,
                         lower_bound=lb, q_values=best_q, shortfalls=best_u,
                         iterations=log, pool=pool)


# ---------------------------------------------------------------------------
# penalty bisection

@dataclass
class SolveResult:
    status: str                              # "feasible" | "target_unachievable"
    first_stage: FirstStageSolution | None
    flows: dict[str, np.ndarray] | None      # node -> [S, T]
    inventories: dict[str, np.ndarray] | None
    reactor_dry: np.ndarray | None           # [S, T] dry feed
    per_scenario_rate: np.ndarray | None     # [S] average dry rate per period
    shortfalls: np.ndarray | None
    violated_count: int
    pi: float
    objective: float                         # surrogate objective at solution
    true_cost: float                         # $/dt over the horizon
    iterations: list = field(default_factory=list)

    @property
    def in_sample_reliability(self) -> float:
        if self.per_scenario_rate is None or len(self.per_scenario_rate) == 0:
            return math.nan
        return 1.0 - self.violated_count / len(self.per_scenario_rate)


def _solution_from_fs(plant, seq, ev: AffineEvaluator, fs: FirstStageSolution,
                      pi: float, log: list) -> SolveResult:
    fs = fs.clipped(plant, seq)
    X, I = ev.forced_flows(fs)
    dry = ev.dry_feed(X)
    rates = dry.sum(axis=1) / ev.T
    shortfalls = np.maximum(0.0, plant.config.target_rate - rates)
    C = int(np.sum(shortfalls > U_TOL))
    surrogate = (first_stage_cost(plant, fs) - ev.weight * float(dry.sum())
                 + pi * float(shortfalls.sum()))
    mean_dry_tons = float(dry.sum(axis=1).mean()) / 1000.0
    cost = horizon_operating_cost(plant, seq)
    return SolveResult(status="feasible", first_stage=fs, flows=X, inventories=I,
                       reactor_dry=dry, per_scenario_rate=rates, shortfalls=shortfalls,
                       violated_count=C, pi=pi, objective=surrogate,
                       true_cost=cost / mean_dry_tons if mean_dry_tons > 0 else math.nan,
                       iterations=log)


def bisection_search(plant: Plant, seq: BaleSequence, sset: ScenarioSet,
                     epsilon_hat: float | None = None,
                     pi_high: float = 1e7, pi_low: float = 0.0,
                     delta: float = 0.01, sigma: float = 0.01,
                     gap_tol: float = 1e-6, subproblem_mode: str = "affine",
                     solver: str = "benders",
                     shared_pool: list | None = None) -> SolveResult:
    """Bisection on the penalty weight of target shortfalls.

    Starts at pi_high; if even there at least (epsilon_hat + sigma) * S
    scenarios miss the target, the target is unachievable.  Otherwise pi is
    bisected until the bracket halves below delta; the returned solution is
    the one from the lowest pi whose miss count stayed under the threshold.
    Benders cut pools are carried across pi values.
    """
    S = len(sset)
    if S == 0:
        raise OptimizerError("scenario set is empty")
    eps = plant.config.epsilon_hat if epsilon_hat is None else float(epsilon_hat)
    threshold = eps * S + sigma * S
    ev = AffineEvaluator(plant, seq, sset)
    # feasibility cuts do not involve the target, so a caller sweeping the
    # target rate on the same scenario set can carry them across searches
    pool: list = [c for c in shared_pool if c.kind == "feas"] if shared_pool else []
    log_all: list = []

    def solve_at(pi: float) -> FirstStageSolution:
        nonlocal pool
        if solver == "extensive":
            em = build_extensive_form(plant, seq, sset, pi)
            sol = solve_lp(em.model)
            if not sol.optimal:
                raise OptimizerError(f"extensive solve failed at pi={pi}: {sol.status}")
            log_all.append({"iteration": len(log_all) + 1, "pi": pi,
                            "lower_bound": sol.objective, "upper_bound": sol.objective,
                            "cuts_added": 0})
            return em.first_stage(sol.x, plant, seq)
        res = solve_benders(plant, seq, sset, pi, gap_tol=gap_tol,
                            subproblem_mode=subproblem_mode, pool=pool, evaluator=ev)
        if res.status == "infeasible" or res.first_stage is None:
            raise OptimizerError(
                f"penalty model unsolvable at pi={pi}: Benders status {res.status}")
        pool = res.pool
        log_all.extend(res.iterations)
        return res.first_stage

    def count_misses(fs: FirstStageSolution) -> int:
        X, _ = ev.forced_flows(fs.clipped(plant, seq))
        rates = ev.dry_feed(X).sum(axis=1) / ev.T
        return int(np.sum(plant.config.target_rate - rates > U_TOL))

    hi, lo = float(pi_high), float(pi_low)
    fs = solve_at(hi)
    if count_misses(fs) >= threshold:
        result = _solution_from_fs(plant, seq, ev, fs, hi, log_all)
        result.status = "target_unachievable"
        if shared_pool is not None:
            shared_pool[:] = pool
        return result

    best_fs, best_pi = fs, hi
    while (hi - lo) / 2.0 > delta:
        mid = (hi + lo) / 2.0
        fs = solve_at(mid)
        if count_misses(fs) >= threshold:
            lo = mid
        else:
            hi = mid
            best_fs, best_pi = fs, mid

    if shared_pool is not None:
        shared_pool[:] = pool
    return _solution_from_fs(plant, seq, ev, best_fs, best_pi, log_all)
