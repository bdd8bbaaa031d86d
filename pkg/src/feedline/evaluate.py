"""Out-of-sample evaluation: forward simulation, metrics, stability.

The simulator plays a fixed first stage (speeds, initial inventories)
through scenarios period by period.  Where the planning LP would be
infeasible -- an infeed cap, a conveyor capacity, a bin bound or the reactor
cap binding -- the simulator instead curtails flow greedily at that node and
records a violation event with its magnitude.  On scenarios where nothing
binds, the trajectory reproduces the LP's flows exactly (same equations).

Mass accounting per node and period:

    inflow - outflow - inventory change - process loss - down loss
           - curtailed (spilled) mass  =  0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .plant import EquipmentKind, LEVELS, Plant, horizon_operating_cost
from .scenarios import BaleSequence, Scenario, ScenarioSet, generate_scenario_set, substream
from .optimizer import FirstStageSolution, bisection_search, scenario_coeffs

EVENT_TOL = 1e-6    # kg; smaller magnitudes are float dust, not violations


@dataclass
class FlowTrajectory:
    """One scenario's simulated path."""

    flows: dict[str, np.ndarray]          # node -> (T,) outflow, kg
    inventories: dict[str, np.ndarray]    # storage/mill -> (T,) kg
    reactor_dry: np.ndarray               # (T,) dry kg fed to the reactor
    events: list                          # (kind, node, t, magnitude)
    ledger: dict[str, dict[str, np.ndarray]]   # node -> accounting terms


@dataclass
class ViolationReport:
    scenario_count: int
    scenarios_with_events: int
    by_node: dict[str, dict]              # node -> {kind: {count, mass}}
    bin_event_fraction: float             # share of scenarios with a storage-bound event

    def total_events(self) -> int:
        return sum(int(k["count"]) for node in self.by_node.values() for k in node.values())


class _BatchAccounts:
    """Violation bookkeeping over a chunk of scenarios."""

    def __init__(self, S):
        self.S = S
        self.node_kind: dict[tuple[str, str], list] = {}
        self.scenario_flag = np.zeros(S, dtype=bool)
        self.storage_flag = np.zeros(S, dtype=bool)

    def record(self, kind, nid, mags, storage_bound=False):
        hit = mags > EVENT_TOL
        if not np.any(hit):
            return
        entry = self.node_kind.setdefault((nid, kind), [0, 0.0])
        entry[0] += int(hit.sum())
        entry[1] += float(mags[hit].sum())
        self.scenario_flag |= hit
        if storage_bound:
            self.storage_flag |= hit


def _simulate_chunk(plant: Plant, seq: BaleSequence, fs: FirstStageSolution,
                    scenarios: list[Scenario], keep_paths: bool):
    """Vectorized greedy simulation of one chunk; returns dry feed, accounts,
    and (optionally) full paths."""
    g = plant.graph
    T = len(seq)
    S = len(scenarios)
    co = [scenario_coeffs(plant, seq, sc) for sc in scenarios]

    def stack(get, ids):
        return {nid: np.stack([get(c, nid) for c in co]) for nid in ids}

    o = stack(lambda c, n: c.o[n], g.topo_order)
    dens = stack(lambda c, n: c.density_at[n], g.topo_order)
    x_ub = stack(lambda c, n: c.x_ub[n], g.topo_order)
    inv_lb = stack(lambda c, n: c.inv_lb[n], g.inventory_nodes)
    inv_ub = stack(lambda c, n: c.inv_ub[n], g.inventory_nodes)
    src_coef = np.stack([c.src_coef for c in co])
    grind = stack(lambda c, n: c.grinder_factor[n], g.grinders)
    disch = stack(lambda c, n: c.discharge_coef[n], g.storages)
    millf = stack(lambda c, n: c.mill_factor[n], g.mills)
    theta = np.stack([c.theta for c in co]) if g.separation is not None else None
    dry_w = 1.0 - np.stack([c.m_out[g.reactor_feed] for c in co])

    acc = _BatchAccounts(S)
    X = {nid: np.zeros((S, T)) for nid in g.topo_order}
    I = {nid: np.zeros((S, T)) for nid in g.inventory_nodes}
    ledger = {nid: {"in": np.zeros((S, T)), "loss": np.zeros((S, T)),
                    "down": np.zeros((S, T)), "curt": np.zeros((S, T))}
              for nid in g.topo_order}
    prev_inv = {nid: np.full(S, fs.initial_inventory.get(nid, 0.0))
                for nid in g.inventory_nodes}
    sep = g.separation

    for t in range(T):
        for nid in g.topo_order:
            eq = g.by_id[nid]
            ups = g.feeds.get(nid, ())
            led = ledger[nid]
            if eq.kind is EquipmentKind.BALE_INFEED:
                out = src_coef[:, t] * fs.speeds[nid][t]
                led["in"][:, t] = out   # raw intake equals the metered feed
            elif eq.kind is EquipmentKind.GRINDER:
                inflow = sum(X[u][:, t] for u in ups)
                up = o[nid][:, t]
                factor = grind[nid][:, t]                       # includes o
                raw = factor * inflow
                cap = x_ub[nid][:, t]
                out = np.minimum(raw, cap)
                denom = np.where(factor > 0, factor, 1.0)
                accepted = np.where(factor > 0, out / denom, 0.0)
                down = inflow * (1.0 - up)
                curt = np.maximum(inflow - accepted - down, 0.0)
                led["in"][:, t] = inflow
                led["loss"][:, t] = accepted * (1.0 - factor / np.where(up > 0, up, 1.0))
                led["down"][:, t] = down
                led["curt"][:, t] = curt
                acc.record("infeed_cap", nid, raw - out)
            elif eq.kind is EquipmentKind.STORAGE:
                inflow = sum(X[u][:, t] for u in ups)
                desired = disch[nid][:, t] * fs.speeds[nid][t]
                floor = inv_lb[nid][:, t]
                avail = np.maximum(prev_inv[nid] + inflow - floor, 0.0)
                out = np.minimum(desired, avail)
                acc.record("bin_floor", nid, desired - out, storage_bound=True)
                new_inv = prev_inv[nid] + inflow - out
                spill = np.maximum(new_inv - inv_ub[nid][:, t], 0.0)
                acc.record("bin_capacity", nid, spill, storage_bound=True)
                below = np.maximum(floor - new_inv, 0.0)
                acc.record("bin_floor", nid, below, storage_bound=True)
                new_inv = new_inv - spill
                led["in"][:, t] = inflow
                led["curt"][:, t] = spill
                prev_inv[nid] = new_inv
                I[nid][:, t] = new_inv
            elif eq.kind is EquipmentKind.PELLET_MILL:
                inflow = sum(X[u][:, t] for u in ups)
                keep = 1.0 - eq.residence
                raw = millf[nid][:, t] * (keep * inflow + prev_inv[nid])
                cap = x_ub[nid][:, t]
                out = np.minimum(raw, cap)
                acc.record("infeed_cap", nid, raw - out)
                new_inv = prev_inv[nid] + inflow - out
                spill = np.maximum(new_inv - inv_ub[nid][:, t], 0.0)
                acc.record("mill_capacity", nid, spill)
                new_inv = new_inv - spill
                led["in"][:, t] = inflow
                led["curt"][:, t] = spill
                prev_inv[nid] = new_inv
                I[nid][:, t] = new_inv
            else:  # transport
                if sep is not None and nid == sep.regrind_head:
                    inflow = (1.0 - theta[:, t]) * X[sep.feed][:, t]
                elif sep is not None and nid == sep.bypass_head:
                    inflow = theta[:, t] * X[sep.feed][:, t]
                else:
                    inflow = sum(X[u][:, t] for u in ups)
                up = o[nid][:, t]
                kept = up * inflow
                cap = eq.cross_section * dens[nid][:, t] * fs.speeds[nid][t]
                out = np.minimum(kept, cap)
                acc.record("conveyor_cap", nid, kept - out)
                xcap = x_ub[nid][:, t]
                out2 = np.minimum(out, xcap)
                acc.record("reactor_cap" if nid == g.reactor_feed else "flow_cap",
                           nid, out - out2)
                down = inflow * (1.0 - up)
                led["in"][:, t] = inflow
                led["down"][:, t] = down
                led["curt"][:, t] = (kept - out) + (out - out2)
                out = out2
            X[nid][:, t] = out

    dry = dry_w * X[g.reactor_feed]
    if not keep_paths:
        X = I = ledger = None
    return dry, acc, X, I, ledger


def forward_simulate(plant: Plant, seq: BaleSequence, fs: FirstStageSolution,
                     scenario: Scenario) -> FlowTrajectory:
    """Simulate one scenario and keep the full trajectory and event list."""
    dry, acc, X, I, ledger = _simulate_chunk(plant, seq, fs, [scenario], keep_paths=True)
    events = [(kind, nid, None, entry[1])
              for (nid, kind), entry in acc.node_kind.items()]
    return FlowTrajectory(
        flows={nid: arr[0] for nid, arr in X.items()},
        inventories={nid: arr[0] for nid, arr in I.items()},
        reactor_dry=dry[0],
        events=events,
        ledger={nid: {k: v[0] for k, v in terms.items()} for nid, terms in ledger.items()},
    )


def mass_balance_residuals(plant: Plant, traj: FlowTrajectory) -> dict[str, np.ndarray]:
    """Per-node inflow/outflow/inventory/loss closure; ~0 when bookkeeping is right."""
    g = plant.graph
    out = {}
    for nid in g.topo_order:
        led = traj.ledger[nid]
        outflow = traj.flows[nid]
        dinv = np.zeros_like(outflow)
        if nid in traj.inventories:
            inv = traj.inventories[nid]
            init = inv[0] - (led["in"][0] - outflow[0] - led["curt"][0])
            prev = np.concatenate([[init], inv[:-1]])
            dinv = inv - prev
        resid = led["in"] - outflow - dinv - led["loss"] - led["down"] - led["curt"]
        out[nid] = resid
    return out


def out_of_sample_reliability(plant: Plant, seq: BaleSequence, fs: FirstStageSolution,
                              scenario_count: int = 10000, seed: int = 1,
                              failures: bool = False, noise: bool = True,
                              chunk: int = 2000, n_jobs: int = 1):
    """Fraction of fresh scenarios meeting the feeding target, plus violations.

    Scenario i draws from substream (seed, i) regardless of chunking or
    thread count, so the result is bit-reproducible.
    """
    base = list(range(0, scenario_count, chunk))
    bounds = [(lo, min(lo + chunk, scenario_count)) for lo in base]

    def run(span):
        lo, hi = span
        sset = _scenario_span(plant, seq, lo, hi, seed, failures, noise)
        dry, acc, _, _, _ = _simulate_chunk(plant, seq, fs, sset, keep_paths=False)
        return dry.sum(axis=1) / len(seq), acc

    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]

    rates = np.concatenate([p[0] for p in parts])
    r = plant.config.target_rate
    reliability = float(np.mean(rates >= r - 1e-9))

    by_node: dict[str, dict] = {}
    with_events = 0
    storage_events = 0
    for _, acc in parts:
        with_events += int(acc.scenario_flag.sum())
        storage_events += int(acc.storage_flag.sum())
        for (nid, kind), (count, mass) in acc.node_kind.items():
            slot = by_node.setdefault(nid, {}).setdefault(kind, {"count": 0, "mass": 0.0})
            slot["count"] += count
            slot["mass"] += mass
    report = ViolationReport(
        scenario_count=scenario_count,
        scenarios_with_events=with_events,
        by_node=by_node,
        bin_event_fraction=storage_events / scenario_count if scenario_count else math.nan,
    )
    return reliability, report, rates


def _scenario_span(plant, seq, lo, hi, seed, failures, noise):
    from .scenarios import _sample_one
    return [_sample_one(plant, seq, substream(seed, 0, i), failures, noise)
            for i in range(lo, hi)]


# ---------------------------------------------------------------------------
# metrics

@dataclass
class Metrics:
    reactor_flow: float          # dt/hr
    utilization: float           # fraction of reactor capacity
    energy_cost: float           # $/dt
    fixed_cost: float            # $/dt
    total_cost: float            # $/dt
    avg_inventory: float         # tons, storage nodes
    max_inventory: float         # tons
    reliability: float
    cost_defined: bool = True


def compute_metrics(plant: Plant, seq: BaleSequence, dry: np.ndarray,
                    inventories: dict[str, np.ndarray] | None,
                    reliability: float = math.nan) -> Metrics:
    """Summaries in reporting units from simulated or planned paths.

    ``dry`` is [S, T] dry kg to the reactor; inventories map storage nodes to
    [S, T] kg.  Costs accrue for the whole horizon regardless of utilization.
    """
    cfg = plant.config
    T = len(seq)
    hours = T * cfg.period_seconds / 3600.0
    mean_dry_tons = float(dry.sum(axis=1).mean()) / 1000.0
    flow = mean_dry_tons / hours
    cap_flow = cfg.dry_rate_to_dt_per_hr(cfg.reactor_capacity)

    level_counts = {lvl: 0 for lvl in LEVELS}
    for lvl in seq.levels:
        level_counts[lvl] += 1
    energy = sum(cnt * sum(eq.energy_cost.at(lvl) for eq in plant.graph.nodes)
                 for lvl, cnt in level_counts.items())
    fixed = sum(cnt * sum(eq.fixed_cost.at(lvl) for eq in plant.graph.nodes)
                for lvl, cnt in level_counts.items())

    defined = mean_dry_tons > 0
    per_dt = (lambda x: x / mean_dry_tons) if defined else (lambda x: math.nan)

    storages = plant.graph.storages
    if inventories and storages:
        stock = sum(inventories[nid] for nid in storages if nid in inventories)
        avg_inv = float(stock.mean()) / 1000.0
        max_inv = float(stock.max()) / 1000.0
    else:
        avg_inv = max_inv = math.nan

    return Metrics(
        reactor_flow=flow,
        utilization=flow / cap_flow if cap_flow > 0 else math.nan,
        energy_cost=per_dt(energy),
        fixed_cost=per_dt(fixed),
        total_cost=per_dt(energy + fixed),
        avg_inventory=avg_inv,
        max_inventory=max_inv,
        reliability=reliability,
        cost_defined=defined,
    )


# ---------------------------------------------------------------------------
# SAA stability

def stability_test(plant: Plant, seq: BaleSequence, sample_sizes,
                   replications: int = 10, seed: int = 1,
                   failures: bool = False, epsilon_hat: float | None = None,
                   **solve_kwargs):
    """Solve independent SAA replications per sample size; report the spread.

    Spread is (max - min) / |min| of the surrogate objectives across
    replications; the true $/dt costs are reported alongside.
    """
    rows = []
    for S in sample_sizes:
        objectives, costs = [], []
        for rep in range(replications):
            rep_seed = (int(seed) * 1000003 + 97 * int(S) + rep) % (2**63 - 1)
            sset = generate_scenario_set(plant, seq, S, seed=rep_seed, failures=failures)
            res = bisection_search(plant, seq, sset, epsilon_hat=epsilon_hat,
                                   **solve_kwargs)
            objectives.append(res.objective)
            costs.append(res.true_cost)
        objectives = np.array(objectives)
        costs = np.array(costs)
        spread = float((objectives.max() - objectives.min()) / abs(objectives.min())) \
            if objectives.min() != 0 else 0.0
        rows.append({
            "sample_size": S,
            "replications": replications,
            "objective_min": float(objectives.min()),
            "objective_max": float(objectives.max()),
            "objective_spread": spread,
            "cost_mean": float(np.nanmean(costs)),
            "cost_spread": float((np.nanmax(costs) - np.nanmin(costs)) / np.nanmin(costs))
            if np.nanmin(costs) > 0 else math.nan,
        })
    return rows


# ---------------------------------------------------------------------------
# optional LP-recourse evaluation (planning-model feasibility per scenario)

def lp_recourse_reliability(plant: Plant, seq: BaleSequence, fs: FirstStageSolution,
                            scenarios: ScenarioSet):
    """Evaluate scenarios through the scenario LP instead of the simulator.

    A scenario counts as served when the LP stays feasible at the fixed first
    stage and the resulting flow meets the target.
    """
    from .lp import LpStatus, solve_lp
    from .optimizer import build_subproblem
    served = 0
    feasible = 0
    r = plant.config.target_rate
    for sc in scenarios:
        model, _deps, handles = build_subproblem(plant, seq, sc, fs, pi=0.0)
        sol = solve_lp(model)
        if sol.status is LpStatus.INFEASIBLE:
            continue
        feasible += 1
        shortfall = sol.x[handles[2]]
        if shortfall <= 1e-6:
            served += 1
    S = len(scenarios)
    return {"feasible_fraction": feasible / S, "reliability": served / S}
