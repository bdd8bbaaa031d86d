"""Monte Carlo sampling of feeding-line scenarios.

A scenario is one sample path of every random parameter over the planning
horizon: bale density, per-stream moisture, post-grinder densities via the
fitted regressions, particle-size percentiles, the separation bypass
fraction, and (optionally) equipment up/down schedules.

Determinism contract: scenario ``i`` of a set draws from its own counter
stream keyed by ``(seed, i)``, so serial and parallel generation produce
bit-identical sets.  The draw order inside a scenario is fixed: bale
moisture, bale density, particle sizes per grinder, density noise per
grinder, then failure schedules node by node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .plant import (LEVELS, Distributions, EquipmentKind, FailureProcess,
                    MoistureLevel, Plant, PsdRange)

DEFAULT_BANDS = {
    MoistureLevel.LOW: (0.05, 0.10),
    MoistureLevel.MEDIUM: (0.10, 0.175),
    MoistureLevel.HIGH: (0.175, 0.25),
}

BALE_DENSITY_RANGE = (171.26, 234.81)   # kg/m^3, switchgrass bales


def substream(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, domain, index); Philox counter keyed."""
    key = np.array([np.uint64(seed), (np.uint64(domain) << np.uint64(32)) | np.uint64(index)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# elementary samplers

def sample_moisture(level: MoistureLevel, rng: np.random.Generator,
                    bands=None) -> float:
    """Moisture fraction drawn uniformly from the level's band."""
    lo, hi = (bands or DEFAULT_BANDS)[level]
    return float(rng.uniform(lo, hi))


def sample_bale_density(rng: np.random.Generator,
                        triangle: tuple[float, float, float] | None = None) -> float:
    """Bale bulk density in kg/m^3, triangular over the observed range."""
    if triangle is None:
        lo, hi = BALE_DENSITY_RANGE
        triangle = (lo, 0.5 * (lo + hi), hi)
    lo, mode, hi = triangle
    if lo == hi:
        return float(lo)
    return float(rng.triangular(lo, mode, hi))


@dataclass(frozen=True)
class PsdPercentiles:
    """10th/50th/90th particle-size percentiles in mm."""

    d10: float
    d50: float
    d90: float

    def __post_init__(self):
        if not 0.0 < self.d10 <= self.d50 <= self.d90:
            raise ValueError(f"percentiles must satisfy 0 < d10 <= d50 <= d90, got {self}")


def psd_from_median_ratio(d50: float, ratio: float) -> PsdPercentiles:
    # Only the median and the d90/d10 ratio are observed; place d10 and d90
    # geometrically symmetric about the median so both are reproduced.
    root = math.sqrt(ratio)
    return PsdPercentiles(d10=d50 / root, d50=d50, d90=d50 * root)


def sample_psd(psd_range: PsdRange, rng: np.random.Generator) -> PsdPercentiles:
    d50 = float(rng.uniform(*psd_range.d50))
    ratio = float(rng.uniform(*psd_range.ratio))
    return psd_from_median_ratio(d50, ratio)


def density_regression(regression, moisture: float, psd: PsdPercentiles | float,
                       noise: float = 0.0) -> float:
    """Post-grinder bulk density, kg/m^3.

    Linear in moisture and the median particle size; the percentile-ratio
    regressor is dropped (statistically insignificant in the fit).  ``noise``
    is the sampled error term, zero when noise is disabled.
    """
    d50 = psd.d50 if isinstance(psd, PsdPercentiles) else float(psd)
    value = regression.mean_density(moisture, d50) + noise
    if value <= 0.0:
        raise ValueError(
            f"density regression produced {value:.3f} kg/m^3 at moisture={moisture}, "
            f"d50={d50}; inputs are outside the fitted range")
    return value


def bypass_ratio(psd: PsdPercentiles, screen: float = 6.35) -> float:
    """Fraction of separated biomass that skips the secondary grinder.

    Piecewise in the median particle size relative to the separation screen;
    clamped into [0, 1] by construction.
    """
    if psd.d50 >= screen:
        if psd.d50 == psd.d10:
            raise ValueError("bypass ratio undefined: d50 == d10 on the coarse branch")
        return max(0.5 - 0.4 * (psd.d50 - screen) / (psd.d50 - psd.d10), 0.0)
    if psd.d90 == psd.d50:
        raise ValueError("bypass ratio undefined: d90 == d50 on the fine branch")
    return min(0.5 + 0.4 * (screen - psd.d50) / (psd.d90 - psd.d50), 1.0)


# ---------------------------------------------------------------------------
# bale sequences

@dataclass(frozen=True)
class BaleSequence:
    """Moisture level of the bale feeding the line in each period."""

    levels: tuple[MoistureLevel, ...]
    pattern: str
    mix: tuple[float, float, float]   # (low, medium, high) shares

    def __len__(self):
        return len(self.levels)

    @property
    def level_index(self) -> np.ndarray:
        order = {MoistureLevel.LOW: 0, MoistureLevel.MEDIUM: 1, MoistureLevel.HIGH: 2}
        return np.array([order[l] for l in self.levels], dtype=np.int8)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.levels)) == 1


def uniform_sequence(level: MoistureLevel, horizon: int) -> BaleSequence:
    mix = tuple(1.0 if l is level else 0.0 for l in LEVELS)
    return BaleSequence(levels=(level,) * horizon, pattern="uniform", mix=mix)


def _bale_counts(mix, n_bales: int) -> list[int]:
    quotas = [m * n_bales for m in mix]
    counts = [int(math.floor(q)) for q in quotas]
    # largest remainder, ties resolved low -> high for reproducibility
    rest = n_bales - sum(counts)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts


def make_bale_sequence(pattern: str, mix, horizon: int,
                       rng: np.random.Generator | None = None,
                       level: MoistureLevel | None = None,
                       bale_length: int = 1) -> BaleSequence:
    """Build a bale sequence of the requested pattern.

    ``long``   processes all high-moisture bales first, then medium, then low.
    ``short``  cycles the smallest integer block realizing the mix
               (low, then medium, then high within a block).
    ``random`` permutes the bale multiset uniformly (needs ``rng``).
    ``uniform`` repeats a single ``level``.
    ``bale_length`` is the number of periods one bale spans.
    """
    pattern = pattern.lower()
    if pattern == "uniform":
        if level is None:
            raise ValueError("uniform pattern requires a moisture level")
        return uniform_sequence(level, horizon)

    mix = tuple(float(m) for m in mix)
    if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-9:
        raise ValueError(f"mix must be three nonnegative shares summing to 1, got {mix}")

    n_bales = -(-horizon // bale_length)
    if pattern == "long":
        counts = _bale_counts(mix, n_bales)
        bales = ([MoistureLevel.HIGH] * counts[2] + [MoistureLevel.MEDIUM] * counts[1]
                 + [MoistureLevel.LOW] * counts[0])
    elif pattern == "short":
        fracs = [Fraction(m).limit_denominator(1000) for m in mix]
        denom = math.lcm(*(f.denominator for f in fracs))
        block = []
        for lvl, f in zip(LEVELS, fracs):
            block.extend([lvl] * int(f * denom))
        bales = [block[i % len(block)] for i in range(n_bales)]
    elif pattern == "random":
        if rng is None:
            raise ValueError("random pattern requires an rng")
        counts = _bale_counts(mix, n_bales)
        pool = ([MoistureLevel.LOW] * counts[0] + [MoistureLevel.MEDIUM] * counts[1]
                + [MoistureLevel.HIGH] * counts[2])
        bales = [pool[i] for i in rng.permutation(len(pool))]
    else:
        raise ValueError(f"unknown sequence pattern '{pattern}'")

    levels = []
    for b in bales:
        levels.extend([b] * bale_length)
    return BaleSequence(levels=tuple(levels[:horizon]), pattern=pattern, mix=mix)


# ---------------------------------------------------------------------------
# failure schedules

_AVAIL_CACHE: dict = {}


def _availability(proc: FailureProcess, level: MoistureLevel, period_s: float) -> float:
    """Expected per-period operating indicator under the >50%-coverage rule.

    Estimated once per (distribution, period length) from a fixed substream
    and cached; this is the mean of the indicator the scenarios actually use,
    not the continuous-time availability.
    """
    key = (proc.shape.at(level), proc.scale.at(level),
           proc.down_min.at(level), proc.down_max.at(level), period_s)
    if key not in _AVAIL_CACHE:
        rng = substream(202406, 3, hash(key) % (2**31))
        reps, horizon = 160, 240
        total = 0.0
        for _ in range(reps):
            total += _renewal_schedule_uniform(proc, level, horizon, period_s, rng).mean()
        _AVAIL_CACHE[key] = total / reps
    return _AVAIL_CACHE[key]


def _mark_outage(o: np.ndarray, onset: float, end: float, period_s: float):
    # a period counts as down when the outage covers more than half of it
    T = o.shape[0]
    p = int(onset // period_s)
    while p < T and p * period_s < end:
        overlap = min(end, (p + 1) * period_s) - max(onset, p * period_s)
        if overlap > 0.5 * period_s:
            o[p] = 0.0
        p += 1


def _renewal_schedule(proc: FailureProcess, levels, period_s: float,
                      rng: np.random.Generator) -> np.ndarray:
    """One alternating up/down schedule over the horizon, per-period 0/1.

    Up-times are Weibull with the parameters of the moisture level at the
    start of the up period; down-times use the level at the failure onset.
    """
    T = len(levels)
    o = np.ones(T)
    horizon_s = T * period_s
    now = 0.0
    while now < horizon_s:
        lvl = levels[min(int(now // period_s), T - 1)]
        up = proc.scale.at(lvl) * float(rng.weibull(proc.shape.at(lvl)))
        onset = now + up
        if onset >= horizon_s:
            break
        lvl2 = levels[min(int(onset // period_s), T - 1)]
        dur = float(rng.uniform(proc.down_min.at(lvl2), proc.down_max.at(lvl2)))
        _mark_outage(o, onset, onset + dur, period_s)
        now = onset + dur
        if dur == 0.0:
            now = onset + 1e-9  # zero-length outages must not stall the clock
    return o


def _renewal_schedule_uniform(proc: FailureProcess, level: MoistureLevel, T: int,
                              period_s: float, rng: np.random.Generator) -> np.ndarray:
    """Vectorized renewal schedule for a single-level sequence."""
    shape, scale = proc.shape.at(level), proc.scale.at(level)
    dlo, dhi = proc.down_min.at(level), proc.down_max.at(level)
    horizon_s = T * period_s
    mean_cycle = scale * math.gamma(1.0 + 1.0 / shape) + 0.5 * (dlo + dhi)
    o = np.ones(T)
    if dhi == 0.0:
        return o

    ups = np.empty(0)
    downs = np.empty(0)
    while True:
        n = max(32, int(1.5 * horizon_s / mean_cycle) + 16)
        ups = np.concatenate([ups, scale * rng.weibull(shape, size=n)])
        downs = np.concatenate([downs, rng.uniform(dlo, dhi, size=n)])
        if np.sum(ups) + np.sum(downs) >= horizon_s:
            break
    cycles = np.cumsum(ups + downs)
    onsets = cycles - downs
    keep = onsets < horizon_s
    onsets, ends = onsets[keep], np.minimum(cycles[keep], horizon_s)

    # an outage of at most dhi seconds can touch ceil(dhi/period)+1 periods
    for k in range(int(dhi // period_s) + 2):
        p = (onsets // period_s).astype(np.int64) + k
        valid = (p < T) & (p * period_s < ends)
        overlap = (np.minimum(ends, (p + 1) * period_s)
                   - np.maximum(onsets, p * period_s))
        hit = valid & (overlap > 0.5 * period_s)
        o[p[hit]] = 0.0
    return o


def failure_mode_flags(mode) -> tuple[bool, bool]:
    """Normalize a failure mode spec to (short, long) process switches."""
    if mode in (True, "both"):
        return True, True
    if mode in (False, None, "none"):
        return False, False
    if mode == "short":
        return True, False
    if mode == "long":
        return False, True
    raise ValueError(f"unknown failure mode {mode!r}")


def generate_failure_schedule(plant: Plant, seq: BaleSequence,
                              rng: np.random.Generator,
                              short: bool = True, long: bool = True) -> dict[str, np.ndarray]:
    """Per-period operating indicators for every node upstream of storage.

    Each node runs two independent renewal processes (short- and
    long-duration); the node is down when either is down.  Nodes downstream
    of the storage buffer never fail.
    """
    T = len(seq)
    period_s = plant.config.period_seconds
    procs = []
    if short and plant.dist.short_failures is not None:
        procs.append(plant.dist.short_failures)
    if long and plant.dist.long_failures is not None:
        procs.append(plant.dist.long_failures)

    out: dict[str, np.ndarray] = {}
    for nid in plant.graph.upstream_of_storage():
        o = np.ones(T)
        for proc in procs:
            if seq.is_uniform:
                o *= _renewal_schedule_uniform(proc, seq.levels[0], T, period_s, rng)
            else:
                o *= _renewal_schedule(proc, seq.levels, period_s, rng)
        out[nid] = o
    return out


# ---------------------------------------------------------------------------
# scenarios

@dataclass
class Scenario:
    """One sample path of all random parameters over the horizon.

    ``moisture`` and ``density`` are keyed by stream: "bale" for the raw
    infeed, otherwise the id of the grinder/storage/mill that defines the
    stream.  ``operating`` holds 0/1 arrays for nodes that can fail; nodes
    absent from it never fail.
    """

    levels: tuple[MoistureLevel, ...]
    bale_density: np.ndarray
    moisture: dict[str, np.ndarray]
    density: dict[str, np.ndarray]
    psd: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]   # d10, d50, d90
    bypass: np.ndarray | None
    operating: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.bale_density)

    def operating_at(self, node: str) -> np.ndarray:
        arr = self.operating.get(node)
        if arr is None:
            return np.ones(self.horizon)
        return arr

    def moisture_at(self, plant: Plant, node: str) -> np.ndarray:
        return self.moisture[plant.graph.moisture_ref[node]]

    def density_at(self, plant: Plant, node: str) -> np.ndarray:
        return self.density[plant.graph.density_ref[node]]


@dataclass
class ScenarioSet:
    scenarios: list[Scenario]
    seed: int
    sequence: BaleSequence
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i):
        return self.scenarios[i]


def _grinder_losses(plant: Plant, gid: str, level_idx: np.ndarray):
    eq = plant.graph.by_id[gid]
    ml = np.array([eq.moisture_loss.at(l) for l in LEVELS])[level_idx]
    return eq.dry_matter_loss, ml


def _psd_intervals(plant, gid, level_idx):
    table = plant.dist.psd[gid]
    d50 = np.array([[table[l].d50[0], table[l].d50[1]] for l in LEVELS])
    ratio = np.array([[table[l].ratio[0], table[l].ratio[1]] for l in LEVELS])
    return d50[level_idx], ratio[level_idx]


def _build_streams(plant: Plant, seq: BaleSequence, m0, d0, psd, noise):
    """Propagate moisture and density along the processing chain.

    Mixing at a storage node is mass-weighted by the split fractions and
    loss factors accumulated along each incoming branch.
    """
    graph = plant.graph
    level_idx = seq.level_index
    T = len(seq)
    moisture = {"bale": m0}
    density = {"bale": d0}
    theta = None

    sep = graph.separation
    if sep is not None:
        # bypass fraction from the particle sizes at the separation feed
        d10, d50, d90 = psd[sep.feed]
        screen = plant.dist.separation_screen
        coarse = d50 >= screen
        with np.errstate(divide="ignore", invalid="ignore"):
            th = np.where(
                coarse,
                np.maximum(0.5 - 0.4 * (d50 - screen) / (d50 - d10), 0.0),
                np.minimum(0.5 + 0.4 * (screen - d50) / (d90 - d50), 1.0),
            )
        if not np.all(np.isfinite(th)):
            raise ValueError("bypass ratio undefined: degenerate particle-size percentiles")
        theta = th

    share: dict[str, np.ndarray] = {}
    for nid in graph.topo_order:
        eq = graph.by_id[nid]
        ups = graph.feeds.get(nid, ())
        if eq.kind is EquipmentKind.BALE_INFEED:
            share[nid] = np.ones(T)
            continue
        inflow = sum(share[u] for u in ups) if ups else np.zeros(T)
        if sep is not None and nid == sep.regrind_head:
            inflow = share[sep.feed] * (1.0 - theta)
        elif sep is not None and nid == sep.bypass_head:
            inflow = share[sep.feed] * theta

        if eq.kind is EquipmentKind.GRINDER:
            dml, ml = _grinder_losses(plant, nid, level_idx)
            share[nid] = inflow * (1.0 - dml - ml)
            m_in = moisture[graph.moisture_ref[ups[0]]]
            moisture[nid] = m_in * (1.0 - ml)
            d10, d50, d90 = psd[nid]
            reg = plant.dist.regressions[nid]
            dens = reg.intercept + reg.moisture_coef * moisture[nid] \
                + reg.d50_coef * d50 + noise.get(nid, 0.0)
            if np.any(dens <= 0):
                raise ValueError(f"density regression for '{nid}' produced a nonpositive value")
            density[nid] = dens
        elif eq.kind is EquipmentKind.STORAGE:
            total = sum(share[u] for u in ups)
            total = np.where(total > 0, total, 1.0)
            moisture[nid] = sum(share[u] * moisture[graph.moisture_ref[u]] for u in ups) / total
            density[nid] = sum(share[u] * density[graph.density_ref[u]] for u in ups) / total
            share[nid] = np.ones(T)  # storage starts a fresh stream
        elif eq.kind is EquipmentKind.PELLET_MILL:
            ml = np.array([eq.moisture_loss.at(l) for l in LEVELS])[level_idx]
            m_in = moisture[graph.moisture_ref[ups[0]]]
            moisture[nid] = m_in * (1.0 - ml)
            share[nid] = inflow * (1.0 - ml)
        else:  # transport
            share[nid] = inflow

    return moisture, density, theta


def _sample_one(plant: Plant, seq: BaleSequence, rng: np.random.Generator,
                failures: bool, noise_on: bool) -> Scenario:
    graph = plant.graph
    T = len(seq)
    level_idx = seq.level_index
    bands = np.array([plant.config.bands[l] for l in LEVELS])
    lo, hi = bands[level_idx, 0], bands[level_idx, 1]
    m0 = rng.uniform(lo, hi)
    tri_lo, tri_mode, tri_hi = plant.dist.bale_density
    if tri_lo == tri_hi:
        d0 = np.full(T, tri_lo)
    else:
        d0 = rng.triangular(tri_lo, tri_mode, tri_hi, size=T)

    psd = {}
    for gid in graph.grinders:
        (d50_lo_hi, ratio_lo_hi) = _psd_intervals(plant, gid, level_idx)
        d50 = rng.uniform(d50_lo_hi[:, 0], d50_lo_hi[:, 1])
        ratio = rng.uniform(ratio_lo_hi[:, 0], ratio_lo_hi[:, 1])
        root = np.sqrt(ratio)
        psd[gid] = (d50 / root, d50, d50 * root)

    noise = {}
    if noise_on:
        for gid in graph.grinders:
            noise[gid] = rng.normal(0.0, plant.dist.regressions[gid].noise_std, size=T)

    moisture, density, theta = _build_streams(plant, seq, m0, d0, psd, noise)

    operating = generate_failure_schedule(plant, seq, rng) if failures else {}

    return Scenario(levels=seq.levels, bale_density=d0, moisture=moisture,
                    density=density, psd=psd, bypass=theta, operating=operating)


def generate_scenario_set(plant: Plant, seq: BaleSequence, count: int, seed: int,
                          failures: bool = False, noise: bool = True) -> ScenarioSet:
    """Draw ``count`` independent scenarios; scenario i uses substream (seed, i)."""
    scenarios = [
        _sample_one(plant, seq, substream(seed, 0, i), failures, noise_on=noise)
        for i in range(count)
    ]
    return ScenarioSet(
        scenarios=scenarios, seed=seed, sequence=seq,
        provenance={
            "seed": seed, "count": count, "failures": failures, "noise": noise,
            "pattern": seq.pattern, "mix": list(seq.mix),
            "bale_density": list(plant.dist.bale_density),
        })


def mean_scenario(plant: Plant, seq: BaleSequence, failures: bool = False) -> Scenario:
    """Deterministic scenario with every random parameter at its mean.

    Operating indicators are replaced by the steady-state availability of the
    combined failure processes (a fraction, not 0/1).
    """
    graph = plant.graph
    T = len(seq)
    level_idx = seq.level_index
    bands = np.array([plant.config.bands[l] for l in LEVELS])
    m0 = 0.5 * (bands[level_idx, 0] + bands[level_idx, 1])
    d0 = np.full(T, sum(plant.dist.bale_density) / 3.0)

    psd = {}
    for gid in graph.grinders:
        d50_iv, ratio_iv = _psd_intervals(plant, gid, level_idx)
        d50 = 0.5 * (d50_iv[:, 0] + d50_iv[:, 1])
        ratio = 0.5 * (ratio_iv[:, 0] + ratio_iv[:, 1])
        root = np.sqrt(ratio)
        psd[gid] = (d50 / root, d50, d50 * root)

    moisture, density, theta = _build_streams(plant, seq, m0, d0, psd, noise={})

    operating = {}
    if failures:
        procs = [p for p in (plant.dist.short_failures, plant.dist.long_failures)
                 if p is not None]
        period_s = plant.config.period_seconds
        for nid in graph.upstream_of_storage():
            avail = np.ones(T)
            for proc in procs:
                per_level = np.array([_availability(proc, l, period_s) for l in LEVELS])
                avail *= per_level[level_idx]
            operating[nid] = avail

    return Scenario(levels=seq.levels, bale_density=d0, moisture=moisture,
                    density=density, psd=psd, bypass=theta, operating=operating)


# ---------------------------------------------------------------------------
# audit export

_CSV_HEADER = ("scenario", "period", "node", "moisture", "density",
               "psd_d10", "psd_d50", "psd_d90", "bypass", "operating")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def export_scenarios_csv(sset: ScenarioSet, path):
    """One row per (scenario, period, stream) for external audit."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for s_idx, sc in enumerate(sset.scenarios):
            streams = sorted(set(sc.moisture) | set(sc.density) | set(sc.psd)
                             | set(sc.operating))
            for t in range(sc.horizon):
                for node in streams:
                    m = sc.moisture.get(node)
                    d = sc.density.get(node)
                    p = sc.psd.get(node)
                    o = sc.operating.get(node)
                    theta = sc.bypass[t] if (sc.bypass is not None and node == "bale") else None
                    w.writerow([
                        s_idx, t, node,
                        _fmt(m[t] if m is not None else None),
                        _fmt(d[t] if d is not None else None),
                        _fmt(p[0][t] if p is not None else None),
                        _fmt(p[1][t] if p is not None else None),
                        _fmt(p[2][t] if p is not None else None),
                        _fmt(theta),
                        _fmt(o[t] if o is not None else None),
                    ])


def import_scenarios_csv(path, levels: tuple[MoistureLevel, ...]) -> list[Scenario]:
    """Rebuild scenarios from an audit CSV (values round-trip bit-exactly)."""
    rows: dict[int, dict] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            s = int(row["scenario"])
            t = int(row["period"])
            node = row["node"]
            rec = rows.setdefault(s, {"moisture": {}, "density": {}, "psd": {},
                                      "operating": {}, "bypass": {}})
            for fldname, key in (("moisture", "moisture"), ("density", "density"),
                                 ("operating", "operating")):
                if row[key] != "":
                    rec[fldname].setdefault(node, {})[t] = float(row[key])
            if row["psd_d50"] != "":
                rec["psd"].setdefault(node, {})[t] = (
                    float(row["psd_d10"]), float(row["psd_d50"]), float(row["psd_d90"]))
            if row["bypass"] != "":
                rec["bypass"][t] = float(row["bypass"])

    def to_array(d):
        T = max(d) + 1
        arr = np.empty(T)
        for t, v in d.items():
            arr[t] = v
        return arr

    out = []
    for s in sorted(rows):
        rec = rows[s]
        psd = {}
        for node, vals in rec["psd"].items():
            T = max(vals) + 1
            d10 = np.empty(T); d50 = np.empty(T); d90 = np.empty(T)
            for t, (a, b, c) in vals.items():
                d10[t], d50[t], d90[t] = a, b, c
            psd[node] = (d10, d50, d90)
        out.append(Scenario(
            levels=levels,
            bale_density=to_array(rec["density"]["bale"]),
            moisture={k: to_array(v) for k, v in rec["moisture"].items()},
            density={k: to_array(v) for k, v in rec["density"].items()},
            psd=psd,
            bypass=to_array(rec["bypass"]) if rec["bypass"] else None,
            operating={k: to_array(v) for k, v in rec["operating"].items()},
        ))
    return out
