"""Plant topology, deterministic parameters and config ingestion.

A plant document (JSON) lists the equipment of a biomass feeding line in
processing order, the feed relations between them, per-moisture-level cost
and capacity tables, and the distribution parameters used by the scenario
sampler.  Everything is normalized to internal SI units on ingestion:

    mass        kg
    length      m
    area        m^2          (documents use inch^2)
    volume      m^3
    speed       m / period   (documents use inch/min)
    cost        $ / period   (documents use $/hr)
    throughput  dry kg / period  (documents use dt/hr)

The canonical plant shipped with the package is ``data/pdu.json``.  Its feed
topology is a reconstruction: the single separation split sits after the
primary grinder, with the regrind branch running through the secondary
grinder and the bypass branch joining it again at the metering bin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable

INCH = 0.0254
SQ_INCH = INCH * INCH


class PlantError(ValueError):
    """Raised when a plant document is rejected; the message names the field."""


class MoistureLevel(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    def __lt__(self, other):
        order = {"low": 0, "medium": 1, "high": 2}
        return order[self.value] < order[other.value]


LEVELS = (MoistureLevel.LOW, MoistureLevel.MEDIUM, MoistureLevel.HIGH)


@dataclass(frozen=True)
class LevelTable:
    """A scalar parameter indexed by moisture level."""

    low: float
    medium: float
    high: float

    def at(self, level: MoistureLevel) -> float:
        return getattr(self, level.value)

    def as_dict(self) -> dict:
        return {"low": self.low, "medium": self.medium, "high": self.high}

    @staticmethod
    def from_doc(doc, where: str) -> "LevelTable":
        if isinstance(doc, (int, float)):
            v = float(doc)
            return LevelTable(v, v, v)
        try:
            return LevelTable(float(doc["low"]), float(doc["medium"]), float(doc["high"]))
        except (KeyError, TypeError) as exc:
            raise PlantError(f"{where}: expected a number or a low/medium/high table") from exc

    def scaled(self, factor: float) -> "LevelTable":
        return LevelTable(self.low * factor, self.medium * factor, self.high * factor)


class EquipmentKind(Enum):
    GRINDER = "grinder"
    PELLET_MILL = "pellet_mill"
    TRANSPORT = "transport"
    STORAGE = "storage"
    BALE_INFEED = "bale_infeed"


@dataclass
class Equipment:
    """One node of the feeding line, all values in internal units."""

    id: str
    kind: EquipmentKind
    cross_section: float              # m^2, discharge opening / carrying section
    energy_cost: LevelTable           # $/period
    fixed_cost: LevelTable            # $/period
    speed_limit: LevelTable           # m/period upper bound on the speed decision
    dry_matter_loss: float = 0.0      # grinders, mass fraction
    moisture_loss: LevelTable = field(default_factory=lambda: LevelTable(0.0, 0.0, 0.0))
    infeed_cap: LevelTable | None = None   # processing equipment, dry kg/period
    residence: float = 0.0            # pellet mill, fraction of one period
    volume_cap: float = math.inf      # m^3, storage / mill in-process space
    volume_floor: float = 0.0         # m^3, operational minimum for storage
    initial_volume_cap: float | None = None  # m^3 available for initial inventory

    @property
    def is_processing(self) -> bool:
        return self.kind in (EquipmentKind.GRINDER, EquipmentKind.PELLET_MILL)


@dataclass
class Separation:
    feed: str          # node whose outflow is split by particle size
    regrind_head: str  # first node of the branch that regrinds large particles
    bypass_head: str   # first node of the branch that skips regrinding


@dataclass
class EquipmentGraph:
    """Feeding-line topology plus per-node parameters.

    Immutable after construction (by convention); safe to share between
    worker threads.
    """

    nodes: list[Equipment]
    feeds: dict[str, tuple[str, ...]]       # node id -> upstream ids
    separation: Separation | None
    reactor_feed: str                       # last node before the reactor
    bale_cross_section: float               # m^2

    # derived, filled by _finalize
    by_id: dict[str, Equipment] = field(default_factory=dict)
    topo_order: list[str] = field(default_factory=list)
    children: dict[str, tuple[str, ...]] = field(default_factory=dict)
    density_ref: dict[str, str] = field(default_factory=dict)
    moisture_ref: dict[str, str] = field(default_factory=dict)

    def _finalize(self):
        self.by_id = {n.id: n for n in self.nodes}
        kids: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for nid, ups in self.feeds.items():
            for u in ups:
                kids[u].append(nid)
        self.children = {k: tuple(v) for k, v in kids.items()}
        self.topo_order = self._topological_order()
        self._assign_stream_refs()

    def _topological_order(self) -> list[str]:
        # Kahn's algorithm; ready nodes are taken in document order so the
        # result is reproducible.
        indeg = {n.id: len(self.feeds.get(n.id, ())) for n in self.nodes}
        order, ready = [], [n.id for n in self.nodes if indeg[n.id] == 0]
        while ready:
            nid = ready.pop(0)
            order.append(nid)
            for c in self.children.get(nid, ()):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != len(self.nodes):
            raise PlantError("feeds: topology contains a cycle")
        return order

    def _assign_stream_refs(self):
        """Resolve which density/moisture stream each node carries.

        Grinders and storage define their own streams ("bale" marks the raw
        infeed).  Transports and the mill inherit the stream of their
        predecessor; mixing at multi-predecessor storage is resolved at
        scenario level.
        """
        for nid in self.topo_order:
            eq = self.by_id[nid]
            ups = self.feeds.get(nid, ())
            if eq.kind is EquipmentKind.BALE_INFEED or not ups:
                # orphans fall back to the raw stream; validate_topology flags them
                self.density_ref[nid] = "bale"
                self.moisture_ref[nid] = "bale"
            elif eq.kind in (EquipmentKind.GRINDER, EquipmentKind.STORAGE):
                self.density_ref[nid] = nid
                self.moisture_ref[nid] = nid
            elif eq.kind is EquipmentKind.PELLET_MILL:
                self.density_ref[nid] = self.density_ref[ups[0]]
                self.moisture_ref[nid] = nid  # moisture drops inside the mill
            else:  # transport carries whatever feeds it
                self.density_ref[nid] = self.density_ref[ups[0]]
                self.moisture_ref[nid] = self.moisture_ref[ups[0]]

    # -- convenience selections ------------------------------------------
    def ids(self, *kinds: EquipmentKind) -> list[str]:
        return [n.id for n in self.nodes if n.kind in kinds]

    @property
    def source(self) -> str:
        return self.ids(EquipmentKind.BALE_INFEED)[0]

    @property
    def grinders(self) -> list[str]:
        return self.ids(EquipmentKind.GRINDER)

    @property
    def storages(self) -> list[str]:
        return self.ids(EquipmentKind.STORAGE)

    @property
    def mills(self) -> list[str]:
        return self.ids(EquipmentKind.PELLET_MILL)

    @property
    def inventory_nodes(self) -> list[str]:
        """Nodes that carry an inventory state (storage and pellet mills)."""
        return self.storages + self.mills

    def upstream_of_storage(self) -> list[str]:
        """Nodes strictly upstream of the first storage node, in topo order.

        Failures are only generated for these; the buffer decouples the
        downstream section.
        """
        stop = set(self.storages)
        reach: set[str] = set()
        for nid in reversed(self.topo_order):
            if nid in stop:
                continue
            downs = self.children.get(nid, ())
            if any(d in stop or d in reach for d in downs):
                reach.add(nid)
        return [nid for nid in self.topo_order if nid in reach]


@dataclass
class PlantConfig:
    period_seconds: float
    horizon: int
    reactor_capacity: float       # dry kg/period
    target_rate: float            # dry kg/period
    epsilon: float
    epsilon_hat: float
    holding_cost: float           # $/kg
    holding_weight: float         # dimensionless weight of the I0 term
    bands: dict[MoistureLevel, tuple[float, float]]

    @property
    def periods_per_hour(self) -> float:
        return 3600.0 / self.period_seconds

    def dry_rate_to_dt_per_hr(self, kg_per_period: float) -> float:
        return kg_per_period * self.periods_per_hour / 1000.0

    def dt_per_hr_to_dry_rate(self, dt_hr: float) -> float:
        return dt_hr * 1000.0 / self.periods_per_hour


@dataclass
class PsdRange:
    d50: tuple[float, float]      # mm interval for the median particle size
    ratio: tuple[float, float]    # interval for the 90th/10th percentile ratio


@dataclass
class Regression:
    intercept: float
    moisture_coef: float
    d50_coef: float
    noise_std: float

    def mean_density(self, moisture: float, d50: float) -> float:
        return self.intercept + self.moisture_coef * moisture + self.d50_coef * d50


@dataclass
class FailureProcess:
    shape: LevelTable   # Weibull shape of the up-time
    scale: LevelTable   # Weibull scale, seconds
    down_min: LevelTable
    down_max: LevelTable


@dataclass
class Distributions:
    bale_density: tuple[float, float, float]          # triangular min/mode/max, kg/m^3
    psd: dict[str, dict[MoistureLevel, PsdRange]]     # per grinder
    regressions: dict[str, Regression]                # per grinder
    short_failures: FailureProcess | None
    long_failures: FailureProcess | None
    separation_screen: float = 6.35                   # mm


@dataclass
class Plant:
    """Bundle of graph, scalar configuration and distribution parameters."""

    graph: EquipmentGraph
    config: PlantConfig
    dist: Distributions
    document: dict = field(repr=False, default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.config.horizon


# ---------------------------------------------------------------------------
# ingestion

_KIND_ALIASES = {k.value: k for k in EquipmentKind}

_REQUIRED_COMMON = ("id", "kind", "cross_section_in2", "energy_cost_per_hr",
                    "fixed_cost_per_hr", "speed_limit_in_per_min", "feeds")


def _require(entry: dict, key: str, where: str):
    if key not in entry:
        raise PlantError(f"{where}: missing field '{key}'")
    return entry[key]


def _ingest_equipment(entry: dict, period_s: float, idx: int) -> tuple[Equipment, tuple[str, ...]]:
    where = f"equipment[{idx}] ({entry.get('id', '?')})"
    for key in _REQUIRED_COMMON:
        _require(entry, key, where)
    kind_name = entry["kind"]
    if kind_name not in _KIND_ALIASES:
        raise PlantError(f"{where}: unknown kind '{kind_name}'")
    kind = _KIND_ALIASES[kind_name]

    per_hr = period_s / 3600.0
    per_min = period_s / 60.0
    gamma = float(entry["cross_section_in2"]) * SQ_INCH
    if gamma <= 0:
        raise PlantError(f"{where}: cross_section_in2 must be positive")

    eq = Equipment(
        id=entry["id"],
        kind=kind,
        cross_section=gamma,
        energy_cost=LevelTable.from_doc(entry["energy_cost_per_hr"], where).scaled(per_hr),
        fixed_cost=LevelTable.from_doc(entry["fixed_cost_per_hr"], where).scaled(per_hr),
        speed_limit=LevelTable.from_doc(entry["speed_limit_in_per_min"], where).scaled(INCH * per_min),
    )
    if min(eq.speed_limit.as_dict().values()) < 0:
        raise PlantError(f"{where}: speed_limit_in_per_min must be nonnegative")

    if kind is EquipmentKind.GRINDER:
        eq.dry_matter_loss = float(_require(entry, "dry_matter_loss", where))
        eq.moisture_loss = LevelTable.from_doc(_require(entry, "moisture_loss", where), where)
        eq.infeed_cap = LevelTable.from_doc(
            _require(entry, "infeed_cap_dt_per_hr", where), where).scaled(1000.0 * per_hr)
    elif kind is EquipmentKind.PELLET_MILL:
        eq.moisture_loss = LevelTable.from_doc(_require(entry, "moisture_loss", where), where)
        eq.infeed_cap = LevelTable.from_doc(
            _require(entry, "infeed_cap_dt_per_hr", where), where).scaled(1000.0 * per_hr)
        eq.residence = float(_require(entry, "residence_seconds", where)) / period_s
        if not 0.0 <= eq.residence < 1.0:
            raise PlantError(f"{where}: residence_seconds must be shorter than one period")
        eq.volume_cap = float(entry.get("volume_cap_m3", math.inf))
        eq.initial_volume_cap = float(entry.get("initial_volume_cap_m3", 0.0))
    elif kind is EquipmentKind.STORAGE:
        eq.volume_cap = float(_require(entry, "volume_cap_m3", where))
        eq.volume_floor = float(entry.get("volume_floor_m3", 0.0))
        eq.initial_volume_cap = float(entry.get("initial_volume_cap_m3", eq.volume_cap))
        if eq.volume_floor > eq.volume_cap:
            raise PlantError(f"{where}: volume_floor_m3 exceeds volume_cap_m3")

    losses = eq.dry_matter_loss, *eq.moisture_loss.as_dict().values()
    if any(not 0.0 <= x < 1.0 for x in losses):
        raise PlantError(f"{where}: loss fractions must lie in [0, 1)")

    return eq, tuple(entry["feeds"])


def _ingest_bands(doc: dict) -> dict[MoistureLevel, tuple[float, float]]:
    raw = doc.get("moisture_bands",
                  {"low": [0.05, 0.10], "medium": [0.10, 0.175], "high": [0.175, 0.25]})
    bands = {}
    for lvl in LEVELS:
        lo, hi = raw[lvl.value]
        if not 0.0 <= lo <= hi < 1.0:
            raise PlantError(f"moisture_bands.{lvl.value}: invalid interval")
        bands[lvl] = (float(lo), float(hi))
    if not (math.isclose(bands[MoistureLevel.LOW][1], bands[MoistureLevel.MEDIUM][0])
            and math.isclose(bands[MoistureLevel.MEDIUM][1], bands[MoistureLevel.HIGH][0])):
        raise PlantError("moisture_bands: levels must form contiguous intervals")
    return bands


def _ingest_failure(doc: dict | None) -> FailureProcess | None:
    if doc is None:
        return None
    return FailureProcess(
        shape=LevelTable.from_doc(doc["weibull_shape"], "failures"),
        scale=LevelTable.from_doc(doc["weibull_scale_s"], "failures"),
        down_min=LevelTable.from_doc(doc["down_min_s"], "failures"),
        down_max=LevelTable.from_doc(doc["down_max_s"], "failures"),
    )


def build_plant(doc: dict) -> Plant:
    """Ingest a plant document, normalize units and wire up the topology.

    Raises PlantError naming the offending field on any inconsistency; the
    softer structural checks live in validate_topology.
    """
    period_s = float(doc.get("period_seconds", 60.0))
    if period_s <= 0:
        raise PlantError("period_seconds must be positive")
    horizon = int(doc.get("horizon", 120))
    if horizon < 1:
        raise PlantError("horizon must be at least 1")

    entries = doc.get("equipment")
    if not entries:
        raise PlantError("equipment: list is missing or empty")
    nodes, feeds = [], {}
    for idx, entry in enumerate(entries):
        eq, ups = _ingest_equipment(entry, period_s, idx)
        if eq.id in feeds:
            raise PlantError(f"equipment[{idx}]: duplicate id '{eq.id}'")
        nodes.append(eq)
        feeds[eq.id] = ups
    known = set(feeds)
    for nid, ups in feeds.items():
        for u in ups:
            if u not in known:
                raise PlantError(f"feeds of '{nid}': unknown upstream id '{u}'")

    sep_doc = doc.get("separation")
    separation = None
    if sep_doc is not None:
        separation = Separation(feed=sep_doc["feed"], regrind_head=sep_doc["regrind_head"],
                                bypass_head=sep_doc["bypass_head"])
        for fld in ("feed", "regrind_head", "bypass_head"):
            if getattr(separation, fld) not in known:
                raise PlantError(f"separation.{fld}: unknown equipment id")
        if not (feeds[separation.regrind_head] == feeds[separation.bypass_head]
                == (separation.feed,)):
            raise PlantError("separation: branch heads must share the separation feed "
                             "as their single upstream node")

    sinks = [n.id for n in nodes if all(n.id not in feeds[m.id] for m in nodes)]
    reactor_feed = doc.get("reactor_feed") or (sinks[0] if len(sinks) == 1 else None)
    if reactor_feed is None:
        raise PlantError("reactor_feed: not given and the graph has no unique sink")
    if reactor_feed not in known:
        raise PlantError("reactor_feed: unknown equipment id")

    graph = EquipmentGraph(
        nodes=nodes, feeds=feeds, separation=separation, reactor_feed=reactor_feed,
        bale_cross_section=float(_require(doc, "bale_cross_section_in2", "plant")) * SQ_INCH,
    )
    graph._finalize()

    hard = [d for d in validate_topology(graph) if d.fatal]
    if hard:
        raise PlantError("; ".join(str(d) for d in hard))

    per_hr = period_s / 3600.0
    reactor = doc.get("reactor", {})
    capacity = float(reactor.get("capacity_dt_per_hr", 4.8)) * 1000.0 * per_hr
    target = float(reactor.get("target_dt_per_hr", 0.0)) * 1000.0 * per_hr
    risk = doc.get("risk", {})
    eps = float(risk.get("epsilon", 0.10))
    eps_hat = float(risk.get("epsilon_hat", eps))
    if not 0.0 <= eps_hat <= eps < 1.0:
        raise PlantError("risk: require 0 <= epsilon_hat <= epsilon < 1")
    if target > capacity:
        raise PlantError("reactor: target_dt_per_hr exceeds capacity_dt_per_hr")

    config = PlantConfig(
        period_seconds=period_s,
        horizon=horizon,
        reactor_capacity=capacity,
        target_rate=target,
        epsilon=eps,
        epsilon_hat=eps_hat,
        holding_cost=float(doc.get("holding_cost_per_ton", 5.0)) / 1000.0,
        holding_weight=float(doc.get("surrogate_holding_weight", 1e-3)),
        bands=_ingest_bands(doc),
    )

    bale = doc.get("bale_density", {})
    lo = float(bale.get("min", 171.26))
    hi = float(bale.get("max", 234.81))
    mode = float(bale.get("mode", 0.5 * (lo + hi)))
    if not lo <= mode <= hi:
        raise PlantError("bale_density: mode must lie between min and max")

    psd: dict[str, dict[MoistureLevel, PsdRange]] = {}
    for gid, table in doc.get("psd", {}).items():
        if gid not in known:
            raise PlantError(f"psd: unknown grinder id '{gid}'")
        psd[gid] = {}
        for lvl in LEVELS:
            row = table[lvl.value]
            d50 = tuple(sorted(float(x) for x in row["d50_mm"]))
            ratio = tuple(sorted(float(x) for x in row["ratio"]))
            if d50[0] <= 0 or ratio[0] < 1.0:
                raise PlantError(f"psd.{gid}.{lvl.value}: need positive d50 and ratio >= 1")
            psd[gid][lvl] = PsdRange(d50=d50, ratio=ratio)

    regressions = {}
    for gid, row in doc.get("density_regressions", {}).items():
        if gid not in known:
            raise PlantError(f"density_regressions: unknown grinder id '{gid}'")
        regressions[gid] = Regression(
            intercept=float(row["intercept"]), moisture_coef=float(row["moisture"]),
            d50_coef=float(row["d50"]), noise_std=float(row["noise_std"]))
    for gid in graph.grinders:
        if gid not in psd or gid not in regressions:
            raise PlantError(f"grinder '{gid}': psd and density_regressions entries required")

    fail = doc.get("failures", {})
    dist = Distributions(
        bale_density=(lo, mode, hi),
        psd=psd,
        regressions=regressions,
        short_failures=_ingest_failure(fail.get("short")),
        long_failures=_ingest_failure(fail.get("long")),
        separation_screen=float(doc.get("separation_screen_mm", 6.35)),
    )

    return Plant(graph=graph, config=config, dist=dist, document=doc)


def load_plant(path) -> Plant:
    with open(path) as fh:
        return build_plant(json.load(fh))


def pdu_document() -> dict:
    """The canonical plant document shipped with the package."""
    with resources.files("feedline.data").joinpath("pdu.json").open() as fh:
        return json.load(fh)


def pdu_plant(**overrides) -> Plant:
    """Build the canonical plant, optionally overriding top-level document keys.

    Nested overrides use dotted keys, e.g. ``{"reactor.capacity_dt_per_hr": 2.7}``.
    """
    doc = pdu_document()
    for key, val in overrides.items():
        parts = key.split(".")
        tgt = doc
        for p in parts[:-1]:
            tgt = tgt[p]
        tgt[parts[-1]] = val
    return build_plant(doc)


def horizon_operating_cost(plant: Plant, seq) -> float:
    """Total energy plus fixed cost ($) of running every equipment over the
    horizon; costs accrue for all periods regardless of failures."""
    level_counts = {lvl: 0 for lvl in LEVELS}
    for lvl in seq.levels:
        level_counts[lvl] += 1
    total = 0.0
    for eq in plant.graph.nodes:
        for lvl, cnt in level_counts.items():
            total += cnt * (eq.energy_cost.at(lvl) + eq.fixed_cost.at(lvl))
    return total


# ---------------------------------------------------------------------------
# validation

@dataclass
class Diagnostic:
    node: str
    rule: str
    message: str
    fatal: bool = False

    def __str__(self):
        return f"{self.node}: [{self.rule}] {self.message}"


def validate_topology(graph: EquipmentGraph) -> list[Diagnostic]:
    """Structural checks; returns an empty list iff the graph is sound."""
    out: list[Diagnostic] = []
    sources = graph.ids(EquipmentKind.BALE_INFEED)
    if len(sources) != 1:
        out.append(Diagnostic("plant", "source-multiplicity",
                              f"expected exactly one bale infeed, found {len(sources)}", True))
    storages = graph.storages
    if len(storages) != 1:
        out.append(Diagnostic("plant", "storage-multiplicity",
                              f"expected exactly one storage node, found {len(storages)}"))
    for eq in graph.nodes:
        ups = graph.feeds.get(eq.id, ())
        if eq.kind is EquipmentKind.BALE_INFEED:
            if ups:
                out.append(Diagnostic(eq.id, "source-feeds", "bale infeed cannot have upstream nodes", True))
        elif not ups:
            out.append(Diagnostic(eq.id, "orphan", "non-source node has an empty feed set", True))
        if eq.kind not in (EquipmentKind.STORAGE, EquipmentKind.PELLET_MILL) and len(ups) > 1:
            out.append(Diagnostic(eq.id, "merge", "only storage may merge multiple streams"))

    if sources:
        seen = {sources[0]}
        for nid in graph.topo_order:
            if nid in seen:
                for c in graph.children.get(nid, ()):
                    seen.add(c)
        if graph.reactor_feed not in seen:
            out.append(Diagnostic(graph.reactor_feed, "reachability",
                                  "reactor feed is not reachable from the bale infeed"))
        unreachable = [n.id for n in graph.nodes if n.id not in seen]
        for nid in unreachable:
            out.append(Diagnostic(nid, "reachability", "node is not reachable from the bale infeed"))

    if graph.children.get(graph.reactor_feed):
        out.append(Diagnostic(graph.reactor_feed, "sink", "reactor feed must have no downstream node"))

    sep = graph.separation
    if sep is not None:
        pred_a = graph.feeds.get(sep.regrind_head, ())
        pred_b = graph.feeds.get(sep.bypass_head, ())
        if not (pred_a == pred_b == (sep.feed,)):
            out.append(Diagnostic(sep.feed, "separation",
                                  "branch heads must share the separation feed as their only predecessor"))
        for head in (sep.regrind_head, sep.bypass_head):
            if graph.by_id[head].kind is not EquipmentKind.TRANSPORT:
                out.append(Diagnostic(head, "separation",
                                      "separation branch heads must be transport equipment", True))

    return out


def report_document(plant: Plant) -> dict:
    """Equipment tables converted back to document units (inch^2, $/hr,
    inch/min, dt/hr); inverse of ingestion for audit round-trips."""
    period_s = plant.config.period_seconds
    per_hr = period_s / 3600.0
    per_min = period_s / 60.0
    rows = {}
    for eq in plant.graph.nodes:
        row = {
            "cross_section_in2": eq.cross_section / SQ_INCH,
            "energy_cost_per_hr": eq.energy_cost.scaled(1.0 / per_hr).as_dict(),
            "fixed_cost_per_hr": eq.fixed_cost.scaled(1.0 / per_hr).as_dict(),
            "speed_limit_in_per_min": eq.speed_limit.scaled(1.0 / (INCH * per_min)).as_dict(),
        }
        if eq.infeed_cap is not None:
            row["infeed_cap_dt_per_hr"] = eq.infeed_cap.scaled(1.0 / (1000.0 * per_hr)).as_dict()
        if eq.kind is EquipmentKind.GRINDER:
            row["dry_matter_loss"] = eq.dry_matter_loss
            row["moisture_loss"] = eq.moisture_loss.as_dict()
        rows[eq.id] = row
    return rows
