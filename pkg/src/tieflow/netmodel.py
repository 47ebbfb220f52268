"""Multi-area network data model.

Holds the case data (areas, buses, branches, generators, scheduling
interfaces with proxy buses), loads and validates case files, computes
per-area DC shift factors, and maps the global interchange vector onto
each area's outbound regional vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import yaml


class CaseError(Exception):
    """Base class for case-file problems."""


class ParseError(CaseError):
    """The file is not syntactically a case file."""


class ValidationError(CaseError):
    """The file parsed but violates a data invariant. Names the entity."""


class NetworkError(Exception):
    """An area's internal network is unusable (disconnected or singular)."""


@dataclass(frozen=True)
class Bus:
    id: str
    area: str
    base_load: float


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    susceptance: float
    limit: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    cost_quadratic: float  # $/MW^2, cost = 0.5*cq*g^2 + cl*g
    cost_linear: float     # $/MW
    g_min: float
    g_max: float


@dataclass(frozen=True)
class Interface:
    """A scheduling interface between two areas.

    Positive flow q(i) is directed from `from_area` to `to_area`.  The flow
    enters/leaves each incident area's internal model at that area's
    declared proxy bus.
    """

    id: int
    from_area: str
    to_area: str
    capacity: float
    lower_bound: float
    proxy_bus_in_from: str
    proxy_bus_in_to: str


@dataclass(frozen=True)
class Area:
    """One balancing area: internal network plus its interface signature.

    `interfaces` lists (interface id, sign) ordered by interface id, where
    sign is +1 when the interface's fixed direction is outbound from this
    area and -1 when it is inbound.
    """

    id: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    slack_bus: str
    interfaces: tuple[tuple[int, int], ...]

    def bus_index(self, bus_id: str) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise KeyError(f"bus {bus_id!r} not in area {self.id!r}")

    @property
    def num_buses(self) -> int:
        return len(self.buses)

    @property
    def num_interfaces(self) -> int:
        return len(self.interfaces)


@dataclass(frozen=True)
class CaseSystem:
    """Immutable world model for one interconnected system."""

    name: str
    areas: tuple[Area, ...]
    interfaces: tuple[Interface, ...]
    # (bus id, InjectionDistribution) pairs, declared order; see stochastic.
    injections: tuple = ()

    @property
    def num_interfaces(self) -> int:
        return len(self.interfaces)

    @property
    def num_areas(self) -> int:
        return len(self.areas)

    def area(self, area_id: str) -> Area:
        for a in self.areas:
            if a.id == area_id:
                return a
        raise KeyError(f"no area {area_id!r} in case {self.name!r}")

    def interface(self, interface_id: int) -> Interface:
        return self.interfaces[interface_id - 1]

    def q_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-interface (lower, upper) flow bounds as arrays of length I."""
        lo = np.array([f.lower_bound for f in self.interfaces], dtype=float)
        hi = np.array([f.capacity for f in self.interfaces], dtype=float)
        return lo, hi

    def bus_area(self, bus_id: str) -> Area:
        for a in self.areas:
            for b in a.buses:
                if b.id == bus_id:
                    return a
        raise KeyError(f"no bus {bus_id!r} in case {self.name!r}")


@dataclass(frozen=True)
class ShiftFactors:
    """DC sensitivities of an area's branch flows.

    `ptdf` maps a 1 MW injection at an internal bus (withdrawn at the slack
    bus) to branch flows; the slack column is zero.  `interchange_ptdf`
    column j equals ptdf[:, proxy bus of the area's j-th interface]; an
    outbound MW on that interface withdraws at the proxy bus, so the flow
    response to the outbound vector is -interchange_ptdf @ q_n.  The
    dispatch constraints consume both matrices with matching signs.
    """

    area_id: str
    ptdf: np.ndarray              # (branches, buses)
    interchange_ptdf: np.ndarray  # (branches, area interfaces)
    proxy_incidence: np.ndarray   # (buses, area interfaces), 0/1


# ---------------------------------------------------------------------------
# case loading


_BUS_KEYS = {"id", "area", "load"}
_BRANCH_KEYS = {"id", "from", "to", "susceptance", "limit"}
_GEN_KEYS = {"id", "bus", "cost_quadratic", "cost_linear", "g_min", "g_max"}
_IFACE_KEYS = {"id", "from_area", "to_area", "capacity", "lower_bound",
               "proxy_bus_in_from", "proxy_bus_in_to"}


def _require(entry: dict, keys: Sequence[str], what: str) -> None:
    for k in keys:
        if k not in entry:
            raise ValidationError(f"{what} is missing required field {k!r}: {entry!r}")


def load_case(path) -> CaseSystem:
    """Load and validate a case file.

    The file is a YAML document with sections `name`, `areas`, `buses`,
    `branches`, `generators`, `interfaces` and optional `injections`
    (see README for the schema).  Raises ParseError on malformed input and
    ValidationError naming the offending entity on any invariant violation.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read case file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"malformed case file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"case file {path} does not contain a mapping")
    return build_case(raw)


def build_case(raw: dict) -> CaseSystem:
    """Build a validated CaseSystem from a parsed case dictionary."""
    from .stochastic import parse_injection  # deferred: stochastic imports netmodel

    name = str(raw.get("name", "unnamed"))
    for section in ("areas", "buses", "interfaces"):
        if section not in raw or not isinstance(raw[section], list):
            raise ParseError(f"case {name!r}: missing or non-list section {section!r}")

    area_entries = raw["areas"]
    bus_entries = raw["buses"]
    branch_entries = raw.get("branches", []) or []
    gen_entries = raw.get("generators", []) or []
    iface_entries = raw["interfaces"]

    buses: dict[str, Bus] = {}
    for e in bus_entries:
        _require(e, ("id", "area"), "bus")
        bid = str(e["id"])
        if bid in buses:
            raise ValidationError(f"duplicate bus id {bid!r}")
        load = float(e.get("load", 0.0))
        if load < 0:
            raise ValidationError(f"bus {bid!r} has negative load {load}")
        buses[bid] = Bus(id=bid, area=str(e["area"]), base_load=load)

    area_ids = []
    slack: dict[str, str] = {}
    for e in area_entries:
        _require(e, ("id", "slack_bus"), "area")
        aid = str(e["id"])
        if aid in slack:
            raise ValidationError(f"duplicate area id {aid!r}")
        area_ids.append(aid)
        slack[aid] = str(e["slack_bus"])

    for bid, b in buses.items():
        if b.area not in slack:
            raise ValidationError(f"bus {bid!r} references unknown area {b.area!r}")
    for aid, sb in slack.items():
        if sb not in buses:
            raise ValidationError(f"area {aid!r} slack bus {sb!r} does not exist")
        if buses[sb].area != aid:
            raise ValidationError(f"area {aid!r} slack bus {sb!r} belongs to area {buses[sb].area!r}")

    branches: dict[str, Branch] = {}
    for e in branch_entries:
        _require(e, ("id", "from", "to", "susceptance", "limit"), "branch")
        brid = str(e["id"])
        if brid in branches:
            raise ValidationError(f"duplicate branch id {brid!r}")
        fb, tb = str(e["from"]), str(e["to"])
        if fb == tb:
            raise ValidationError(f"branch {brid!r} connects bus {fb!r} to itself")
        for end in (fb, tb):
            if end not in buses:
                raise ValidationError(f"branch {brid!r} references unknown bus {end!r}")
        if buses[fb].area != buses[tb].area:
            raise ValidationError(
                f"branch {brid!r} spans areas {buses[fb].area!r} and {buses[tb].area!r}; "
                "inter-area transfer is modeled by interfaces, not branches")
        sus = float(e["susceptance"])
        lim = float(e["limit"])
        if sus <= 0:
            raise ValidationError(f"branch {brid!r} has nonpositive susceptance {sus}")
        if lim <= 0:
            raise ValidationError(f"branch {brid!r} has nonpositive limit {lim}")
        branches[brid] = Branch(id=brid, from_bus=fb, to_bus=tb, susceptance=sus, limit=lim)

    gens: dict[str, Generator] = {}
    for e in gen_entries:
        _require(e, ("id", "bus", "cost_quadratic", "g_min", "g_max"), "generator")
        gid = str(e["id"])
        if gid in gens:
            raise ValidationError(f"duplicate generator id {gid!r}")
        gbus = str(e["bus"])
        if gbus not in buses:
            raise ValidationError(f"generator {gid!r} references unknown bus {gbus!r}")
        cq = float(e["cost_quadratic"])
        if cq <= 0:
            raise ValidationError(
                f"generator {gid!r} has nonpositive cost_quadratic {cq}; "
                "the quadratic cost matrix must be positive definite")
        gmin, gmax = float(e["g_min"]), float(e["g_max"])
        if gmin > gmax:
            raise ValidationError(f"generator {gid!r} has g_min {gmin} > g_max {gmax}")
        gens[gid] = Generator(id=gid, bus=gbus, cost_quadratic=cq,
                              cost_linear=float(e.get("cost_linear", 0.0)),
                              g_min=gmin, g_max=gmax)

    interfaces: list[Interface] = []
    seen_iface_ids = set()
    for e in iface_entries:
        _require(e, ("id", "from_area", "to_area", "capacity",
                     "proxy_bus_in_from", "proxy_bus_in_to"), "interface")
        iid = int(e["id"])
        if iid in seen_iface_ids:
            raise ValidationError(f"duplicate interface id {iid}")
        seen_iface_ids.add(iid)
        fa, ta = str(e["from_area"]), str(e["to_area"])
        if fa == ta:
            raise ValidationError(f"interface {iid} has both endpoints in area {fa!r}")
        for a in (fa, ta):
            if a not in slack:
                raise ValidationError(f"interface {iid} references unknown area {a!r}")
        cap = float(e["capacity"])
        lowb = float(e.get("lower_bound", -cap))
        if lowb > cap:
            raise ValidationError(f"interface {iid} has lower_bound {lowb} > capacity {cap}")
        pf, pt = str(e["proxy_bus_in_from"]), str(e["proxy_bus_in_to"])
        for pb, a in ((pf, fa), (pt, ta)):
            if pb not in buses:
                raise ValidationError(f"interface {iid} proxy bus {pb!r} does not exist")
            if buses[pb].area != a:
                raise ValidationError(
                    f"interface {iid} proxy bus {pb!r} is in area {buses[pb].area!r}, expected {a!r}")
        interfaces.append(Interface(id=iid, from_area=fa, to_area=ta, capacity=cap,
                                    lower_bound=lowb, proxy_bus_in_from=pf,
                                    proxy_bus_in_to=pt))

    interfaces.sort(key=lambda f: f.id)
    expected_ids = list(range(1, len(interfaces) + 1))
    if [f.id for f in interfaces] != expected_ids:
        raise ValidationError(
            f"interface ids must be 1..{len(interfaces)}, got {[f.id for f in interfaces]}")

    areas: list[Area] = []
    for aid in area_ids:
        abuses = tuple(b for b in bus_entries_order(buses, bus_entries) if b.area == aid)
        abranches = tuple(branches[str(e["id"])] for e in branch_entries
                          if buses[str(e["from"])].area == aid)
        agens = tuple(gens[str(e["id"])] for e in gen_entries
                      if buses[str(e["bus"])].area == aid)
        sig = []
        for f in interfaces:
            if f.from_area == aid:
                sig.append((f.id, +1))
            elif f.to_area == aid:
                sig.append((f.id, -1))
        areas.append(Area(id=aid, buses=abuses, branches=abranches, generators=agens,
                          slack_bus=slack[aid], interfaces=tuple(sig)))

    injections = []
    for e in raw.get("injections", []) or []:
        if "bus" not in e:
            raise ValidationError(f"injection entry is missing its bus: {e!r}")
        bid = str(e["bus"])
        if bid not in buses:
            raise ValidationError(f"injection references unknown bus {bid!r}")
        injections.append((bid, parse_injection(e)))

    case = CaseSystem(name=name, areas=tuple(areas), interfaces=tuple(interfaces),
                      injections=tuple(injections))
    _check_area_graph_connected(case)
    return case


def bus_entries_order(buses: dict[str, Bus], bus_entries: list) -> list[Bus]:
    # preserve the file's bus ordering; it defines each area's vector layout
    return [buses[str(e["id"])] for e in bus_entries]


def _check_area_graph_connected(case: CaseSystem) -> None:
    if case.num_areas <= 1:
        return
    adj: dict[str, set[str]] = {a.id: set() for a in case.areas}
    for f in case.interfaces:
        adj[f.from_area].add(f.to_area)
        adj[f.to_area].add(f.from_area)
    seen = {case.areas[0].id}
    stack = [case.areas[0].id]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    missing = [a.id for a in case.areas if a.id not in seen]
    if missing:
        raise ValidationError(f"interface graph does not connect areas {missing}")


# ---------------------------------------------------------------------------
# shift factors


def compute_shift_factors(area: Area, case: Optional[CaseSystem] = None,
                          interfaces: Optional[Sequence[Interface]] = None) -> ShiftFactors:
    """Compute the area's DC shift factor matrices.

    The injection PTDF is built from the reduced susceptance Laplacian with
    the area's slack bus as reference.  Interchange columns place each
    outbound MW as a withdrawal at the interface's proxy bus inside this
    area.  Raises NetworkError if the internal network is disconnected or
    the reduced susceptance matrix is singular.
    """
    if interfaces is None:
        if case is None:
            raise ValueError("need the owning case (or its interface list)")
        interfaces = case.interfaces
    iface_by_id = {f.id: f for f in interfaces}

    nb = area.num_buses
    nbr = len(area.branches)
    idx = {b.id: i for i, b in enumerate(area.buses)}
    slack_i = idx[area.slack_bus]

    _check_internal_connectivity(area, idx)

    flow_of_theta = np.zeros((nbr, nb))
    laplacian = np.zeros((nb, nb))
    for k, br in enumerate(area.branches):
        f, t = idx[br.from_bus], idx[br.to_bus]
        s = br.susceptance
        flow_of_theta[k, f] = s
        flow_of_theta[k, t] = -s
        laplacian[f, f] += s
        laplacian[t, t] += s
        laplacian[f, t] -= s
        laplacian[t, f] -= s

    keep = [i for i in range(nb) if i != slack_i]
    ptdf = np.zeros((nbr, nb))
    if nbr and keep:
        reduced = laplacian[np.ix_(keep, keep)]
        try:
            inv = np.linalg.solve(reduced, np.eye(len(keep)))
        except np.linalg.LinAlgError as exc:
            raise NetworkError(
                f"area {area.id!r}: singular reduced susceptance matrix") from exc
        ptdf[:, keep] = flow_of_theta[:, keep] @ inv

    proxy_incidence = np.zeros((nb, area.num_interfaces))
    for j, (iid, _sign) in enumerate(area.interfaces):
        f = iface_by_id[iid]
        proxy = f.proxy_bus_in_from if f.from_area == area.id else f.proxy_bus_in_to
        proxy_incidence[idx[proxy], j] = 1.0
    interchange_ptdf = ptdf @ proxy_incidence

    return ShiftFactors(area_id=area.id, ptdf=ptdf, interchange_ptdf=interchange_ptdf,
                        proxy_incidence=proxy_incidence)


def _check_internal_connectivity(area: Area, idx: dict[str, int]) -> None:
    nb = len(idx)
    if nb == 1:
        return
    adj: dict[int, set[int]] = {i: set() for i in range(nb)}
    for br in area.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        adj[f].add(t)
        adj[t].add(f)
    seen = {0}
    stack = [0]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if len(seen) != nb:
        missing = [b.id for b in area.buses if idx[b.id] not in seen]
        raise NetworkError(f"area {area.id!r}: internal network is disconnected "
                           f"(unreachable buses {missing})")


def compute_all_shift_factors(case: CaseSystem) -> dict[str, ShiftFactors]:
    return {a.id: compute_shift_factors(a, interfaces=case.interfaces) for a in case.areas}


def project_interchange(q: np.ndarray, area: Area) -> np.ndarray:
    """Map the global interchange vector to the area's outbound vector.

    q_n(j) = sign * q(i_j) for the j-th interface in the area's ordered
    interface list.  Pure linear mapping; no bounds are enforced here.
    """
    q = np.asarray(q, dtype=float)
    return np.array([sign * q[iid - 1] for iid, sign in area.interfaces], dtype=float)
