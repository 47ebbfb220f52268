"""Net-load uncertainty and sample-average estimation.

Wind/stochastic injections are attached to buses as point masses,
Gaussians, or Gaussian mixtures (optionally truncated by rejection).
Scenario sets are generated from a seed and are bit-reproducible, which
makes every sample-average estimate a deterministic function of
(case, q, seed, M) -- the common-random-numbers discipline the schedulers
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .dispatch import (FLAG_OK, AreaDispatcher, DispatchBatch, build_dispatchers)
from .netmodel import Area, CaseSystem, ShiftFactors, ValidationError, project_interchange

_MAX_REJECTION_ROUNDS = 1000
_EXCLUDED_FRACTION_LIMIT = 0.05


class TruncationError(Exception):
    """Rejection sampling found (almost) no mass inside the truncation window."""


class EstimateUnreliableError(Exception):
    """Too many samples were excluded for the estimate to be trusted."""


@dataclass(frozen=True)
class InjectionDistribution:
    """Distribution of one stochastic bus injection (MW)."""

    kind: str  # "point_mass" | "gaussian" | "gaussian_mixture"
    value: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    weights: tuple = ()
    means: tuple = ()
    stds: tuple = ()
    truncation: Optional[tuple] = None
    mean_sequence: tuple = ()  # gaussian only: per-time means for horizon runs

    def mean_value(self) -> float:
        """Analytic mean, accounting for truncation."""
        if self.kind == "point_mass":
            return self.value
        if self.kind == "gaussian":
            w, mu, sd = (1.0,), (self.mean,), (self.std,)
        else:
            w, mu, sd = self.weights, self.means, self.stds
        if self.truncation is None:
            return float(sum(wi * mi for wi, mi in zip(w, mu)))
        lo, hi = self.truncation
        mass = 0.0
        acc = 0.0
        for wi, mi, si in zip(w, mu, sd):
            a, b = (lo - mi) / si, (hi - mi) / si
            zi = norm.cdf(b) - norm.cdf(a)
            if zi <= 0:
                continue
            trunc_mean = mi + si * (norm.pdf(a) - norm.pdf(b)) / zi
            mass += wi * zi
            acc += wi * zi * trunc_mean
        if mass <= 1e-300:
            raise TruncationError("truncation interval carries no mass")
        return float(acc / mass)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "point_mass":
            return np.full(size, self.value)
        need = np.arange(size)
        out = np.empty(size)
        for _ in range(_MAX_REJECTION_ROUNDS):
            if self.kind == "gaussian":
                draw = rng.normal(self.mean, self.std, size=need.size)
            else:
                comp = rng.choice(len(self.weights), size=need.size, p=self.weights)
                draw = rng.normal(np.asarray(self.means)[comp], np.asarray(self.stds)[comp])
            out[need] = draw
            if self.truncation is None:
                return out
            lo, hi = self.truncation
            bad = (out[need] < lo) | (out[need] > hi)
            need = need[bad]
            if need.size == 0:
                return out
        raise TruncationError(
            f"rejection sampling failed after {_MAX_REJECTION_ROUNDS} rounds; "
            f"the truncation interval {self.truncation} has negligible mass")

    def at_time(self, t: int) -> "InjectionDistribution":
        """Distribution at 1-based time t; the last listed mean is held."""
        if not self.mean_sequence:
            return self
        idx = min(max(t, 1), len(self.mean_sequence)) - 1
        return replace(self, mean=float(self.mean_sequence[idx]))

    def as_point_mass(self) -> "InjectionDistribution":
        return InjectionDistribution(kind="point_mass", value=self.mean_value())


def parse_injection(entry: dict) -> InjectionDistribution:
    """Validate and build a distribution from a case-file injection entry."""
    kind = str(entry.get("kind", ""))
    bus = entry.get("bus", "?")
    trunc = entry.get("truncation")
    if trunc is not None:
        trunc = (float(trunc[0]), float(trunc[1]))
        if trunc[0] >= trunc[1]:
            raise ValidationError(f"injection at bus {bus!r}: empty truncation interval {trunc}")
    seq = tuple(float(v) for v in entry.get("mean_sequence", []) or [])
    if kind == "point_mass":
        if "value" not in entry:
            raise ValidationError(f"injection at bus {bus!r}: point_mass needs a value")
        return InjectionDistribution(kind=kind, value=float(entry["value"]), truncation=trunc)
    if kind == "gaussian":
        for k in ("mean", "std"):
            if k not in entry:
                raise ValidationError(f"injection at bus {bus!r}: gaussian needs {k!r}")
        std = float(entry["std"])
        if std <= 0:
            raise ValidationError(f"injection at bus {bus!r}: std must be positive, got {std}")
        return InjectionDistribution(kind=kind, mean=float(entry["mean"]), std=std,
                                     truncation=trunc, mean_sequence=seq)
    if kind == "gaussian_mixture":
        for k in ("weights", "means", "stds"):
            if k not in entry:
                raise ValidationError(f"injection at bus {bus!r}: gaussian_mixture needs {k!r}")
        w = tuple(float(v) for v in entry["weights"])
        mu = tuple(float(v) for v in entry["means"])
        sd = tuple(float(v) for v in entry["stds"])
        if not (len(w) == len(mu) == len(sd)) or not w:
            raise ValidationError(f"injection at bus {bus!r}: mixture components mismatch")
        if any(wi <= 0 for wi in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValidationError(
                f"injection at bus {bus!r}: weights must be positive and sum to 1, got {w}")
        if any(si <= 0 for si in sd):
            raise ValidationError(f"injection at bus {bus!r}: stds must be positive, got {sd}")
        if seq:
            raise ValidationError(
                f"injection at bus {bus!r}: mean_sequence is only supported for gaussian")
        return InjectionDistribution(kind=kind, weights=w, means=mu, stds=sd, truncation=trunc)
    raise ValidationError(f"injection at bus {bus!r}: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# net-load models and scenario sets


@dataclass(frozen=True)
class NetLoadModel:
    """Per-bus deterministic loads plus stochastic injections.

    `injections` entries are (area id, bus index within the area,
    distribution).  `label` tags the scheduling time the model describes.
    """

    loads: Mapping[str, np.ndarray]
    injections: tuple
    label: object = 0

    @classmethod
    def from_case(cls, case: CaseSystem, label: object = 0) -> "NetLoadModel":
        loads = {a.id: np.array([b.base_load for b in a.buses], dtype=float)
                 for a in case.areas}
        inj = []
        for bus_id, dist in case.injections:
            area = case.bus_area(bus_id)
            inj.append((area.id, area.bus_index(bus_id), dist))
        return cls(loads=loads, injections=tuple(inj), label=label)

    def at_time(self, t: int) -> "NetLoadModel":
        return NetLoadModel(loads=self.loads,
                            injections=tuple((a, i, d.at_time(t)) for a, i, d in self.injections),
                            label=t)

    def mean_model(self) -> "NetLoadModel":
        """Certainty-equivalent model: every injection collapsed to its mean."""
        return NetLoadModel(loads=self.loads,
                            injections=tuple((a, i, d.as_point_mass())
                                             for a, i, d in self.injections),
                            label=self.label)

    @property
    def max_horizon(self) -> int:
        """Longest declared mean sequence (0 when the model is static)."""
        return max((len(d.mean_sequence) for _, _, d in self.injections), default=0)


def models_for_horizon(model: NetLoadModel, horizon: int) -> list[NetLoadModel]:
    return [model.at_time(t) for t in range(1, horizon + 1)]


@dataclass(frozen=True)
class ScenarioSet:
    """M seeded full-system net-load samples, one matrix per area."""

    sample_count: int
    seed: int
    crn_tag: str
    area_loads: Mapping[str, np.ndarray]  # (M, buses of that area)

    def realization(self, m: int) -> dict[str, np.ndarray]:
        return {aid: mat[m] for aid, mat in self.area_loads.items()}


def sample_scenarios(model: NetLoadModel, samples: int, seed: int) -> ScenarioSet:
    """Draw a scenario set; identical (model, samples, seed) reproduce it bit-for-bit.

    Mixture sampling picks a component by weight, then draws the Gaussian,
    then (optionally) rejects draws outside the truncation window.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    area_loads = {aid: np.tile(v, (samples, 1)) for aid, v in model.loads.items()}
    for aid, bidx, dist in model.injections:
        area_loads[aid][:, bidx] -= dist.sample(rng, samples)
    return ScenarioSet(sample_count=samples, seed=seed,
                       crn_tag=f"{model.label}:{seed}:{samples}", area_loads=area_loads)


# ---------------------------------------------------------------------------
# sample-average estimators


@dataclass
class CostEstimate:
    mean: float
    stderr: float
    excluded: int


@dataclass
class LmpEstimate:
    mean: np.ndarray    # per area interface
    stderr: np.ndarray
    excluded: int


def _check_exclusions(excluded: int, total: int, what: str) -> None:
    if excluded > _EXCLUDED_FRACTION_LIMIT * total:
        raise EstimateUnreliableError(
            f"{what}: {excluded} of {total} samples excluded "
            f"(degenerate or infeasible); estimate is untrustworthy")


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def area_batch(dispatcher: AreaDispatcher, q_n: np.ndarray,
               scenarios: ScenarioSet) -> DispatchBatch:
    return dispatcher.solve_many(q_n, scenarios.area_loads[dispatcher.area.id])


def expected_cost(case: CaseSystem, shift_factors: Mapping[str, ShiftFactors],
                  q: np.ndarray, scenarios: ScenarioSet,
                  dispatchers: Optional[Mapping[str, AreaDispatcher]] = None) -> CostEstimate:
    """Sample-average total system cost at interchange q.

    A sample is excluded when any area's dispatch is degenerate or
    infeasible; more than 5% exclusions raise EstimateUnreliableError.
    """
    if dispatchers is None:
        dispatchers = build_dispatchers(case, shift_factors)
    q = np.asarray(q, dtype=float)
    M = scenarios.sample_count
    totals = np.zeros(M)
    ok = np.ones(M, dtype=bool)
    for a in case.areas:
        batch = area_batch(dispatchers[a.id], project_interchange(q, a), scenarios)
        ok &= batch.flags == FLAG_OK
        totals = totals + np.where(np.isnan(batch.costs), 0.0, batch.costs)
    excluded = int(M - ok.sum())
    _check_exclusions(excluded, M, "expected_cost")
    kept = totals[ok]
    return CostEstimate(mean=float(kept.mean()), stderr=_stderr(kept), excluded=excluded)


def expected_lmp(area: Area, shift_factors: ShiftFactors, q_n: np.ndarray,
                 scenarios: ScenarioSet,
                 dispatcher: Optional[AreaDispatcher] = None) -> LmpEstimate:
    """Sample-average proxy-bus LMP vector for one area at outbound q_n."""
    if dispatcher is None:
        dispatcher = AreaDispatcher(area, shift_factors)
    batch = area_batch(dispatcher, np.asarray(q_n, dtype=float), scenarios)
    ok = batch.flags == FLAG_OK
    excluded = int(scenarios.sample_count - ok.sum())
    _check_exclusions(excluded, scenarios.sample_count, f"expected_lmp[{area.id}]")
    kept = batch.proxy_prices[ok]
    stderr = np.array([_stderr(kept[:, j]) for j in range(kept.shape[1])])
    return LmpEstimate(mean=kept.mean(axis=0), stderr=stderr, excluded=excluded)


def _interface_slot(area: Area, interface_id: int) -> int:
    for j, (iid, _sign) in enumerate(area.interfaces):
        if iid == interface_id:
            return j
    raise KeyError(f"area {area.id!r} does not touch interface {interface_id}")


def expected_price_gap(interface_id: int, q: np.ndarray, case: CaseSystem,
                       shift_factors: Mapping[str, ShiftFactors],
                       scenarios: ScenarioSet,
                       dispatchers: Optional[Mapping[str, AreaDispatcher]] = None) -> float:
    """Exporter-minus-importer expected proxy price for one interface.

    Negative gap means the exporting side is cheaper, so pushing more flow
    lowers total cost; the gap is nondecreasing in q(i) by convexity of the
    area value functions, which is what makes bisection on it sound.
    """
    if dispatchers is None:
        dispatchers = build_dispatchers(case, shift_factors)
    q = np.asarray(q, dtype=float)
    iface = case.interface(interface_id)
    out = {}
    for aid in (iface.from_area, iface.to_area):
        area = case.area(aid)
        est = expected_lmp(area, shift_factors[aid], project_interchange(q, area),
                           scenarios, dispatcher=dispatchers[aid])
        out[aid] = est.mean[_interface_slot(area, interface_id)]
    return float(out[iface.from_area] - out[iface.to_area])
