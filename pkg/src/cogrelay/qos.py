"""Constrained QoS optimization over the strategy parameters.

Two formulations: maximize the secondary service rate subject to
end-to-end delay ceilings and stability of every queue, and find the
smallest relay count that admits a feasible point.

The solver is a deterministic multi-start projected local search:
coordinate moves with box projection for the per-relay probabilities and
simplex projection for the schedule, assignment and rank-distribution
weights.  Restarts draw their starting points from independent seeded
streams, and results merge by best secondary rate with lexicographic
tie-breaking, so output depends only on (configuration, budget, seed).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import StrategyKind
from .errors import ConfigError, InfeasibleError, NoFeasibleRelayCount
from .network import NetworkConfig, OutageTable, TrafficParams
from .orders import DENSE_LIMIT, OrderDistribution
from .rates import (EPS_STAB, StrategyParams, apply_sensing_errors,
                    end_to_end_delays, primary_rate_bound, rate_report)

DENSE_ORDER_LIMIT = 5  # optimize the full N!-simplex only up to here
_BIG = 1e6             # stands in for an infinite violation in the merit


@dataclass(frozen=True)
class QosSpec:
    """Delay ceilings (slots; math.inf disables one) and offered traffic."""

    d_p_max: float
    d_s_max: float
    traffic: TrafficParams

    def __post_init__(self):
        if self.d_p_max <= 0 or self.d_s_max <= 0:
            raise ConfigError("delay ceilings must be positive")


@dataclass(frozen=True)
class OptResult:
    best_params: StrategyParams | None
    best_mu_s: float
    feasible: bool
    constraint_residuals: dict
    restarts_used: int
    evaluations: int
    budget_exhausted: bool
    first_violation: str | None  # "stability" or "delay" when infeasible


def _dense_orders(n: int) -> bool:
    return n <= DENSE_ORDER_LIMIT


class _Space:
    """Search-space layout for one strategy: named box and simplex groups."""

    def __init__(self, strategy: StrategyKind, n: int):
        self.strategy = strategy
        self.n = n
        self.box = ["alpha", "f_p", "f_s"]
        self.simplex = {"omega": n}
        if strategy is StrategyKind.RANDOM:
            self.simplex["beta"] = n
        if strategy is StrategyKind.ORDERED:
            if _dense_orders(n):
                self.perms = list(itertools.permutations(range(1, n + 1)))
                self.simplex["rho_p"] = len(self.perms)
                self.simplex["rho_s"] = len(self.perms)
            else:
                self.perms = None
                self.simplex["beta_p"] = n
                self.simplex["beta_s"] = n

    def to_params(self, point: dict) -> StrategyParams:
        kw = {}
        if self.strategy is StrategyKind.RANDOM:
            kw["beta"] = point["beta"]
        if self.strategy is StrategyKind.ORDERED:
            if self.perms is not None:
                kw["order_p"] = self._dist(point["rho_p"])
                kw["order_s"] = self._dist(point["rho_s"])
            else:
                kw["order_p"] = OrderDistribution.from_first_rank_profile(
                    point["beta_p"])
                kw["order_s"] = OrderDistribution.from_first_rank_profile(
                    point["beta_s"])
        return StrategyParams(self.strategy, point["omega"], point["alpha"],
                              point["f_p"], point["f_s"], **kw)

    def _dist(self, weights) -> OrderDistribution:
        total = weights.sum()
        entries = {p: w / total for p, w in zip(self.perms, weights) if w > 0}
        return OrderDistribution(self.n, entries)

    def from_params(self, params: StrategyParams) -> dict:
        point = {"alpha": params.alpha.copy(), "f_p": params.f_p.copy(),
                 "f_s": params.f_s.copy(), "omega": params.omega.copy()}
        if self.strategy is StrategyKind.RANDOM:
            point["beta"] = params.beta.copy()
        if self.strategy is StrategyKind.ORDERED:
            if self.perms is not None:
                point["rho_p"] = np.array(
                    [params.order_p.entries.get(p, 0.0) for p in self.perms])
                point["rho_s"] = np.array(
                    [params.order_s.entries.get(p, 0.0) for p in self.perms])
            else:
                point["beta_p"] = params.order_p.first_rank_profile()
                point["beta_s"] = params.order_s.first_rank_profile()
        return point

    def random_point(self, rng: np.random.Generator) -> dict:
        point = {name: rng.uniform(0, 1, self.n) for name in self.box}
        for name, size in self.simplex.items():
            point[name] = rng.dirichlet(np.ones(size)) if size else np.zeros(0)
        return point

    def flat(self, point: dict) -> tuple:
        names = self.box + sorted(self.simplex)
        return tuple(float(v) for name in names for v in point[name])


def _normalized(v: np.ndarray) -> np.ndarray:
    total = v.sum()
    if total <= 0:
        return np.full(v.size, 1.0 / v.size)
    return v / total


class _Evaluator:
    """Caches the problem data and scores candidate points.

    Merit is lexicographic: total constraint violation first (0 means
    feasible), then the negated secondary rate.
    """

    def __init__(self, network: NetworkConfig, strategy: StrategyKind,
                 qos: QosSpec, eps_stab: float):
        self.outages = network.outages(strategy)
        self.sensing = network.sensing
        self.qos = qos
        self.traffic = qos.traffic
        self.eps = eps_stab
        self.evaluations = 0

    def residuals(self, params: StrategyParams) -> tuple[dict, float]:
        self.evaluations += 1
        report = rate_report(self.outages, params, self.traffic)
        if self.sensing is not None:
            report = apply_sensing_errors(report, params, self.sensing)
        res = {
            "stability_p": report.mu_p - self.traffic.lambda_p - self.eps,
            "stability_s": report.mu_s - self.traffic.lambda_s - self.eps,
        }
        for k in range(params.n_relays):
            res[f"stability_pk{k + 1}"] = (
                math.inf if report.lambda_pk[k] == 0.0
                else report.mu_pk[k] - report.lambda_pk[k] - self.eps)
            res[f"stability_sk{k + 1}"] = (
                math.inf if report.lambda_sk[k] == 0.0
                else report.mu_sk[k] - report.lambda_sk[k] - self.eps)
        if all(v >= 0 for v in res.values()):
            d_p, d_s = end_to_end_delays(report, self.traffic)
            res["delay_p"] = self.qos.d_p_max - d_p
            res["delay_s"] = self.qos.d_s_max - d_s
        else:
            res["delay_p"] = -math.inf
            res["delay_s"] = -math.inf
        return res, report.mu_s

    def merit(self, params: StrategyParams):
        res, mu_s = self.residuals(params)
        violation = sum(min(max(0.0, -v), _BIG) for v in res.values())
        return violation, -mu_s, res, mu_s


def _coordinate_moves(space: _Space, point: dict, scale: float):
    """Candidate single-coordinate moves at the given scale."""
    for name in space.box:
        vec = point[name]
        for i in range(vec.size):
            for delta in (scale, -scale):
                new = vec.copy()
                new[i] = min(1.0, max(0.0, new[i] + delta))
                if new[i] != vec[i]:
                    yield name, new
    for name in space.simplex:
        vec = point[name]
        for i in range(vec.size):
            if vec.size < 2:
                continue
            toward = vec * (1.0 - scale)
            toward[i] += scale
            yield name, _normalized(toward)
            if vec[i] > 0.0:
                away = vec.copy()
                away[i] = max(0.0, away[i] - scale)
                yield name, _normalized(away)


_SCALES = (0.5, 0.25, 0.1, 0.04, 0.015, 0.005, 0.002)


def _local_search(space, evaluator, start, budget_left):
    point = {k: np.asarray(v, dtype=float).copy() for k, v in start.items()}
    best = evaluator.merit(space.to_params(point))
    used = 1
    for scale in _SCALES:
        improved = True
        while improved and used < budget_left:
            improved = False
            for name, vec in _coordinate_moves(space, point, scale):
                if used >= budget_left:
                    break
                trial = dict(point)
                trial[name] = vec
                cand = evaluator.merit(space.to_params(trial))
                used += 1
                if cand[:2] < best[:2]:
                    best = cand
                    point = trial
                    improved = True
    return point, best, used


def _designed_starts(space: _Space, outages: OutageTable) -> list[dict]:
    n = space.n
    starts = []

    def base(alpha, f_p, f_s):
        point = {"alpha": np.full(n, alpha), "f_p": np.full(n, f_p),
                 "f_s": np.full(n, f_s),
                 "omega": np.full(n, 1.0 / n) if n else np.zeros(0)}
        for name, size in space.simplex.items():
            if name != "omega":
                point[name] = (np.full(size, 1.0 / size) if size
                               else np.zeros(0))
        return point

    starts.append(base(0.5, 1.0, 1.0))
    starts.append(base(0.5, 0.0, 0.0))          # no relaying fallback
    starts.append(base(0.3, 1.0, 1.0))
    starts.append(base(0.7, 1.0, 0.0))
    if n:
        # concentrate the decoding role on the strongest relay per user
        for which, vec in (("p", outages.pu_relay), ("s", outages.su_relay)):
            point = base(0.5, 1.0, 1.0)
            vertex = np.zeros(n)
            vertex[int(np.argmin(vec))] = 1.0
            if "beta" in point:
                point["beta"] = vertex
            if "beta_p" in point:
                point["beta_p" if which == "p" else "beta_s"] = vertex
            if "rho_p" in point:
                dist = OrderDistribution.from_first_rank_profile(vertex)
                key = "rho_p" if which == "p" else "rho_s"
                point[key] = np.array(
                    [dist.entries.get(p, 0.0) for p in space.perms])
            starts.append(point)
    return starts


def maximize_secondary_throughput(
        network: NetworkConfig, strategy: StrategyKind, qos: QosSpec, *,
        budget: int = 20_000, restarts: int = 8, seed: int = 0,
        eps_stab: float = EPS_STAB,
        extra_starts: tuple[StrategyParams, ...] = ()) -> OptResult:
    """Best feasible secondary service rate found within `budget` rate
    evaluations, or the least-infeasible point when none is found.

    `extra_starts` seeds additional local searches (e.g. a solution found
    for another strategy or relay count).
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    n = network.n_relays
    if strategy is StrategyKind.ORDERED and n > DENSE_LIMIT:
        raise ConfigError(f"ordered-strategy search supports at most "
                          f"{DENSE_LIMIT} relays")
    evaluator = _Evaluator(network, strategy, qos, eps_stab)

    # a primary queue that cannot be stabilized even at the rate bound
    # makes the whole problem infeasible outright
    mu_p_cap = primary_rate_bound(evaluator.outages, strategy)
    if network.sensing is not None and n > 0:
        mu_p_cap *= float(np.max(1.0 - network.sensing.p_md_primary ** 2))
    if qos.traffic.lambda_p >= mu_p_cap - eps_stab:
        return OptResult(
            best_params=None, best_mu_s=0.0, feasible=False,
            constraint_residuals={"stability_p":
                                  mu_p_cap - qos.traffic.lambda_p - eps_stab},
            restarts_used=0, evaluations=0, budget_exhausted=False,
            first_violation="stability")

    space = _Space(strategy, n)
    starts = _designed_starts(space, evaluator.outages)
    starts.extend(space.from_params(p) for p in extra_starts)

    best_point = None
    best = (math.inf, math.inf, {}, 0.0)
    best_flat = ()
    restarts_used = 0
    index = 0
    while evaluator.evaluations < budget:
        if index < len(starts):
            start = starts[index]
        elif index < len(starts) + restarts:
            rng = np.random.default_rng([seed, index - len(starts)])
            start = space.random_point(rng)
        else:
            break
        index += 1
        restarts_used += 1
        point, merit, _ = _local_search(space, evaluator, start,
                                        budget - evaluator.evaluations)
        flat = space.flat(point)
        if merit[:2] < best[:2] or (merit[:2] == best[:2] and
                                    (best_point is None or flat < best_flat)):
            best = merit
            best_point = point
            best_flat = flat

    violation, _, residuals, mu_s = best
    feasible = violation == 0.0
    first = None
    if not feasible:
        stability_bad = any(v < 0 for k, v in residuals.items()
                            if k.startswith("stability"))
        first = "stability" if stability_bad else "delay"
    return OptResult(
        best_params=space.to_params(best_point) if best_point else None,
        best_mu_s=mu_s if feasible else 0.0,
        feasible=feasible,
        constraint_residuals=residuals,
        restarts_used=restarts_used,
        evaluations=evaluator.evaluations,
        budget_exhausted=evaluator.evaluations >= budget,
        first_violation=first)


def solve_feasibility_saturated(outages: OutageTable, params: StrategyParams,
                                qos: QosSpec, *,
                                eps_stab: float = EPS_STAB
                                ) -> tuple[np.ndarray, np.ndarray]:
    """Feasible relay-schedule split with saturated acceptance (f = 1).

    With all acceptance probabilities one, the user rates and the relay
    arrival rates are constants, and feasibility reduces to the linear
    system lambda_pk < z_k * c_pk, lambda_sk < y_k * c_sk over the simplex
    sum(z + y) = 1, with omega_k = z_k + y_k and alpha_k = z_k / omega_k.
    Returns (z, y); raises InfeasibleError naming the binding constraints.
    """
    n = outages.n_relays
    ones = np.ones(n)
    sat = replace(params, f_p=ones, f_s=ones)
    traffic = qos.traffic
    report = rate_report(outages, sat, traffic)
    bad = []
    if not report.stable_p:
        bad.append("primary stability")
    if report.stable_p and not report.stable_s:
        bad.append("secondary stability")
    if bad:
        raise InfeasibleError(bad)

    idle = report.pi_p0 * report.pi_s0
    c_p = idle * (1.0 - outages.relay_pd)
    c_s = idle * (1.0 - outages.relay_sd)
    lb_z = np.zeros(n)
    lb_y = np.zeros(n)
    for k in range(n):
        if report.lambda_pk[k] > 0:
            if c_p[k] <= 0:
                bad.append(f"primary-relay-{k + 1} stability")
                continue
            lb_z[k] = (report.lambda_pk[k] + eps_stab) / c_p[k]
        if report.lambda_sk[k] > 0:
            if c_s[k] <= 0:
                bad.append(f"secondary-relay-{k + 1} stability")
                continue
            lb_y[k] = (report.lambda_sk[k] + eps_stab) / c_s[k]
    if bad:
        raise InfeasibleError(bad)
    surplus = 1.0 - lb_z.sum() - lb_y.sum()
    if surplus < 0:
        raise InfeasibleError(
            [f"relay stability: schedule mass {lb_z.sum() + lb_y.sum():.6g} "
             f"exceeds 1"])
    z = lb_z + surplus / (2 * n)
    y = lb_y + surplus / (2 * n)
    return z, y


def recover_schedule(z: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(omega, alpha) from the saturated-feasibility variables."""
    omega = z + y
    alpha = np.where(omega > 0, z / np.where(omega > 0, omega, 1.0), 0.0)
    return omega, alpha


def minimize_relay_count(cfg_family, strategy: StrategyKind, qos: QosSpec,
                         n_max: int, *, budget: int = 20_000,
                         restarts: int = 8, seed: int = 0) -> int:
    """Smallest relay count in 0..n_max with a feasible operating point.

    `cfg_family` maps a relay count to its NetworkConfig; a single
    NetworkConfig is restricted to its first n relays.  The solution
    found at each count seeds the next search, so feasibility can only
    get easier as relays are added.
    """
    if callable(cfg_family):
        family = cfg_family
    elif isinstance(cfg_family, NetworkConfig):
        family = cfg_family.take
    else:
        mapping = dict(cfg_family)

        def family(n):
            return mapping[n]

    carried: tuple[StrategyParams, ...] = ()
    for n in range(n_max + 1):
        try:
            network = family(n)
        except (KeyError, ConfigError):
            continue
        result = maximize_secondary_throughput(
            network, strategy, qos, budget=budget, restarts=restarts,
            seed=seed, extra_starts=carried)
        if result.feasible:
            return n
        if result.best_params is not None and n < n_max:
            carried = (_extend(result.best_params, strategy),)
    raise NoFeasibleRelayCount(
        f"no relay count up to {n_max} satisfies the QoS targets")


def _extend(params: StrategyParams, strategy: StrategyKind) -> StrategyParams:
    """Grow a parameter set by one relay that is never used, preserving
    the incumbent's rates as a warm start for the larger search."""
    n = params.n_relays + 1
    # growing from zero relays: the newcomer takes the (unused) schedule
    omega = np.append(params.omega, 0.0 if params.n_relays else 1.0)
    alpha = np.append(params.alpha, 0.5)
    f_p = np.append(params.f_p, 0.0)
    f_s = np.append(params.f_s, 0.0)
    kw = {}
    if strategy is StrategyKind.RANDOM:
        kw["beta"] = np.append(params.beta, 0.0)
    if strategy is StrategyKind.ORDERED:
        for name in ("order_p", "order_s"):
            dist = getattr(params, name)
            entries = {perm + (n,): w for perm, w in dist.entries.items()}
            kw[name] = OrderDistribution(n, entries)
    return StrategyParams(strategy, omega, alpha, f_p, f_s, **kw)
