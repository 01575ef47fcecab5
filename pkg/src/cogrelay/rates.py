"""Closed-form queueing analysis of the cooperative MAC.

Mean service and arrival rates for every queue in the system (two user
queues plus two relaying queues per relay), empty-queue probabilities,
best-case rate bounds, queueing delays and the sensing-error corrections.

The system is triangular: the primary queue is a plain Geo/Geo/1 queue, the
secondary sees service only when the primary is empty, and the relaying
queues see service only when both users are silent.  Rates are therefore
evaluated in the fixed order mu_p -> pi_p -> mu_s -> pi_s -> relay rates;
no fixed-point iteration is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .channel import StrategyKind
from .errors import ConfigError, UnstableQueueError
from .network import OutageTable, SensingErrorParams, TrafficParams
from .orders import OrderDistribution

# Strict stability inequalities carry a concrete numerical margin:
# a queue counts as stable when lambda <= mu - EPS_STAB (or lambda == 0).
EPS_STAB = 1e-6


@dataclass(frozen=True)
class StrategyParams:
    """Decision variables of a decoding strategy.

    omega: relay transmit-schedule probabilities (simplex over relays).
    alpha[k]: probability relay k serves its primary queue when scheduled.
    f_p[k], f_s[k]: probability relay k admits a correctly decoded
        primary / secondary packet.
    order_p, order_s: decoding-rank distributions (ordered strategy only).
    beta[k]: probability relay k is the assigned decoder (random
        assignment only; round robin uses the uniform assignment).
    """

    strategy: StrategyKind
    omega: np.ndarray
    alpha: np.ndarray
    f_p: np.ndarray
    f_s: np.ndarray
    order_p: OrderDistribution | None = None
    order_s: OrderDistribution | None = None
    beta: np.ndarray | None = None

    def __post_init__(self):
        n = np.asarray(self.omega).size
        for name in ("omega", "alpha", "f_p", "f_s"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (n,):
                raise ConfigError(f"{name} must have length {n}")
            if np.any(v < 0) or np.any(v > 1):
                raise ConfigError(f"{name} entries must lie in [0, 1]")
            object.__setattr__(self, name, v)
        if n > 0 and abs(self.omega.sum() - 1.0) > 1e-9:
            raise ConfigError(f"omega must sum to 1, got {self.omega.sum():.12g}")
        if self.strategy is StrategyKind.ORDERED:
            if n > 0 and (self.order_p is None or self.order_s is None):
                raise ConfigError("ordered strategy requires order_p and order_s")
            for name in ("order_p", "order_s"):
                dist = getattr(self, name)
                if dist is not None and dist.n_relays != n:
                    raise ConfigError(f"{name} is over {dist.n_relays} relays, "
                                      f"expected {n}")
        elif self.strategy is StrategyKind.RANDOM:
            if n > 0:
                if self.beta is None:
                    raise ConfigError("random assignment requires beta")
                b = np.asarray(self.beta, dtype=float)
                if b.shape != (n,) or np.any(b < 0) or abs(b.sum() - 1.0) > 1e-9:
                    raise ConfigError("beta must be a probability vector over relays")
                object.__setattr__(self, "beta", b)
        elif self.strategy is StrategyKind.ROUND_ROBIN:
            if self.beta is not None:
                raise ConfigError("round robin fixes the assignment to 1/N; "
                                  "do not pass beta")

    @property
    def n_relays(self) -> int:
        return self.omega.size

    def assignment(self) -> np.ndarray:
        """Effective decoder-assignment distribution for the two
        assignment-based strategies."""
        if self.strategy is StrategyKind.RANDOM:
            return self.beta
        if self.strategy is StrategyKind.ROUND_ROBIN:
            n = self.n_relays
            return np.full(n, 1.0 / n) if n else np.zeros(0)
        raise ConfigError("ordered strategy has no single-decoder assignment")


@dataclass(frozen=True)
class RateReport:
    """All analytic rates at one operating point.

    Unstable queues are flagged, not raised: an unstable queue is never
    empty, so its empty-queue probability is reported as 0 and every
    downstream rate follows from that.
    """

    strategy: StrategyKind
    traffic: TrafficParams
    mu_p: float
    mu_s: float
    pi_p0: float
    pi_s0: float
    lambda_pk: np.ndarray
    lambda_sk: np.ndarray
    mu_pk: np.ndarray
    mu_sk: np.ndarray
    stable_p: bool
    stable_s: bool
    stable_pk: np.ndarray
    stable_sk: np.ndarray
    mu_p_max: float
    mu_s_max: float


def is_stable(lam: float, mu: float) -> bool:
    """Stability with the shared numerical margin; an empty arrival stream
    is stable regardless of service."""
    return lam == 0.0 or lam <= mu - EPS_STAB


def empty_probability(lam: float, mu: float, queue: str) -> float:
    if not is_stable(lam, mu):
        raise UnstableQueueError(queue, f"lambda {lam:.6g} >= mu {mu:.6g}"
                                        f" - {EPS_STAB:g}")
    return 1.0 if lam == 0.0 else 1.0 - lam / mu


def capture_weights(outage_relay: np.ndarray, f: np.ndarray,
                    params: StrategyParams, which: str) -> np.ndarray:
    """Per-relay probability that relay k ends up decoding AND accepting an
    undelivered packet, given the source transmitted and the direct link
    failed.

    Ordered acceptance: relay k captures the packet only if every
    better-ranked relay failed to decode or declined.  Assignment
    strategies: only the single assigned relay may capture.
    """
    n = outage_relay.size
    accept = (1.0 - outage_relay) * f       # decode and admit, per relay
    if params.strategy is not StrategyKind.ORDERED:
        return accept * params.assignment()
    weights = np.zeros(n)
    if n == 0:
        return weights
    dist = params.order_p if which == "p" else params.order_s
    probs, orders = dist.rank_orders()
    for prob, order in zip(probs, orders):
        miss = 1.0
        for k in order:                     # relays in rank order
            weights[k] += prob * accept[k] * miss
            miss *= 1.0 - accept[k]
    return weights


def primary_service_rate(outages: OutageTable, params: StrategyParams) -> float:
    """A head-of-line primary packet departs when the direct link succeeds
    or, failing that, some relay decodes and admits it."""
    capture = capture_weights(outages.pu_relay, params.f_p, params, "p")
    return (1.0 - outages.pu_pd) + outages.pu_pd * capture.sum()


def secondary_bracket(outages: OutageTable, params: StrategyParams) -> float:
    """Secondary departure probability conditioned on the primary being
    silent and the secondary queue nonempty."""
    capture = capture_weights(outages.su_relay, params.f_s, params, "s")
    return (1.0 - outages.su_sd) + outages.su_sd * capture.sum()


def secondary_service_rate(outages: OutageTable, params: StrategyParams,
                           traffic: TrafficParams) -> float:
    """Requires a stable primary queue; raises UnstableQueueError otherwise."""
    mu_p = primary_service_rate(outages, params)
    pi_p0 = empty_probability(traffic.lambda_p, mu_p, "primary")
    return pi_p0 * secondary_bracket(outages, params)


def relay_arrival_rates(outages: OutageTable, params: StrategyParams,
                        traffic: TrafficParams) -> tuple[np.ndarray, np.ndarray]:
    """Mean arrival rate into each relaying queue.  Both user queues must
    be stable for the empty-queue probabilities to exist."""
    mu_p = primary_service_rate(outages, params)
    pi_p0 = empty_probability(traffic.lambda_p, mu_p, "primary")
    mu_s = pi_p0 * secondary_bracket(outages, params)
    pi_s0 = empty_probability(traffic.lambda_s, mu_s, "secondary")
    cap_p = capture_weights(outages.pu_relay, params.f_p, params, "p")
    cap_s = capture_weights(outages.su_relay, params.f_s, params, "s")
    lambda_pk = (1.0 - pi_p0) * outages.pu_pd * cap_p
    lambda_sk = (1.0 - pi_s0) * pi_p0 * outages.su_sd * cap_s
    return lambda_pk, lambda_sk


def relay_service_rates(outages: OutageTable, params: StrategyParams,
                        pi_p0: float, pi_s0: float) -> tuple[np.ndarray, np.ndarray]:
    """A relaying queue is served when its relay is scheduled, both users
    are silent, the queue wins the per-relay coin flip and the link to the
    destination is not in outage."""
    idle = params.omega * pi_p0 * pi_s0
    mu_pk = idle * params.alpha * (1.0 - outages.relay_pd)
    mu_sk = idle * (1.0 - params.alpha) * (1.0 - outages.relay_sd)
    return mu_pk, mu_sk


def _relay_miss_factor(outage_vec: np.ndarray, strategy: StrategyKind) -> float:
    """Best-case probability that no relay captures the packet.

    Ordered acceptance fails only when every relay link is in outage;
    random assignment at best always picks the strongest relay; round
    robin averages over the relays.
    """
    if outage_vec.size == 0:
        return 1.0
    if strategy is StrategyKind.ORDERED:
        return float(np.prod(outage_vec))
    if strategy is StrategyKind.RANDOM:
        return float(np.min(outage_vec))
    return float(np.mean(outage_vec))


def primary_rate_bound(outages: OutageTable, strategy: StrategyKind) -> float:
    """Primary service rate with all acceptance probabilities 1."""
    return 1.0 - outages.pu_pd * _relay_miss_factor(outages.pu_relay, strategy)


def max_service_rates(outages: OutageTable, traffic: TrafficParams,
                      strategy: StrategyKind) -> tuple[float, float]:
    """Best-case user service rates (all acceptance probabilities 1)."""
    mu_p_max = primary_rate_bound(outages, strategy)
    if traffic.lambda_p >= mu_p_max:
        raise UnstableQueueError(
            "primary", f"lambda_p {traffic.lambda_p:.6g} >= best-case service"
                       f" rate {mu_p_max:.6g}")
    mu_s_max = ((1.0 - outages.su_sd
                 * _relay_miss_factor(outages.su_relay, strategy))
                * (1.0 - traffic.lambda_p / mu_p_max))
    return mu_p_max, mu_s_max


def secondary_rate_cap(traffic: TrafficParams) -> float:
    """Strategy-independent ceiling on the secondary service rate: the
    secondary can at best use every slot the primary leaves empty."""
    return 1.0 - traffic.lambda_p


def queue_delay(lam: float, mu: float) -> float:
    """Mean queueing delay (slots, service included) of a stable discrete
    queue with Bernoulli arrivals and geometric service."""
    if mu <= lam:
        raise UnstableQueueError("queue", f"mu {mu:.6g} <= lambda {lam:.6g}")
    return (1.0 - lam) / (mu - lam)


def _flagged_pi0(lam: float, mu: float) -> tuple[bool, float]:
    """(stable, empty probability), with unstable mapped to never-empty."""
    if lam == 0.0:
        return True, 1.0
    if is_stable(lam, mu):
        return True, 1.0 - lam / mu
    return False, 0.0


def rate_report(outages: OutageTable, params: StrategyParams,
                traffic: TrafficParams) -> RateReport:
    """Full operating point.  Instability is reported through the flags;
    an unstable queue is never empty (empty probability 0), which is what
    every downstream formula then consumes."""
    cap_p = capture_weights(outages.pu_relay, params.f_p, params, "p")
    cap_s = capture_weights(outages.su_relay, params.f_s, params, "s")

    mu_p = (1.0 - outages.pu_pd) + outages.pu_pd * cap_p.sum()
    stable_p, pi_p0 = _flagged_pi0(traffic.lambda_p, mu_p)
    mu_s = pi_p0 * ((1.0 - outages.su_sd) + outages.su_sd * cap_s.sum())
    stable_s, pi_s0 = _flagged_pi0(traffic.lambda_s, mu_s)

    lambda_pk = (1.0 - pi_p0) * outages.pu_pd * cap_p
    lambda_sk = (1.0 - pi_s0) * pi_p0 * outages.su_sd * cap_s
    mu_pk, mu_sk = relay_service_rates(outages, params, pi_p0, pi_s0)

    mu_p_max = 1.0
    mu_s_max = 1.0
    try:
        mu_p_max, mu_s_max = max_service_rates(outages, traffic, params.strategy)
    except UnstableQueueError:
        mu_p_max = max_service_rates(
            outages, TrafficParams(0.0, traffic.lambda_s), params.strategy)[0]
        mu_s_max = 0.0

    return RateReport(
        strategy=params.strategy, traffic=traffic,
        mu_p=mu_p, mu_s=mu_s, pi_p0=pi_p0, pi_s0=pi_s0,
        lambda_pk=lambda_pk, lambda_sk=lambda_sk, mu_pk=mu_pk, mu_sk=mu_sk,
        stable_p=stable_p, stable_s=stable_s,
        stable_pk=np.array([is_stable(l, m) for l, m in zip(lambda_pk, mu_pk)],
                           dtype=bool),
        stable_sk=np.array([is_stable(l, m) for l, m in zip(lambda_sk, mu_sk)],
                           dtype=bool),
        mu_p_max=mu_p_max, mu_s_max=mu_s_max)


def end_to_end_delays(report: RateReport,
                      traffic: TrafficParams) -> tuple[float, float]:
    """Mean delay from arrival at a user queue to delivery, averaging the
    extra relay-queue residence over the fraction of packets that take
    each relay path.  Raises UnstableQueueError naming the first queue
    that cannot sustain its load."""

    def user_total(lam, mu, lam_k, mu_k, user):
        if not is_stable(lam, mu):
            raise UnstableQueueError(user)
        d = queue_delay(lam, mu)
        if lam == 0.0:
            return d
        relayed = 0.0
        for k in range(lam_k.size):
            if lam_k[k] == 0.0:
                continue
            if not is_stable(lam_k[k], mu_k[k]):
                raise UnstableQueueError(f"{user}-relay-{k + 1}")
            relayed += lam_k[k] * queue_delay(lam_k[k], mu_k[k])
        return d + relayed / lam

    d_p = user_total(traffic.lambda_p, report.mu_p,
                     report.lambda_pk, report.mu_pk, "primary")
    d_s = user_total(traffic.lambda_s, report.mu_s,
                     report.lambda_sk, report.mu_sk, "secondary")
    return d_p, d_s


def sensing_survival_factors(params: StrategyParams,
                             se: SensingErrorParams) -> tuple[float, float]:
    """Probability that the transmission-scheduled relay does not disrupt
    the primary / the secondary user, averaged over the schedule.

    Disrupting the primary takes a misdetection in both sensing intervals;
    the secondary is safe if the relay either detects it or false-alarms
    on the (idle) first interval.
    """
    if params.n_relays == 0:
        return 1.0, 1.0
    b_p = 1.0 - se.p_md_primary ** 2
    b_s = 1.0 - se.p_md_secondary * (1.0 - se.p_false_alarm)
    return float(params.omega @ b_p), float(params.omega @ b_s)


def apply_sensing_errors(report: RateReport, params: StrategyParams,
                         se: SensingErrorParams) -> RateReport:
    """Rates under imperfect sensing at the relays, with every relaying
    queue treated as backlogged (dummy packets), which makes the results
    lower bounds on the true rates.

    The per-slot (conditional) service probabilities shrink by the
    schedule-averaged survival factor, the empty-queue probabilities are
    recomputed from the reduced service rates, and the whole chain is
    re-evaluated: fuller user queues mean fewer idle slots, which reduces
    the relaying queues' service on top of the false-alarm factor
    (a relay transmits only when it raises no false alarm in either
    sensing interval).
    """
    surv_p, surv_s = sensing_survival_factors(params, se)
    no_fa = (1.0 - se.p_false_alarm) ** 2 if params.n_relays else np.zeros(0)
    lam_p = report.traffic.lambda_p
    lam_s = report.traffic.lambda_s

    mu_p = report.mu_p * surv_p
    stable_p, pi_p0 = _flagged_pi0(lam_p, mu_p)

    # Conditional secondary bracket, recovered from the perfect-sensing
    # report; whenever a guard trips the factor multiplying it is 0.
    bracket_s = report.mu_s / report.pi_p0 if report.pi_p0 > 0 else 0.0
    mu_s = pi_p0 * bracket_s * surv_s
    stable_s, pi_s0 = _flagged_pi0(lam_s, mu_s)

    cap_p = (report.lambda_pk / (1.0 - report.pi_p0)
             if report.pi_p0 < 1.0 else np.zeros(params.n_relays))
    cap_s_denom = (1.0 - report.pi_s0) * report.pi_p0
    cap_s = (report.lambda_sk / cap_s_denom if cap_s_denom > 0
             else np.zeros(params.n_relays))
    lambda_pk = (1.0 - pi_p0) * surv_p * cap_p
    lambda_sk = (1.0 - pi_s0) * pi_p0 * surv_s * cap_s

    idle_perfect = report.pi_p0 * report.pi_s0
    scale_relay = pi_p0 * pi_s0 / idle_perfect if idle_perfect > 0 else 0.0
    mu_pk = report.mu_pk * scale_relay * no_fa
    mu_sk = report.mu_sk * scale_relay * no_fa

    return replace(
        report,
        mu_p=mu_p, mu_s=mu_s, pi_p0=pi_p0, pi_s0=pi_s0,
        lambda_pk=lambda_pk, lambda_sk=lambda_sk, mu_pk=mu_pk, mu_sk=mu_sk,
        stable_p=stable_p, stable_s=stable_s,
        stable_pk=np.array([is_stable(l, m) for l, m in zip(lambda_pk, mu_pk)],
                           dtype=bool),
        stable_sk=np.array([is_stable(l, m) for l, m in zip(lambda_sk, mu_sk)],
                           dtype=bool),
        mu_s_max=report.mu_s_max if stable_p else 0.0)
