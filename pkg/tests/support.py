"""Shared test helpers: the exhaustive slot-outcome oracle and random
configuration generators.

The oracle enumerates every joint decode/acceptance outcome of one slot
instead of using the prefix-product formulas, so it is an independent
check of the closed-form rates.
"""

import itertools

import numpy as np

from cogrelay.channel import StrategyKind
from cogrelay.network import (OutageTable, SensingErrorParams,
                              TrafficParams)
from cogrelay.orders import OrderDistribution
from cogrelay.rates import StrategyParams


def oracle_capture(outage_relay, f, scenarios):
    """P(relay k is the first in decoding order to decode and accept), by
    brute-force enumeration over decode and acceptance outcomes.

    `scenarios` is a list of (weight, order) pairs where `order` lists
    0-based relay indices in decoding order (a prefix is allowed: relays
    not listed never decode, which models single-decoder assignment).
    """
    n = len(outage_relay)
    pbar = 1.0 - np.asarray(outage_relay, dtype=float)
    f = np.asarray(f, dtype=float)
    captured = np.zeros(n)
    for weight, order in scenarios:
        for decode_bits in itertools.product((0, 1), repeat=n):
            p_dec = np.prod([pbar[k] if b else 1.0 - pbar[k]
                             for k, b in enumerate(decode_bits)])
            for accept_bits in itertools.product((0, 1), repeat=n):
                p_acc = np.prod([f[k] if b else 1.0 - f[k]
                                 for k, b in enumerate(accept_bits)])
                w = weight * p_dec * p_acc
                if w == 0.0:
                    continue
                for k in order:
                    if decode_bits[k] and accept_bits[k]:
                        captured[k] += w
                        break
    return captured


def oracle_scenarios(params: StrategyParams, which: str):
    """Decoding-order scenarios for the oracle, matching the strategy."""
    if params.strategy is StrategyKind.ORDERED:
        dist = params.order_p if which == "p" else params.order_s
        probs, orders = dist.rank_orders()
        return [(p, list(o)) for p, o in zip(probs, orders)]
    beta = params.assignment()
    return [(beta[k], [k]) for k in range(params.n_relays)]


def oracle_user_rates(outages: OutageTable, params: StrategyParams,
                      traffic: TrafficParams):
    """mu_p, mu_s, lambda_pk, lambda_sk by exhaustive enumeration."""
    cap_p = oracle_capture(outages.pu_relay, params.f_p,
                           oracle_scenarios(params, "p"))
    cap_s = oracle_capture(outages.su_relay, params.f_s,
                           oracle_scenarios(params, "s"))
    mu_p = (1.0 - outages.pu_pd) + outages.pu_pd * cap_p.sum()
    pi_p0 = 1.0 if traffic.lambda_p == 0 else 1.0 - traffic.lambda_p / mu_p
    mu_s = pi_p0 * ((1.0 - outages.su_sd) + outages.su_sd * cap_s.sum())
    pi_s0 = 1.0 if traffic.lambda_s == 0 else 1.0 - traffic.lambda_s / mu_s
    lambda_pk = (1.0 - pi_p0) * outages.pu_pd * cap_p
    lambda_sk = (1.0 - pi_s0) * pi_p0 * outages.su_sd * cap_s
    return mu_p, mu_s, lambda_pk, lambda_sk


def random_outages(rng: np.random.Generator, n: int,
                   low: float = 0.01, high: float = 0.9) -> OutageTable:
    u = lambda size=None: rng.uniform(low, high, size)
    return OutageTable(u(), u(), u(n), u(n), u(n), u(n))


def random_simplex(rng: np.random.Generator, n: int) -> np.ndarray:
    w = rng.dirichlet(np.ones(n))
    return w / w.sum()


def random_order_distribution(rng: np.random.Generator, n: int,
                              support: int = 4) -> OrderDistribution:
    perms = list(itertools.permutations(range(1, n + 1)))
    take = min(support, len(perms))
    idx = rng.choice(len(perms), size=take, replace=False)
    w = random_simplex(rng, take)
    return OrderDistribution(n, {perms[i]: w[j] for j, i in enumerate(idx)})


def random_params(rng: np.random.Generator, n: int,
                  strategy: StrategyKind) -> StrategyParams:
    kw = {}
    if strategy is StrategyKind.ORDERED:
        kw["order_p"] = random_order_distribution(rng, n)
        kw["order_s"] = random_order_distribution(rng, n)
    elif strategy is StrategyKind.RANDOM:
        kw["beta"] = random_simplex(rng, n)
    return StrategyParams(strategy, random_simplex(rng, n),
                          rng.uniform(0, 1, n), rng.uniform(0, 1, n),
                          rng.uniform(0, 1, n), **kw)


def random_sensing_errors(rng: np.random.Generator, n: int,
                          high: float = 0.3) -> SensingErrorParams:
    return SensingErrorParams(rng.uniform(0, high, n),
                              rng.uniform(0, high, n),
                              rng.uniform(0, high, n))
