"""Distributions over relay decoding-rank permutations.

A permutation is stored as an N-tuple (m_1, ..., m_N): relay k holds rank
m_k, rank 1 decodes first.  Distributions are sparse maps from permutation
to probability so that optimizers may restrict support; dense enumeration
is only ever needed for small N.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

MASS_TOL = 1e-9
DENSE_LIMIT = 8  # N! enumeration kept exact up to 8! = 40320 permutations


@dataclass(frozen=True)
class OrderDistribution:
    """Sparse probability distribution over decoding-rank permutations.

    Treat instances as immutable: `entries` must not be mutated after
    construction.
    """

    n_relays: int
    entries: dict[tuple[int, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError("; ".join(problems))

    def validate(self) -> list[str]:
        """Return a list of violations (empty when the distribution is valid)."""
        problems = []
        if self.n_relays < 0:
            return [f"n_relays {self.n_relays} < 0"]
        ranks = set(range(1, self.n_relays + 1))
        mass = 0.0
        for perm, prob in self.entries.items():
            if len(perm) != self.n_relays or set(perm) != ranks:
                problems.append(f"key {perm} is not a bijection on 1..{self.n_relays}")
            if prob < 0:
                problems.append(f"probability {prob} < 0 for {perm}")
            mass += prob
        if abs(mass - 1.0) > MASS_TOL:
            problems.append(f"mass {mass:.12g} != 1")
        return problems

    @classmethod
    def uniform(cls, n_relays: int) -> "OrderDistribution":
        """Equal weight on all n! permutations (n <= DENSE_LIMIT)."""
        if n_relays > DENSE_LIMIT:
            raise ConfigError(
                f"dense enumeration limited to n_relays <= {DENSE_LIMIT}")
        perms = list(itertools.permutations(range(1, n_relays + 1)))
        w = 1.0 / len(perms)
        return cls(n_relays, {p: w for p in perms})

    @classmethod
    def point_mass(cls, perm: tuple[int, ...]) -> "OrderDistribution":
        return cls(len(perm), {tuple(perm): 1.0})

    @classmethod
    def from_first_rank_profile(cls, beta) -> "OrderDistribution":
        """Distribution whose first-rank marginal equals `beta`.

        With probability beta_k relay k decodes first and the remaining
        relays follow in ascending index order.  Only the first-rank
        marginal is pinned; this completion is the deterministic one.
        """
        beta = np.asarray(beta, dtype=float)
        n = beta.size
        if np.any(beta < 0) or abs(beta.sum() - 1.0) > MASS_TOL:
            raise ConfigError(
                f"first-rank profile must be a probability vector, got {beta}")
        entries: dict[tuple[int, ...], float] = {}
        for k in range(n):
            if beta[k] == 0.0:
                continue
            ranks = [0] * n
            ranks[k] = 1
            next_rank = 2
            for j in range(n):
                if j != k:
                    ranks[j] = next_rank
                    next_rank += 1
            entries[tuple(ranks)] = entries.get(tuple(ranks), 0.0) + beta[k]
        if not entries:  # n == 0: the empty permutation carries all mass
            entries[()] = 1.0
        return cls(n, entries)

    def rank_marginals(self) -> np.ndarray:
        """eps[m-1, k-1] = P(relay k holds rank m).  Doubly stochastic."""
        n = self.n_relays
        eps = np.zeros((n, n))
        for perm, prob in self.entries.items():
            for k, rank in enumerate(perm):
                eps[rank - 1, k] += prob
        return eps

    def first_rank_profile(self) -> np.ndarray:
        """P(relay k decodes first), the row of rank_marginals for rank 1."""
        n = self.n_relays
        beta = np.zeros(n)
        for perm, prob in self.entries.items():
            beta[perm.index(1)] += prob
        return beta

    def rank_orders(self) -> tuple[np.ndarray, np.ndarray]:
        """Support as (probs, orders): orders[i, r] is the 0-based relay
        index holding rank r+1 in the i-th support permutation.  Used by
        the slot simulator and the rate formulas."""
        probs = np.array(list(self.entries.values()), dtype=float)
        orders = np.zeros((len(self.entries), self.n_relays), dtype=np.int64)
        for i, perm in enumerate(self.entries.keys()):
            for k, rank in enumerate(perm):
                orders[i, rank - 1] = k
        return probs, orders


def is_doubly_stochastic(eps: np.ndarray, tol: float = MASS_TOL) -> bool:
    if eps.size == 0:
        return True
    return (np.all(eps >= -tol)
            and np.allclose(eps.sum(axis=0), 1.0, atol=tol)
            and np.allclose(eps.sum(axis=1), 1.0, atol=tol))
