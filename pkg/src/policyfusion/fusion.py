"""Pure algebra of discrete action distributions and the four fusion operators.

Everything here is a side-effect-free function of its inputs; the only state
is the diagnostics counter used to record product-fusion fallbacks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AllZeroProduct, NoActiveSubPolicy

log = logging.getLogger(__name__)

SUM_TOL = 1e-9

MIXTURE = "MP"
PRODUCT = "PP"
ENTROPY_THRESHOLD = "ET"
ENTROPY_WEIGHTED = "EW"
FUSION_METHODS = (MIXTURE, PRODUCT, ENTROPY_THRESHOLD, ENTROPY_WEIGHTED)


@dataclass(frozen=True)
class ActionDistribution:
    """Probability vector over a discrete action set."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size < 2:
            raise ValueError(f"need a 1-d vector of length >= 2, got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("negative probability component")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")

    @property
    def n_actions(self) -> int:
        return self.probs.size


# A policy handle is any deterministic mapping observation -> ActionDistribution.
PolicyHandle = Callable[[object], ActionDistribution]


@dataclass
class FusionEnsemble:
    """Main policy plus sub-policies, a fusion method and its threshold."""

    main: PolicyHandle
    subs: Sequence[PolicyHandle]
    method: str = ENTROPY_WEIGHTED
    epsilon: float = 0.0
    active: Sequence[bool] | None = None
    # Count of product-fusion fallbacks to the main policy (disjoint supports).
    fallback_count: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.method not in FUSION_METHODS:
            raise ValueError(f"unknown fusion method {self.method!r}")
        if not np.isfinite(self.epsilon):
            raise ValueError("epsilon must be finite")
        if self.active is None:
            self.active = [True] * len(self.subs)
        if len(self.active) != len(self.subs):
            raise ValueError("active mask length must equal the number of sub-policies")

    def active_subs(self) -> list[PolicyHandle]:
        return [p for p, on in zip(self.subs, self.active) if on]


def normalized_entropy(d: ActionDistribution) -> float:
    """Shannon entropy divided by ln|A|, in [0, 1], with 0 ln 0 := 0."""
    p = d.probs
    nz = p[p > 0.0]
    h = -np.sum(nz * np.log(nz)) / np.log(p.size)
    # Guard float round-off at the endpoints.
    return float(min(max(h, 0.0), 1.0))


def min_entropy_index(ensemble: FusionEnsemble, s) -> tuple[int, float]:
    """Index of the active sub-policy with minimum normalized entropy at s.

    Ties break toward the lowest index. The returned index is into
    ``ensemble.subs`` (inactive entries are never returned).
    """
    best_k, best_h = -1, np.inf
    for k, (sub, on) in enumerate(zip(ensemble.subs, ensemble.active)):
        if not on:
            continue
        h = normalized_entropy(sub(s))
        if h < best_h:
            best_k, best_h = k, h
    if best_k < 0:
        raise NoActiveSubPolicy("all sub-policies are masked off")
    return best_k, best_h


def _member_probs(ensemble: FusionEnsemble, s) -> np.ndarray:
    members = [ensemble.main] + ensemble.active_subs()
    if len(members) < 2:
        raise NoActiveSubPolicy("fusion needs at least one active sub-policy")
    rows = np.stack([m(s).probs for m in members])
    if not np.all(rows.shape[1] == rows[0].size):
        raise ValueError("member action-set cardinalities differ")
    return rows


def fuse_mixture(ensemble: FusionEnsemble, s) -> ActionDistribution:
    """Average of the main policy and all active sub-policies."""
    return ActionDistribution(_member_probs(ensemble, s).mean(axis=0))


def fuse_product(ensemble: FusionEnsemble, s) -> ActionDistribution:
    """Normalized elementwise product of the main and all active sub-policies."""
    rows = _member_probs(ensemble, s)
    prod = np.prod(rows, axis=0)
    z = prod.sum()
    if z == 0.0:
        raise AllZeroProduct("member supports are disjoint")
    return ActionDistribution(prod / z)


def fuse_entropy_threshold(ensemble: FusionEnsemble, s) -> ActionDistribution:
    """Follow the minimum-entropy sub-policy when it is decisively below the
    main policy's entropy plus epsilon; otherwise follow the main policy.

    The boundary H_k* == H_0 + epsilon falls to the main policy (strict <).
    """
    k_star, h_star = min_entropy_index(ensemble, s)
    main_d = ensemble.main(s)
    if h_star < normalized_entropy(main_d) + ensemble.epsilon:
        return ensemble.subs[k_star](s)
    return main_d


def fuse_entropy_weighted(ensemble: FusionEnsemble, s) -> ActionDistribution:
    """Convex blend: H_k* weight on the main policy, (1 - H_k*) on the
    minimum-entropy sub-policy."""
    k_star, h_star = min_entropy_index(ensemble, s)
    p0 = ensemble.main(s).probs
    pk = ensemble.subs[k_star](s).probs
    return ActionDistribution(h_star * p0 + (1.0 - h_star) * pk)


_DISPATCH = {
    MIXTURE: fuse_mixture,
    PRODUCT: fuse_product,
    ENTROPY_THRESHOLD: fuse_entropy_threshold,
    ENTROPY_WEIGHTED: fuse_entropy_weighted,
}


def fused_distribution(ensemble: FusionEnsemble, s) -> ActionDistribution:
    """Dispatch on the ensemble's method; with no active subs the main policy
    is returned unchanged; product fusion over disjoint supports falls back to
    the main policy and bumps the ensemble's fallback counter."""
    if not ensemble.active_subs():
        return ensemble.main(s)
    try:
        return _DISPATCH[ensemble.method](ensemble, s)
    except AllZeroProduct:
        ensemble.fallback_count += 1
        log.warning("product fusion undefined at this state; using main policy")
        return ensemble.main(s)


def sample_action(d: ActionDistribution, rng: np.random.Generator) -> int:
    """Draw an action index from d. Identical rng state and d give the same
    action."""
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(d.probs), u, side="right"),
                   d.n_actions - 1))
