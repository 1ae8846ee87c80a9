"""Synthetic interaction datasets with controllable structure.

Used by the demos and the verification suite: a planted-community
generator with a long-tail in-community popularity profile, and a
head/tail generator that plants a small set of near-universal libraries
next to cluster-specific rare ones.
"""
from __future__ import annotations

import numpy as np

from .data import InteractionDataset


def _names(prefix: str, count: int) -> tuple[str, ...]:
    width = len(str(count - 1))
    return tuple(f"{prefix}{j:0{width}d}" for j in range(count))


def planted_communities(n_projects: int = 200, n_libraries: int = 200, n_communities: int = 4,
                        interactions_per_project: int = 20, noise: float = 0.1,
                        zipf_exponent: float = 1.0, seed: int = 0) -> InteractionDataset:
    """Projects pick mostly from their own community's library pool.

    Within a community, library popularity follows a Zipf profile so
    some libraries are community staples and others are long-tail. A
    ``noise`` fraction of each project's picks comes from other
    communities, uniformly.
    """
    rng = np.random.default_rng(seed)
    proj_comm = np.arange(n_projects) % n_communities
    lib_comm = np.arange(n_libraries) % n_communities
    pools = [np.flatnonzero(lib_comm == c) for c in range(n_communities)]

    pairs: list[tuple[int, int]] = []
    n_noise = int(round(noise * interactions_per_project))
    n_own = interactions_per_project - n_noise
    for u in range(n_projects):
        c = proj_comm[u]
        pool = pools[c]
        weights = 1.0 / (np.arange(1, len(pool) + 1) ** zipf_exponent)
        weights /= weights.sum()
        own = rng.choice(pool, size=min(n_own, len(pool)), replace=False, p=weights)
        other = np.flatnonzero(lib_comm != c)
        cross = rng.choice(other, size=min(n_noise, len(other)), replace=False)
        for i in np.concatenate([own, cross]):
            pairs.append((u, int(i)))
    pairs = sorted(set(pairs))
    return InteractionDataset(_names("p", n_projects), _names("l", n_libraries), tuple(pairs))


def head_tail(n_projects: int = 200, n_head: int = 20, n_tail: int = 180,
              head_prob: float = 0.55, tail_per_project: int = 8,
              n_clusters: int = 4, seed: int = 0) -> InteractionDataset:
    """Head libraries are used by most projects; tail libraries are
    cluster-specific and individually rare.

    With the defaults every head library ends up with popularity rate
    around ``head_prob`` (above 0.5) while tail libraries sit well below
    the rare threshold.
    """
    rng = np.random.default_rng(seed)
    n_libraries = n_head + n_tail
    proj_cluster = np.arange(n_projects) % n_clusters
    tail_cluster = np.arange(n_tail) % n_clusters
    tail_pools = [n_head + np.flatnonzero(tail_cluster == c) for c in range(n_clusters)]

    pairs: list[tuple[int, int]] = []
    for u in range(n_projects):
        heads = np.flatnonzero(rng.random(n_head) < head_prob)
        if len(heads) == 0:
            heads = np.array([int(rng.integers(n_head))])
        pool = tail_pools[proj_cluster[u]]
        tails = rng.choice(pool, size=min(tail_per_project, len(pool)), replace=False)
        for i in np.concatenate([heads, tails]):
            pairs.append((u, int(i)))
    pairs = sorted(set(pairs))
    return InteractionDataset(_names("p", n_projects), _names("l", n_libraries), tuple(pairs))
