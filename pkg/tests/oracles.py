"""Independent reference implementations used as oracles by the tests.

Every function recomputes something the package computes, by a different
route: matrix exponentials instead of closed forms, exhaustive enumeration
instead of dynamic programming, quadrature instead of library tail
functions. Tests compare the two routes. Oracles take plain data (arrays,
dicts, adjacency maps) so they stay decoupled from production internals.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

GAP = "-"


# -- substitution model ------------------------------------------------------

def rate_matrix(freqs) -> np.ndarray:
    """Generator with q_ij = mu * pi_j, normalized to one expected event."""
    pi = np.asarray(freqs, dtype=float)
    mu = 1.0 / (1.0 - float(pi @ pi))
    q = mu * np.tile(pi, (len(pi), 1))
    np.fill_diagonal(q, 0.0)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def expm_transition(freqs, t: float, rate: float = 1.0) -> np.ndarray:
    """P(t) by scaled-squaring matrix exponential of the generator."""
    return expm(rate_matrix(freqs) * t * rate)


def gamma_two_rates(shape: float) -> tuple[float, float]:
    """Two-category discretization by direct quadrature.

    Conditional means of Gamma(shape, scale=1/shape) below and above its
    median, renormalized to average exactly 1.
    """
    from scipy import integrate
    from scipy.stats import gamma

    dist = gamma(shape, scale=1.0 / shape)
    median = dist.ppf(0.5)
    low, _ = integrate.quad(lambda x: x * dist.pdf(x), 0.0, median)
    high, _ = integrate.quad(lambda x: x * dist.pdf(x), median, np.inf,
                             limit=200)
    rates = np.array([low / 0.5, high / 0.5])
    rates /= rates.mean()
    return float(rates[0]), float(rates[1])


# -- tree likelihood by enumeration ------------------------------------------

def enumeration_log_likelihoods(adjacency, leaf_symbols, states, freqs,
                                p_inv: float = 0.0, rates=(1.0,)) -> np.ndarray:
    """Per-site log likelihoods by brute-force sum over state assignments.

    ``adjacency`` maps node -> {neighbor: branch length}; ``leaf_symbols``
    maps leaf node -> list of site symbols (GAP for missing). Transition
    probabilities come from the matrix exponential, so this shares no
    arithmetic with the pruning implementation. Gap leaves are summed over
    like internal nodes (missing data).
    """
    pi = np.asarray(freqs, dtype=float)
    index = {s: i for i, s in enumerate(states)}
    nodes = sorted(adjacency)
    root = nodes[0]

    # Directed edge list, parent before child, from an arbitrary root.
    order: list[tuple[int, int, float]] = []
    seen = {root}
    stack = [root]
    while stack:
        u = stack.pop()
        for v, length in sorted(adjacency[u].items()):
            if v not in seen:
                seen.add(v)
                order.append((u, v, length))
                stack.append(v)

    n_sites = len(next(iter(leaf_symbols.values())))
    trans = {}
    for rate in rates:
        trans[rate] = {(u, v): expm_transition(pi, w, rate)
                       for u, v, w in order}

    out = np.empty(n_sites)
    for site in range(n_sites):
        fixed = {}
        free = []
        for node in nodes:
            if node in leaf_symbols:
                sym = leaf_symbols[node][site]
                if sym == GAP:
                    free.append(node)
                else:
                    fixed[node] = index[sym]
            else:
                free.append(node)

        per_rate = []
        for rate in rates:
            total = 0.0
            for combo in itertools.product(range(len(pi)), repeat=len(free)):
                assign = dict(zip(free, combo))
                assign.update(fixed)
                term = pi[assign[root]]
                for u, v, _ in order:
                    term *= trans[rate][(u, v)][assign[u], assign[v]]
                total += term
            per_rate.append(total)
        variable = float(np.mean(per_rate))

        present = [leaf_symbols[n][site] for n in leaf_symbols
                   if leaf_symbols[n][site] != GAP]
        if not present:
            invariant = 1.0
        elif len(set(present)) == 1:
            invariant = pi[index[present[0]]]
        else:
            invariant = 0.0
        out[site] = np.log((1.0 - p_inv) * variable + p_inv * invariant)
    return out


# -- pairwise alignment by exhaustive search ---------------------------------

def best_alignment_score(a, b, match: float, mismatch: float,
                         gap_open: float, gap_extend: float) -> float:
    """Optimal global alignment score by memoized recursion over gap state.

    The first symbol of a gap run costs ``gap_open``; each further symbol
    costs ``gap_extend``. State 0 = last column was a substitution, 1 =
    gap in b, 2 = gap in a.
    """
    a = tuple(a)
    b = tuple(b)

    @lru_cache(maxsize=None)
    def rec(i: int, j: int, state: int) -> float:
        if i == len(a) and j == len(b):
            return 0.0
        best = -np.inf
        if i < len(a) and j < len(b):
            sub = match if a[i] == b[j] else mismatch
            best = max(best, sub + rec(i + 1, j + 1, 0))
        if i < len(a):
            cost = gap_extend if state == 1 else gap_open
            best = max(best, cost + rec(i + 1, j, 1))
        if j < len(b):
            cost = gap_extend if state == 2 else gap_open
            best = max(best, cost + rec(i, j + 1, 2))
        return best

    return rec(0, 0, 0)


def score_pairwise_rows(row_a, row_b, match: float, mismatch: float,
                        gap_open: float, gap_extend: float) -> float:
    """Score an already-aligned pair of rows under the same gap convention."""
    total = 0.0
    in_gap_a = in_gap_b = False
    for x, y in zip(row_a, row_b):
        if x == GAP and y == GAP:
            continue
        if x == GAP:
            total += gap_extend if in_gap_a else gap_open
            in_gap_a, in_gap_b = True, False
        elif y == GAP:
            total += gap_extend if in_gap_b else gap_open
            in_gap_b, in_gap_a = True, False
        else:
            total += match if x == y else mismatch
            in_gap_a = in_gap_b = False
    return total


# -- Student t upper tail by quadrature --------------------------------------

def t_upper_tail(t_value: float, df: int) -> float:
    """One-sided p = P(T >= t) for Student t, via mpmath quadrature."""
    import mpmath as mp

    mp.mp.dps = 40
    nu = mp.mpf(df)
    coeff = mp.gamma((nu + 1) / 2) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / 2))

    def density(x):
        return coeff * (1 + x * x / nu) ** (-(nu + 1) / 2)

    # Integrate the lower tail when t is negative to keep quadrature stable.
    if t_value >= 0:
        p = mp.quad(density, [t_value, mp.inf])
    else:
        p = 1 - mp.quad(density, [-mp.inf, t_value])
    return float(p)


# -- quartet topologies -------------------------------------------------------

def bfs_edge_counts(adjacency, source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = [source]
    while queue:
        u = queue.pop(0)
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def quartet_by_paths(adjacency, leaf_of_name, quartet) -> str:
    """Quartet topology from scratch: per-quartet four-point comparison.

    Labels are positional over the sorted quartet: "AB|CD" pairs the two
    smallest names, matching the production convention.
    """
    a, b, c, d = sorted(quartet)
    dist = {name: bfs_edge_counts(adjacency, leaf_of_name[name])
            for name in (a, b, c, d)}
    sums = {"AB|CD": dist[a][leaf_of_name[b]] + dist[c][leaf_of_name[d]],
            "AC|BD": dist[a][leaf_of_name[c]] + dist[b][leaf_of_name[d]],
            "AD|BC": dist[a][leaf_of_name[d]] + dist[b][leaf_of_name[c]]}
    low = min(sums.values())
    winners = [k for k, v in sums.items() if v == low]
    return winners[0] if len(winners) == 1 else "STAR"


def quartets_from_bipartitions(adjacency, name_of_leaf) -> dict[frozenset, frozenset]:
    """Resolved quartets via edge bipartitions (independent second route).

    Returns {frozenset of 4 names: frozenset of two frozenset pairs} for
    every quartet some internal edge resolves. Quartets absent from the
    result are stars of the (possibly multifurcating) tree.
    """
    leaves = set(name_of_leaf)
    resolved: dict[frozenset, frozenset] = {}
    for u in adjacency:
        for v in adjacency[u]:
            if u > v:
                continue
            # Leaf set on v's side of edge (u, v).
            side = set()
            stack = [v]
            seen = {u, v}
            while stack:
                x = stack.pop()
                if x in name_of_leaf:
                    side.add(name_of_leaf[x])
                for y in adjacency[x]:
                    if y not in seen:
                        seen.add(y)
                        stack.append(y)
            other = {name_of_leaf[n] for n in leaves} - side
            if len(side) < 2 or len(other) < 2:
                continue
            for pair_a in itertools.combinations(sorted(side), 2):
                for pair_b in itertools.combinations(sorted(other), 2):
                    key = frozenset(pair_a) | frozenset(pair_b)
                    resolved[key] = frozenset((frozenset(pair_a), frozenset(pair_b)))
    return resolved


# -- clustering ----------------------------------------------------------------

def upgma_merge_heights(dist: np.ndarray, names) -> list[tuple[frozenset, float]]:
    """Average-linkage merges as (merged member set, height) pairs."""
    clusters = {i: frozenset([n]) for i, n in enumerate(names)}
    sizes = {i: 1 for i in clusters}
    d = {frozenset((i, j)): float(dist[i, j])
         for i in clusters for j in clusters if i < j}
    merges = []
    next_id = len(names)
    while len(clusters) > 1:
        key = min(d, key=lambda k: (d[k], sorted(k)))
        i, j = sorted(key)
        height = d[key]
        merged = clusters[i] | clusters[j]
        merges.append((merged, height))
        size_new = sizes[i] + sizes[j]
        for other in list(clusters):
            if other in (i, j):
                continue
            val = (d[frozenset((i, other))] * sizes[i]
                   + d[frozenset((j, other))] * sizes[j]) / size_new
            d[frozenset((next_id, other))] = val
        for other in list(clusters):
            d.pop(frozenset((i, other)), None)
            d.pop(frozenset((j, other)), None)
        del clusters[i], clusters[j], sizes[i], sizes[j]
        clusters[next_id] = merged
        sizes[next_id] = size_new
        next_id += 1
    return merges
