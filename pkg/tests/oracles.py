"""Slow, independent reference computations the tests compare against."""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np

# ≤ 10 heavy atoms each; covers chains, branches, rings, fused rings,
# aromatics, charges, multiple bonds and every supported element
MOLECULES = (
    "C", "CC", "CCO", "OCC", "CCC", "CC(C)C", "CC(C)(C)C", "C=C", "C#N", "C=O",
    "CC(=O)O", "CC(=O)N", "NCC(=O)O", "OCCO", "ClCCl", "FC(F)(F)F", "BrCCBr", "CI", "CS", "CSC",
    "CS(=O)(=O)C", "OP(=O)(O)O", "B(O)O", "C1CC1", "C1CCC1", "C1CCCCC1", "C1CCNCC1", "C1CCOC1", "c1ccccc1", "c1ccncc1",
    "c1ccoc1", "c1ccsc1", "c1cc[nH]c1", "Cc1ccccc1", "Oc1ccccc1", "Nc1ccccc1", "c1ccc(Cl)cc1", "C1CC2CCC1C2", "C1CC2CC1CC2",
    "[NH4+]", "[O-]C=O", "C[N+](C)(C)C", "CC#CC", "C=CC=C", "CC(C)CC(C)C", "OC(=O)C(=O)O", "NC(=N)N", "C1=CCC=C1", "CCN(CC)CC",
    "CC(O)C(O)C",
)


def _invariant(atom) -> tuple:
    return (atom.element, atom.degree, atom.formal_charge, atom.h_count, int(atom.aromatic))


def environment_strings(g, radius: int) -> dict[tuple[int, int], str]:
    """Canonical string of the depth-``r`` unfolding tree rooted at each atom."""
    adj = [[] for _ in range(g.n_atoms)]
    for b in g.bonds:
        adj[b.i].append((b.order, b.j))
        adj[b.j].append((b.order, b.i))
    env = {(a, 0): repr(_invariant(g.atoms[a])) for a in range(g.n_atoms)}
    for r in range(1, radius + 1):
        for a in range(g.n_atoms):
            branches = sorted(f"{order}>{env[(n, r - 1)]}" for order, n in adj[a])
            env[(a, r)] = f"{r}<{env[(a, r - 1)]}|{','.join(branches)}>"
    return env


def covered_set(g, atom: int, r: int) -> frozenset[int]:
    """Atoms within ``r`` bonds of ``atom``, by breadth-first search."""
    adj = [[] for _ in range(g.n_atoms)]
    for b in g.bonds:
        adj[b.i].append(b.j)
        adj[b.j].append(b.i)
    dist = {atom: 0}
    queue = deque([atom])
    while queue:
        u = queue.popleft()
        if dist[u] == r:
            continue
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return frozenset(dist)


def environment_count_bounds(g, radius: int = 2) -> tuple[int, int]:
    """Range of distinct surviving environments over all tie-break choices.

    Each covered atom set keeps an environment of the lowest radius that
    reaches it. When several atoms reach the same set at that radius, any
    one may be kept; all combinations are enumerated.
    """
    env = environment_strings(g, radius)
    best: dict[frozenset, tuple[int, set[str]]] = {}
    for r in range(radius + 1):
        for a in range(g.n_atoms):
            s = covered_set(g, a, r)
            if s not in best or r < best[s][0]:
                best[s] = (r, {env[(a, r)]})
            elif r == best[s][0]:
                best[s][1].add(env[(a, r)])
    fixed = set()
    choices = []
    for _, cands in best.values():
        if len(cands) == 1:
            fixed |= cands
        else:
            choices.append(sorted(cands))
    counts = [len(fixed | set(pick)) for pick in itertools.product(*choices)] if choices else [len(fixed)]
    return min(counts), max(counts)


# --------------------------------------------------------------------------
# ranking metrics


def auroc_pairs(scores, labels) -> float:
    """O(n^2) pair counting: P(s+ > s-) + P(s+ == s-) / 2."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels) >= 0.5
    pos, neg = s[y], s[~y]
    wins = ties = 0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def aupr_sweep(scores, labels) -> float:
    """Average precision from an explicit sweep over every distinct threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels) >= 0.5
    n_pos = int(y.sum())
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        called = s >= t
        tp = int((called & y).sum())
        precision = tp / int(called.sum())
        recall = tp / n_pos
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total


# --------------------------------------------------------------------------
# gradients


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    """Elementwise relative error; entries where both sides are tiny compare absolutely."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def dense_normalized_adjacency(n: int, edges) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 built with dense loops."""
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def gradient_errors(params, loss_fn, backward_fn, h: float = 1e-5, max_entries: int | None = None,
                    seed: int = 0) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients, per parameter.

    ``loss_fn()`` rebuilds the loss tensor from the current parameter values.
    With ``max_entries`` only that many randomly chosen coordinates of each
    parameter are perturbed.
    """
    rng = np.random.default_rng(seed)
    analytic = backward_fn(loss_fn())
    errors = {}
    for name, p in params.items():
        x = p.data
        flat = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            flat = rng.choice(x.size, size=max_entries, replace=False)
        num, ana = [], []
        for k in flat:
            i = np.unravel_index(k, x.shape)
            old = x[i]
            x[i] = old + h
            up = float(loss_fn().data)
            x[i] = old - h
            down = float(loss_fn().data)
            x[i] = old
            num.append((up - down) / (2 * h))
            ana.append(analytic[name][i])
        errors[name] = max_rel_error(np.array(ana), np.array(num))
    return errors
