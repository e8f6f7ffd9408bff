"""Shared test helpers: independent oracles kept deliberately simple."""
from __future__ import annotations

import numpy as np


def finite_difference_grads(loss_fn, store, step=1e-4):
    """Central finite differences of a scalar loss w.r.t. every parameter.

    loss_fn must recompute the loss from scratch (no tape) on each call.
    """
    grads = {}
    for name in store.names():
        p = store[name]
        flat = p.data.reshape(-1)
        g = np.zeros(flat.size)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up = loss_fn()
            flat[i] = saved - step
            down = loss_fn()
            flat[i] = saved
            g[i] = (up - down) / (2.0 * step)
        grads[name] = g.reshape(p.data.shape)
    return grads


def relative_error(a, b):
    """Scale-free difference between two arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def brute_force_matmul(a, b):
    """Triple-loop matrix multiply used as an oracle."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def random_rotation_matrix(rng):
    """Haar-ish random proper rotation via QR with sign fix."""
    m = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(m)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def graphs_isomorphic_brute(types_a, bonds_a, types_b, bonds_b):
    """Exhaustive typed-graph isomorphism check.

    types_*: sequence of hashable atom labels; bonds_*: iterable of (i, j)
    index pairs. Searches over all type-preserving vertex bijections, so it
    is only usable for small graphs. Deliberately independent of any
    canonical-form code under test.
    """
    import itertools
    from collections import defaultdict

    n = len(types_a)
    if n != len(types_b) or sorted(types_a) != sorted(types_b):
        return False
    edges_a = {frozenset(e) for e in bonds_a}
    edges_b = {frozenset(e) for e in bonds_b}
    if len(edges_a) != len(edges_b):
        return False

    groups_a = defaultdict(list)
    groups_b = defaultdict(list)
    for i, t in enumerate(types_a):
        groups_a[t].append(i)
    for i, t in enumerate(types_b):
        groups_b[t].append(i)

    keys = sorted(groups_a)
    for key in keys:
        if len(groups_a[key]) != len(groups_b[key]):
            return False

    def assignments(idx):
        if idx == len(keys):
            yield {}
            return
        key = keys[idx]
        for rest in assignments(idx + 1):
            for perm in itertools.permutations(groups_b[key]):
                mapping = dict(rest)
                mapping.update(zip(groups_a[key], perm))
                yield mapping

    for mapping in assignments(0):
        mapped = {frozenset((mapping[i], mapping[j])) for e in edges_a for i, j in [tuple(e)]}
        if mapped == edges_b:
            return True
    return False
