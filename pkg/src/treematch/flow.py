"""Integer minimum-cost flow via successive shortest augmenting paths.

Small, dependency-free kernel used by the full-matching solver.  Arcs are
stored as interleaved forward/reverse pairs (arc ``a`` and ``a ^ 1``), node
imbalances are routed one shortest path at a time with Johnson potentials
keeping reduced costs non-negative, and Dijkstra stops at the first deficit
node it settles.  All quantities are int64; callers scale real costs to
integers beforehand.
"""

from __future__ import annotations

import numpy as np
from numba import njit

INF = np.int64(2**62)

STATUS_OK = 0
STATUS_INFEASIBLE = 1


@njit(cache=True)
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        parent = (i - 1) >> 1
        if keys[parent] <= keys[i]:
            break
        keys[parent], keys[i] = keys[i], keys[parent]
        vals[parent], vals[i] = vals[i], vals[parent]
        i = parent
    return size + 1


@njit(cache=True)
def _heap_pop(keys, vals, size):
    top_key = keys[0]
    top_val = vals[0]
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        smallest = i
        if left < size and keys[left] < keys[smallest]:
            smallest = left
        if right < size and keys[right] < keys[smallest]:
            smallest = right
        if smallest == i:
            break
        keys[smallest], keys[i] = keys[i], keys[smallest]
        vals[smallest], vals[i] = vals[i], vals[smallest]
        i = smallest
    return top_key, top_val, size


@njit(cache=True)
def _solve(n_nodes, tails, heads, caps, costs, excess):
    """Route all excess to deficits.  Returns (status, flow-per-arc)."""
    n_arcs = tails.shape[0]
    flow = np.zeros(n_arcs, dtype=np.int64)

    # CSR adjacency over arc ids grouped by tail node.
    deg = np.zeros(n_nodes + 1, dtype=np.int64)
    for a in range(n_arcs):
        deg[tails[a] + 1] += 1
    start = np.cumsum(deg)
    fill = start[:-1].copy()
    adj = np.empty(n_arcs, dtype=np.int64)
    for a in range(n_arcs):
        adj[fill[tails[a]]] = a
        fill[tails[a]] += 1

    pi = np.zeros(n_nodes, dtype=np.int64)
    dist = np.empty(n_nodes, dtype=np.int64)
    prev_arc = np.empty(n_nodes, dtype=np.int64)
    done = np.empty(n_nodes, dtype=np.bool_)
    heap_cap = 4 * n_arcs + n_nodes + 8
    hkeys = np.empty(heap_cap, dtype=np.int64)
    hvals = np.empty(heap_cap, dtype=np.int64)

    remaining = np.int64(0)
    for v in range(n_nodes):
        if excess[v] > 0:
            remaining += excess[v]

    while remaining > 0:
        src = -1
        for v in range(n_nodes):
            if excess[v] > 0:
                src = v
                break

        dist[:] = INF
        prev_arc[:] = -1
        done[:] = False
        dist[src] = 0
        hsize = _heap_push(hkeys, hvals, 0, np.int64(0), np.int64(src))
        target = -1
        while hsize > 0:
            d, u, hsize = _heap_pop(hkeys, hvals, hsize)
            if done[u]:
                continue
            done[u] = True
            if excess[u] < 0:
                target = u
                break
            for idx in range(start[u], start[u + 1]):
                a = adj[idx]
                if caps[a] - flow[a] <= 0:
                    continue
                v = heads[a]
                if done[v]:
                    continue
                nd = d + costs[a] + pi[u] - pi[v]
                if nd < dist[v]:
                    dist[v] = nd
                    prev_arc[v] = a
                    hsize = _heap_push(hkeys, hvals, hsize, nd, np.int64(v))
        if target == -1:
            return STATUS_INFEASIBLE, flow

        dt = dist[target]
        for v in range(n_nodes):
            if dist[v] < dt:
                pi[v] += dist[v]
            else:
                pi[v] += dt

        # Bottleneck along the path, limited by the endpoint imbalances.
        push = excess[src]
        if -excess[target] < push:
            push = -excess[target]
        v = target
        while v != src:
            a = prev_arc[v]
            residual = caps[a] - flow[a]
            if residual < push:
                push = residual
            v = tails[a]
        v = target
        while v != src:
            a = prev_arc[v]
            flow[a] += push
            flow[a ^ 1] -= push
            v = tails[a]
        excess[src] -= push
        excess[target] += push
        remaining -= push

    return STATUS_OK, flow


def min_cost_flow(n_nodes, arcs, supply):
    """Solve a min-cost transshipment problem.

    Parameters
    ----------
    n_nodes : int
    arcs : sequence of (tail, head, capacity, cost)
        Capacities and costs must be non-negative integers.
    supply : array of int per node; positive = excess, negative = deficit.
        Must sum to zero.

    Returns
    -------
    (feasible, total_cost, flows) where flows[i] is the flow on arcs[i].
    """
    supply = np.asarray(supply, dtype=np.int64)
    if supply.sum() != 0:
        raise ValueError("node supplies must sum to zero")
    n_arcs = len(arcs)
    tails = np.empty(2 * n_arcs, dtype=np.int64)
    heads = np.empty(2 * n_arcs, dtype=np.int64)
    caps = np.empty(2 * n_arcs, dtype=np.int64)
    costs = np.empty(2 * n_arcs, dtype=np.int64)
    for i, (t, h, c, w) in enumerate(arcs):
        if c < 0 or w < 0:
            raise ValueError("arc capacities and costs must be non-negative")
        tails[2 * i], heads[2 * i] = t, h
        caps[2 * i], costs[2 * i] = c, w
        tails[2 * i + 1], heads[2 * i + 1] = h, t
        caps[2 * i + 1], costs[2 * i + 1] = 0, -w
    status, flow = _solve(n_nodes, tails, heads, caps, costs, supply.copy())
    if status != STATUS_OK:
        return False, 0, np.zeros(n_arcs, dtype=np.int64)
    forward = flow[0::2]
    total = int(np.sum(forward * costs[0::2]))
    return True, total, forward
