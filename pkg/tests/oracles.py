"""Independent brute-force references used by the tests.

Nothing here imports the code under test beyond plain data types.
"""

import itertools
import math
from collections import Counter, deque


def adjacency(n, edges):
    adj = {i: set() for i in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    return adj


def bfs_distances(adj, src):
    dist = {src: 0}
    queue = deque([src])
    while queue:
        x = queue.popleft()
        for y in sorted(adj[x]):
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    return dist


def avg_path_len(n, edges):
    adj = adjacency(n, edges)
    total = pairs = 0
    for s in range(n):
        for t, d in bfs_distances(adj, s).items():
            if t != s:
                total += d
                pairs += 1
    return total / pairs if pairs else 0.0, pairs == n * (n - 1)


def clustering(n, edges):
    adj = adjacency(n, edges)
    total = 0.0
    for i in range(n):
        nb = sorted(adj[i])
        d = len(nb)
        if d < 2:
            continue
        tri = sum(1 for a, b in itertools.combinations(nb, 2) if b in adj[a])
        total += tri / (d * (d - 1) / 2)
    return total / n


def entropy(counts):
    total = sum(counts)
    return -sum((c / total) * math.log(c / total) for c in counts)


def best_pair_by_gap(n, edges, ent):
    edge_set = {(min(u, v), max(u, v)) for u, v in edges}
    cands = [(u, v) for u, v in itertools.combinations(range(n), 2) if (u, v) not in edge_set]
    if not cands:
        return None
    best = max(abs(ent[u] - ent[v]) for u, v in cands)
    return min(p for p in cands if abs(ent[p[0]] - ent[p[1]]) == best)


def plurality(answers):
    counts = Counter(a for a in answers if a is not None)
    if not counts:
        return None
    top = max(counts.values())
    return sorted(a for a, c in counts.items() if c == top)[0]


def copy_dynamics(n, edges, initial, rounds):
    """Agents that always copy their neighbors' plurality (beta = 1)."""
    adj = adjacency(n, edges)
    history = [list(initial)]
    for _ in range(rounds):
        prev = history[-1]
        history.append([plurality([prev[j] for j in sorted(adj[i])]) for i in range(n)])
    return history


def agreement(answers):
    counts = Counter(a for a in answers if a is not None)
    return max(counts.values()) / len(answers) if counts else 0.0
