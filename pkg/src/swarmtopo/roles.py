"""Noisy neighbor-averaging opinion dynamics on a small-world graph.

Every received belief is perturbed independently, so a node with many
neighbors averages the noise away while a node with few does not.  Role
labels come from topology alone: the Bridge sits on a rewired shortcut, the
Expert is the best-connected remaining node and the Loner the worst.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Edge, Graph, Kind, TopologySpec, watts_strogatz
from .rng import derive_seed, substream

CLAMP = 1.5


class TooFewNodes(ValueError):
    pass


@dataclass(frozen=True)
class OpinionConfig:
    topology: TopologySpec
    steps: int = 200
    alpha: float = 0.3
    sigma: float = 0.4
    init: tuple[float, ...] | None = None  # None -> seeded uniform on [-1, 1]
    seed: int = 0

    def __post_init__(self):
        if self.topology.kind is not Kind.SMALLWORLD:
            raise ValueError("opinion dynamics run on a SmallWorld topology")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.init is not None and len(self.init) != self.topology.n:
            raise ValueError("init must give one belief per node")


@dataclass(frozen=True)
class RoleAssignment:
    expert: int
    loner: int
    bridge: int | None

    def role_of(self, node: int) -> str:
        if node == self.bridge:
            return "bridge"
        if node == self.expert:
            return "expert"
        if node == self.loner:
            return "loner"
        return ""


@dataclass(frozen=True)
class OpinionTrajectory:
    beliefs: np.ndarray  # (steps + 1, n)

    @property
    def per_node_variance(self) -> np.ndarray:
        return stationary_variance(self.beliefs)


def stationary_variance(beliefs: np.ndarray) -> np.ndarray:
    """Variance of each node's series over the last half of the steps."""
    steps = beliefs.shape[0] - 1
    tail = beliefs[steps - steps // 2 :] if steps >= 2 else beliefs
    return tail.var(axis=0)


def assign_roles(g: Graph, rewired: list[Edge]) -> RoleAssignment:
    if g.n < 3:
        raise TooFewNodes(f"role assignment needs n >= 3, got {g.n}")
    deg = g.degrees()
    bridge = None
    if rewired:
        u, v = rewired[0]
        bridge = v if deg[v] > deg[u] else u
    rest = [i for i in range(g.n) if i != bridge]
    expert = min(rest, key=lambda i: (-deg[i], i))
    loner = min((i for i in rest if i != expert), key=lambda i: (deg[i], i))
    return RoleAssignment(expert, loner, bridge)


def step(beliefs: np.ndarray, g: Graph, alpha: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """One synchronous update ``b <- (1-a) b + a * mean_j (b_j + sigma * eps_ij)``.

    Noise is drawn per directed message in node order, then neighbor order.
    Isolated nodes keep their belief.
    """
    out = beliefs.astype(float, copy=True)
    for i in range(g.n):
        nbrs = g.neighbors(i)
        if not nbrs:
            continue
        received = beliefs[nbrs]
        if sigma > 0:
            received = received + sigma * rng.standard_normal(len(nbrs))
        out[i] = (1.0 - alpha) * beliefs[i] + alpha * received.mean()
    return np.clip(out, -CLAMP, CLAMP)


def simulate(cfg: OpinionConfig) -> tuple[OpinionTrajectory, RoleAssignment, Graph]:
    spec = cfg.topology
    g, rewired = watts_strogatz(spec, substream(spec.seed, "topology"))
    roles = assign_roles(g, rewired)
    rng = np.random.default_rng(derive_seed(cfg.seed, "opinion-noise"))
    if cfg.init is None:
        b = np.random.default_rng(derive_seed(cfg.seed, "opinion-init")).uniform(-1.0, 1.0, spec.n)
    else:
        b = np.asarray(cfg.init, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("initial beliefs must be finite")
    rows = [b]
    for _ in range(cfg.steps):
        b = step(b, g, cfg.alpha, cfg.sigma, rng)
        rows.append(b)
    return OpinionTrajectory(np.vstack(rows)), roles, g
