"""Iterative consensus solves with the primal-dual method of multipliers.

Two problems share one synchronous update rule.  For a node ``k`` with local
quadratic ``x^H H_k x / 2 - Re(x^H q_k)``:

    x_k <- (H_k + rho |N(k)| I)^-1 (q_k - sum_i (s_ki z_k|i - rho x_i))
    z_k|i <- z_i|k - rho s_ki (x_i_new - x_k)

with ``s_ki = sign(k - i)``.  The edge variable a node uses in its next
update is refreshed from its neighbour's newest iterate (written the other
way round the recursion diverges).  Only the new ``x_k`` is broadcast each
round; every node keeps replicas of its neighbours' edge variables.

* Weights: ``x`` is the dual ``mu``, ``H_k = Lambda_k^H P_k^-1 Lambda_k / 2``
  and ``q_k = f / (2N)``, so the consensus point is ``Gamma^-1 f``.
* Output: ``x`` is a scalar per bin, ``H_k = 1`` and ``q_k = w_k^H y_k``; the
  consensus point is the network mean, which times ``N`` is the output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import NetGraph, sign
from .ledger import Mailbox, TxLedger

DEFAULT_RHO = 0.5


class PdmmError(ValueError):
    pass


@dataclass
class PdmmState:
    """Node variables ``x[node] (K, d)`` and directed-edge variables ``z[(k, i)]``."""

    x: dict
    z: dict
    rho: float = DEFAULT_RHO
    t: int = 0  # iterations since cold start
    history: list = field(default_factory=list, repr=False)

    @classmethod
    def cold(cls, graph: NetGraph, n_bins: int, dim: int, rho: float = DEFAULT_RHO) -> "PdmmState":
        if not rho > 0:
            raise PdmmError(f"step size must be positive, got {rho}")
        x = {n: np.zeros((n_bins, dim), dtype=complex) for n in graph.nodes}
        z = {e: np.zeros((n_bins, dim), dtype=complex) for e in graph.directed_edges()}
        return cls(x, z, float(rho))

    def copy(self) -> "PdmmState":
        return PdmmState({k: v.copy() for k, v in self.x.items()},
                         {k: v.copy() for k, v in self.z.items()}, self.rho, self.t)

    def stacked(self) -> np.ndarray:
        """Node variables as one ``(N, K, d)`` array in node order."""
        return np.stack([self.x[n] for n in sorted(self.x)])


def warm_start(previous: PdmmState | None, graph: NetGraph, n_bins: int, dim: int,
               rho: float = DEFAULT_RHO) -> PdmmState:
    """Carry the last iterate over to the next frame, or start cold."""
    if previous is None:
        return PdmmState.cold(graph, n_bins, dim, rho)
    return previous.copy()


class LocalQuadratic:
    """Per-node pieces of the update: ``(H_k + rho |N(k)| I)^-1`` and ``q_k``."""

    def __init__(self, graph: NetGraph, H: dict, q: dict, rho: float):
        if not rho > 0:
            raise PdmmError(f"step size must be positive, got {rho}")
        self.q = q
        self.inv = {}
        for n in graph.nodes:
            Hn = np.asarray(H[n])
            dim = Hn.shape[-1]
            self.inv[n] = np.linalg.inv(Hn + rho * graph.degree(n) * np.eye(dim))


def pdmm_round(state: PdmmState, local: LocalQuadratic, graph: NetGraph,
               box: Mailbox | None = None) -> PdmmState:
    """One synchronous round; returns a new state (inputs are not modified)."""
    rho = state.rho
    x_new = {}
    for k in graph.nodes:
        acc = local.q[k].copy()
        for i in graph.neighbors(k):
            acc -= sign(k, i) * state.z[(k, i)] - rho * state.x[i]
        x_new[k] = np.einsum("kij,kj->ki", local.inv[k], acc)
    if box is not None:
        for k in graph.nodes:
            box.broadcast(k, graph.neighbors(k), x_new[k])
    z_new = {}
    for (k, i) in state.z:
        # x_new[i] arrives by broadcast; z_i|k is node k's replica
        z_new[(k, i)] = state.z[(i, k)] - rho * sign(k, i) * (x_new[i] - state.x[k])
    return PdmmState(x_new, z_new, rho, state.t + 1)


# ---------------------------------------------------------------------------
# weight computation
# ---------------------------------------------------------------------------

def weight_problem(graph: NetGraph, systems: dict, f, rho: float = DEFAULT_RHO) -> LocalQuadratic:
    N = graph.n_nodes
    any_sys = next(iter(systems.values()))
    q = np.broadcast_to(np.asarray(f, complex) / (2 * N), any_sys.H.shape[:-1]).copy()
    return LocalQuadratic(graph, {n: systems[n].H for n in graph.nodes},
                          {n: q for n in graph.nodes}, rho)


def pdmm_weight_step(state: PdmmState, local: LocalQuadratic, graph: NetGraph,
                     ledger: TxLedger | None = None) -> PdmmState:
    return pdmm_round(state, local, graph, Mailbox(ledger, "weight"))


def pdmm_weights(state: PdmmState, systems: dict, n_mics: int) -> np.ndarray:
    """Each node's weights ``w_k = P_k^-1 Lambda_k mu_k`` from its local dual."""
    K = state.x[next(iter(state.x))].shape[0]
    w = np.zeros((K, n_mics), dtype=complex)
    for n, s in systems.items():
        w[:, s.channels] = np.einsum("kmd,kd->km", s.X, state.x[n])
    return w


def run_weight_iterations(state: PdmmState, local: LocalQuadratic, graph: NetGraph, t_max: int,
                          ledger: TxLedger | None = None, mu_ref=None, tol=None):
    """Iterate up to ``t_max`` rounds.

    With ``mu_ref`` the relative dual error after each round is recorded in
    the returned list; with ``tol`` iteration stops once it drops below.
    """
    errors = []
    for _ in range(int(t_max)):
        state = pdmm_weight_step(state, local, graph, ledger)
        if mu_ref is not None:
            errors.append(dual_error(state, mu_ref))
            if tol is not None and errors[-1] < tol:
                break
    return state, errors


def dual_error(state: PdmmState, mu_ref) -> float:
    """``max_k ||mu_k - mu_ref|| / ||mu_ref||``, worst bin."""
    mu_ref = np.asarray(mu_ref)
    den = np.maximum(np.linalg.norm(mu_ref, axis=-1), 1e-300)
    return float(max(np.max(np.linalg.norm(x - mu_ref, axis=-1) / den) for x in state.x.values()))


def consistent_edges(graph: NetGraph, systems: dict, f, mu) -> dict:
    """Edge variables that make ``mu`` (at every node) a fixed point.

    Solves ``sum_i s_ki g_(k,i) = f/(2N) - H_k mu`` for one value per
    undirected edge, shared by both orientations.
    """
    N = graph.n_nodes
    edges = sorted(graph.edges)
    B = np.zeros((N, len(edges)))
    for j, (a, b) in enumerate(edges):
        B[graph.index(a), j] = sign(a, b)
        B[graph.index(b), j] = sign(b, a)
    rhs = np.stack([np.asarray(f) / (2 * N) - np.einsum("kij,kj->ki", systems[n].H, mu)
                    for n in graph.nodes])  # (N, K, d)
    g, *_ = np.linalg.lstsq(B, rhs.reshape(N, -1), rcond=None)
    g = g.reshape((len(edges),) + rhs.shape[1:])
    z = {}
    for j, (a, b) in enumerate(edges):
        z[(a, b)] = g[j].copy()
        z[(b, a)] = g[j].copy()
    return z


# ---------------------------------------------------------------------------
# output averaging
# ---------------------------------------------------------------------------

def output_problem(graph: NetGraph, products: dict, rho: float = DEFAULT_RHO) -> LocalQuadratic:
    H, q = {}, {}
    for n in graph.nodes:
        p = np.asarray(products[n], complex).reshape(-1, 1)
        H[n] = np.ones((p.shape[0], 1, 1))
        q[n] = p
    return LocalQuadratic(graph, H, q, rho)


def pdmm_output_step(state: PdmmState, local: LocalQuadratic, graph: NetGraph,
                     ledger: TxLedger | None = None) -> PdmmState:
    return pdmm_round(state, local, graph, Mailbox(ledger, "output"))


def average_output(graph: NetGraph, products: dict, t_max: int, rho: float = DEFAULT_RHO,
                   ledger: TxLedger | None = None, tol=None):
    """Distributed mean of the per-node products; always cold-started.

    Returns ``(state, n_iterations)``; ``N * state.x[k]`` is node ``k``'s
    estimate of the beamformer output.  With ``tol`` the run stops once every
    node is within ``tol`` (relative to the mean's magnitude) of the mean.
    """
    n_bins = np.asarray(products[graph.nodes[0]]).reshape(-1).size
    local = output_problem(graph, products, rho)
    state = PdmmState.cold(graph, n_bins, 1, rho)
    mean = None
    if tol is not None:
        mean = sum(local.q[n] for n in graph.nodes) / graph.n_nodes
    for t in range(int(t_max)):
        state = pdmm_output_step(state, local, graph, ledger)
        if mean is not None:
            scale = max(float(np.max(np.abs(mean))), 1e-300)
            err = max(float(np.max(np.abs(state.x[n] - mean))) for n in graph.nodes) / scale
            if err < tol:
                return state, t + 1
    return state, state.t
