"""Exact per-frame solves by message passing over a spanning tree.

Each node reduces its block to the small Hermitian matrix
``Lambda_k^H P_k^-1 Lambda_k / 2``; these are summed leaf to root, the root
solves for the dual variable, and the dual is broadcast back down so that
every node forms its own weights locally.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..beamform import BeamWeights, ConstraintSet, ds_weights, hpd_solve, solve_gram
from ..estimation import diagonal_loading, hermitize
from .graph import GraphError, NetGraph
from .ledger import Mailbox, TxLedger


def pack_hermitian(A) -> np.ndarray:
    """Upper triangle of ``(..., d, d)`` as ``(..., d(d+1)/2)``."""
    d = A.shape[-1]
    iu = np.triu_indices(d)
    return A[..., iu[0], iu[1]]


def unpack_hermitian(v, d: int) -> np.ndarray:
    iu = np.triu_indices(d)
    A = np.zeros(v.shape[:-1] + (d, d), dtype=complex)
    A[..., iu[0], iu[1]] = v
    return hermitize(A)


@dataclass
class LocalSystem:
    """What node ``k`` knows: ``X = P_k^-1 Lambda_k`` and ``H = Lambda_k^H X / 2``."""

    node: int
    channels: np.ndarray
    X: np.ndarray  # (K, M_k, d)
    H: np.ndarray  # (K, d, d)


def local_systems(graph: NetGraph, blocks, P_blocks, constraints: ConstraintSet) -> dict:
    """Per-node reductions; ``P_blocks[i]`` is ``None`` for an identity block."""
    out = {}
    for node, idx, Pk in zip(graph.nodes, blocks, P_blocks):
        idx = np.asarray(idx)
        lam = constraints.lam[:, idx, :]
        X = lam.copy() if Pk is None else hpd_solve(diagonal_loading(np.asarray(Pk)), lam)
        H = hermitize(np.conj(np.swapaxes(lam, -1, -2)) @ X) / 2
        out[node] = LocalSystem(node, idx, X, H)
    return out


@dataclass
class AcyclicResult:
    weights: BeamWeights
    messages: dict  # node -> unpacked upward message (K, d, d)
    gram_half: np.ndarray  # root's sum, Gamma / 2


def aggregate_dual(tree: NetGraph, systems: dict, constraints: ConstraintSet,
                   ledger: TxLedger | None = None, previous=None, kind="LCQP") -> AcyclicResult:
    """Sum the node reductions up the tree, solve at the root, diffuse the dual.

    Upward messages carry the packed upper triangle; the downward dual is
    broadcast once by every node that has children.
    """
    if not tree.has_tree:
        raise GraphError("aggregate_dual needs a spanning tree")
    f = constraints.f
    d = f.size
    box = Mailbox(ledger, "weight")
    order = tree.depth_order()
    messages = {}
    for node in reversed(order):
        acc = systems[node].H.copy()
        for _, payload in box.receive(node):
            acc += unpack_hermitian(payload, d)
        messages[node] = acc
        if node != tree.root:
            box.send(node, tree.parent[node], pack_hermitian(acc))
    S = messages[tree.root]
    mu_root, failed = solve_gram(S, f / 2)

    K = S.shape[0]
    M = sum(s.channels.size for s in systems.values())
    w = np.zeros((K, M), dtype=complex)
    mu_at = {tree.root: mu_root}
    for node in order:
        if node != tree.root:
            (src, mu), = box.receive(node)
            mu_at[node] = mu
        box.broadcast(node, tree.children[node], mu_at[node])
        s = systems[node]
        w[:, s.channels] = np.einsum("kmd,kd->km", s.X, mu_at[node])

    if np.any(failed):
        fallback = ds_weights(constraints.lam[..., 0]) if previous is None else np.asarray(previous)
        w[failed] = fallback[failed]
    lam = constraints.lam
    residual = np.max(np.abs(np.einsum("kmd,km->kd", np.conj(lam), w) - f), axis=1)
    bw = BeamWeights(w, kind, residual, None, failed, mu_root)
    return AcyclicResult(bw, messages, S)


def aggregate_output(tree: NetGraph, products: dict, ledger: TxLedger | None = None) -> np.ndarray:
    """Exact sum of the per-node products ``w_k^H y_k`` collected at the root."""
    if not tree.has_tree:
        raise GraphError("aggregate_output needs a spanning tree")
    box = Mailbox(ledger, "output")
    total = None
    for node in reversed(tree.depth_order()):
        acc = np.array(products[node], dtype=complex, copy=True)
        for _, payload in box.receive(node):
            acc += payload[..., 0]
        if node == tree.root:
            total = acc
        else:
            box.send(node, tree.parent[node], acc[..., None])
    return total
