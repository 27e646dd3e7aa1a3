"""Network model, tree aggregation, PDMM and transmission accounting."""
from .acyclic import (AcyclicResult, LocalSystem, aggregate_dual, aggregate_output, local_systems,
                      pack_hermitian, unpack_hermitian)
from .graph import (GraphError, NetGraph, build_spanning_tree, chain, complete, make_topology,
                    random_connected, ring, sign, star)
from .ledger import Mailbox, TxLedger, format_cost_table, ledger_check, cost_table
from .pdmm import (DEFAULT_RHO, PdmmError, PdmmState, average_output, consistent_edges,
                   dual_error, output_problem, pdmm_output_step, pdmm_round, pdmm_weight_step,
                   pdmm_weights, run_weight_iterations, warm_start, weight_problem)

__all__ = [
    "AcyclicResult", "LocalSystem", "aggregate_dual", "aggregate_output", "local_systems",
    "pack_hermitian", "unpack_hermitian", "GraphError", "NetGraph", "build_spanning_tree", "chain",
    "complete", "make_topology", "random_connected", "ring", "sign", "star", "Mailbox", "TxLedger",
    "format_cost_table", "ledger_check", "cost_table", "DEFAULT_RHO", "PdmmError", "PdmmState",
    "average_output", "consistent_edges", "dual_error", "output_problem", "pdmm_output_step",
    "pdmm_round", "pdmm_weight_step", "pdmm_weights", "run_weight_iterations", "warm_start",
    "weight_problem",
]
