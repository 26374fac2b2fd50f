"""
Parameter server and client state machines and the round loop.
"""

from src.protocol.anchor_queue import AnchorEntry, AnchorQueue
from src.protocol.client_agent import ClientAgent, ClientSession, CorrectionPacket, download_rounds
from src.protocol.seeds import derive_seed
from src.protocol.server_agent import ParameterServerAgent, ServerState, reconstruct_estimate
from src.protocol.simulation import (
    AGE_POLICIES,
    FETCH_POLICIES,
    MODES,
    FederatedSimulation,
    ProtocolSettings,
    SimulationResult,
    asymptotic_bias,
    noisy_gradient_residual,
    run_docofl_counterexample,
    run_meta_algorithm,
    run_naive_weight_compression,
    run_protocol,
)

__all__ = [
    'AGE_POLICIES', 'AnchorEntry', 'AnchorQueue', 'ClientAgent', 'ClientSession', 'CorrectionPacket',
    'FETCH_POLICIES', 'FederatedSimulation', 'MODES', 'ParameterServerAgent', 'ProtocolSettings',
    'ServerState', 'SimulationResult', 'asymptotic_bias', 'derive_seed', 'download_rounds',
    'noisy_gradient_residual', 'reconstruct_estimate', 'run_docofl_counterexample', 'run_meta_algorithm',
    'run_naive_weight_compression', 'run_protocol',
]
