"""
Bandwidth accounting and per-round metrics.
"""

from src.telemetry.ledger import (
    ANCHOR_DOWNLINK,
    CHANNELS,
    CORRECTION_DOWNLINK,
    FULL_PRECISION_BITS,
    UPLINK,
    BandwidthLedger,
    ReductionReport,
    record_transfer,
    reduction_report,
)
from src.telemetry.metrics import (
    METRICS_COLUMNS,
    MetricsRow,
    convergence_summary,
    metrics_frame,
    pooled_rho,
    read_metrics_csv,
    rho_ratio,
    rho_terms,
    write_metrics_csv,
)

__all__ = [
    'ANCHOR_DOWNLINK', 'CHANNELS', 'CORRECTION_DOWNLINK', 'FULL_PRECISION_BITS', 'UPLINK',
    'BandwidthLedger', 'METRICS_COLUMNS', 'MetricsRow', 'ReductionReport',
    'convergence_summary', 'metrics_frame', 'pooled_rho', 'read_metrics_csv', 'record_transfer',
    'reduction_report', 'rho_ratio', 'rho_terms', 'write_metrics_csv',
]
