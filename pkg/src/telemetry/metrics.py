"""
Per-round metrics rows, the estimation-error ratio rho and run summaries.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    'round', 'train_loss', 'grad_sq_norm', 'mean_corr_norm', 'rho',
    'anchor_bits', 'corr_bits', 'uplink_bits',
    'cum_anchor_bits', 'cum_corr_bits', 'cum_uplink_bits',
]

# distance to the optimum below which a run counts as converged
CONVERGENCE_THRESHOLD = 1e-3

# squared relative resolution of 32-bit weights
FLOAT32_RESOLUTION = float(np.finfo(np.float32).eps) ** 2


@dataclass
class MetricsRow:
    """
    One round of a run.

    `estimate_error` is the mean squared estimate error of the round.
    `rho_numerator` and `rho_denominator` are the summed errors behind `rho`
    (decoded anchor, uncompressed anchor); they feed the summary only.
    """
    round: int
    train_loss: float
    grad_sq_norm: float
    mean_corr_norm: float
    rho: float
    anchor_bits: int
    corr_bits: int
    uplink_bits: int
    cum_anchor_bits: int
    cum_corr_bits: int
    cum_uplink_bits: int
    estimate_error: float = math.nan
    rho_numerator: float = math.nan
    rho_denominator: float = math.nan

    def __post_init__(self):
        if not math.isnan(self.rho) and self.rho < 0:
            raise ValueError(f"rho must be non-negative, got {self.rho}")


def rho_ratio(compressed_errors, exact_errors) -> float:
    """
    Sum of squared estimate errors with a compressed anchor over the sum
    without anchor compression; NaN when the latter is zero.
    """
    numerator = float(np.sum(compressed_errors))
    denominator = float(np.sum(exact_errors))
    if denominator <= 0:
        return math.nan
    return numerator / denominator


def rho_terms(errors, anchor_ages, weights_sq_norm: float):
    """
    Keep the (compressed, exact) error pairs that can carry a ratio.

    A session is dropped when its anchor is the current model (age 0) or when
    its exact error is below the rounding floor of 32-bit weights.

    Args:
        errors: (compressed-anchor error, exact-anchor error) per session, or None
        anchor_ages: anchor age per session, or None
        weights_sq_norm: ||w_t||^2

    Returns:
        tuple: (compressed errors, exact errors) of the kept sessions
    """
    floor = FLOAT32_RESOLUTION * float(weights_sq_norm)
    compressed, exact = [], []
    for pair, age in zip(errors, anchor_ages):
        if pair is None or not age:
            continue
        if math.isnan(pair[1]) or pair[1] <= floor:
            continue
        compressed.append(float(pair[0]))
        exact.append(float(pair[1]))
    return compressed, exact


def pooled_rho(rows, warmup: int = 0) -> float:
    """Estimate-error ratio over all post-warmup rounds at once; NaN when undefined."""
    kept = [r for r in rows if r.round >= warmup and not math.isnan(r.rho_denominator)]
    return rho_ratio([r.rho_numerator for r in kept], [r.rho_denominator for r in kept])


def metrics_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([{k: getattr(r, k) for k in METRICS_COLUMNS} for r in rows], columns=METRICS_COLUMNS)


def write_metrics_csv(rows, path):
    """Write rows with the fixed column set; undefined values are written as 'nan'."""
    metrics_frame(rows).to_csv(path, index=False, na_rep='nan', float_format='%.10g')
    logger.info(f"Wrote {len(rows)} metrics rows to {path}")


def read_metrics_csv(path) -> pd.DataFrame:
    return pd.read_csv(path)


def _mean(values):
    values = [v for v in values if not math.isnan(v)]
    return float(np.mean(values)) if values else math.nan


def convergence_summary(rows, warmup: int = 0, final_distance: float = None,
                        threshold: float = CONVERGENCE_THRESHOLD) -> dict:
    """
    Summarise a completed run.

    Args:
        rows: MetricsRow list in round order
        warmup: rounds excluded from the rho average
        final_distance: ||w_T - w*|| when the optimum is known
        threshold: distance below which the run counts as converged

    Returns:
        dict: time-averaged squared gradient norm, final loss, last-decile
        means, mean correction norm, mean estimate error and post-warmup rho
    """
    if not rows:
        raise ValueError("cannot summarise an empty run")
    decile = max(1, len(rows) // 10)
    tail = rows[-decile:]
    summary = {
        'rounds': len(rows),
        'avg_grad_sq_norm': _mean([r.grad_sq_norm for r in rows]),
        'final_loss': rows[-1].train_loss,
        'last_decile_loss': _mean([r.train_loss for r in tail]),
        'last_decile_grad_sq_norm': _mean([r.grad_sq_norm for r in tail]),
        'mean_corr_norm': _mean([r.mean_corr_norm for r in rows]),
        'first_decile_corr_norm': _mean([r.mean_corr_norm for r in rows[:decile]]),
        'last_decile_corr_norm': _mean([r.mean_corr_norm for r in tail]),
        'mean_estimate_error': _mean([r.estimate_error for r in rows]),
        'mean_rho': _mean([r.rho for r in rows if r.round >= warmup]),
        'pooled_rho': pooled_rho(rows, warmup),
        'total_anchor_bits': rows[-1].cum_anchor_bits,
        'total_corr_bits': rows[-1].cum_corr_bits,
        'total_uplink_bits': rows[-1].cum_uplink_bits,
    }
    if final_distance is not None:
        summary['final_distance'] = float(final_distance)
        summary['converged'] = bool(final_distance <= threshold)
    return summary


def rows_from_dicts(records) -> list:
    return [MetricsRow(**record) for record in records]


def row_as_dict(row: MetricsRow) -> dict:
    return asdict(row)
