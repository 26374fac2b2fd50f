"""
Uniformity audit of a participation schedule.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chisquare

from src.scheduler.population import RoundSchedule

logger = logging.getLogger(__name__)

FLAG_SIGMA = 5.0


@dataclass
class UniformityReport:
    """Per-client participation frequencies against the S/N target"""
    rounds_audited: int
    expected_rate: float
    frequencies: np.ndarray
    z_scores: np.ndarray
    max_deviation: float
    chi_square: float
    p_value: float
    flagged: list = field(default_factory=list)

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z_scores)))

    @property
    def within_3sigma(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) <= 3.0))

    def passes(self, alpha: float = 0.01) -> bool:
        return not self.flagged and (np.isnan(self.p_value) or self.p_value >= alpha)

    def as_dict(self) -> dict:
        return {
            'rounds_audited': self.rounds_audited,
            'expected_rate': self.expected_rate,
            'max_deviation': self.max_deviation,
            'max_abs_z': self.max_abs_z,
            'chi_square': self.chi_square,
            'p_value': self.p_value,
            'within_3sigma': self.within_3sigma,
            'flagged': list(self.flagged),
        }


def audit_uniformity(schedule: RoundSchedule, warmup: int = 0) -> UniformityReport:
    """
    Compare every client's participation frequency after `warmup` with S/N.

    Args:
        schedule: schedule to audit
        warmup: leading rounds to skip

    Returns:
        UniformityReport: frequencies, z-scores, chi-square statistic and the
        clients deviating by more than 5 standard errors
    """
    if warmup < 0 or schedule.rounds <= warmup:
        raise ValueError(f"schedule of {schedule.rounds} rounds is not longer than the warmup {warmup}")
    rounds = schedule.rounds - warmup
    p = schedule.population.participation_rate
    counts = schedule.participation_counts(start=warmup)
    freq = counts / rounds

    se = np.sqrt(p * (1.0 - p) / rounds)
    if se > 0:
        z = (freq - p) / se
    else:
        z = np.where(np.isclose(freq, p), 0.0, np.inf)

    expected = np.full(counts.size, rounds * p)
    if counts.size > 1 and p < 1.0:
        stat, p_value = chisquare(counts, f_exp=expected)
    else:
        stat, p_value = 0.0, float('nan')

    flagged = np.flatnonzero(np.abs(z) > FLAG_SIGMA).tolist()
    report = UniformityReport(
        rounds_audited=rounds,
        expected_rate=p,
        frequencies=freq,
        z_scores=z,
        max_deviation=float(np.max(np.abs(freq - p))),
        chi_square=float(stat),
        p_value=float(p_value),
        flagged=flagged,
    )
    if flagged:
        logger.warning(f"{len(flagged)} clients deviate from S/N by more than {FLAG_SIGMA} standard errors")
    return report
