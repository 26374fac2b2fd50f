"""
Client participation processes and their uniformity audit.
"""

from src.scheduler.audit import UniformityReport, audit_uniformity
from src.scheduler.policies import SAMPLING_MODES, two_tier_policy, uniform_policy
from src.scheduler.population import STRONG, WEAK, Population, RoundSchedule

__all__ = [
    'Population', 'RoundSchedule', 'SAMPLING_MODES', 'STRONG', 'UniformityReport', 'WEAK',
    'audit_uniformity', 'two_tier_policy', 'uniform_policy',
]
