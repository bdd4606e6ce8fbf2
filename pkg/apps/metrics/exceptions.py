# apps/metrics/exceptions.py
from apps.core.exceptions import MidtError


class MetricError(MidtError):
    """Metric inputs violate a precondition"""
