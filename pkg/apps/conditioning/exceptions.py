# apps/conditioning/exceptions.py
from apps.core.exceptions import MidtError


class ConditioningError(MidtError):
    """Bad attribute value, mask or table/schema mismatch"""
