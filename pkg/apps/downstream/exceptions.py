# apps/downstream/exceptions.py
from apps.core.exceptions import MidtError


class DownstreamError(MidtError):
    """Classifier, scoring or fold-mix precondition failed"""
