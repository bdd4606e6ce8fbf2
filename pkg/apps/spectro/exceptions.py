# apps/spectro/exceptions.py
from apps.core.exceptions import MidtError


class SpectroError(MidtError):
    """Invalid resolution, filterbank request or signal shape"""
