"""Consistent recalibration models for implied-volatility surfaces."""

from ._crc import *  # noqa: F401,F403
from ._crc import __doc__  # noqa: F401
