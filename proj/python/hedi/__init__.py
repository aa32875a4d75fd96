"""Hernia evaluation pipeline: symmetric diffeomorphic registration of
rest/Valsalva CT pairs, Green-Lagrange strain, unstable-area and volume
metrics, and viewer-ready surface export."""

from hedi._hedi import *  # noqa: F401,F403
from hedi._hedi import __version__  # noqa: F401
