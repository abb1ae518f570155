"""Co-design of transmission schedules and control inputs by time-varying MPC."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
