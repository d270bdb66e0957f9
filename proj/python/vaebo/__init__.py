"""Latent-space Bayesian optimisation of tissue excitability."""

from ._vaebo import *  # noqa: F401,F403
from ._vaebo import __doc__  # noqa: F401
